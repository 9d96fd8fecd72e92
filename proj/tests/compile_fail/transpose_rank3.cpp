#include "arx/expr.hpp"

int main() {
  arx::Tensor<double, 3> t(2, 2, 2);
  auto e = arx::transpose(t);
  (void)e;
}
