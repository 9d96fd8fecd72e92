#include "arx/expr.hpp"

int main() {
  arx::Matrix<double> a(2, 2);
  auto e = a * arx::Matrix<double>(2, 2);
  (void)e;
}
