#include "arx/tensor.hpp"

int main() {
  arx::Tensor<double, 2> t(2, 3, 4.0, 5.0);
  (void)t;
}
