#include "arx/tensor.hpp"

int main() {
  arx::Tensor<double, 3> t(2, 2, 2);
  return static_cast<int>(t(0, 1));
}
