// Walk through the operator surface and show how each statement lowers.

#include <iostream>

#include "arx/arx.hpp"

using arx::Matrix;
using arx::Vector;

namespace {

template <class T>
void show_lowering(const char* label, const std::vector<arx::LoweredOp<T>>& ops) {
  std::cout << label << "\n";
  for (const auto& op : ops) {
    std::cout << "  " << arx::kernel_name(op.kernel);
    if (op.kernel == arx::KernelId::gemm || op.kernel == arx::KernelId::gemv)
      std::cout << " transA=" << op.trans_a << " transB=" << op.trans_b
                << " alpha=" << op.alpha << " beta=" << op.beta;
    else if (op.kernel != arx::KernelId::fallback)
      std::cout << " alpha=" << op.alpha;
    else if (op.expr)
      std::cout << " " << arx::describe(op.expr) << " beta=" << op.beta;
    std::cout << "\n";
  }
}

}  // namespace

int main() {
  Matrix<double> A{{1, 2, 3}, {4, 5, 6}};
  Matrix<double> B{{1, 0}, {0, 1}, {1, 1}};
  Vector<double> x{1, 1, 1};
  Vector<double> y{0, 1};

  std::cout << "A =\n" << A << "\n\n";

  Matrix<double> C = A * B;
  std::cout << "C = A*B =\n" << C << "\n\n";

  double alpha = 0.5, beta = 4.0;
  C += alpha * A * B + beta * C;
  std::cout << "C += 0.5*A*B + 4*C =\n" << C << "\n\n";

  Vector<double> z = A * x;
  std::cout << "A*x = " << z << "\n";
  double s = arx::transpose(z) * z;
  std::cout << "z'z = " << s << ", |z| = " << z.norm() << "\n\n";

  show_lowering("C += alpha*transpose(B)*transpose(A) + beta*C",
                arx::lower<double>(C.dest(), arx::AssignMode::accumulate,
                                   alpha * arx::transpose(B) * arx::transpose(A) +
                                       beta * C));
  show_lowering("y = 2*A*x + y",
                arx::lower<double>(y.dest(), arx::AssignMode::assign,
                                   2.0 * A * x + y));
  show_lowering("C = A*B*C + C",
                arx::lower<double>(C.dest(), arx::AssignMode::assign,
                                   A * B * C + C));

  arx::Context ctx;
  ctx.log().set_recording(true);
  arx::assign(C, alpha * A * B, ctx);
  std::cout << "\nlog of C = alpha*A*B: ";
  for (const auto& call : ctx.log().calls())
    std::cout << arx::kernel_name(call.kernel) << "(m=" << call.m
              << ", n=" << call.n << ", k=" << call.k << ") ";
  std::cout << "writes=" << ctx.log().element_writes << "\n";
}
