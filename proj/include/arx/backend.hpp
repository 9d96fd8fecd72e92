#pragma once

// Kernel contracts and the backends implementing them.
//
// All matrices are column-major with an explicit leading dimension. Transposed
// operands are expressed through flags only; no kernel copies its inputs.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "arx/errors.hpp"

#ifdef ARX_HAVE_CBLAS
#include <cblas.h>
#endif

namespace arx {

class Backend {
 public:
  virtual ~Backend() = default;

  virtual std::string_view name() const noexcept = 0;

#define ARX_BACKEND_KERNELS(T)                                                 \
  virtual void copy(std::size_t n, const T* x, T* y) = 0;                      \
  virtual void axpy(std::size_t n, T alpha, const T* x, T* y) = 0;             \
  virtual T dot(std::size_t n, const T* x, const T* y) = 0;                    \
  virtual T nrm2(std::size_t n, const T* x) = 0;                               \
  virtual void gemv(bool trans, std::size_t m, std::size_t n, T alpha,         \
                    const T* a, std::size_t lda, const T* x, T beta, T* y) = 0; \
  virtual void ger(std::size_t m, std::size_t n, T alpha, const T* x,          \
                   const T* y, T* a, std::size_t lda) = 0;                     \
  virtual void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n,  \
                    std::size_t k, T alpha, const T* a, std::size_t lda,       \
                    const T* b, std::size_t ldb, T beta, T* c,                 \
                    std::size_t ldc) = 0;

  ARX_BACKEND_KERNELS(double)
  ARX_BACKEND_KERNELS(float)
#undef ARX_BACKEND_KERNELS
};

namespace detail {

// Forwards both virtual overload sets to templated members of Impl.
template <class Impl>
class BackendAdapter : public Backend {
 public:
#define ARX_FORWARD_KERNELS(T)                                                 \
  void copy(std::size_t n, const T* x, T* y) override {                        \
    Impl::copy(n, x, y);                                                       \
  }                                                                            \
  void axpy(std::size_t n, T alpha, const T* x, T* y) override {               \
    Impl::axpy(n, alpha, x, y);                                                \
  }                                                                            \
  T dot(std::size_t n, const T* x, const T* y) override {                      \
    return Impl::dot(n, x, y);                                                 \
  }                                                                            \
  T nrm2(std::size_t n, const T* x) override { return Impl::nrm2(n, x); }      \
  void gemv(bool trans, std::size_t m, std::size_t n, T alpha, const T* a,     \
            std::size_t lda, const T* x, T beta, T* y) override {              \
    Impl::gemv(trans, m, n, alpha, a, lda, x, beta, y);                        \
  }                                                                            \
  void ger(std::size_t m, std::size_t n, T alpha, const T* x, const T* y,      \
           T* a, std::size_t lda) override {                                   \
    Impl::ger(m, n, alpha, x, y, a, lda);                                      \
  }                                                                            \
  void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n,          \
            std::size_t k, T alpha, const T* a, std::size_t lda, const T* b,   \
            std::size_t ldb, T beta, T* c, std::size_t ldc) override {         \
    Impl::gemm(trans_a, trans_b, m, n, k, alpha, a, lda, b, ldb, beta, c,      \
               ldc);                                                           \
  }

  ARX_FORWARD_KERNELS(double)
  ARX_FORWARD_KERNELS(float)
#undef ARX_FORWARD_KERNELS
};

/// Straightforward loops following the reference BLAS structure.
struct NaiveKernels {
  template <class T>
  static void copy(std::size_t n, const T* x, T* y) {
    std::copy_n(x, n, y);
  }

  template <class T>
  static void axpy(std::size_t n, T alpha, const T* x, T* y) {
    if (alpha == T(0)) return;
    for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
  }

  template <class T>
  static T dot(std::size_t n, const T* x, const T* y) {
    T sum = 0;
    for (std::size_t i = 0; i < n; ++i) sum += x[i] * y[i];
    return sum;
  }

  // Scaled sum of squares: never forms x_i^2 for large x_i.
  template <class T>
  static T nrm2(std::size_t n, const T* x) {
    T scale = 0;
    T ssq = 1;
    for (std::size_t i = 0; i < n; ++i) {
      if (x[i] == T(0)) continue;
      T absxi = std::abs(x[i]);
      if (scale < absxi) {
        T r = scale / absxi;
        ssq = 1 + ssq * r * r;
        scale = absxi;
      } else {
        T r = absxi / scale;
        ssq += r * r;
      }
    }
    return scale * std::sqrt(ssq);
  }

  // y <- alpha*op(A)*x + beta*y with A m x n.
  template <class T>
  static void gemv(bool trans, std::size_t m, std::size_t n, T alpha,
                   const T* a, std::size_t lda, const T* x, T beta, T* y) {
    const std::size_t leny = trans ? n : m;
    const std::size_t lenx = trans ? m : n;
    if (leny == 0 || (alpha == T(0) && beta == T(1))) return;
    if (beta != T(1)) {
      if (beta == T(0))
        std::fill_n(y, leny, T(0));
      else
        for (std::size_t i = 0; i < leny; ++i) y[i] *= beta;
    }
    if (alpha == T(0)) return;
    if (!trans) {
      for (std::size_t j = 0; j < lenx; ++j) {
        const T temp = alpha * x[j];
        const T* col = a + j * lda;
        for (std::size_t i = 0; i < m; ++i) y[i] += temp * col[i];
      }
    } else {
      for (std::size_t j = 0; j < leny; ++j) {
        const T* col = a + j * lda;
        T temp = 0;
        for (std::size_t i = 0; i < m; ++i) temp += col[i] * x[i];
        y[j] += alpha * temp;
      }
    }
  }

  // A <- alpha*x*y^T + A with A m x n.
  template <class T>
  static void ger(std::size_t m, std::size_t n, T alpha, const T* x,
                  const T* y, T* a, std::size_t lda) {
    if (m == 0 || n == 0 || alpha == T(0)) return;
    for (std::size_t j = 0; j < n; ++j) {
      const T temp = alpha * y[j];
      T* col = a + j * lda;
      for (std::size_t i = 0; i < m; ++i) col[i] += x[i] * temp;
    }
  }

  // C <- alpha*op(A)*op(B) + beta*C with C m x n and inner dimension k.
  template <class T>
  static void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n,
                   std::size_t k, T alpha, const T* a, std::size_t lda,
                   const T* b, std::size_t ldb, T beta, T* c,
                   std::size_t ldc) {
    if (m == 0 || n == 0 ||
        ((alpha == T(0) || k == 0) && beta == T(1)))
      return;
    auto A = [&](std::size_t i, std::size_t l) {
      return trans_a ? a[l + i * lda] : a[i + l * lda];
    };
    auto B = [&](std::size_t l, std::size_t j) {
      return trans_b ? b[j + l * ldb] : b[l + j * ldb];
    };
    for (std::size_t j = 0; j < n; ++j) {
      T* col = c + j * ldc;
      if (beta == T(0))
        std::fill_n(col, m, T(0));
      else if (beta != T(1))
        for (std::size_t i = 0; i < m; ++i) col[i] *= beta;
      if (alpha == T(0)) continue;
      if (!trans_a) {
        for (std::size_t l = 0; l < k; ++l) {
          const T temp = alpha * B(l, j);
          const T* acol = a + l * lda;
          for (std::size_t i = 0; i < m; ++i) col[i] += temp * acol[i];
        }
      } else {
        for (std::size_t i = 0; i < m; ++i) {
          T temp = 0;
          for (std::size_t l = 0; l < k; ++l) temp += A(i, l) * B(l, j);
          col[i] += alpha * temp;
        }
      }
    }
  }
};

#ifdef ARX_HAVE_CBLAS
struct CblasKernels {
  static CBLAS_TRANSPOSE flag(bool t) { return t ? CblasTrans : CblasNoTrans; }
  static blasint ld(std::size_t v) { return static_cast<blasint>(std::max<std::size_t>(v, 1)); }
  static blasint sz(std::size_t v) { return static_cast<blasint>(v); }

  static void copy(std::size_t n, const double* x, double* y) { cblas_dcopy(sz(n), x, 1, y, 1); }
  static void copy(std::size_t n, const float* x, float* y) { cblas_scopy(sz(n), x, 1, y, 1); }
  static void axpy(std::size_t n, double alpha, const double* x, double* y) {
    cblas_daxpy(sz(n), alpha, x, 1, y, 1);
  }
  static void axpy(std::size_t n, float alpha, const float* x, float* y) {
    cblas_saxpy(sz(n), alpha, x, 1, y, 1);
  }
  static double dot(std::size_t n, const double* x, const double* y) {
    return cblas_ddot(sz(n), x, 1, y, 1);
  }
  static float dot(std::size_t n, const float* x, const float* y) {
    return cblas_sdot(sz(n), x, 1, y, 1);
  }
  static double nrm2(std::size_t n, const double* x) { return cblas_dnrm2(sz(n), x, 1); }
  static float nrm2(std::size_t n, const float* x) { return cblas_snrm2(sz(n), x, 1); }

  static void gemv(bool trans, std::size_t m, std::size_t n, double alpha,
                   const double* a, std::size_t lda, const double* x,
                   double beta, double* y) {
    cblas_dgemv(CblasColMajor, flag(trans), sz(m), sz(n), alpha, a, ld(lda), x,
                1, beta, y, 1);
  }
  static void gemv(bool trans, std::size_t m, std::size_t n, float alpha,
                   const float* a, std::size_t lda, const float* x, float beta,
                   float* y) {
    cblas_sgemv(CblasColMajor, flag(trans), sz(m), sz(n), alpha, a, ld(lda), x,
                1, beta, y, 1);
  }
  static void ger(std::size_t m, std::size_t n, double alpha, const double* x,
                  const double* y, double* a, std::size_t lda) {
    cblas_dger(CblasColMajor, sz(m), sz(n), alpha, x, 1, y, 1, a, ld(lda));
  }
  static void ger(std::size_t m, std::size_t n, float alpha, const float* x,
                  const float* y, float* a, std::size_t lda) {
    cblas_sger(CblasColMajor, sz(m), sz(n), alpha, x, 1, y, 1, a, ld(lda));
  }
  static void gemm(bool ta, bool tb, std::size_t m, std::size_t n,
                   std::size_t k, double alpha, const double* a,
                   std::size_t lda, const double* b, std::size_t ldb,
                   double beta, double* c, std::size_t ldc) {
    cblas_dgemm(CblasColMajor, flag(ta), flag(tb), sz(m), sz(n), sz(k), alpha,
                a, ld(lda), b, ld(ldb), beta, c, ld(ldc));
  }
  static void gemm(bool ta, bool tb, std::size_t m, std::size_t n,
                   std::size_t k, float alpha, const float* a, std::size_t lda,
                   const float* b, std::size_t ldb, float beta, float* c,
                   std::size_t ldc) {
    cblas_sgemm(CblasColMajor, flag(ta), flag(tb), sz(m), sz(n), sz(k), alpha,
                a, ld(lda), b, ld(ldb), beta, c, ld(ldc));
  }
};
#endif

class NaiveBackend final : public BackendAdapter<NaiveKernels> {
 public:
  std::string_view name() const noexcept override { return "naive"; }
};

#ifdef ARX_HAVE_CBLAS
class CblasBackend final : public BackendAdapter<CblasKernels> {
 public:
  std::string_view name() const noexcept override { return "external-blas"; }
};
#endif

}  // namespace detail

inline constexpr std::string_view kNaiveBackend = "naive";
inline constexpr std::string_view kExternalBackend = "external-blas";

inline Backend& naive_backend() {
  static detail::NaiveBackend backend;
  return backend;
}

/// Names of the backends compiled into this build, default first.
inline std::vector<std::string> registered_backends() {
  std::vector<std::string> names{std::string(kNaiveBackend)};
#ifdef ARX_HAVE_CBLAS
  names.emplace_back(kExternalBackend);
#endif
  return names;
}

inline Backend& find_backend(std::string_view name) {
  if (name == kNaiveBackend) return naive_backend();
  if (name == kExternalBackend) {
#ifdef ARX_HAVE_CBLAS
    static detail::CblasBackend backend;
    return backend;
#else
    throw backend_unavailable(
        "backend 'external-blas' requires a build with ARX_WITH_CBLAS=ON");
#endif
  }
  std::string known;
  for (const auto& n : registered_backends()) {
    if (!known.empty()) known += ", ";
    known += n;
  }
  throw unknown_backend("unknown backend '" + std::string(name) +
                        "'; registered: " + known);
}

}  // namespace arx
