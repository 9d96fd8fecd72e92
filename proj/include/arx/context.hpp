#pragma once

// Evaluation context: the backend in use plus the instrumentation log that
// records every kernel invocation, element write and tensor allocation made
// on behalf of the caller.

#include <cstddef>
#include <string_view>
#include <vector>

#include "arx/backend.hpp"

namespace arx {

enum class KernelId { copy, axpy, dot, nrm2, gemv, ger, gemm, fallback };

constexpr std::string_view kernel_name(KernelId id) noexcept {
  switch (id) {
    case KernelId::copy: return "copy";
    case KernelId::axpy: return "axpy";
    case KernelId::dot: return "dot";
    case KernelId::nrm2: return "nrm2";
    case KernelId::gemv: return "gemv";
    case KernelId::ger: return "ger";
    case KernelId::gemm: return "gemm";
    case KernelId::fallback: return "fallback";
  }
  return "?";
}

struct KernelCall {
  KernelId kernel;
  std::size_t m = 0, n = 0, k = 0;  // unused extents are zero
  double alpha = 0, beta = 0;
  bool trans_a = false, trans_b = false;
};

class CallLog {
 public:
  /// Kernel calls are appended only while recording; counters always run.
  void set_recording(bool on) noexcept { recording_ = on; }
  bool recording() const noexcept { return recording_; }

  void reset() noexcept {
    calls_.clear();
    element_writes = 0;
    allocations = 0;
    fallbacks = 0;
  }

  void record(const KernelCall& call) {
    if (recording_) calls_.push_back(call);
  }

  const std::vector<KernelCall>& calls() const noexcept { return calls_; }

  std::size_t count(KernelId id) const noexcept {
    std::size_t c = 0;
    for (const auto& call : calls_) c += call.kernel == id;
    return c;
  }

  std::size_t element_writes = 0;
  std::size_t allocations = 0;
  std::size_t fallbacks = 0;

 private:
  std::vector<KernelCall> calls_;
  bool recording_ = false;
};

/// Dispatches kernels to a backend and accounts for them in its log.
/// A context is used by one thread at a time.
class Context {
 public:
  Context() : backend_(&naive_backend()) {}
  explicit Context(Backend& backend) : backend_(&backend) {}

  Backend& backend() const noexcept { return *backend_; }
  void set_backend(Backend& backend) noexcept { backend_ = &backend; }

  CallLog& log() noexcept { return log_; }
  const CallLog& log() const noexcept { return log_; }

  void note_allocation() noexcept { ++log_.allocations; }
  void note_writes(std::size_t n) noexcept { log_.element_writes += n; }

  template <class T>
  void copy(std::size_t n, const T* x, T* y) {
    backend_->copy(n, x, y);
    note_writes(n);
    log_.record({KernelId::copy, n});
  }

  template <class T>
  void axpy(std::size_t n, T alpha, const T* x, T* y) {
    backend_->axpy(n, alpha, x, y);
    if (alpha != T(0)) note_writes(n);
    log_.record({KernelId::axpy, n, 0, 0, double(alpha), 1.0});
  }

  template <class T>
  T dot(std::size_t n, const T* x, const T* y) {
    T r = backend_->dot(n, x, y);
    log_.record({KernelId::dot, n});
    return r;
  }

  template <class T>
  T nrm2(std::size_t n, const T* x) {
    T r = backend_->nrm2(n, x);
    log_.record({KernelId::nrm2, n});
    return r;
  }

  template <class T>
  void gemv(bool trans, std::size_t m, std::size_t n, T alpha, const T* a,
            std::size_t lda, const T* x, T beta, T* y) {
    backend_->gemv(trans, m, n, alpha, a, lda, x, beta, y);
    const std::size_t leny = trans ? n : m;
    if (!(alpha == T(0) && beta == T(1))) note_writes(leny);
    log_.record({KernelId::gemv, m, n, 0, double(alpha), double(beta), trans});
  }

  template <class T>
  void ger(std::size_t m, std::size_t n, T alpha, const T* x, const T* y, T* a,
           std::size_t lda) {
    backend_->ger(m, n, alpha, x, y, a, lda);
    if (alpha != T(0)) note_writes(m * n);
    log_.record({KernelId::ger, m, n, 0, double(alpha), 1.0});
  }

  template <class T>
  void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n,
            std::size_t k, T alpha, const T* a, std::size_t lda, const T* b,
            std::size_t ldb, T beta, T* c, std::size_t ldc) {
    backend_->gemm(trans_a, trans_b, m, n, k, alpha, a, lda, b, ldb, beta, c,
                   ldc);
    if (!((alpha == T(0) || k == 0) && beta == T(1))) note_writes(m * n);
    log_.record({KernelId::gemm, m, n, k, double(alpha), double(beta), trans_a,
                 trans_b});
  }

 private:
  Backend* backend_;
  CallLog log_;
};

namespace detail {
inline Context*& active_context_slot() {
  thread_local Context* active = nullptr;
  return active;
}
}  // namespace detail

/// The per-thread context used when no context is passed explicitly.
inline Context& default_context() {
  thread_local Context ctx;
  return ctx;
}

/// The context that operator syntax and tensor members dispatch through.
inline Context& active_context() {
  Context* c = detail::active_context_slot();
  return c ? *c : default_context();
}

/// Makes `ctx` the active context of this thread for the scope's lifetime.
class ContextScope {
 public:
  explicit ContextScope(Context& ctx) : saved_(detail::active_context_slot()) {
    detail::active_context_slot() = &ctx;
  }
  ~ContextScope() { detail::active_context_slot() = saved_; }
  ContextScope(const ContextScope&) = delete;
  ContextScope& operator=(const ContextScope&) = delete;

 private:
  Context* saved_;
};

/// Routes subsequent evaluations on this thread through the named backend.
inline Backend& select_backend(std::string_view name) {
  Backend& b = find_backend(name);
  active_context().set_backend(b);
  return b;
}

inline CallLog log_snapshot() { return active_context().log(); }

}  // namespace arx
