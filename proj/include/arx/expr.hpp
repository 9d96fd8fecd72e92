#pragma once

// Lazy expressions over tensors.
//
// Operators build an immutable tree; nothing is computed until a result is
// demanded. A statement is then normalized (scalar literals folded into
// coefficient-carrying terms), its result kind inferred, and the tree lowered
// onto kernel invocations. Recognized forms become exactly one kernel call;
// anything else is evaluated by a recursive fallback.

#include <algorithm>
#include <concepts>
#include <cstddef>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <type_traits>
#include <utility>
#include <variant>
#include <vector>

#include "arx/context.hpp"
#include "arx/errors.hpp"
#include "arx/tensor.hpp"

namespace arx {

enum class BinaryOp { add, mul };
enum class AssignMode { assign, accumulate };

template <class T>
struct Node;
template <class T>
using NodePtr = std::shared_ptr<const Node<T>>;

template <class T>
struct ScalarLiteral {
  T value;
};

template <class T>
struct Leaf {
  TensorRef<T> tensor;
};

/// coef * op(tensor), op being transposition when `transposed` is set.
template <class T>
struct CanonicalTerm {
  T coef;
  TensorRef<T> tensor;
  bool transposed;
};

template <class T>
struct Transpose {
  NodePtr<T> child;
};

template <class T>
struct Binary {
  BinaryOp op;
  NodePtr<T> left, right;
};

template <class T>
struct Node {
  std::variant<ScalarLiteral<T>, Leaf<T>, CanonicalTerm<T>, Transpose<T>,
               Binary<T>>
      v;

  template <class Alt>
  const Alt* as() const noexcept {
    return std::get_if<Alt>(&v);
  }
};

template <class T>
NodePtr<T> make_literal(T value) {
  return std::make_shared<const Node<T>>(Node<T>{ScalarLiteral<T>{value}});
}
template <class T>
NodePtr<T> make_leaf(TensorRef<T> t) {
  return std::make_shared<const Node<T>>(Node<T>{Leaf<T>{t}});
}
template <class T>
NodePtr<T> make_term(T coef, TensorRef<T> t, bool transposed) {
  return std::make_shared<const Node<T>>(
      Node<T>{CanonicalTerm<T>{coef, t, transposed}});
}
template <class T>
NodePtr<T> make_transpose(NodePtr<T> child) {
  return std::make_shared<const Node<T>>(Node<T>{Transpose<T>{std::move(child)}});
}
template <class T>
NodePtr<T> make_binary(BinaryOp op, NodePtr<T> l, NodePtr<T> r) {
  return std::make_shared<const Node<T>>(
      Node<T>{Binary<T>{op, std::move(l), std::move(r)}});
}

/// Handle to an unevaluated expression. Holds references to the tensors it
/// mentions; it must not outlive them.
template <class T>
class Expr {
 public:
  using value_type = T;

  explicit Expr(NodePtr<T> node) : node_(std::move(node)) {}

  const NodePtr<T>& node() const noexcept { return node_; }

  /// Evaluates a scalar-valued expression.
  operator T() const;

 private:
  NodePtr<T> node_;
};

template <class X>
inline constexpr bool is_expr_v = false;
template <class T>
inline constexpr bool is_expr_v<Expr<T>> = true;

// ---------------------------------------------------------------------------
// construction

template <std::floating_point T>
Expr<T> lit(T value) {
  return Expr<T>(make_literal(value));
}

template <class T, std::size_t k>
Expr<T> leaf(const Tensor<T, k>& t) {
  return Expr<T>(make_leaf(t.ref()));
}
template <class T, std::size_t k>
void leaf(const Tensor<T, k>&&) = delete;

template <class T, std::size_t k>
  requires(k <= 2)
Expr<T> transpose(const Tensor<T, k>& t) {
  return Expr<T>(make_transpose(make_leaf(t.ref())));
}
template <class T, std::size_t k>
void transpose(const Tensor<T, k>&&) = delete;

template <class T>
Expr<T> transpose(const Expr<T>& e) {
  return Expr<T>(make_transpose(e.node()));
}

namespace detail {

template <class X>
struct operand_value {
  using type = void;
};
template <class T, std::size_t k>
struct operand_value<Tensor<T, k>> {
  using type = T;
};
template <class T>
struct operand_value<Expr<T>> {
  using type = T;
};

template <class X>
concept lazy_operand = is_tensor_v<X> || is_expr_v<X>;
template <class X>
concept scalar_operand = std::is_arithmetic_v<X>;

template <class L, class R>
concept operand_pair =
    (lazy_operand<L> && lazy_operand<R> &&
     std::is_same_v<typename operand_value<L>::type,
                    typename operand_value<R>::type>) ||
    (lazy_operand<L> && scalar_operand<R>) ||
    (scalar_operand<L> && lazy_operand<R>);

template <class L, class R>
using pair_value_t =
    std::conditional_t<lazy_operand<L>, typename operand_value<L>::type,
                       typename operand_value<R>::type>;

template <class T, class X>
NodePtr<T> to_node(X&& x) {
  using X0 = std::remove_cvref_t<X>;
  static_assert(!is_tensor_v<X0> || std::is_lvalue_reference_v<X>,
                "an expression cannot reference a temporary tensor");
  if constexpr (is_tensor_v<X0>)
    return make_leaf(x.ref());
  else if constexpr (is_expr_v<X0>)
    return x.node();
  else
    return make_literal(static_cast<T>(x));
}

}  // namespace detail

template <class L, class R>
  requires detail::operand_pair<std::remove_cvref_t<L>, std::remove_cvref_t<R>>
auto operator*(L&& l, R&& r) {
  using T = detail::pair_value_t<std::remove_cvref_t<L>, std::remove_cvref_t<R>>;
  return Expr<T>(make_binary(BinaryOp::mul,
                             detail::to_node<T>(std::forward<L>(l)),
                             detail::to_node<T>(std::forward<R>(r))));
}

template <class L, class R>
  requires detail::operand_pair<std::remove_cvref_t<L>, std::remove_cvref_t<R>>
auto operator+(L&& l, R&& r) {
  using T = detail::pair_value_t<std::remove_cvref_t<L>, std::remove_cvref_t<R>>;
  return Expr<T>(make_binary(BinaryOp::add,
                             detail::to_node<T>(std::forward<L>(l)),
                             detail::to_node<T>(std::forward<R>(r))));
}

// ---------------------------------------------------------------------------
// inspection

template <class T>
std::string describe(const NodePtr<T>& n) {
  auto shape = [](const TensorRef<T>& t) {
    std::string s = "T[";
    for (std::size_t d = 0; d < t.rank(); ++d) {
      if (d) s += 'x';
      s += std::to_string(t.extent(d));
    }
    return s + "]";
  };
  std::ostringstream os;
  std::visit(
      [&](const auto& x) {
        using X = std::decay_t<decltype(x)>;
        if constexpr (std::is_same_v<X, ScalarLiteral<T>>)
          os << x.value;
        else if constexpr (std::is_same_v<X, Leaf<T>>)
          os << shape(x.tensor);
        else if constexpr (std::is_same_v<X, CanonicalTerm<T>>)
          os << x.coef << '*' << shape(x.tensor) << (x.transposed ? "^T" : "");
        else if constexpr (std::is_same_v<X, Transpose<T>>)
          os << "transpose(" << describe(x.child) << ')';
        else
          os << '(' << describe(x.left)
             << (x.op == BinaryOp::add ? " + " : " * ") << describe(x.right)
             << ')';
      },
      n->v);
  return os.str();
}

template <class T>
bool structurally_equal(const NodePtr<T>& a, const NodePtr<T>& b) {
  if (a == b) return true;
  if (!a || !b || a->v.index() != b->v.index()) return false;
  auto same_tensor = [](const TensorRef<T>& x, const TensorRef<T>& y) {
    return x.object == y.object && x.same_storage(y);
  };
  return std::visit(
      [&](const auto& x) {
        using X = std::decay_t<decltype(x)>;
        const X& y = std::get<X>(b->v);
        if constexpr (std::is_same_v<X, ScalarLiteral<T>>)
          return x.value == y.value;
        else if constexpr (std::is_same_v<X, Leaf<T>>)
          return same_tensor(x.tensor, y.tensor);
        else if constexpr (std::is_same_v<X, CanonicalTerm<T>>)
          return x.coef == y.coef && x.transposed == y.transposed &&
                 same_tensor(x.tensor, y.tensor);
        else if constexpr (std::is_same_v<X, Transpose<T>>)
          return structurally_equal(x.child, y.child);
        else
          return x.op == y.op && structurally_equal(x.left, y.left) &&
                 structurally_equal(x.right, y.right);
      },
      a->v);
}

// ---------------------------------------------------------------------------
// normalization

namespace detail {

// Multiplies a normalized node by a scalar, folding into the leftmost factor.
template <class T>
NodePtr<T> scale(const NodePtr<T>& n, T a) {
  if (auto* lit = n->template as<ScalarLiteral<T>>())
    return make_literal(a * lit->value);
  if (auto* t = n->template as<CanonicalTerm<T>>())
    return make_term(a * t->coef, t->tensor, t->transposed);
  if (auto* tr = n->template as<Transpose<T>>())
    return make_transpose(scale(tr->child, a));
  if (auto* b = n->template as<Binary<T>>(); b && b->op == BinaryOp::mul)
    return make_binary(BinaryOp::mul, scale(b->left, a), b->right);
  return make_binary(BinaryOp::mul, make_literal(a), n);
}

}  // namespace detail

/// Folds scalar literals into term coefficients, wraps every tensor as a
/// CanonicalTerm, and cancels double transposition. Idempotent.
template <class T>
NodePtr<T> normalize(const NodePtr<T>& n) {
  if (n->template as<ScalarLiteral<T>>() || n->template as<CanonicalTerm<T>>())
    return n;
  if (auto* l = n->template as<Leaf<T>>()) return make_term(T(1), l->tensor, false);
  if (auto* tr = n->template as<Transpose<T>>()) {
    NodePtr<T> c = normalize(tr->child);
    if (c->template as<ScalarLiteral<T>>()) return c;
    if (auto* inner = c->template as<Transpose<T>>()) return inner->child;
    if (auto* t = c->template as<CanonicalTerm<T>>(); t && t->tensor.rank() <= 2)
      return make_term(t->coef, t->tensor, !t->transposed);
    return make_transpose(std::move(c));
  }
  const auto& b = std::get<Binary<T>>(n->v);
  NodePtr<T> l = normalize(b.left);
  NodePtr<T> r = normalize(b.right);
  auto* ll = l->template as<ScalarLiteral<T>>();
  auto* rl = r->template as<ScalarLiteral<T>>();
  if (b.op == BinaryOp::add) {
    if (ll && rl) return make_literal(ll->value + rl->value);
    return make_binary(BinaryOp::add, std::move(l), std::move(r));
  }
  if (ll && rl) return make_literal(ll->value * rl->value);
  if (ll) return detail::scale(r, ll->value);
  if (rl) return detail::scale(l, rl->value);
  return make_binary(BinaryOp::mul, std::move(l), std::move(r));
}

template <class T>
Expr<T> normalize(const Expr<T>& e) {
  return Expr<T>(normalize(e.node()));
}

// ---------------------------------------------------------------------------
// result kinds

struct ScalarKind {
  bool operator==(const ScalarKind&) const = default;
};

/// `row` marks a transposed vector.
struct TensorKind {
  std::vector<std::size_t> shape;
  bool row = false;

  std::size_t rank() const noexcept { return shape.size(); }
  bool operator==(const TensorKind&) const = default;
};

using ResultKind = std::variant<ScalarKind, TensorKind>;

inline bool is_scalar(const ResultKind& k) {
  return std::holds_alternative<ScalarKind>(k);
}

inline std::string to_string(const ResultKind& k) {
  if (is_scalar(k)) return "scalar";
  const auto& t = std::get<TensorKind>(k);
  std::string s = t.row ? "row(" : t.rank() == 1 ? "vector(" :
                  t.rank() == 2 ? "matrix(" : "tensor(";
  for (std::size_t d = 0; d < t.rank(); ++d) {
    if (d) s += 'x';
    s += std::to_string(t.shape[d]);
  }
  return s + ")";
}

template <class T>
ResultKind infer_kind(const NodePtr<T>& n) {
  auto tensor_kind = [](const TensorRef<T>& t, bool transposed) -> ResultKind {
    TensorKind k{{t.extents.begin(), t.extents.end()}, false};
    if (transposed) {
      if (k.rank() == 1)
        k.row = true;
      else if (k.rank() == 2)
        std::swap(k.shape[0], k.shape[1]);
      else
        throw unsupported_operation("transpose of a rank-" +
                                    std::to_string(k.rank()) + " tensor");
    }
    return k;
  };
  if (n->template as<ScalarLiteral<T>>()) return ScalarKind{};
  if (auto* l = n->template as<Leaf<T>>()) return tensor_kind(l->tensor, false);
  if (auto* t = n->template as<CanonicalTerm<T>>())
    return tensor_kind(t->tensor, t->transposed);
  if (auto* tr = n->template as<Transpose<T>>()) {
    ResultKind c = infer_kind(tr->child);
    if (is_scalar(c)) return c;
    auto& k = std::get<TensorKind>(c);
    if (k.rank() == 1)
      k.row = !k.row;
    else if (k.rank() == 2)
      std::swap(k.shape[0], k.shape[1]);
    else
      throw unsupported_operation("transpose of a rank-" +
                                  std::to_string(k.rank()) + " tensor");
    return c;
  }
  const auto& b = std::get<Binary<T>>(n->v);
  ResultKind lk = infer_kind(b.left);
  ResultKind rk = infer_kind(b.right);
  if (b.op == BinaryOp::add) {
    if (lk != rk) throw shape_error("add", to_string(lk), to_string(rk));
    return lk;
  }
  if (is_scalar(lk)) return rk;
  if (is_scalar(rk)) return lk;
  const auto& l = std::get<TensorKind>(lk);
  const auto& r = std::get<TensorKind>(rk);
  if (l.rank() == 2 && r.rank() == 2 && l.shape[1] == r.shape[0])
    return TensorKind{{l.shape[0], r.shape[1]}};
  if (l.rank() == 2 && r.rank() == 1 && !r.row && l.shape[1] == r.shape[0])
    return TensorKind{{l.shape[0]}};
  if (l.rank() == 1 && l.row && r.rank() == 1 && !r.row &&
      l.shape[0] == r.shape[0])
    return ScalarKind{};
  if (l.rank() == 1 && !l.row && r.rank() == 1 && r.row)
    return TensorKind{{l.shape[0], r.shape[0]}};
  if (l.rank() == 1 && l.row && r.rank() == 2 && l.shape[0] == r.shape[0])
    return TensorKind{{r.shape[1]}, true};
  throw shape_error("mul", to_string(lk), to_string(rk));
}

template <class T>
ResultKind infer_kind(const Expr<T>& e) {
  return infer_kind(e.node());
}

// ---------------------------------------------------------------------------
// lowering

/// One step of a lowered statement. Operands a, b are interpreted per kernel:
///   copy/axpy: a = x          dot: a = x, b = y        ger: a = x, b = y
///   gemv: a = A, b = x        gemm: a = A, b = B
///   fallback: dest <- beta*dest + value(expr); null expr scales dest only;
///             without dest, expr is a scalar to evaluate
template <class T>
struct LoweredOp {
  KernelId kernel = KernelId::fallback;
  TensorRef<T> a, b;
  bool trans_a = false, trans_b = false;
  T alpha = 1, beta = 0;
  NodePtr<T> expr;
  std::optional<DestRef<T>> dest;
  bool fresh = false;  // dest is a just-allocated, zero-filled result
};

namespace detail {

template <class T>
void flatten_sum(const NodePtr<T>& n, std::vector<NodePtr<T>>& out) {
  if (auto* b = n->template as<Binary<T>>(); b && b->op == BinaryOp::add) {
    flatten_sum(b->left, out);
    flatten_sum(b->right, out);
    return;
  }
  // (L + R)^T = L^T + R^T and (L R)^T = R^T L^T for rank <= 2 terms.
  if (auto* tr = n->template as<Transpose<T>>()) {
    auto flip = [](const NodePtr<T>& c) -> NodePtr<T> {
      auto* t = c->template as<CanonicalTerm<T>>();
      if (!t || t->tensor.rank() > 2) return nullptr;
      return make_term(t->coef, t->tensor, !t->transposed);
    };
    if (auto* b = tr->child->template as<Binary<T>>()) {
      if (b->op == BinaryOp::add) {
        flatten_sum(normalize(make_transpose(b->left)), out);
        flatten_sum(normalize(make_transpose(b->right)), out);
        return;
      }
      auto l = flip(b->left), r = flip(b->right);
      if (l && r) {
        out.push_back(make_binary(BinaryOp::mul, std::move(r), std::move(l)));
        return;
      }
    }
  }
  out.push_back(n);
}

template <class T>
bool reads(const NodePtr<T>& n, const DestRef<T>& dest) {
  if (auto* l = n->template as<Leaf<T>>())
    return l->tensor.overlaps(dest.data, dest.size());
  if (auto* t = n->template as<CanonicalTerm<T>>())
    return t->tensor.overlaps(dest.data, dest.size());
  if (auto* tr = n->template as<Transpose<T>>()) return reads(tr->child, dest);
  if (auto* b = n->template as<Binary<T>>())
    return reads(b->left, dest) || reads(b->right, dest);
  return false;
}

template <class T>
struct Match {
  KernelId kernel;
  const CanonicalTerm<T>* a;
  const CanonicalTerm<T>* b = nullptr;
  bool trans_a = false, trans_b = false;
};

// Structural patterns over a normalized addend; shapes are already checked.
template <class T>
std::optional<Match<T>> match(const NodePtr<T>& n, const DestRef<T>& dest) {
  if (auto* t = n->template as<CanonicalTerm<T>>()) {
    const bool plain = t->tensor.rank() == 1 || !t->transposed;
    if (plain && std::equal(t->tensor.extents.begin(), t->tensor.extents.end(),
                            dest.extents.begin(), dest.extents.end()))
      return Match<T>{KernelId::axpy, t};
    return std::nullopt;
  }
  auto* b = n->template as<Binary<T>>();
  if (!b || b->op != BinaryOp::mul) return std::nullopt;
  auto* l = b->left->template as<CanonicalTerm<T>>();
  auto* r = b->right->template as<CanonicalTerm<T>>();
  if (!l || !r) return std::nullopt;
  const std::size_t lr = l->tensor.rank(), rr = r->tensor.rank();
  if (lr == 2 && rr == 2)
    return Match<T>{KernelId::gemm, l, r, l->transposed, r->transposed};
  if (lr == 2 && rr == 1 && !r->transposed)
    return Match<T>{KernelId::gemv, l, r, l->transposed};
  // x^T A == (A^T x)^T
  if (lr == 1 && l->transposed && rr == 2)
    return Match<T>{KernelId::gemv, r, l, !r->transposed};
  if (lr == 1 && rr == 1 && !l->transposed && r->transposed)
    return Match<T>{KernelId::ger, l, r};
  return std::nullopt;
}

template <class T>
LoweredOp<T> fallback_op(NodePtr<T> expr, T beta, const DestRef<T>& dest,
                         bool fresh) {
  LoweredOp<T> op;
  op.kernel = KernelId::fallback;
  op.expr = std::move(expr);
  op.beta = beta;
  op.dest = dest;
  op.fresh = fresh;
  return op;
}

template <class T>
std::optional<LoweredOp<T>> match_dot(const NodePtr<T>& n) {
  auto* b = n->template as<Binary<T>>();
  if (!b || b->op != BinaryOp::mul) return std::nullopt;
  auto* l = b->left->template as<CanonicalTerm<T>>();
  auto* r = b->right->template as<CanonicalTerm<T>>();
  if (!l || !r || l->tensor.rank() != 1 || r->tensor.rank() != 1 ||
      !l->transposed || r->transposed)
    return std::nullopt;
  LoweredOp<T> op;
  op.kernel = KernelId::dot;
  op.a = l->tensor;
  op.b = r->tensor;
  op.alpha = l->coef * r->coef;
  return op;
}

template <class T>
void check_destination(const ResultKind& kind, const DestRef<T>& dest) {
  std::vector<std::size_t> dshape(dest.extents.begin(), dest.extents.end());
  const ResultKind dkind = TensorKind{dshape};
  if (is_scalar(kind))
    throw shape_error("assignment", to_string(kind), to_string(dkind));
  if (std::get<TensorKind>(kind).shape != dshape)
    throw shape_error("assignment", to_string(kind), to_string(dkind));
}

/// Lowers a normalized expression whose kind is already known.
template <class T>
std::vector<LoweredOp<T>> lower_normalized(const NodePtr<T>& n,
                                           const ResultKind& kind,
                                           std::optional<DestRef<T>> dest,
                                           AssignMode mode, bool fresh) {
  std::vector<LoweredOp<T>> ops;
  if (!dest) {
    if (!is_scalar(kind))
      throw std::invalid_argument(
          "a tensor-valued expression needs a destination");
    if (auto dot = match_dot(n))
      ops.push_back(*dot);
    else
      ops.push_back(LoweredOp<T>{KernelId::fallback, {}, {}, false, false,
                                 T(1), T(0), n, std::nullopt, false});
    return ops;
  }
  const DestRef<T>& d = *dest;
  check_destination(kind, d);
  const TensorRef<T> dref = d.as_ref();

  std::vector<NodePtr<T>> addends;
  flatten_sum(n, addends);

  // beta*dest addends fold into the kernels' accumulation coefficient.
  T beta = mode == AssignMode::accumulate ? T(1) : T(0);
  std::vector<NodePtr<T>> rest;
  for (auto& a : addends) {
    auto* t = a->template as<CanonicalTerm<T>>();
    if (t && t->tensor.same_storage(dref) &&
        (t->tensor.rank() == 1 || !t->transposed))
      beta += t->coef;
    else
      rest.push_back(a);
  }

  std::vector<Match<T>> kernels;
  std::vector<NodePtr<T>> unmatched;
  for (auto& a : rest) {
    const bool aliased = reads(a, d);
    auto m = match(a, d);
    if (m && aliased && m->kernel != KernelId::axpy)
      throw aliasing_error(std::string("destination is an operand of ") +
                           std::string(kernel_name(m->kernel)) + " in " +
                           describe(a));
    if (m && !aliased)
      kernels.push_back(*m);
    else
      unmatched.push_back(a);
  }
  // Kernels with a native beta go first so they absorb it.
  std::stable_partition(kernels.begin(), kernels.end(), [](const Match<T>& m) {
    return m.kernel == KernelId::gemm || m.kernel == KernelId::gemv;
  });

  T pending = beta;
  if (!unmatched.empty()) {
    // Evaluated before any kernel writes, so it may read the destination.
    NodePtr<T> sum = unmatched.front();
    for (std::size_t i = 1; i < unmatched.size(); ++i)
      sum = make_binary(BinaryOp::add, sum, unmatched[i]);
    ops.push_back(fallback_op(sum, pending, d, fresh));
    pending = T(1);
  }

  for (const auto& m : kernels) {
    LoweredOp<T> op;
    op.dest = d;
    op.fresh = fresh;
    op.a = m.a->tensor;
    op.trans_a = m.trans_a;
    switch (m.kernel) {
      case KernelId::gemm:
      case KernelId::gemv:
        op.kernel = m.kernel;
        op.b = m.b->tensor;
        op.trans_b = m.trans_b;
        op.alpha = m.a->coef * m.b->coef;
        // Fresh results are zero-filled, so accumulate onto them.
        op.beta = (fresh && pending == T(0)) ? T(1) : pending;
        ops.push_back(op);
        break;
      case KernelId::ger:
        if (pending != T(1) && !fresh)
          ops.push_back(fallback_op<T>(nullptr, pending, d, fresh));
        op.kernel = KernelId::ger;
        op.b = m.b->tensor;
        op.alpha = m.a->coef * m.b->coef;
        op.beta = T(1);
        ops.push_back(op);
        break;
      default:
        op.alpha = m.a->coef;
        if (pending == T(0) && m.a->coef == T(1)) {
          op.kernel = KernelId::copy;
          op.beta = T(0);
        } else if (pending == T(1) || (fresh && pending == T(0))) {
          op.kernel = KernelId::axpy;
          op.beta = T(1);
        } else {
          ops.push_back(fallback_op(make_term(m.a->coef, m.a->tensor,
                                              m.a->transposed),
                                    pending, d, fresh));
          pending = T(1);
          continue;
        }
        ops.push_back(op);
        break;
    }
    pending = T(1);
  }

  if (rest.empty() && beta != T(1))
    ops.push_back(fallback_op<T>(nullptr, beta, d, fresh));
  return ops;
}

}  // namespace detail

/// Lowers `dest (=|+=) e`, or a scalar statement when `dest` is empty.
template <class T>
std::vector<LoweredOp<T>> lower(std::optional<DestRef<T>> dest,
                                AssignMode mode, const Expr<T>& e,
                                bool fresh = false) {
  NodePtr<T> n = normalize(e.node());
  return detail::lower_normalized(n, infer_kind(n), dest, mode, fresh);
}

// ---------------------------------------------------------------------------
// fallback evaluation

namespace detail {

// Intermediate value of the recursive evaluator. Tensor-valued operands may
// borrow their storage, carry a pending coefficient and a pending transpose.
template <class T>
struct Operand {
  bool scalar = false;
  T value{};
  std::vector<std::size_t> shape;  // logical
  bool row = false;
  bool trans = false;  // rank 2: storage holds the transpose of the value
  T coef = 1;
  const T* borrowed = nullptr;
  std::vector<T> owned;
  bool is_owned = false;

  const T* data() const { return is_owned ? owned.data() : borrowed; }
  std::size_t size() const {
    std::size_t s = 1;
    for (auto e : shape) s *= e;
    return s;
  }
  std::size_t stored_rows() const { return trans ? shape[1] : shape[0]; }
  std::size_t stored_cols() const { return trans ? shape[0] : shape[1]; }

  // Logical column-major element i, including the coefficient.
  T at(std::size_t i) const {
    if (trans) {
      const std::size_t m = shape[0];
      const std::size_t r = i % m, c = i / m;
      return coef * data()[c + r * shape[1]];
    }
    return coef * data()[i];
  }
};

template <class T>
Operand<T> fresh_operand(std::vector<std::size_t> shape, bool row,
                         Context& ctx) {
  Operand<T> o;
  o.shape = std::move(shape);
  o.row = row;
  o.owned.assign(o.size(), T(0));
  o.is_owned = true;
  if (!o.owned.empty()) ctx.note_allocation();
  return o;
}

template <class T>
Operand<T> borrow(const TensorRef<T>& t, T coef, bool transposed) {
  Operand<T> o;
  o.shape.assign(t.extents.begin(), t.extents.end());
  o.borrowed = t.data;
  o.coef = coef;
  if (transposed) {
    if (o.shape.size() == 1)
      o.row = true;
    else if (o.shape.size() == 2) {
      o.trans = true;
      std::swap(o.shape[0], o.shape[1]);
    } else {
      throw unsupported_operation("transpose of a rank-" +
                                  std::to_string(o.shape.size()) + " tensor");
    }
  }
  return o;
}

template <class T>
Operand<T> eval_operand(const NodePtr<T>& n, Context& ctx) {
  if (auto* lit = n->template as<ScalarLiteral<T>>()) {
    Operand<T> o;
    o.scalar = true;
    o.value = lit->value;
    return o;
  }
  if (auto* l = n->template as<Leaf<T>>()) return borrow(l->tensor, T(1), false);
  if (auto* t = n->template as<CanonicalTerm<T>>())
    return borrow(t->tensor, t->coef, t->transposed);
  if (auto* tr = n->template as<Transpose<T>>()) {
    Operand<T> o = eval_operand(tr->child, ctx);
    if (o.scalar) return o;
    if (o.shape.size() == 1) {
      o.row = !o.row;
    } else if (o.shape.size() == 2) {
      o.trans = !o.trans;
      std::swap(o.shape[0], o.shape[1]);
    } else {
      throw unsupported_operation("transpose of a rank-" +
                                  std::to_string(o.shape.size()) + " tensor");
    }
    return o;
  }

  const auto& b = std::get<Binary<T>>(n->v);
  Operand<T> l = eval_operand(b.left, ctx);
  Operand<T> r = eval_operand(b.right, ctx);

  if (b.op == BinaryOp::add) {
    if (l.scalar && r.scalar) {
      l.value += r.value;
      return l;
    }
    if (l.scalar || r.scalar || l.shape != r.shape || l.row != r.row)
      throw shape_error("add", describe(b.left), describe(b.right));
    Operand<T> out = fresh_operand<T>(l.shape, l.row, ctx);
    for (std::size_t i = 0; i < out.owned.size(); ++i)
      out.owned[i] = l.at(i) + r.at(i);
    ctx.note_writes(out.owned.size());
    return out;
  }

  if (l.scalar && r.scalar) {
    l.value *= r.value;
    return l;
  }
  if (l.scalar) {
    r.coef *= l.value;
    return r;
  }
  if (r.scalar) {
    l.coef *= r.value;
    return l;
  }

  const T alpha = l.coef * r.coef;
  const std::size_t lr = l.shape.size(), rr = r.shape.size();
  if (lr == 2 && rr == 2 && l.shape[1] == r.shape[0]) {
    const std::size_t m = l.shape[0], n2 = r.shape[1], k = l.shape[1];
    Operand<T> out = fresh_operand<T>({m, n2}, false, ctx);
    ctx.gemm(l.trans, r.trans, m, n2, k, alpha, l.data(), l.stored_rows(),
             r.data(), r.stored_rows(), T(0), out.owned.data(), m);
    return out;
  }
  if (lr == 2 && rr == 1 && !r.row && l.shape[1] == r.shape[0]) {
    Operand<T> out = fresh_operand<T>({l.shape[0]}, false, ctx);
    ctx.gemv(l.trans, l.stored_rows(), l.stored_cols(), alpha, l.data(),
             l.stored_rows(), r.data(), T(0), out.owned.data());
    return out;
  }
  if (lr == 1 && l.row && rr == 1 && !r.row && l.shape[0] == r.shape[0]) {
    Operand<T> o;
    o.scalar = true;
    o.value = alpha * ctx.dot(l.shape[0], l.data(), r.data());
    return o;
  }
  if (lr == 1 && !l.row && rr == 1 && r.row) {
    const std::size_t m = l.shape[0], n2 = r.shape[0];
    Operand<T> out = fresh_operand<T>({m, n2}, false, ctx);
    ctx.ger(m, n2, alpha, l.data(), r.data(), out.owned.data(), m);
    return out;
  }
  if (lr == 1 && l.row && rr == 2 && l.shape[0] == r.shape[0]) {
    Operand<T> out = fresh_operand<T>({r.shape[1]}, true, ctx);
    ctx.gemv(!r.trans, r.stored_rows(), r.stored_cols(), alpha, r.data(),
             r.stored_rows(), l.data(), T(0), out.owned.data());
    return out;
  }
  throw shape_error("mul", describe(b.left), describe(b.right));
}

// dest <- beta*dest + value(expr)
template <class T>
void run_fallback(const LoweredOp<T>& op, Context& ctx) {
  ++ctx.log().fallbacks;
  const DestRef<T>& d = *op.dest;
  const std::size_t n = d.size();
  T* y = d.data;
  if (!op.expr) {
    if (op.beta == T(1)) return;
    if (op.beta == T(0))
      std::fill_n(y, n, T(0));
    else
      for (std::size_t i = 0; i < n; ++i) y[i] *= op.beta;
    ctx.note_writes(n);
    return;
  }
  Operand<T> v = eval_operand(op.expr, ctx);
  if (!v.is_owned && v.borrowed && n != 0) {
    // The value aliases the destination: materialize before overwriting.
    std::less<const T*> lt;
    if (lt(v.borrowed, y + n) && lt(y, v.borrowed + v.size())) {
      std::vector<T> copy(v.borrowed, v.borrowed + v.size());
      ctx.note_allocation();
      v.owned = std::move(copy);
      v.is_owned = true;
    }
  }
  if (op.beta == T(0))
    for (std::size_t i = 0; i < n; ++i) y[i] = v.at(i);
  else if (op.beta == T(1))
    for (std::size_t i = 0; i < n; ++i) y[i] += v.at(i);
  else
    for (std::size_t i = 0; i < n; ++i) y[i] = op.beta * y[i] + v.at(i);
  ctx.note_writes(n);
}

}  // namespace detail

/// Runs a lowered statement; returns the scalar result for scalar statements.
template <class T>
T execute(const std::vector<LoweredOp<T>>& ops, Context& ctx) {
  ContextScope scope(ctx);
  T result = 0;
  for (const auto& op : ops) {
    switch (op.kernel) {
      case KernelId::copy:
        ctx.copy(op.a.size(), op.a.data, op.dest->data);
        break;
      case KernelId::axpy:
        ctx.axpy(op.a.size(), op.alpha, op.a.data, op.dest->data);
        break;
      case KernelId::dot:
        result = op.alpha * ctx.dot(op.a.size(), op.a.data, op.b.data);
        break;
      case KernelId::nrm2:
        result = ctx.nrm2(op.a.size(), op.a.data);
        break;
      case KernelId::gemv:
        ctx.gemv(op.trans_a, op.a.extent(0), op.a.extent(1), op.alpha,
                 op.a.data, op.a.extent(0), op.b.data, op.beta,
                 op.dest->data);
        break;
      case KernelId::ger:
        ctx.ger(op.a.size(), op.b.size(), op.alpha, op.a.data, op.b.data,
                op.dest->data, op.a.size());
        break;
      case KernelId::gemm: {
        const std::size_t m = op.trans_a ? op.a.extent(1) : op.a.extent(0);
        const std::size_t k = op.trans_a ? op.a.extent(0) : op.a.extent(1);
        const std::size_t n = op.trans_b ? op.b.extent(0) : op.b.extent(1);
        ctx.gemm(op.trans_a, op.trans_b, m, n, k, op.alpha, op.a.data,
                 op.a.extent(0), op.b.data, op.b.extent(0), op.beta,
                 op.dest->data, m);
        break;
      }
      case KernelId::fallback:
        if (op.dest) {
          detail::run_fallback(op, ctx);
        } else {
          ++ctx.log().fallbacks;
          auto v = detail::eval_operand(op.expr, ctx);
          if (!v.scalar)
            throw shape_error("scalar statement", "scalar",
                              "tensor-valued expression");
          result = v.value;
        }
        break;
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// evaluation

/// Rank-erased result of evaluating an expression.
template <class T>
struct Value {
  ResultKind kind;
  T scalar{};
  std::vector<T> elements;  // column-major in the kind's shape

  bool is_scalar() const { return arx::is_scalar(kind); }
  const std::vector<std::size_t>& shape() const {
    return std::get<TensorKind>(kind).shape;
  }
};

template <class T>
Value<T> evaluate(const Expr<T>& e, Context& ctx = active_context()) {
  NodePtr<T> n = normalize(e.node());
  Value<T> out{infer_kind(n), T{}, {}};
  if (out.is_scalar()) {
    out.scalar = execute(detail::lower_normalized<T>(n, out.kind, std::nullopt,
                                                     AssignMode::assign, false),
                         ctx);
    return out;
  }
  const auto& shape = out.shape();
  std::size_t size = 1;
  for (auto s : shape) size *= s;
  out.elements.assign(size, T(0));
  if (size) ctx.note_allocation();
  DestRef<T> d{out.elements.data(), std::span<const std::size_t>(shape), nullptr};
  execute(detail::lower_normalized<T>(n, out.kind, d, AssignMode::assign, true),
          ctx);
  return out;
}

/// dest <- value(e). Shapes must match.
template <class T, std::size_t k>
void assign(Tensor<T, k>& dest, const Expr<T>& e,
            Context& ctx = active_context()) {
  execute(lower<T>(dest.dest(), AssignMode::assign, e), ctx);
}

/// dest <- dest + value(e).
template <class T, std::size_t k>
void accumulate(Tensor<T, k>& dest, const Expr<T>& e,
                Context& ctx = active_context()) {
  execute(lower<T>(dest.dest(), AssignMode::accumulate, e), ctx);
}

template <class T>
Expr<T>::operator T() const {
  // transpose(x) * y goes straight to dot.
  if (auto* b = node_->template as<Binary<T>>(); b && b->op == BinaryOp::mul) {
    auto* tr = b->left->template as<Transpose<T>>();
    auto* x = tr ? tr->child->template as<Leaf<T>>() : nullptr;
    auto* y = b->right->template as<Leaf<T>>();
    if (x && y && x->tensor.rank() == 1 && y->tensor.rank() == 1 &&
        x->tensor.size() == y->tensor.size())
      return active_context().dot(x->tensor.size(), x->tensor.data, y->tensor.data);
  }
  Value<T> v = evaluate(*this);
  if (!v.is_scalar())
    throw shape_error("conversion to scalar", to_string(v.kind), "scalar");
  return v.scalar;
}

// ---------------------------------------------------------------------------
// Tensor members that evaluate expressions

template <std::floating_point T, std::size_t k>
Tensor<T, k>::Tensor(const Expr<T>& e) {
  Context& ctx = active_context();
  NodePtr<T> n = normalize(e.node());
  ResultKind kind = infer_kind(n);
  if (is_scalar(kind) || std::get<TensorKind>(kind).rank() != k)
    throw shape_error("construction", to_string(kind),
                      "rank-" + std::to_string(k) + " tensor");
  const auto& shape = std::get<TensorKind>(kind).shape;
  std::copy_n(shape.begin(), k, extents_.begin());
  size_ = product();
  allocate(true);
  execute(detail::lower_normalized<T>(n, kind, dest(), AssignMode::assign, true),
          ctx);
}

template <std::floating_point T, std::size_t k>
Tensor<T, k>& Tensor<T, k>::operator=(const Expr<T>& e) {
  NodePtr<T> n = normalize(e.node());
  ResultKind kind = infer_kind(n);
  if (owns_ && !is_scalar(kind) && std::get<TensorKind>(kind).rank() == k &&
      !std::equal(extents_.begin(), extents_.end(),
                  std::get<TensorKind>(kind).shape.begin())) {
    // Owning tensors take the result's shape, as with copy assignment.
    *this = Tensor(e);
    return *this;
  }
  execute(detail::lower_normalized<T>(n, kind, dest(), AssignMode::assign,
                                      false),
          active_context());
  return *this;
}

template <std::floating_point T, std::size_t k>
Tensor<T, k>& Tensor<T, k>::operator+=(const Expr<T>& e) {
  accumulate(*this, e);
  return *this;
}

template <std::floating_point T, std::size_t k>
Tensor<T, k>& Tensor<T, k>::operator+=(const Tensor& x) {
  accumulate(*this, leaf(x));
  return *this;
}

}  // namespace arx
