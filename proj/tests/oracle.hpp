#pragma once

// Reference machinery for tests. Nothing here calls a kernel or the library's
// lowering: expressions are walked as raw trees and evaluated with plain
// loops in long double.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <deque>
#include <random>
#include <stdexcept>
#include <vector>

#include "arx/arx.hpp"

namespace oracle {

// Everything of rank <= 2 is held as a matrix: a vector is n x 1, a
// transposed vector 1 x n. Rank >= 3 values keep their full shape.
struct Value {
  bool scalar = false;
  long double s = 0;
  std::vector<std::size_t> shape;  // logical, as reported by infer_kind
  bool row = false;
  std::size_t rows = 0, cols = 0;  // matrix view for rank <= 2
  std::vector<long double> v;      // column-major

  long double& at(std::size_t i, std::size_t j) { return v[i + j * rows]; }
  long double at(std::size_t i, std::size_t j) const { return v[i + j * rows]; }
};

inline Value from_tensor(const arx::TensorRef<double>& t, long double coef) {
  Value r;
  r.shape.assign(t.extents.begin(), t.extents.end());
  r.v.resize(t.size());
  for (std::size_t i = 0; i < r.v.size(); ++i) r.v[i] = coef * t.data[i];
  if (r.shape.size() == 1) {
    r.rows = r.shape[0];
    r.cols = 1;
  } else if (r.shape.size() == 2) {
    r.rows = r.shape[0];
    r.cols = r.shape[1];
  }
  return r;
}

inline Value transposed(const Value& a) {
  if (a.scalar) return a;
  if (a.shape.size() > 2) throw std::logic_error("oracle: rank-3 transpose");
  Value r = a;
  r.rows = a.cols;
  r.cols = a.rows;
  for (std::size_t i = 0; i < a.rows; ++i)
    for (std::size_t j = 0; j < a.cols; ++j) r.at(j, i) = a.at(i, j);
  if (a.shape.size() == 1)
    r.row = !a.row;
  else
    std::swap(r.shape[0], r.shape[1]);
  return r;
}

inline Value eval(const arx::NodePtr<double>& n) {
  using namespace arx;
  if (auto* l = n->as<ScalarLiteral<double>>()) {
    Value r;
    r.scalar = true;
    r.s = l->value;
    return r;
  }
  if (auto* l = n->as<Leaf<double>>()) return from_tensor(l->tensor, 1);
  if (auto* t = n->as<CanonicalTerm<double>>()) {
    Value r = from_tensor(t->tensor, t->coef);
    return t->transposed ? transposed(r) : r;
  }
  if (auto* t = n->as<Transpose<double>>()) return transposed(eval(t->child));

  const auto& b = std::get<Binary<double>>(n->v);
  Value l = eval(b.left), r = eval(b.right);
  if (b.op == BinaryOp::add) {
    if (l.scalar && r.scalar) {
      l.s += r.s;
      return l;
    }
    if (l.shape != r.shape || l.row != r.row)
      throw std::logic_error("oracle: add of different shapes");
    for (std::size_t i = 0; i < l.v.size(); ++i) l.v[i] += r.v[i];
    return l;
  }
  if (l.scalar || r.scalar) {
    Value out = l.scalar ? r : l;
    const long double a = l.scalar ? l.s : r.s;
    if (out.scalar)
      out.s *= a;
    else
      for (auto& x : out.v) x *= a;
    return out;
  }
  if (l.cols != r.rows) throw std::logic_error("oracle: inner dimension");
  Value out;
  out.rows = l.rows;
  out.cols = r.cols;
  out.v.assign(out.rows * out.cols, 0.0L);
  for (std::size_t i = 0; i < out.rows; ++i)
    for (std::size_t j = 0; j < out.cols; ++j) {
      long double sum = 0;
      for (std::size_t p = 0; p < l.cols; ++p) sum += l.at(i, p) * r.at(p, j);
      out.at(i, j) = sum;
    }
  const bool lvec = l.shape.size() == 1, rvec = r.shape.size() == 1;
  if (lvec && l.row && rvec && !r.row) {
    out.scalar = true;
    out.s = out.v[0];
    out.v.clear();
  } else if (lvec && !l.row && rvec && r.row) {
    out.shape = {out.rows, out.cols};
  } else if (!lvec && rvec) {
    out.shape = {out.rows};
  } else if (lvec && l.row && !rvec) {
    out.shape = {out.cols};
    out.row = true;
  } else {
    out.shape = {out.rows, out.cols};
  }
  return out;
}

inline Value eval(const arx::Expr<double>& e) { return eval(e.node()); }

/// max |got - want| / max |want| over all elements.
inline double relative_error(const std::vector<double>& got, const Value& want) {
  if (want.scalar) {
    long double d = std::fabs(static_cast<long double>(got.at(0)) - want.s);
    long double m = std::fabs(want.s);
    return m == 0 ? static_cast<double>(d) : static_cast<double>(d / m);
  }
  if (got.size() != want.v.size()) return INFINITY;
  long double diff = 0, mag = 0;
  for (std::size_t i = 0; i < got.size(); ++i) {
    diff = std::max(diff, std::fabs(static_cast<long double>(got[i]) - want.v[i]));
    mag = std::max(mag, std::fabs(want.v[i]));
  }
  return mag == 0 ? static_cast<double>(diff) : static_cast<double>(diff / mag);
}

inline double relative_error(double got, const Value& want) {
  return relative_error(std::vector<double>{got}, want);
}

template <class T>
std::vector<T> triple_loop_gemm(bool ta, bool tb, std::size_t m, std::size_t n,
                                std::size_t k, T alpha, const T* a,
                                std::size_t lda, const T* b, std::size_t ldb,
                                T beta, const T* c) {
  std::vector<T> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      long double sum = 0;
      for (std::size_t p = 0; p < k; ++p) {
        long double x = ta ? a[p + i * lda] : a[i + p * lda];
        long double y = tb ? b[j + p * ldb] : b[p + j * ldb];
        sum += x * y;
      }
      out[i + j * m] = static_cast<T>(alpha * sum + (long double)beta * c[i + j * m]);
    }
  return out;
}

inline double kahan_dot(std::size_t n, const double* x, const double* y) {
  double sum = 0, comp = 0;
  for (std::size_t i = 0; i < n; ++i) {
    double term = x[i] * y[i] - comp;
    double t = sum + term;
    comp = (t - sum) - term;
    sum = t;
  }
  return sum;
}

/// Result kinds the generator can target.
struct Kind {
  enum Tag { scalar, vector, row, matrix, cube } tag;
  std::size_t a = 0, b = 0, c = 0;
};

/// Kind-directed random expressions over a pool of random tensors that the
/// generator owns. Depth counts operator levels above the leaves.
class Generator {
 public:
  explicit Generator(std::uint64_t seed, std::size_t max_extent = 16)
      : rng_(seed), max_extent_(max_extent) {}

  std::size_t extent() { return pick(1, max_extent_); }
  std::size_t pick(std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng_);
  }
  double uniform(double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng_);
  }
  bool coin(double p = 0.5) { return std::bernoulli_distribution(p)(rng_); }

  Kind random_kind() {
    switch (pick(0, 9)) {
      case 0: return {Kind::scalar};
      case 1:
      case 2: return {Kind::vector, extent()};
      case 3: return {Kind::row, extent()};
      case 4: return {Kind::cube, pick(1, 4), pick(1, 4), pick(1, 4)};
      default: return {Kind::matrix, extent(), extent()};
    }
  }

  arx::Vector<double>& vector(std::size_t n) {
    return vectors_.emplace_back(n, [&](auto) { return uniform(-1, 1); });
  }
  arx::Matrix<double>& matrix(std::size_t m, std::size_t n) {
    return matrices_.emplace_back(m, n, [&](auto, auto) { return uniform(-1, 1); });
  }
  arx::Tensor<double, 3>& cube(std::size_t a, std::size_t b, std::size_t c) {
    return cubes_.emplace_back(a, b, c,
                               [&](auto, auto, auto) { return uniform(-1, 1); });
  }

  arx::Expr<double> leaf_of(const Kind& k) {
    using arx::leaf;
    using arx::lit;
    using arx::transpose;
    switch (k.tag) {
      case Kind::scalar: return lit(uniform(-2, 2));
      case Kind::vector: return leaf(vector(k.a));
      case Kind::row: return transpose(vector(k.a));
      case Kind::matrix:
        return coin(0.3) ? transpose(matrix(k.b, k.a)) : leaf(matrix(k.a, k.b));
      case Kind::cube: return leaf(cube(k.a, k.b, k.c));
    }
    throw std::logic_error("kind");
  }

  arx::Expr<double> expr(const Kind& k, int depth) {
    using arx::transpose;
    if (depth <= 0 || coin(0.2)) return leaf_of(k);
    const int d = depth - 1;
    const Kind s{Kind::scalar};
    switch (pick(0, 5)) {
      case 0: return expr(k, d) + expr(k, d);
      case 1:
        if (k.tag != Kind::scalar)
          return coin() ? expr(s, d) * expr(k, d) : expr(k, d) * expr(s, d);
        break;
      case 2:
        if (k.tag == Kind::matrix || k.tag == Kind::vector || k.tag == Kind::row ||
            k.tag == Kind::scalar)
          if (coin(0.3)) return transpose(expr(flip(k), d));
        break;
      default:
        break;
    }
    const std::size_t inner = extent();
    switch (k.tag) {
      case Kind::scalar:
        if (coin(0.8))
          return expr({Kind::row, inner}, d) * expr({Kind::vector, inner}, d);
        return expr(s, d) * expr(s, d);
      case Kind::vector:
        return expr({Kind::matrix, k.a, inner}, d) * expr({Kind::vector, inner}, d);
      case Kind::row:
        return expr({Kind::row, inner}, d) * expr({Kind::matrix, inner, k.a}, d);
      case Kind::matrix:
        if (coin(0.25))
          return expr({Kind::vector, k.a}, d) * expr({Kind::row, k.b}, d);
        return expr({Kind::matrix, k.a, inner}, d) *
               expr({Kind::matrix, inner, k.b}, d);
      case Kind::cube:
        return expr(k, d) + expr(k, d);
    }
    throw std::logic_error("kind");
  }

  static Kind flip(const Kind& k) {
    switch (k.tag) {
      case Kind::vector: return {Kind::row, k.a};
      case Kind::row: return {Kind::vector, k.a};
      case Kind::matrix: return {Kind::matrix, k.b, k.a};
      default: return k;
    }
  }

  std::mt19937_64& rng() { return rng_; }

 private:
  std::mt19937_64 rng_;
  std::size_t max_extent_;
  std::deque<arx::Vector<double>> vectors_;
  std::deque<arx::Matrix<double>> matrices_;
  std::deque<arx::Tensor<double, 3>> cubes_;
};

}  // namespace oracle
