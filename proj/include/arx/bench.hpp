#pragma once

// Overhead measurement: expression syntax against direct kernel calls.

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <functional>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include "arx/context.hpp"
#include "arx/expr.hpp"
#include "arx/tensor.hpp"

namespace arx::bench {

inline constexpr std::string_view kOperations[] = {"dot", "gemm", "gemv"};
inline constexpr std::string_view kExpression = "expression";
inline constexpr std::string_view kDirect = "direct";
inline constexpr std::string_view kCsvHeader =
    "operation,n,variant,mean_us,std_us,reps";

struct BenchSpec {
  std::string operation;
  std::vector<std::int64_t> sizes;
  std::int64_t repetitions = 10;
  std::string backend = std::string(kNaiveBackend);
  std::string output;
  std::uint64_t seed = 42;
};

struct BenchRecord {
  std::string operation;
  std::size_t n = 0;
  std::string variant;
  double mean_us = 0;
  double std_us = 0;
  std::size_t reps = 0;
  std::uint64_t operand_checksum = 0;  // not part of the CSV

  bool operator==(const BenchRecord&) const = default;
};

/// Powers of two from 8 up to 2048 (gemm, gemv) or 2^20 (dot).
inline std::vector<std::int64_t> default_sizes(std::string_view operation) {
  const std::int64_t top = operation == "dot" ? (1 << 20) : 2048;
  std::vector<std::int64_t> sizes;
  for (std::int64_t n = 8; n <= top; n *= 2) sizes.push_back(n);
  return sizes;
}

inline void validate(const BenchSpec& spec) {
  if (std::find(std::begin(kOperations), std::end(kOperations),
                spec.operation) == std::end(kOperations))
    throw std::invalid_argument("unknown operation '" + spec.operation +
                                "' (expected dot, gemv or gemm)");
  if (spec.sizes.empty()) throw std::invalid_argument("no sizes given");
  for (std::size_t i = 0; i < spec.sizes.size(); ++i) {
    if (spec.sizes[i] <= 0)
      throw std::invalid_argument("size " + std::to_string(spec.sizes[i]) +
                                  " is not positive");
    if (i && spec.sizes[i] <= spec.sizes[i - 1])
      throw std::invalid_argument("sizes must be strictly increasing");
  }
  if (spec.repetitions < 1)
    throw std::invalid_argument("repetitions must be at least 1");
}

/// Operands of one benchmark instance, filled from a seeded generator.
struct Operands {
  Matrix<double> A, B, C;
  Vector<double> x, y;
  double alpha = 0.5;

  Operands(std::string_view op, std::size_t n, std::uint64_t seed) {
    std::mt19937_64 gen(seed ^ (n * 0x9e3779b97f4a7c15ULL));
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    auto rnd = [&](auto...) { return dist(gen); };
    if (op == "dot") {
      x = Vector<double>(n, rnd);
      y = Vector<double>(n, rnd);
    } else if (op == "gemv") {
      A = Matrix<double>(n, n, rnd);
      x = Vector<double>(n, rnd);
      y = Vector<double>(n, rnd);
    } else {
      A = Matrix<double>(n, n, rnd);
      B = Matrix<double>(n, n, rnd);
      C = Matrix<double>(n, n, rnd);
    }
  }

  std::uint64_t checksum() const {
    std::uint64_t h = 0;
    auto mix = [&h](const double* p, std::size_t n) {
      std::string_view bytes(reinterpret_cast<const char*>(p), n * sizeof(double));
      h ^= std::hash<std::string_view>{}(bytes) + 0x9e3779b97f4a7c15ULL +
           (h << 6) + (h >> 2);
    };
    mix(A.data(), A.size());
    mix(B.data(), B.size());
    mix(C.data(), C.size());
    mix(x.data(), x.size());
    mix(y.data(), y.size());
    return h;
  }
};

namespace detail {

inline double sink = 0;

inline void run_expression(std::string_view op, Operands& o) {
  if (op == "dot") {
    double s = transpose(o.x) * o.y;
    sink += s;
  } else if (op == "gemv") {
    o.y += o.alpha * o.A * o.x;
  } else {
    o.C += o.alpha * o.A * o.B;
  }
}

inline void run_direct(std::string_view op, Operands& o, Backend& b) {
  const std::size_t n = op == "dot" ? o.x.size() : o.A.rows();
  if (op == "dot") {
    sink += b.dot(n, o.x.data(), o.y.data());
  } else if (op == "gemv") {
    b.gemv(false, n, n, o.alpha, o.A.data(), n, o.x.data(), 1.0, o.y.data());
  } else {
    b.gemm(false, false, n, n, n, o.alpha, o.A.data(), n, o.B.data(), n, 1.0,
           o.C.data(), n);
  }
}

template <class F>
double time_us(F&& f) {
  auto t0 = std::chrono::steady_clock::now();
  f();
  auto t1 = std::chrono::steady_clock::now();
  return std::chrono::duration<double, std::micro>(t1 - t0).count();
}

inline std::pair<double, double> mean_std(const std::vector<double>& v) {
  double mean = 0;
  for (double t : v) mean += t;
  mean /= static_cast<double>(v.size());
  double var = 0;
  for (double t : v) var += (t - mean) * (t - mean);
  return {mean, std::sqrt(var / static_cast<double>(v.size()))};
}

inline bool record_less(const BenchRecord& a, const BenchRecord& b) {
  return std::tie(a.operation, a.n, a.variant) <
         std::tie(b.operation, b.n, b.variant);
}

}  // namespace detail

/// Times both variants for every size. Expression statements dispatch
/// through `ctx`, whose backend is set from `spec.backend`. Variants use separate,
/// identically seeded operands and alternate between timed repetitions after
/// one untimed warm-up each.
inline std::vector<BenchRecord> run(const BenchSpec& spec, Context& ctx) {
  validate(spec);
  Backend& backend = find_backend(spec.backend);
  ctx.set_backend(backend);
  ContextScope scope(ctx);

  std::vector<BenchRecord> records;
  const std::size_t reps = static_cast<std::size_t>(spec.repetitions);
  for (std::int64_t size : spec.sizes) {
    const auto n = static_cast<std::size_t>(size);
    Operands expr_ops(spec.operation, n, spec.seed);
    Operands direct_ops(spec.operation, n, spec.seed);
    const std::uint64_t expr_sum = expr_ops.checksum();
    const std::uint64_t direct_sum = direct_ops.checksum();

    detail::run_expression(spec.operation, expr_ops);
    detail::run_direct(spec.operation, direct_ops, backend);

    std::vector<double> te, td;
    for (std::size_t r = 0; r < reps; ++r) {
      auto expr = [&] { detail::run_expression(spec.operation, expr_ops); };
      auto direct = [&] { detail::run_direct(spec.operation, direct_ops, backend); };
      if (r % 2 == 0) {
        te.push_back(detail::time_us(expr));
        td.push_back(detail::time_us(direct));
      } else {
        td.push_back(detail::time_us(direct));
        te.push_back(detail::time_us(expr));
      }
    }
    auto [me, se] = detail::mean_std(te);
    auto [md, sd] = detail::mean_std(td);
    records.push_back({spec.operation, n, std::string(kExpression), me, se,
                       reps, expr_sum});
    records.push_back({spec.operation, n, std::string(kDirect), md, sd, reps,
                       direct_sum});
  }
  std::sort(records.begin(), records.end(), detail::record_less);
  return records;
}

inline std::vector<BenchRecord> run(const BenchSpec& spec) {
  Context ctx;
  return run(spec, ctx);
}

// ---------------------------------------------------------------------------
// CSV

namespace detail {

inline std::string number(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

template <class N>
N parse_number(std::string_view field, std::size_t line) {
  N v{};
  auto [end, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
  if (ec != std::errc() || end != field.data() + field.size())
    throw std::invalid_argument("line " + std::to_string(line) +
                                ": bad number '" + std::string(field) + "'");
  return v;
}

}  // namespace detail

/// Header, then one row per record in (operation, n, variant) order. A
/// non-empty `metadata` is written first as a '#' comment line.
inline void write_csv(std::ostream& os, std::vector<BenchRecord> records,
                      std::string_view metadata = {}) {
  std::sort(records.begin(), records.end(), detail::record_less);
  if (!metadata.empty()) os << "# " << metadata << '\n';
  os << kCsvHeader << '\n';
  for (const auto& r : records)
    os << r.operation << ',' << r.n << ',' << r.variant << ','
       << detail::number(r.mean_us) << ',' << detail::number(r.std_us) << ','
       << r.reps << '\n';
}

inline void emit_csv(const std::vector<BenchRecord>& records,
                     const std::string& path, std::string_view metadata = {}) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  write_csv(out, records, metadata);
  out.flush();
  if (!out) throw std::runtime_error("failed writing '" + path + "'");
}

/// Reads what write_csv produces; '#' lines are skipped.
inline std::vector<BenchRecord> parse_csv(std::istream& is) {
  std::vector<BenchRecord> records;
  std::string line;
  std::size_t lineno = 0;
  bool header = false;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    if (!header) {
      if (line != kCsvHeader)
        throw std::invalid_argument("unexpected CSV header '" + line + "'");
      header = true;
      continue;
    }
    std::vector<std::string_view> f;
    std::string_view rest(line);
    for (std::size_t pos; (pos = rest.find(',')) != std::string_view::npos;) {
      f.push_back(rest.substr(0, pos));
      rest.remove_prefix(pos + 1);
    }
    f.push_back(rest);
    if (f.size() != 6)
      throw std::invalid_argument("line " + std::to_string(lineno) +
                                  ": expected 6 fields");
    BenchRecord r;
    r.operation = f[0];
    r.n = detail::parse_number<std::size_t>(f[1], lineno);
    r.variant = f[2];
    r.mean_us = detail::parse_number<double>(f[3], lineno);
    r.std_us = detail::parse_number<double>(f[4], lineno);
    r.reps = detail::parse_number<std::size_t>(f[5], lineno);
    records.push_back(std::move(r));
  }
  if (!header) throw std::invalid_argument("missing CSV header");
  return records;
}

// ---------------------------------------------------------------------------
// overhead

struct Overhead {
  std::string operation;
  std::size_t n = 0;
  double expression_us = 0;
  double direct_us = 0;
  double ratio = 0;  // expression / direct
};

inline std::vector<Overhead> report_overhead(
    const std::vector<BenchRecord>& records) {
  std::map<std::pair<std::string, std::size_t>,
           std::pair<std::optional<double>, std::optional<double>>>
      groups;
  for (const auto& r : records) {
    auto& g = groups[{r.operation, r.n}];
    if (r.variant == kExpression)
      g.first = r.mean_us;
    else if (r.variant == kDirect)
      g.second = r.mean_us;
    else
      throw std::invalid_argument("unknown variant '" + r.variant + "'");
  }
  std::vector<Overhead> out;
  for (const auto& [key, g] : groups) {
    if (!g.first || !g.second)
      throw std::invalid_argument(
          key.first + " n=" + std::to_string(key.second) + " lacks the " +
          std::string(g.first ? kDirect : kExpression) + " variant");
    out.push_back({key.first, key.second, *g.first, *g.second,
                   *g.first / *g.second});
  }
  return out;
}

inline void print_overhead(std::ostream& os, const std::vector<Overhead>& rows) {
  os << "operation        n   expression_us       direct_us   ratio\n";
  for (const auto& r : rows) {
    char line[128];
    std::snprintf(line, sizeof line, "%-9s %8zu %15.3f %15.3f %7.3f\n",
                  r.operation.c_str(), r.n, r.expression_us, r.direct_us,
                  r.ratio);
    os << line;
  }
}

}  // namespace arx::bench
