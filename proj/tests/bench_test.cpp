#include <gtest/gtest.h>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "arx/bench.hpp"

using arx::bench::BenchRecord;
using arx::bench::BenchSpec;

namespace {
BenchSpec spec_of(std::string op, std::vector<std::int64_t> sizes, std::int64_t reps,
                  std::string backend = "naive") {
  BenchSpec s;
  s.operation = std::move(op);
  s.sizes = std::move(sizes);
  s.repetitions = reps;
  s.backend = std::move(backend);
  return s;
}
}  // namespace

TEST(Bench, RecordCount) {
  BenchSpec spec = spec_of("dot", {8}, 1);
  auto recs = arx::bench::run(spec);
  ASSERT_EQ(recs.size(), 2u);
  EXPECT_EQ(recs[0].n, 8u);
  EXPECT_EQ(recs[1].n, 8u);
  EXPECT_EQ(recs[0].variant, "direct");
  EXPECT_EQ(recs[1].variant, "expression");
  for (const auto& r : recs) {
    EXPECT_GE(r.mean_us, 0.0);
    EXPECT_EQ(r.reps, 1u);
  }
  spec = spec_of("gemv", {4, 8, 16}, 3);
  EXPECT_EQ(arx::bench::run(spec).size(), 6u);
}

TEST(Bench, ExpressionIsOneGemmPerRepetition) {
  BenchSpec spec = spec_of("gemm", {8}, 5);
  arx::Context ctx;
  ctx.log().set_recording(true);
  arx::bench::run(spec, ctx);
  // One untimed warm-up plus the timed repetitions; direct calls bypass the log.
  EXPECT_EQ(ctx.log().calls().size(), 6u);
  EXPECT_EQ(ctx.log().count(arx::KernelId::gemm), 6u);
  EXPECT_EQ(ctx.log().allocations, 0u + 2 * 3);  // operands of both variants
}

TEST(Bench, SameSeedSameOperands) {
  for (const char* op : {"dot", "gemv", "gemm"}) {
    BenchSpec spec = spec_of(op, {8, 16}, 1);
    auto recs = arx::bench::run(spec);
    for (std::size_t i = 0; i < recs.size(); i += 2)
      EXPECT_EQ(recs[i].operand_checksum, recs[i + 1].operand_checksum) << op;
    auto again = arx::bench::run(spec);
    EXPECT_EQ(recs[0].operand_checksum, again[0].operand_checksum);
    spec.seed = 7;
    EXPECT_NE(arx::bench::run(spec)[0].operand_checksum, recs[0].operand_checksum);
  }
}

TEST(Bench, SpecValidation) {
  EXPECT_THROW(arx::bench::run(spec_of("trsv", {8}, 1)), std::invalid_argument);
  EXPECT_THROW(arx::bench::run(spec_of("dot", {0}, 1)), std::invalid_argument);
  EXPECT_THROW(arx::bench::run(spec_of("dot", {-4}, 1)), std::invalid_argument);
  EXPECT_THROW(arx::bench::run(spec_of("dot", {16, 8}, 1)), std::invalid_argument);
  EXPECT_THROW(arx::bench::run(spec_of("dot", {8}, 0)), std::invalid_argument);
  EXPECT_THROW(arx::bench::run(spec_of("dot", {}, 1)), std::invalid_argument);
  BenchSpec bad = spec_of("dot", {8}, 1, "mkl");
  EXPECT_THROW(arx::bench::run(bad), arx::unknown_backend);
}

TEST(Bench, DefaultSizes) {
  auto g = arx::bench::default_sizes("gemm");
  EXPECT_EQ(g.front(), 8);
  EXPECT_EQ(g.back(), 2048);
  auto d = arx::bench::default_sizes("dot");
  EXPECT_EQ(d.back(), 1 << 20);
  EXPECT_EQ(d.size(), 18u);
}

TEST(Csv, OneRecordIsTwoLines) {
  std::ostringstream os;
  arx::bench::write_csv(os, {{"dot", 8, "expression", 1.5, 0.25, 10}});
  EXPECT_EQ(os.str(), "operation,n,variant,mean_us,std_us,reps\ndot,8,expression,1.5,0.25,10\n");
}

TEST(Csv, RoundTrip) {
  std::vector<BenchRecord> recs{{"gemm", 64, "direct", 123.456789, 0.1, 10},
                                {"gemm", 64, "expression", 1.0 / 3.0, 1e-7, 10},
                                {"dot", 1024, "direct", 0.0, 0.0, 3}};
  std::ostringstream os;
  arx::bench::write_csv(os, recs, "backend=naive threads=1");
  std::istringstream is(os.str());
  auto back = arx::bench::parse_csv(is);
  std::sort(recs.begin(), recs.end(), [](auto& a, auto& b) {
    return std::tie(a.operation, a.n, a.variant) < std::tie(b.operation, b.n, b.variant);
  });
  EXPECT_EQ(back, recs);
}

TEST(Csv, SortedForShuffledInput) {
  std::vector<BenchRecord> recs{{"gemv", 8, "expression", 1, 0, 1},
                                {"dot", 16, "direct", 1, 0, 1},
                                {"dot", 8, "expression", 1, 0, 1},
                                {"gemv", 8, "direct", 1, 0, 1},
                                {"dot", 8, "direct", 1, 0, 1}};
  std::ostringstream os;
  arx::bench::write_csv(os, recs);
  EXPECT_EQ(os.str(),
            "operation,n,variant,mean_us,std_us,reps\n"
            "dot,8,direct,1,0,1\n"
            "dot,8,expression,1,0,1\n"
            "dot,16,direct,1,0,1\n"
            "gemv,8,direct,1,0,1\n"
            "gemv,8,expression,1,0,1\n");
}

TEST(Csv, FileAndUnwritablePath) {
  auto path = std::filesystem::temp_directory_path() / "arx_bench_test.csv";
  arx::bench::emit_csv({{"dot", 8, "direct", 2, 0, 1}}, path.string());
  std::ifstream in(path);
  auto back = arx::bench::parse_csv(in);
  ASSERT_EQ(back.size(), 1u);
  EXPECT_EQ(back[0].mean_us, 2.0);
  std::filesystem::remove(path);
  EXPECT_THROW(arx::bench::emit_csv({}, "/nonexistent-dir/x/out.csv"), std::runtime_error);
}

TEST(Overhead, Ratios) {
  auto eq = arx::bench::report_overhead(
      {{"dot", 8, "expression", 5, 0, 1}, {"dot", 8, "direct", 5, 0, 1}});
  ASSERT_EQ(eq.size(), 1u);
  EXPECT_EQ(eq[0].ratio, 1.0);
  auto r = arx::bench::report_overhead(
      {{"gemm", 64, "expression", 110, 0, 1}, {"gemm", 64, "direct", 100, 0, 1}});
  EXPECT_DOUBLE_EQ(r[0].ratio, 1.10);
  EXPECT_THROW(arx::bench::report_overhead({{"gemm", 64, "expression", 110, 0, 1}}),
               std::invalid_argument);
  std::ostringstream os;
  arx::bench::print_overhead(os, r);
  EXPECT_NE(os.str().find("1.100"), std::string::npos);
}
