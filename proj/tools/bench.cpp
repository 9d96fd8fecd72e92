// Times expression statements against direct kernel calls and writes CSV.
//
//   bench --op gemm --sizes 64,128,256 --reps 10 --backend external-blas --out gemm.csv

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "arx/arx.hpp"
#include "arx/bench.hpp"

#ifdef ARX_HAVE_OPENBLAS
#include <cblas.h>
#endif

namespace {

int backend_threads(const std::string& backend) {
#ifdef ARX_HAVE_OPENBLAS
  if (backend == arx::kExternalBackend) return openblas_get_num_threads();
#endif
  (void)backend;
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Expression overhead benchmark"};
  arx::bench::BenchSpec spec;
  std::vector<std::int64_t> sizes;
  app.add_option("--op", spec.operation, "dot, gemv or gemm")->required();
  app.add_option("--sizes", sizes, "comma-separated, strictly increasing")->delimiter(',');
  app.add_option("--reps", spec.repetitions, "timed repetitions per size")
      ->capture_default_str();
  app.add_option("--backend", spec.backend, "naive or external-blas")
      ->capture_default_str();
  app.add_option("--out", spec.output, "CSV path; stdout when omitted");
  app.add_option("--seed", spec.seed, "operand seed")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  if (!spec.output.empty() && !std::ofstream(spec.output, std::ios::app)) {
    std::cerr << "bench: cannot write '" << spec.output << "'\n";
    return 2;
  }
  spec.sizes = sizes.empty() ? arx::bench::default_sizes(spec.operation) : sizes;
  try {
    const auto records = arx::bench::run(spec);
    const std::string meta = "backend=" + spec.backend +
                             " threads=" + std::to_string(backend_threads(spec.backend));
    std::ostream& table = spec.output.empty() ? std::cerr : std::cout;
    if (spec.output.empty())
      arx::bench::write_csv(std::cout, records, meta);
    else
      arx::bench::emit_csv(records, spec.output, meta);
    arx::bench::print_overhead(table, arx::bench::report_overhead(records));
  } catch (const arx::backend_unavailable& e) {
    std::cerr << "bench: " << e.what() << "\n";
    return 3;
  } catch (const std::invalid_argument& e) {
    std::cerr << "bench: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "bench: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
