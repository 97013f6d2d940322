#pragma once

// Verification experiments behind the CLI subcommands. Each command turns a
// Config into output files; nothing touches the filesystem here, so the test
// suites can run the same code and inspect the bytes directly.

#include <string>
#include <string_view>
#include <vector>

#include "spe/harness/config.hpp"
#include "spe/kernel_fit.hpp"

namespace spe::harness {

struct OutputFile {
  std::string path;  // empty: standard output
  std::string contents;
};

struct CommandOutput {
  std::vector<OutputFile> files;
};

CommandOutput run_convergence(const Config& config);
CommandOutput run_crossterm(const Config& config);
CommandOutput run_attention_dump(const Config& config);
CommandOutput run_bench(const Config& config);
CommandOutput run_fit(const Config& config);
CommandOutput run_probe(const Config& config);
CommandOutput run_r_ablation(const Config& config);

/// Dispatches on a subcommand name; throws ParameterError for unknown names.
CommandOutput run_command(std::string_view name, const Config& config);
const std::vector<std::string>& command_names();

// Building blocks shared with the tests.

double median(std::vector<double> values);
/// Linear-interpolation quantile, q in [0, 1].
double quantile(std::vector<double> values, double q);
/// Least-squares slope of log(y) against log(x); nan if any y <= 0.
double loglog_slope(const std::vector<double>& x, const std::vector<double>& y);

/// Mean of A[m, m - tau] over all valid m, for each offset.
Vector diagonal_means(const Matrix& a, const std::vector<Index>& offsets);

/// exp(sum_d diag(q_d) P_d diag(k_d) / sqrt(D)), the attention SPE realizes on average.
Matrix expected_attention_matrix(const Matrix& queries, const Matrix& keys,
                                 const std::vector<Matrix>& kernels, bool normalized, bool causal);

/// Kernel target text: `offset, value[, weight]` per line, `#` comments.
KernelTarget parse_kernel_target(std::string_view text);
std::string serialize_kernel_target(const KernelTarget& target);

/// "x.csv" + "trace" -> "x_trace.csv"; empty stays empty.
std::string derived_path(const std::string& out, std::string_view suffix);

struct BenchRow {
  Index length = 0;
  Index realizations = 0;
  double linear_seconds = 0.0;
  double oracle_seconds = 0.0;  // nan when skipped
  Index linear_peak_elements = 0;
  Index oracle_peak_elements = 0;
};

std::vector<BenchRow> measure_bench(const Config& config);

}  // namespace spe::harness
