#include "spe/harness/experiments.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "spe/attention.hpp"
#include "spe/errors.hpp"
#include "spe/harness/csv.hpp"
#include "spe/metrics.hpp"
#include "spe/parallel.hpp"
#include "spe/random.hpp"

namespace spe::harness {
namespace {

constexpr Index kMaxDumpElements = Index{1} << 24;

std::uint64_t trial_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> tags) {
  std::uint64_t s = derive_seed(seed, {static_cast<std::uint64_t>(StreamRole::kTrial)});
  for (auto t : tags) s = derive_seed(s, {t});
  return s;
}

std::vector<Index> powers_of_two(int lo, int hi) {
  std::vector<Index> out;
  for (int e = lo; e <= hi; ++e) out.push_back(Index{1} << e);
  return out;
}

std::vector<std::string> header(std::string_view command, const Config& config) {
  std::vector<std::string> lines{"spe " + std::string(command)};
  for (auto& l : config.effective_lines()) lines.push_back(std::move(l));
  return lines;
}

/// Codes of the configured variant, gated when gates are configured.
CodeMatrices draw_codes(const Config& config, const ExperimentConfig& exp, Index realizations,
                        std::uint64_t seed) {
  const NoiseSpec noise{seed};
  CodeMatrices codes =
      exp.variant == SpeVariant::kSine
          ? draw_sine_codes(resolve_sine_params(config, exp), IndexSet::range(exp.num_queries),
                            IndexSet::range(exp.num_keys), realizations, noise)
          : draw_conv_codes(resolve_conv_params(config, exp), exp.num_keys, realizations, noise);
  if (exp.gates) codes = gate_codes(codes, *exp.gates, noise);
  return codes;
}

std::vector<Matrix> expected_kernels(const Config& config, const ExperimentConfig& exp) {
  std::vector<Matrix> out;
  if (exp.variant == SpeVariant::kSine) {
    const SineSpeParams p = resolve_sine_params(config, exp);
    for (Index d = 0; d < exp.dims; ++d) {
      out.push_back(expected_kernel_sine(p, d, IndexSet::range(exp.num_queries),
                                         IndexSet::range(exp.num_keys)));
    }
  } else {
    const ConvSpeParams p = resolve_conv_params(config, exp);
    for (Index d = 0; d < exp.dims; ++d) out.push_back(expected_kernel_conv(p, d, exp.num_keys));
  }
  if (exp.gates) {
    for (Index d = 0; d < exp.dims; ++d) {
      out[static_cast<std::size_t>(d)] =
          expected_kernel_gated(out[static_cast<std::size_t>(d)], exp.gates->deltas[d]);
    }
  }
  return out;
}

std::string gates_text(const ExperimentConfig& exp) {
  if (!exp.gates) return "none";
  std::string s;
  for (Index d = 0; d < exp.gates->size(); ++d) {
    s += (d ? ", " : "") + format_number(exp.gates->deltas[d]);
  }
  return s;
}

template <typename Fn>
double median_seconds(Fn&& fn, Index repetitions, Index warmup, Index inner) {
  for (Index w = 0; w < warmup; ++w) fn();
  std::vector<double> times;
  for (Index r = 0; r < repetitions; ++r) {
    const auto start = std::chrono::steady_clock::now();
    for (Index i = 0; i < inner; ++i) fn();
    const auto stop = std::chrono::steady_clock::now();
    times.push_back(std::chrono::duration<double>(stop - start).count() /
                    static_cast<double>(inner));
  }
  return median(std::move(times));
}

Index calibrate_inner(double seconds_per_call, double min_run_seconds) {
  if (!(seconds_per_call > 0.0)) return 1;
  return std::max<Index>(1, static_cast<Index>(std::ceil(min_run_seconds / seconds_per_call)));
}

template <typename Fn>
double time_once(Fn&& fn) {
  const auto start = std::chrono::steady_clock::now();
  fn();
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

std::vector<Index> symmetric_offsets(Index max_offset) {
  std::vector<Index> out;
  for (Index t = -max_offset; t <= max_offset; ++t) out.push_back(t);
  return out;
}

double norm_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

FitConfig resolve_fit_config(const Config& config, std::uint64_t init_seed, std::size_t jobs) {
  FitConfig fc;
  fc.learning_rate = config.get_double("learning_rate", 0.05);
  fc.max_iters = config.get_index("max_iters", 5000);
  fc.restarts = config.get_index("restarts", 8);
  fc.tolerance = config.get_double("tolerance", 1e-12);
  fc.init_seed = init_seed;
  fc.jobs = jobs;
  fc.validate();
  return fc;
}

}  // namespace

double median(std::vector<double> values) { return quantile(std::move(values), 0.5); }

double quantile(std::vector<double> values, double q) {
  if (values.empty()) throw ParameterError("quantile of an empty sample");
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) return std::numeric_limits<double>::quiet_NaN();
  const std::size_t n = x.size();
  double mx = 0.0;
  double my = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!(x[i] > 0.0) || !(y[i] > 0.0)) return std::numeric_limits<double>::quiet_NaN();
    mx += std::log(x[i]);
    my += std::log(y[i]);
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxy = 0.0;
  double sxx = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = std::log(x[i]) - mx;
    sxy += dx * (std::log(y[i]) - my);
    sxx += dx * dx;
  }
  return sxy / sxx;
}

Vector diagonal_means(const Matrix& a, const std::vector<Index>& offsets) {
  Vector out(static_cast<Index>(offsets.size()));
  for (std::size_t i = 0; i < offsets.size(); ++i) {
    const Index tau = offsets[i];
    double sum = 0.0;
    Index count = 0;
    for (Index m = std::max<Index>(0, tau); m < a.rows() && m - tau < a.cols(); ++m) {
      sum += a(m, m - tau);
      ++count;
    }
    if (count == 0) throw RangeError("offset " + std::to_string(tau) + " is outside the matrix");
    out[static_cast<Index>(i)] = sum / static_cast<double>(count);
  }
  return out;
}

Matrix expected_attention_matrix(const Matrix& queries, const Matrix& keys,
                                 const std::vector<Matrix>& kernels, bool normalized, bool causal) {
  const auto dims = static_cast<Index>(kernels.size());
  if (queries.cols() != dims || keys.cols() != dims) {
    throw ShapeError("expected attention: content width must equal the number of kernels");
  }
  Matrix logits = Matrix::Zero(queries.rows(), keys.rows());
  for (Index d = 0; d < dims; ++d) {
    const Matrix& p = kernels[static_cast<std::size_t>(d)];
    if (p.rows() != queries.rows() || p.cols() != keys.rows()) {
      throw ShapeError("expected attention: kernel shape does not match content");
    }
    logits.noalias() += queries.col(d).asDiagonal() * p * keys.col(d).asDiagonal();
  }
  Matrix a = (logits / std::sqrt(static_cast<double>(dims))).array().exp();
  if (!a.allFinite()) throw NumericError("expected attention overflowed");
  if (causal) {
    if (a.rows() != a.cols()) throw ShapeError("causal attention needs M = N");
    a.triangularView<Eigen::StrictlyUpper>().setZero();
  }
  if (normalized) {
    for (Index m = 0; m < a.rows(); ++m) a.row(m) /= a.row(m).sum();
  }
  return a;
}

KernelTarget parse_kernel_target(std::string_view text) {
  KernelTarget t;
  std::istringstream in{std::string(text)};
  std::string raw;
  long line_no = 0;
  bool seen_row = false;
  while (std::getline(in, raw)) {
    ++line_no;
    const std::string_view line = trim(raw);
    if (line.empty() || line.front() == '#') continue;
    const auto fields = split_fields(line);
    if (!seen_row && !fields.empty() && fields.front() == "offset") {
      seen_row = true;  // optional header row
      continue;
    }
    seen_row = true;
    if (fields.size() != 2 && fields.size() != 3) {
      throw ParseError("target row needs 'offset, value[, weight]', found " +
                           std::to_string(fields.size()) + " fields",
                       line_no);
    }
    const double offset = parse_number(fields[0], line_no);
    if (offset != std::floor(offset)) throw ParseError("offset must be an integer", line_no);
    if (!t.offsets.empty() && static_cast<Index>(offset) <= t.offsets.back()) {
      throw ParseError("offsets must be strictly increasing", line_no);
    }
    const double weight = fields.size() == 3 ? parse_number(fields[2], line_no) : 1.0;
    if (!(weight >= 0.0)) throw ParseError("weight must be non-negative", line_no);
    t.offsets.push_back(static_cast<Index>(offset));
    t.values.push_back(parse_number(fields[1], line_no));
    t.weights.push_back(weight);
  }
  if (t.offsets.empty()) throw ParseError("kernel target has no rows", 0);
  t.validate();
  return t;
}

std::string serialize_kernel_target(const KernelTarget& target) {
  std::ostringstream os;
  os << "offset,value,weight\n";
  for (std::size_t i = 0; i < target.size(); ++i) {
    os << target.offsets[i] << ',' << format_number(target.values[i]) << ','
       << format_number(target.weights[i]) << '\n';
  }
  return os.str();
}

std::string derived_path(const std::string& out, std::string_view suffix) {
  if (out.empty()) return out;
  const std::size_t slash = out.find_last_of('/');
  const std::size_t dot = out.find_last_of('.');
  if (dot != std::string::npos && (slash == std::string::npos || dot > slash)) {
    return out.substr(0, dot) + "_" + std::string(suffix) + out.substr(dot);
  }
  return out + "_" + std::string(suffix);
}

CommandOutput run_convergence(const Config& config) {
  ExperimentDefaults defaults;
  defaults.dims = 1;
  defaults.length = 128;
  defaults.sweep = powers_of_two(6, 14);
  const ExperimentConfig exp = resolve_experiment(config, defaults);
  if (exp.sweep.empty()) throw ParameterError("convergence needs a non-empty sweep");

  const std::vector<Matrix> expected = expected_kernels(config, exp);
  bool absolute = true;
  for (const auto& p : expected) absolute = absolute && p.norm() == 0.0;

  const std::size_t n_r = exp.sweep.size();
  const auto n_seeds = static_cast<std::size_t>(exp.seeds);
  std::vector<std::vector<double>> errors(n_r * n_seeds);
  parallel_for_index(n_r * n_seeds, exp.jobs, [&](std::size_t task) {
    const Index r = exp.sweep[task / n_seeds];
    const std::uint64_t s = task % n_seeds;
    const CodeMatrices codes =
        draw_codes(config, exp, r, trial_seed(exp.seed, {s, static_cast<std::uint64_t>(r)}));
    for (Index d = 0; d < exp.dims; ++d) {
      const Matrix& p = expected[static_cast<std::size_t>(d)];
      const double diff = (estimate_kernel(codes, d) - p).norm();
      errors[task].push_back(absolute ? diff : diff / p.norm());
    }
  });

  CsvTable table;
  table.columns = {"R", "median_error", "iqr"};
  std::vector<double> rs;
  std::vector<double> medians;
  for (std::size_t i = 0; i < n_r; ++i) {
    std::vector<double> sample;
    for (std::size_t s = 0; s < n_seeds; ++s) {
      const auto& e = errors[i * n_seeds + s];
      sample.insert(sample.end(), e.begin(), e.end());
    }
    const double med = median(sample);
    table.add_row({format_number(exp.sweep[i]), format_number(med),
                   format_number(quantile(sample, 0.75) - quantile(sample, 0.25))});
    rs.push_back(static_cast<double>(exp.sweep[i]));
    medians.push_back(med);
  }
  table.comments = header("convergence", config);
  table.comments.push_back(absolute ? "error = absolute_frobenius (expected kernel is zero)"
                                    : "error = relative_frobenius");
  table.trailer.push_back("loglog_slope = " + format_number(loglog_slope(rs, medians)));
  return {{{exp.output_path, table.serialize()}}};
}

CommandOutput run_crossterm(const Config& config) {
  ExperimentDefaults defaults;
  defaults.dims = 8;
  defaults.length = 64;
  defaults.sweep = {64, 1024, 16384};
  const ExperimentConfig exp = resolve_experiment(config, defaults);
  if (exp.dims < 2) throw ParameterError("crossterm needs D >= 2");
  if (exp.sweep.empty()) throw ParameterError("crossterm needs a non-empty sweep");

  const std::size_t n_r = exp.sweep.size();
  const auto n_seeds = static_cast<std::size_t>(exp.seeds);
  std::vector<std::vector<double>> ratios(n_r * n_seeds);
  parallel_for_index(n_r * n_seeds, exp.jobs, [&](std::size_t task) {
    const Index r = exp.sweep[task / n_seeds];
    const std::uint64_t s = task % n_seeds;
    const CodeMatrices codes =
        draw_codes(config, exp, r, trial_seed(exp.seed, {s, static_cast<std::uint64_t>(r)}));
    for (Index d = 0; d < exp.dims; ++d) {
      const double diag = estimate_kernel(codes, d).norm();
      for (Index e = 0; e < exp.dims; ++e) {
        if (e == d) continue;
        ratios[task].push_back(estimate_cross_term(codes, d, e).norm() / diag);
      }
    }
  });

  CsvTable table;
  table.comments = header("crossterm", config);
  table.comments.push_back("ratio = |Qbar_d Kbar_e^T| / |Qbar_d Kbar_d^T| (Frobenius), d != e");
  table.columns = {"R", "median_ratio"};
  for (std::size_t i = 0; i < n_r; ++i) {
    std::vector<double> sample;
    for (std::size_t s = 0; s < n_seeds; ++s) {
      const auto& v = ratios[i * n_seeds + s];
      sample.insert(sample.end(), v.begin(), v.end());
    }
    table.add_row({format_number(exp.sweep[i]), format_number(median(sample))});
  }
  return {{{exp.output_path, table.serialize()}}};
}

CommandOutput run_attention_dump(const Config& config) {
  ExperimentDefaults defaults;
  defaults.dims = 8;
  defaults.length = 64;
  defaults.realizations = 1024;
  const ExperimentConfig exp = resolve_experiment(config, defaults);
  if (exp.num_queries * exp.num_keys > kMaxDumpElements) {
    throw ParameterError("attention dump of " + std::to_string(exp.num_queries) + "x" +
                         std::to_string(exp.num_keys) + " exceeds the 2^24 element guard");
  }
  const std::string mode = config.get_string("mode", "sampled");
  const std::string content = config.get_string("content", "seeded-random");
  const bool causal = config.get_bool("causal", true);

  Matrix queries;
  Matrix keys;
  if (content == "zeros") {
    queries = Matrix::Zero(exp.num_queries, exp.dims);
    keys = Matrix::Zero(exp.num_keys, exp.dims);
  } else if (content == "seeded-random") {
    RandomStream stream(exp.seed, StreamRole::kContent);
    queries = stream.uniform_matrix(exp.num_queries, exp.dims, -1.0, 1.0);
    keys = stream.uniform_matrix(exp.num_keys, exp.dims, -1.0, 1.0);
  } else if (content == "file") {
    const std::string path = config.get_string("content_file", "");
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open content file '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    const Matrix x = CsvMatrix::parse(buf.str()).values;
    if (x.rows() != exp.num_keys || x.cols() != exp.dims || exp.num_queries != exp.num_keys) {
      throw ShapeError("content file must hold an N x D matrix (N = M)");
    }
    queries = x;
    keys = x;
  } else {
    throw ParameterError("content must be zeros, seeded-random or file");
  }

  Matrix logits;
  Matrix unnormalized;
  Matrix normalized;
  std::string scale_text;
  if (mode == "sampled") {
    const CodeMatrices codes = draw_codes(config, exp, exp.r_test, exp.seed);
    const EncodedQK qk = combine_qk(queries, keys, codes);
    const double scale = std::sqrt(static_cast<double>(exp.r_test));
    logits = qk.queries * qk.keys.transpose() / scale;
    unnormalized = attention_matrix(qk.queries, qk.keys, scale, false, causal);
    normalized = attention_matrix(qk.queries, qk.keys, scale, true, causal);
    scale_text = "sqrt(R) = " + format_number(scale);
  } else if (mode == "expected") {
    const std::vector<Matrix> kernels = expected_kernels(config, exp);
    logits = Matrix::Zero(exp.num_queries, exp.num_keys);
    for (Index d = 0; d < exp.dims; ++d) {
      logits.noalias() += queries.col(d).asDiagonal() * kernels[static_cast<std::size_t>(d)] *
                          keys.col(d).asDiagonal();
    }
    logits /= std::sqrt(static_cast<double>(exp.dims));
    unnormalized = expected_attention_matrix(queries, keys, kernels, false, causal);
    normalized = expected_attention_matrix(queries, keys, kernels, true, causal);
    scale_text = "sqrt(D) = " + format_number(std::sqrt(static_cast<double>(exp.dims)));
  } else {
    throw ParameterError("mode must be sampled or expected");
  }
  if (causal) logits.triangularView<Eigen::StrictlyUpper>().setZero();

  std::vector<std::string> meta = header("attention-dump", config);
  meta.push_back("gates_effective = " + gates_text(exp));
  meta.push_back("noise_seed = " + std::to_string(exp.seed));
  meta.push_back("scale = " + scale_text);
  CsvMatrix un{meta, unnormalized};
  un.comments.push_back("attention = unnormalized");
  CsvMatrix no{meta, normalized};
  no.comments.push_back("attention = row_normalized");
  CsvMatrix lo{meta, logits};
  lo.comments.push_back("attention = scores before exponentiation");
  return {{{derived_path(exp.output_path, "unnormalized"), un.serialize()},
           {derived_path(exp.output_path, "normalized"), no.serialize()},
           {derived_path(exp.output_path, "logits"), lo.serialize()}}};
}

std::vector<BenchRow> measure_bench(const Config& config) {
  ExperimentDefaults defaults;
  defaults.dims = 8;
  defaults.realizations = 64;
  const ExperimentConfig exp = resolve_experiment(config, defaults);
  const std::vector<Index> lengths = config.get_index_list("bench_n", {2048, 4096});
  const std::vector<Index> rs =
      exp.sweep.empty() ? std::vector<Index>{exp.r_train} : exp.sweep;
  const Index value_dim = config.get_index("value_dim", 64);
  const Index repetitions = config.get_index("repetitions", 5);
  const Index warmup = config.get_index("warmup", 1);
  const bool run_oracle = config.get_bool("oracle", true);
  const Index oracle_max_n = config.get_index("oracle_max_n", 8192);
  const double min_run = config.get_double("min_run_seconds", 0.05);
  if (repetitions < 5) throw ParameterError("bench needs repetitions >= 5");
  if (warmup < 1) throw ParameterError("bench needs warmup >= 1");
  if (lengths.empty()) throw ParameterError("bench needs a non-empty bench_n sweep");

  const SineSpeParams sine =
      exp.variant == SpeVariant::kSine ? resolve_sine_params(config, exp) : SineSpeParams{};
  const ConvSpeParams conv =
      exp.variant == SpeVariant::kConv ? resolve_conv_params(config, exp) : ConvSpeParams{};
  const FeatureMapSpec phi = FeatureMapSpec::relu();

  std::vector<BenchRow> rows;
  Index linear_inner = 0;
  Index oracle_inner = 0;
  for (Index n : lengths) {
    RandomStream stream(exp.seed, StreamRole::kContent, static_cast<std::uint64_t>(n));
    const Matrix queries = stream.uniform_matrix(n, exp.dims, -1.0, 1.0);
    const Matrix keys = stream.uniform_matrix(n, exp.dims, -1.0, 1.0);
    const Matrix values = stream.uniform_matrix(n, value_dim, -1.0, 1.0);
    const IndexSet grid = IndexSet::range(n);
    for (Index r : rs) {
      const NoiseSpec noise{exp.seed};
      EncodedQK qk;
      Matrix y;
      auto linear_path = [&] {
        const CodeMatrices codes = exp.variant == SpeVariant::kSine
                                       ? draw_sine_codes(sine, grid, grid, r, noise)
                                       : draw_conv_codes(conv, n, r, noise);
        qk = combine_qk(queries, keys, codes);
        y = causal_linear_attention(feature_map_apply(phi, qk.queries),
                                    feature_map_apply(phi, qk.keys), values);
      };
      if (linear_inner == 0) linear_inner = calibrate_inner(time_once(linear_path), min_run);
      BenchRow row;
      row.length = n;
      row.realizations = r;
      row.linear_seconds = median_seconds(linear_path, repetitions, warmup, linear_inner);
      row.linear_peak_elements =
          2 * exp.dims * n * r + 6 * n * r + 2 * n * value_dim + r * value_dim;
      row.oracle_peak_elements = n * n + n * value_dim;
      row.oracle_seconds = std::numeric_limits<double>::quiet_NaN();
      if (run_oracle && n <= oracle_max_n) {
        const double scale = std::sqrt(static_cast<double>(r));
        auto oracle_path = [&] { y = full_attention_oracle(qk.queries, qk.keys, values, scale, true); };
        if (oracle_inner == 0) oracle_inner = calibrate_inner(time_once(oracle_path), min_run);
        row.oracle_seconds = median_seconds(oracle_path, repetitions, warmup, oracle_inner);
      }
      rows.push_back(row);
    }
  }
  return rows;
}

CommandOutput run_bench(const Config& config) {
  const std::vector<BenchRow> rows = measure_bench(config);
  CsvTable table;
  table.comments = header("bench", config);
  table.comments.push_back("timing = median wall seconds per call, steady clock, single thread");
  table.comments.push_back("linear = code generation + combine + causal linear attention (relu)");
  table.comments.push_back("oracle = quadratic softmax attention on the same encoded queries/keys");
  table.columns = {"N",      "R", "linear_seconds", "oracle_seconds", "linear_peak_elements",
                   "oracle_peak_elements"};
  for (const auto& r : rows) {
    table.add_row({format_number(r.length), format_number(r.realizations),
                   format_number(r.linear_seconds), format_number(r.oracle_seconds),
                   format_number(r.linear_peak_elements), format_number(r.oracle_peak_elements)});
  }
  return {{{config.get_string("out", ""), table.serialize()}}};
}

CommandOutput run_fit(const Config& config) {
  ExperimentDefaults defaults;
  defaults.dims = 1;
  const ExperimentConfig exp = resolve_experiment(config, defaults);
  const bool gated = config.get_bool("fit_gated", false);
  const KernelModel model = exp.variant == SpeVariant::kSine
                                ? KernelModel::sine(exp.num_sines, gated)
                                : KernelModel::conv(exp.filter_len, gated);
  const std::string target_path = config.get_string("target", "");
  const std::string kind = config.get_string("target_kind", target_path.empty() ? "self" : "file");

  KernelTarget target;
  if (kind == "file") {
    if (target_path.empty()) throw ParameterError("target_kind = file needs a target path");
    std::ifstream in(target_path, std::ios::binary);
    if (!in) throw IoError("cannot open target file '" + target_path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    try {
      target = parse_kernel_target(buf.str());
    } catch (const ParseError& e) {
      throw ParseError(target_path + ": " + e.what(), 0);
    }
  } else {
    const Index max_offset = config.get_index("max_offset", 16);
    if (max_offset < 0) throw ParameterError("max_offset must be >= 0");
    std::vector<Index> offsets = symmetric_offsets(max_offset);
    std::vector<double> values(offsets.size(), 0.0);
    if (kind == "self") {
      FittedKernel truth;
      truth.model = model;
      if (exp.variant == SpeVariant::kSine) {
        const SineSpeParams p = random_sine_params(1, exp.num_sines, exp.seed);
        truth.freqs = p.freqs.row(0).transpose();
        truth.phases = p.phases.row(0).transpose();
        truth.gains = p.gains.row(0).transpose();
      } else {
        const ConvSpeParams p = random_conv_params(1, exp.filter_len, exp.seed);
        truth.filter_q = p.filters_q.row(0).transpose();
        truth.filter_k = p.filters_k.row(0).transpose();
      }
      FittedKernel ungated = truth;
      ungated.model.gated = false;
      const Vector v = ungated.evaluate(offsets);
      values.assign(v.data(), v.data() + v.size());
    } else if (kind == "triangular") {
      const double width = static_cast<double>(max_offset + 1) / 2.0;
      for (std::size_t i = 0; i < offsets.size(); ++i) {
        values[i] = std::max(0.0, 1.0 - std::abs(static_cast<double>(offsets[i])) / width);
      }
    } else if (kind != "zero") {
      throw ParameterError("target_kind must be file, self, zero or triangular");
    }
    target = KernelTarget::uniform(std::move(offsets), std::move(values));
  }

  const FitConfig fit_config = resolve_fit_config(config, exp.seed, exp.jobs);
  const FitResult result = fit_kernel(model, target, fit_config);
  const FittedKernel& f = result.params;

  auto list = [](const Vector& v) {
    std::string s;
    for (Index i = 0; i < v.size(); ++i) s += (i ? ", " : "") + format_number(v[i]);
    return s;
  };
  std::ostringstream params;
  for (const auto& line : header("fit", config)) params << "# " << line << '\n';
  params << "family = " << (model.family == ModelFamily::kSine ? "sine" : "conv") << '\n';
  if (model.family == ModelFamily::kSine) {
    params << "K = " << model.size << '\n'
           << "freqs = " << list(f.freqs) << '\n'
           << "phases = " << list(f.phases) << '\n'
           << "gains = " << list(f.gains) << '\n';
  } else {
    params << "P = " << model.size << '\n'
           << "filters_q = " << list(f.filter_q) << '\n'
           << "filters_k = " << list(f.filter_k) << '\n';
  }
  params << "gated = " << (model.gated ? "true" : "false") << '\n';
  if (model.gated) params << "gate = " << format_number(f.gate) << '\n';
  params << "final_loss = " << format_number(result.final_loss) << '\n'
         << "best_restart = " << result.best_restart << '\n'
         << "iterations = " << result.loss_trace.size() - 1 << '\n';

  CsvTable trace;
  trace.comments = header("fit", config);
  trace.columns = {"iteration", "loss"};
  for (std::size_t i = 0; i < result.loss_trace.size(); ++i) {
    trace.add_row({std::to_string(i), format_number(result.loss_trace[i])});
  }
  CommandOutput out{{{exp.output_path, params.str()}}};
  // Without an output path only the parameters go to standard output.
  if (!exp.output_path.empty()) {
    out.files.push_back({derived_path(exp.output_path, "trace"), trace.serialize()});
  }
  return out;
}

CommandOutput run_probe(const Config& config) {
  ExperimentDefaults defaults;
  defaults.dims = 8;
  defaults.length = 384;
  defaults.realizations = 8192;
  const ExperimentConfig exp = resolve_experiment(config, defaults);
  const Index length = exp.num_keys;
  const Index train_length = config.get_index("train_length", 256);
  const std::vector<Index> windows = config.get_index_list("windows", {32, 128});
  const Index n_contents = config.get_index("probe_contents", 8);
  if (!(train_length >= 2 && train_length < length)) {
    throw RangeError("probe needs 2 <= train_length < N");
  }
  if (n_contents < 1) throw ParameterError("probe_contents must be >= 1");
  if (exp.num_queries != exp.num_keys) throw ParameterError("probe uses self attention (M = N)");

  struct Cell {
    Index lo, hi, window;
  };
  std::vector<Cell> cells;
  const Index ranges[3][2] = {{0, train_length / 2}, {train_length / 2, train_length},
                              {train_length, length}};
  for (const auto& r : ranges) {
    for (Index w : windows) {
      if (w < 2 || w > r[1]) {
        throw RangeError("probe window " + std::to_string(w) + " does not fit query range [" +
                         std::to_string(r[0]) + ", " + std::to_string(r[1]) + ")");
      }
      cells.push_back({r[0], r[1], w});
    }
  }

  std::vector<Vector> contents;
  for (Index c = 0; c < n_contents; ++c) {
    RandomStream stream(exp.seed, StreamRole::kContent, static_cast<std::uint64_t>(c));
    Vector v = stream.normal_vector(exp.dims);
    contents.push_back(v / v.norm());
  }

  // Scores of one attention matrix per content vector, averaged over contents.
  auto score_cells = [&](const std::vector<Matrix>& per_content) {
    std::vector<std::pair<double, double>> out;
    for (const auto& cell : cells) {
      double t = 0.0;
      double m = 0.0;
      for (const auto& a : per_content) {
        const ProbeConfig probe{cell.lo, cell.hi, cell.window, contents.front()};
        t += translation_invariance_score(a, probe);
        m += monotonicity_score(a, probe);
      }
      out.emplace_back(t / static_cast<double>(per_content.size()),
                       m / static_cast<double>(per_content.size()));
    }
    return out;
  };

  const std::string spe_name =
      std::string(to_string(exp.variant)) + (exp.gates ? "_gated" : "");
  std::vector<std::string> methods;
  std::vector<std::vector<std::pair<double, double>>> scores;

  {
    std::vector<Matrix> a;
    for (const auto& c : contents) a.push_back(probe_attention_ape({0, length, 1, c}));
    methods.push_back("ape");
    scores.push_back(score_cells(a));
  }
  {
    const std::vector<Matrix> kernels = expected_kernels(config, exp);
    std::vector<Matrix> a;
    for (const auto& c : contents) a.push_back(probe_attention_expected(kernels, {0, length, 1, c}));
    methods.push_back(spe_name + "_expected");
    scores.push_back(score_cells(a));
  }
  {
    const auto n_seeds = static_cast<std::size_t>(exp.seeds);
    std::vector<std::vector<std::pair<double, double>>> per_seed(n_seeds);
    parallel_for_index(n_seeds, exp.jobs, [&](std::size_t s) {
      const CodeMatrices codes = draw_codes(config, exp, exp.r_test, trial_seed(exp.seed, {s}));
      std::vector<Matrix> a;
      for (const auto& c : contents) a.push_back(probe_attention_spe(codes, {0, length, 1, c}));
      per_seed[s] = score_cells(a);
    });
    std::vector<std::pair<double, double>> med;
    for (std::size_t ci = 0; ci < cells.size(); ++ci) {
      std::vector<double> ts;
      std::vector<double> ms;
      for (const auto& s : per_seed) {
        ts.push_back(s[ci].first);
        ms.push_back(s[ci].second);
      }
      med.emplace_back(median(ts), median(ms));
    }
    methods.push_back(spe_name + "_sampled");
    scores.push_back(std::move(med));
  }

  CsvTable table;
  table.comments = header("probe", config);
  table.comments.push_back("attention = causal unnormalized; scores averaged over " +
                           std::to_string(n_contents) + " unit content vectors");
  table.comments.push_back("sampled rows = median over seeds; query ranges beyond train_length "
                           "are extrapolation");
  table.columns = {"method", "query_lo", "query_hi", "window", "T", "M"};
  for (std::size_t mi = 0; mi < methods.size(); ++mi) {
    for (std::size_t ci = 0; ci < cells.size(); ++ci) {
      table.add_row({methods[mi], format_number(cells[ci].lo), format_number(cells[ci].hi),
                     format_number(cells[ci].window), format_number(scores[mi][ci].first),
                     format_number(scores[mi][ci].second)});
    }
  }
  return {{{exp.output_path, table.serialize()}}};
}

CommandOutput run_r_ablation(const Config& config) {
  ExperimentDefaults defaults;
  defaults.dims = 1;
  defaults.length = 64;
  defaults.seeds = 5;
  const ExperimentConfig exp = resolve_experiment(config, defaults);
  if (exp.variant != SpeVariant::kSine) {
    throw ParameterError("r-ablation fits sinusoidal kernels; use variant = sine");
  }
  const std::vector<Index> r_train = config.get_index_list("r_train_sweep", {64, 256, 1024, 4096});
  // 0 stands for the exact expected kernel of the fitted parameters.
  const std::vector<Index> r_test =
      config.get_index_list("r_test_sweep", {0, 64, 256, 1024, 4096, 65536});
  const Index max_offset = config.get_index("max_offset", 16);
  if (r_train.empty() || r_test.empty()) throw ParameterError("r-ablation needs both sweeps");
  if (!(max_offset >= 0 && max_offset < exp.num_keys)) {
    throw ParameterError("r-ablation needs 0 <= max_offset < N");
  }
  const std::vector<Index> offsets = symmetric_offsets(max_offset);
  const SineSpeParams truth = resolve_sine_params(config, exp);
  const IndexSet grid = IndexSet::range(exp.num_keys);
  // Resolve once so the fit keys appear in the header.
  (void)resolve_fit_config(config, exp.seed, 1);

  const auto n_seeds = static_cast<std::size_t>(exp.seeds);
  const std::size_t n_train = r_train.size();
  struct TrainOutcome {
    std::vector<double> residual;               // per dimension
    std::vector<std::vector<double>> mismatch;  // [test][dimension]
  };
  std::vector<TrainOutcome> outcomes(n_train * n_seeds);
  parallel_for_index(n_train * n_seeds, exp.jobs, [&](std::size_t task) {
    const Index rt = r_train[task / n_seeds];
    const std::uint64_t s = task % n_seeds;
    const std::uint64_t base = trial_seed(exp.seed, {s, static_cast<std::uint64_t>(rt)});
    const CodeMatrices train =
        draw_sine_codes(truth, grid, grid, rt, NoiseSpec{derive_seed(base, {1})});
    TrainOutcome& out = outcomes[task];
    out.mismatch.assign(r_test.size(), {});
    for (Index d = 0; d < exp.dims; ++d) {
      const Vector est = diagonal_means(estimate_kernel(train, d), offsets);
      KernelTarget target = KernelTarget::uniform(
          offsets, std::vector<double>(est.data(), est.data() + est.size()));
      const double target_norm = norm_of(target.values);
      const FitResult fit = fit_kernel(KernelModel::sine(exp.num_sines), target,
                                       resolve_fit_config(config, derive_seed(base, {2}), 1));
      out.residual.push_back(std::sqrt(fit.final_loss) / target_norm);
      const SineSpeParams fitted = fit.params.sine_params();
      for (std::size_t ti = 0; ti < r_test.size(); ++ti) {
        Vector test_est;
        if (r_test[ti] == 0) {
          test_est = fit.params.evaluate(offsets);
        } else {
          const CodeMatrices test = draw_sine_codes(
              fitted, grid, grid, r_test[ti],
              NoiseSpec{derive_seed(base, {3, static_cast<std::uint64_t>(r_test[ti]),
                                           static_cast<std::uint64_t>(d)})});
          test_est = diagonal_means(estimate_kernel(test, 0), offsets);
        }
        double sq = 0.0;
        for (std::size_t i = 0; i < offsets.size(); ++i) {
          const double r = test_est[static_cast<Index>(i)] - target.values[i];
          sq += r * r;
        }
        out.mismatch[ti].push_back(std::sqrt(sq) / target_norm);
      }
    }
  });

  CsvTable table;
  table.comments = header("r-ablation", config);
  table.comments.push_back(
      "proxy = kernel-level substitute for downstream accuracy: sine parameters are fitted to "
      "the R_train Monte Carlo kernel estimate, then re-sampled with R_test realizations");
  table.comments.push_back(
      "mismatch = relative norm of (R_test estimate - R_train target) over offsets; R_test = 0 "
      "uses the exact expected kernel of the fitted parameters");
  table.comments.push_back("fit_residual = relative norm of (fitted kernel - R_train target)");
  table.columns = {"R_train", "R_test", "median_mismatch", "median_fit_residual"};
  for (std::size_t i = 0; i < n_train; ++i) {
    std::vector<double> residuals;
    for (std::size_t s = 0; s < n_seeds; ++s) {
      const auto& r = outcomes[i * n_seeds + s].residual;
      residuals.insert(residuals.end(), r.begin(), r.end());
    }
    const double med_residual = median(residuals);
    for (std::size_t ti = 0; ti < r_test.size(); ++ti) {
      std::vector<double> sample;
      for (std::size_t s = 0; s < n_seeds; ++s) {
        const auto& m = outcomes[i * n_seeds + s].mismatch[ti];
        sample.insert(sample.end(), m.begin(), m.end());
      }
      table.add_row({format_number(r_train[i]), format_number(r_test[ti]),
                     format_number(median(sample)), format_number(med_residual)});
    }
  }
  return {{{exp.output_path, table.serialize()}}};
}

const std::vector<std::string>& command_names() {
  static const std::vector<std::string> names = {"convergence", "crossterm", "attention-dump",
                                                 "bench",       "fit",       "probe",
                                                 "r-ablation"};
  return names;
}

CommandOutput run_command(std::string_view name, const Config& config) {
  if (name == "convergence") return run_convergence(config);
  if (name == "crossterm") return run_crossterm(config);
  if (name == "attention-dump") return run_attention_dump(config);
  if (name == "bench") return run_bench(config);
  if (name == "fit") return run_fit(config);
  if (name == "probe") return run_probe(config);
  if (name == "r-ablation") return run_r_ablation(config);
  throw ParameterError("unknown command '" + std::string(name) + "'");
}

}  // namespace spe::harness
