#include "spe/metrics.hpp"

#include <cmath>
#include <string>

#include "spe/attention.hpp"
#include "spe/errors.hpp"

namespace spe {
namespace {

constexpr double kScoreEpsilon = 1e-12;

void require_fits(const Matrix& attention, const ProbeConfig& probe) {
  probe.validate();
  if (attention.rows() < probe.query_hi || attention.cols() < probe.query_hi) {
    throw RangeError("probe window [" + std::to_string(probe.query_lo) + ", " +
                     std::to_string(probe.query_hi) + ") exceeds attention matrix " +
                     std::to_string(attention.rows()) + "x" + std::to_string(attention.cols()));
  }
}

Matrix constant_content(const ProbeConfig& probe) {
  return probe.content.transpose().replicate(probe.query_hi, 1);
}

// Visits A[m, m - tau] for m in the query range; returns the count.
template <typename Fn>
Index for_each_on_diagonal(const Matrix& a, const ProbeConfig& probe, Index tau, Fn&& fn) {
  Index count = 0;
  for (Index m = std::max(probe.query_lo, tau); m < probe.query_hi; ++m) {
    fn(a(m, m - tau));
    ++count;
  }
  if (count == 0) {
    throw RangeError("offset " + std::to_string(tau) + " has no query in the probe window");
  }
  return count;
}

}  // namespace

void ProbeConfig::validate() const {
  if (!(query_lo >= 0 && query_lo < query_hi)) {
    throw RangeError("probe query range must satisfy 0 <= lo < hi");
  }
  if (!(offset_window >= 1 && offset_window <= query_hi)) {
    throw RangeError("probe offset window must satisfy 1 <= W <= hi");
  }
  if (content.size() < 1) throw ParameterError("probe content vector is empty");
}

Matrix probe_attention_spe(const CodeMatrices& codes, const ProbeConfig& probe) {
  probe.validate();
  if (probe.content.size() != codes.num_dims()) {
    throw ShapeError("probe content has " + std::to_string(probe.content.size()) +
                     " entries, codes have D = " + std::to_string(codes.num_dims()));
  }
  const Index len = probe.query_hi;
  if (codes.num_queries() < len || codes.num_keys() < len) {
    throw RangeError("probe needs " + std::to_string(len) + " positions, codes cover " +
                     std::to_string(std::min(codes.num_queries(), codes.num_keys())));
  }
  CodeMatrices window;
  window.provenance = codes.provenance;
  for (Index d = 0; d < codes.num_dims(); ++d) {
    window.q_codes.push_back(codes.q_codes[static_cast<std::size_t>(d)].topRows(len));
    window.k_codes.push_back(codes.k_codes[static_cast<std::size_t>(d)].topRows(len));
  }
  const Matrix content = constant_content(probe);
  const EncodedQK qk = combine_qk(content, content, window);
  const double scale = std::sqrt(static_cast<double>(codes.num_realizations()));
  return attention_matrix(qk.queries, qk.keys, scale, false, true);
}

Matrix probe_attention_expected(const std::vector<Matrix>& kernels, const ProbeConfig& probe) {
  probe.validate();
  const Index dims = static_cast<Index>(kernels.size());
  if (probe.content.size() != dims) {
    throw ShapeError("probe content length must equal the number of kernels");
  }
  const Index len = probe.query_hi;
  Matrix logits = Matrix::Zero(len, len);
  for (Index d = 0; d < dims; ++d) {
    const Matrix& p = kernels[static_cast<std::size_t>(d)];
    if (p.rows() < len || p.cols() < len) {
      throw RangeError("kernel " + std::to_string(d) + " is smaller than the probe window");
    }
    logits += probe.content[d] * probe.content[d] * p.topLeftCorner(len, len);
  }
  Matrix a = (logits / std::sqrt(static_cast<double>(dims))).array().exp();
  if (!a.allFinite()) throw NumericError("expected-kernel probe overflowed");
  a.triangularView<Eigen::StrictlyUpper>().setZero();
  return a;
}

Matrix probe_attention_ape(const ProbeConfig& probe) {
  probe.validate();
  const Index dims = probe.content.size();
  const Matrix x = constant_content(probe) + ape_sinusoidal(probe.query_hi, dims);
  return attention_matrix(x, x, std::sqrt(static_cast<double>(dims)), false, true);
}

Vector mean_diagonal_profile(const Matrix& attention, const ProbeConfig& probe) {
  require_fits(attention, probe);
  Vector profile(probe.offset_window);
  for (Index tau = 0; tau < probe.offset_window; ++tau) {
    double sum = 0.0;
    const Index n = for_each_on_diagonal(attention, probe, tau, [&](double v) { sum += v; });
    profile[tau] = sum / static_cast<double>(n);
  }
  return profile;
}

double translation_invariance_score(const Matrix& attention, const ProbeConfig& probe) {
  require_fits(attention, probe);
  double total = 0.0;
  for (Index tau = 0; tau < probe.offset_window; ++tau) {
    double sum = 0.0;
    double abs_sum = 0.0;
    const Index n = for_each_on_diagonal(attention, probe, tau, [&](double v) {
      sum += v;
      abs_sum += std::abs(v);
    });
    const double mean = sum / static_cast<double>(n);
    double sq = 0.0;
    for_each_on_diagonal(attention, probe, tau, [&](double v) { sq += (v - mean) * (v - mean); });
    const double stdev = std::sqrt(sq / static_cast<double>(n));
    total += stdev / (abs_sum / static_cast<double>(n) + kScoreEpsilon);
  }
  return total / static_cast<double>(probe.offset_window);
}

double monotonicity_score(const Matrix& attention, const ProbeConfig& probe) {
  if (probe.offset_window < 2) throw RangeError("monotonicity needs an offset window >= 2");
  const Vector profile = mean_diagonal_profile(attention, probe);
  double rises = 0.0;
  double variation = 0.0;
  for (Index tau = 0; tau + 1 < profile.size(); ++tau) {
    const double step = profile[tau + 1] - profile[tau];
    rises += std::max(0.0, step);
    variation += std::abs(step);
  }
  return rises / (variation + kScoreEpsilon);
}

}  // namespace spe
