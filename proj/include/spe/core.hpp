#pragma once

// Stochastic positional codes: sinusoidal and convolutional generators,
// gating, content combination, and the closed-form kernels they realize.

#include <cstdint>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace spe {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

/// Ordered, strictly increasing set of positions (the query or key axis).
class IndexSet {
 public:
  /// Regular grid start, start+1, ..., start+n-1.
  static IndexSet range(Index n, Index start = 0);
  /// Arbitrary real positions. Throws ParameterError unless strictly increasing and non-empty.
  static IndexSet from_positions(std::vector<double> positions);

  Index size() const noexcept { return static_cast<Index>(positions_.size()); }
  double operator[](Index i) const { return positions_[static_cast<std::size_t>(i)]; }
  const std::vector<double>& positions() const noexcept { return positions_; }

  /// True iff the positions are exactly 0, 1, ..., size()-1.
  bool is_regular_from_zero() const noexcept;

 private:
  explicit IndexSet(std::vector<double> positions) : positions_(std::move(positions)) {}
  std::vector<double> positions_;
};

/// Per-dimension sinusoid triples, each stored as a D x K array.
/// Frequencies are in cycles per position step.
struct SineSpeParams {
  Matrix freqs;
  Matrix phases;
  Matrix gains;

  Index num_dims() const noexcept { return freqs.rows(); }
  Index num_sines() const noexcept { return freqs.cols(); }
  /// Throws ShapeError or ParameterError.
  void validate() const;
};

/// Per-dimension FIR filter pairs, each stored as a D x P array.
struct ConvSpeParams {
  Matrix filters_q;
  Matrix filters_k;

  Index num_dims() const noexcept { return filters_q.rows(); }
  Index filter_len() const noexcept { return filters_q.cols(); }
  void validate() const;
};

struct GateVector {
  Vector deltas;

  static GateVector constant(Index num_dims, double delta);
  Index size() const noexcept { return deltas.size(); }
  void validate() const;
};

/// Seed and sharing policy for code generation.
///
/// Identical NoiseSpec and parameters give bit-identical codes. A training
/// loop obtains fresh realizations per batch through `redraw(step)`.
struct NoiseSpec {
  std::uint64_t seed = 0;
  bool batch_sharing = true;
  bool layer_sharing = true;

  /// Spec used for example `b` of a batch; identity when batch_sharing is on.
  NoiseSpec for_example(std::uint64_t b) const;
  /// Spec used for layer `l`; identity when layer_sharing is on.
  NoiseSpec for_layer(std::uint64_t l) const;
  /// Spec for the realizations of training step `step`.
  NoiseSpec redraw(std::uint64_t step) const;
};

enum class SpeVariant { kSine, kConv };

std::string_view to_string(SpeVariant v) noexcept;

struct CodeProvenance {
  std::uint64_t seed = 0;
  SpeVariant variant = SpeVariant::kSine;
  bool gated = false;
};

/// D stacked query codes (M x R each) and key codes (N x R each).
struct CodeMatrices {
  std::vector<Matrix> q_codes;
  std::vector<Matrix> k_codes;
  CodeProvenance provenance;

  Index num_dims() const noexcept { return static_cast<Index>(q_codes.size()); }
  Index num_queries() const noexcept { return q_codes.empty() ? 0 : q_codes.front().rows(); }
  Index num_keys() const noexcept { return k_codes.empty() ? 0 : k_codes.front().rows(); }
  Index num_realizations() const noexcept {
    return q_codes.empty() ? 0 : q_codes.front().cols();
  }
  /// Throws ShapeError on inconsistent stacks, NumericError on non-finite entries.
  void validate() const;
};

/// Content queries and keys after positional encoding (M x R and N x R).
struct EncodedQK {
  Matrix queries;
  Matrix keys;
};

/// |I| x 2K modulation matrix: cos(2 pi f_k i + b_k) at column 2k, sin at 2k+1.
Matrix build_omega(const IndexSet& positions, const Vector& freqs, const Vector& phases);

/// Sinusoidal codes. The same 2K x R noise feeds the query and key codes of a
/// dimension, so that E[Qbar_d Kbar_d^T] / R equals expected_kernel_sine.
CodeMatrices draw_sine_codes(const SineSpeParams& params, const IndexSet& queries,
                             const IndexSet& keys, Index num_realizations,
                             const NoiseSpec& noise);

/// Convolutional codes for self attention over positions 0..N-1. Noise covers
/// positions -(P-1)..N-1 so every output sees a full filter window.
CodeMatrices draw_conv_codes(const ConvSpeParams& params, Index length, Index num_realizations,
                             const NoiseSpec& noise);

/// As above, for an explicit grid. Throws ParameterError unless the grid is 0..N-1.
CodeMatrices draw_conv_codes(const ConvSpeParams& params, const IndexSet& positions,
                             Index num_realizations, const NoiseSpec& noise);

/// Mixes every code row with a per-dimension noise vector shared between the
/// query and key sides: row <- sqrt(1 - delta) row + sqrt(delta) eps_d.
CodeMatrices gate_codes(const CodeMatrices& codes, const GateVector& gates,
                        const NoiseSpec& noise);

/// Qhat = sum_d diag(Q[:, d]) Qbar_d / (DR)^(1/4), likewise for the keys.
/// Qhat Khat^T / sqrt(R) then approximates sum_d diag(q_d) P_d diag(k_d) / sqrt(D).
EncodedQK combine_qk(const Matrix& queries, const Matrix& keys, const CodeMatrices& codes);

/// Qbar_d Kbar_d^T / R.
Matrix estimate_kernel(const CodeMatrices& codes, Index d);

/// Qbar_d Kbar_e^T / R for d != e.
Matrix estimate_cross_term(const CodeMatrices& codes, Index d, Index e);

/// sum_k gain^2 cos(2 pi f (m - n) + theta) over the given index sets.
Matrix expected_kernel_sine(const SineSpeParams& params, Index d, const IndexSet& queries,
                            const IndexSet& keys);

/// sum_p q[p + m - n] k[p] with taps outside [0, P) treated as zero.
Matrix expected_kernel_conv(const ConvSpeParams& params, Index d, Index length);

/// delta + (1 - delta) kernel, entrywise.
Matrix expected_kernel_gated(const Matrix& kernel, double delta);

}  // namespace spe
