#include "spe/core.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "spe/errors.hpp"
#include "spe/random.hpp"

namespace spe {
namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

void require_same_shape(const Matrix& a, const Matrix& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(what) + ": shape " + std::to_string(a.rows()) + "x" +
                     std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                     std::to_string(b.cols()));
  }
}

void require_dim(const CodeMatrices& codes, Index d, const char* what) {
  if (d < 0 || d >= codes.num_dims()) {
    throw IndexError(std::string(what) + ": dimension " + std::to_string(d) +
                     " out of range [0, " + std::to_string(codes.num_dims()) + ")");
  }
}

void require_realizations(Index r) {
  if (r < 1) throw ParameterError("number of realizations R must be >= 1");
}

}  // namespace

IndexSet IndexSet::range(Index n, Index start) {
  if (n < 1) throw ParameterError("index set length must be >= 1");
  std::vector<double> p(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) p[static_cast<std::size_t>(i)] = static_cast<double>(start + i);
  return IndexSet(std::move(p));
}

IndexSet IndexSet::from_positions(std::vector<double> positions) {
  if (positions.empty()) throw ParameterError("index set must not be empty");
  for (std::size_t i = 0; i < positions.size(); ++i) {
    if (!std::isfinite(positions[i])) throw ParameterError("index set positions must be finite");
    if (i > 0 && !(positions[i] > positions[i - 1])) {
      throw ParameterError("index set positions must be strictly increasing (at " +
                           std::to_string(i) + ")");
    }
  }
  return IndexSet(std::move(positions));
}

bool IndexSet::is_regular_from_zero() const noexcept {
  for (std::size_t i = 0; i < positions_.size(); ++i) {
    if (positions_[i] != static_cast<double>(i)) return false;
  }
  return true;
}

void SineSpeParams::validate() const {
  require_same_shape(freqs, phases, "sine params phases");
  require_same_shape(freqs, gains, "sine params gains");
  if (freqs.rows() < 1 || freqs.cols() < 1) {
    throw ShapeError("sine params need D >= 1 and K >= 1");
  }
  for (Index i = 0; i < freqs.size(); ++i) {
    const double f = freqs.data()[i];
    const double t = phases.data()[i];
    if (!(f >= 0.0 && f <= 1.0)) throw ParameterError("frequency outside [0, 1]: " + std::to_string(f));
    if (!(t >= -std::numbers::pi && t <= std::numbers::pi)) {
      throw ParameterError("phase outside [-pi, pi]: " + std::to_string(t));
    }
    if (!std::isfinite(gains.data()[i])) throw ParameterError("gain must be finite");
  }
}

void ConvSpeParams::validate() const {
  require_same_shape(filters_q, filters_k, "conv params filters");
  if (filters_q.rows() < 1 || filters_q.cols() < 1) {
    throw ShapeError("conv params need D >= 1 and P >= 1");
  }
  if (!filters_q.allFinite() || !filters_k.allFinite()) {
    throw ParameterError("filter taps must be finite");
  }
}

GateVector GateVector::constant(Index num_dims, double delta) {
  GateVector g{Vector::Constant(num_dims, delta)};
  g.validate();
  return g;
}

void GateVector::validate() const {
  for (Index d = 0; d < deltas.size(); ++d) {
    if (!(deltas[d] >= 0.0 && deltas[d] <= 1.0)) {
      throw ParameterError("gate " + std::to_string(d) + " outside [0, 1]: " +
                           std::to_string(deltas[d]));
    }
  }
}

NoiseSpec NoiseSpec::for_example(std::uint64_t b) const {
  if (batch_sharing) return *this;
  NoiseSpec out = *this;
  out.seed = derive_seed(seed, StreamRole::kExample, b);
  return out;
}

NoiseSpec NoiseSpec::for_layer(std::uint64_t l) const {
  if (layer_sharing) return *this;
  NoiseSpec out = *this;
  out.seed = derive_seed(seed, StreamRole::kLayer, l);
  return out;
}

NoiseSpec NoiseSpec::redraw(std::uint64_t step) const {
  NoiseSpec out = *this;
  out.seed = derive_seed(seed, StreamRole::kRedraw, step);
  return out;
}

std::string_view to_string(SpeVariant v) noexcept {
  switch (v) {
    case SpeVariant::kSine:
      return "sine";
    case SpeVariant::kConv:
      return "conv";
  }
  return "unknown";
}

void CodeMatrices::validate() const {
  if (q_codes.size() != k_codes.size()) {
    throw ShapeError("code stacks disagree on D: " + std::to_string(q_codes.size()) + " vs " +
                     std::to_string(k_codes.size()));
  }
  for (std::size_t d = 0; d < q_codes.size(); ++d) {
    const Matrix& q = q_codes[d];
    const Matrix& k = k_codes[d];
    if (q.rows() != num_queries() || k.rows() != num_keys() || q.cols() != num_realizations() ||
        k.cols() != num_realizations()) {
      throw ShapeError("code matrices of dimension " + std::to_string(d) + " have inconsistent shape");
    }
    if (!q.allFinite() || !k.allFinite()) {
      throw NumericError("code matrices of dimension " + std::to_string(d) + " are not finite");
    }
  }
}

Matrix build_omega(const IndexSet& positions, const Vector& freqs, const Vector& phases) {
  if (freqs.size() != phases.size()) {
    throw ShapeError("build_omega: " + std::to_string(freqs.size()) + " frequencies vs " +
                     std::to_string(phases.size()) + " phases");
  }
  if (freqs.size() < 1) throw ShapeError("build_omega: need K >= 1");
  const Index n = positions.size();
  const Index k = freqs.size();
  Matrix omega(n, 2 * k);
  for (Index c = 0; c < k; ++c) {
    for (Index i = 0; i < n; ++i) {
      const double angle = kTwoPi * freqs[c] * positions[i] + phases[c];
      omega(i, 2 * c) = std::cos(angle);
      omega(i, 2 * c + 1) = std::sin(angle);
    }
  }
  return omega;
}

CodeMatrices draw_sine_codes(const SineSpeParams& params, const IndexSet& queries,
                             const IndexSet& keys, Index num_realizations,
                             const NoiseSpec& noise) {
  params.validate();
  require_realizations(num_realizations);
  const Index dims = params.num_dims();
  const Index sines = params.num_sines();

  CodeMatrices out;
  out.provenance = {noise.seed, SpeVariant::kSine, false};
  out.q_codes.reserve(static_cast<std::size_t>(dims));
  out.k_codes.reserve(static_cast<std::size_t>(dims));
  const Vector zero_phase = Vector::Zero(sines);
  for (Index d = 0; d < dims; ++d) {
    RandomStream stream(noise.seed, StreamRole::kSineNoise, static_cast<std::uint64_t>(d));
    Matrix z = stream.normal_matrix(2 * sines, num_realizations);
    for (Index c = 0; c < sines; ++c) {
      z.row(2 * c) *= params.gains(d, c);
      z.row(2 * c + 1) *= params.gains(d, c);
    }
    const Vector f = params.freqs.row(d).transpose();
    const Vector theta = params.phases.row(d).transpose();
    out.q_codes.push_back(build_omega(queries, f, theta) * z);
    out.k_codes.push_back(build_omega(keys, f, zero_phase) * z);
  }
  return out;
}

CodeMatrices draw_conv_codes(const ConvSpeParams& params, Index length, Index num_realizations,
                             const NoiseSpec& noise) {
  params.validate();
  require_realizations(num_realizations);
  if (length < 1) throw ParameterError("sequence length must be >= 1");
  const Index dims = params.num_dims();
  const Index taps = params.filter_len();

  CodeMatrices out;
  out.provenance = {noise.seed, SpeVariant::kConv, false};
  out.q_codes.reserve(static_cast<std::size_t>(dims));
  out.k_codes.reserve(static_cast<std::size_t>(dims));
  for (Index d = 0; d < dims; ++d) {
    RandomStream stream(noise.seed, StreamRole::kConvNoise, static_cast<std::uint64_t>(d));
    // Row i of z holds position i - (P - 1).
    const Matrix z = stream.normal_matrix(length + taps - 1, num_realizations);
    Matrix q = Matrix::Zero(length, num_realizations);
    Matrix k = Matrix::Zero(length, num_realizations);
    for (Index p = 0; p < taps; ++p) {
      const auto window = z.middleRows(taps - 1 - p, length);
      q.noalias() += params.filters_q(d, p) * window;
      k.noalias() += params.filters_k(d, p) * window;
    }
    out.q_codes.push_back(std::move(q));
    out.k_codes.push_back(std::move(k));
  }
  return out;
}

CodeMatrices draw_conv_codes(const ConvSpeParams& params, const IndexSet& positions,
                             Index num_realizations, const NoiseSpec& noise) {
  if (!positions.is_regular_from_zero()) {
    throw ParameterError("convolutional codes require the regular grid 0..N-1");
  }
  return draw_conv_codes(params, positions.size(), num_realizations, noise);
}

CodeMatrices gate_codes(const CodeMatrices& codes, const GateVector& gates,
                        const NoiseSpec& noise) {
  gates.validate();
  if (gates.size() != codes.num_dims()) {
    throw ShapeError("gate_codes: " + std::to_string(gates.size()) + " gates for " +
                     std::to_string(codes.num_dims()) + " dimensions");
  }
  CodeMatrices out = codes;
  out.provenance.gated = true;
  const Index r = codes.num_realizations();
  for (Index d = 0; d < codes.num_dims(); ++d) {
    const double delta = gates.deltas[d];
    if (delta == 0.0) continue;
    RandomStream stream(noise.seed, StreamRole::kGateNoise, static_cast<std::uint64_t>(d));
    const Eigen::RowVectorXd eps = stream.normal_vector(r).transpose();
    const double keep = std::sqrt(1.0 - delta);
    const double mix = std::sqrt(delta);
    auto& q = out.q_codes[static_cast<std::size_t>(d)];
    auto& k = out.k_codes[static_cast<std::size_t>(d)];
    q = (keep * q).rowwise() + mix * eps;
    k = (keep * k).rowwise() + mix * eps;
  }
  return out;
}

EncodedQK combine_qk(const Matrix& queries, const Matrix& keys, const CodeMatrices& codes) {
  const Index dims = codes.num_dims();
  if (dims < 1) throw ShapeError("combine_qk: empty code stack");
  if (queries.cols() != dims || keys.cols() != dims) {
    throw ShapeError("combine_qk: content width must equal D = " + std::to_string(dims));
  }
  if (queries.rows() != codes.num_queries() || keys.rows() != codes.num_keys()) {
    throw ShapeError("combine_qk: content rows (" + std::to_string(queries.rows()) + ", " +
                     std::to_string(keys.rows()) + ") vs code rows (" +
                     std::to_string(codes.num_queries()) + ", " + std::to_string(codes.num_keys()) +
                     ")");
  }
  const Index r = codes.num_realizations();
  const double scale = std::pow(static_cast<double>(dims * r), -0.25);
  EncodedQK out{Matrix::Zero(codes.num_queries(), r), Matrix::Zero(codes.num_keys(), r)};
  for (Index d = 0; d < dims; ++d) {
    out.queries.noalias() += queries.col(d).asDiagonal() * codes.q_codes[static_cast<std::size_t>(d)];
    out.keys.noalias() += keys.col(d).asDiagonal() * codes.k_codes[static_cast<std::size_t>(d)];
  }
  out.queries *= scale;
  out.keys *= scale;
  return out;
}

Matrix estimate_kernel(const CodeMatrices& codes, Index d) {
  require_dim(codes, d, "estimate_kernel");
  const auto& q = codes.q_codes[static_cast<std::size_t>(d)];
  const auto& k = codes.k_codes[static_cast<std::size_t>(d)];
  return (q * k.transpose()) / static_cast<double>(codes.num_realizations());
}

Matrix estimate_cross_term(const CodeMatrices& codes, Index d, Index e) {
  require_dim(codes, d, "estimate_cross_term");
  require_dim(codes, e, "estimate_cross_term");
  if (d == e) throw ParameterError("estimate_cross_term needs two distinct dimensions");
  const auto& q = codes.q_codes[static_cast<std::size_t>(d)];
  const auto& k = codes.k_codes[static_cast<std::size_t>(e)];
  return (q * k.transpose()) / static_cast<double>(codes.num_realizations());
}

Matrix expected_kernel_sine(const SineSpeParams& params, Index d, const IndexSet& queries,
                            const IndexSet& keys) {
  params.validate();
  if (d < 0 || d >= params.num_dims()) throw IndexError("expected_kernel_sine: bad dimension");
  Matrix out = Matrix::Zero(queries.size(), keys.size());
  for (Index c = 0; c < params.num_sines(); ++c) {
    const double weight = params.gains(d, c) * params.gains(d, c);
    const double f = params.freqs(d, c);
    const double theta = params.phases(d, c);
    for (Index n = 0; n < keys.size(); ++n) {
      for (Index m = 0; m < queries.size(); ++m) {
        out(m, n) += weight * std::cos(kTwoPi * f * (queries[m] - keys[n]) + theta);
      }
    }
  }
  return out;
}

Matrix expected_kernel_conv(const ConvSpeParams& params, Index d, Index length) {
  params.validate();
  if (d < 0 || d >= params.num_dims()) throw IndexError("expected_kernel_conv: bad dimension");
  if (length < 1) throw ParameterError("sequence length must be >= 1");
  const Index taps = params.filter_len();
  // Entry depends on the offset only; evaluate each lag once.
  Vector by_lag = Vector::Zero(2 * taps - 1);
  for (Index lag = -(taps - 1); lag <= taps - 1; ++lag) {
    double acc = 0.0;
    for (Index p = 0; p < taps; ++p) {
      const Index i = p + lag;
      if (i >= 0 && i < taps) acc += params.filters_q(d, i) * params.filters_k(d, p);
    }
    by_lag[lag + taps - 1] = acc;
  }
  Matrix out = Matrix::Zero(length, length);
  for (Index n = 0; n < length; ++n) {
    for (Index m = 0; m < length; ++m) {
      const Index lag = m - n;
      if (lag > -taps && lag < taps) out(m, n) = by_lag[lag + taps - 1];
    }
  }
  return out;
}

Matrix expected_kernel_gated(const Matrix& kernel, double delta) {
  if (!(delta >= 0.0 && delta <= 1.0)) {
    throw ParameterError("gate outside [0, 1]: " + std::to_string(delta));
  }
  return (Matrix::Constant(kernel.rows(), kernel.cols(), delta) + (1.0 - delta) * kernel);
}

}  // namespace spe
