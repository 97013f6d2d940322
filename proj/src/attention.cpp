#include "spe/attention.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "spe/errors.hpp"
#include "spe/random.hpp"

namespace spe {
namespace {

void require_finite(const Matrix& x, const char* what) {
  if (!x.allFinite()) throw NumericError(std::string(what) + ": non-finite input");
}

void check_linear_inputs(const Matrix& phi_q, const Matrix& phi_k, const Matrix& values) {
  if (phi_q.cols() != phi_k.cols()) {
    throw ShapeError("linear attention: query and key features differ in width (" +
                     std::to_string(phi_q.cols()) + " vs " + std::to_string(phi_k.cols()) + ")");
  }
  if (phi_k.rows() != values.rows()) {
    throw ShapeError("linear attention: " + std::to_string(phi_k.rows()) + " keys vs " +
                     std::to_string(values.rows()) + " values");
  }
  require_finite(phi_q, "linear attention");
  require_finite(phi_k, "linear attention");
  require_finite(values, "linear attention");
}

/// exp(-|x|^2/2 + W x - shift) / sqrt(F) for every row, with shift per row or global.
Matrix positive_random_features(const FeatureMapSpec& spec, const Matrix& x, bool stabilize,
                                FeatureRole role) {
  const Matrix w = random_feature_projection(spec, x.cols());
  Matrix logits = x * w.transpose();
  logits.colwise() -= 0.5 * x.rowwise().squaredNorm();
  if (stabilize) {
    if (role == FeatureRole::kQuery) {
      logits.colwise() -= logits.rowwise().maxCoeff();
    } else if (logits.size() > 0) {
      logits.array() -= logits.maxCoeff();
    }
  }
  Matrix out = logits.array().exp() / std::sqrt(static_cast<double>(spec.num_features));
  if (!out.allFinite()) throw NumericError("positive random features overflowed");
  return out;
}

}  // namespace

void FeatureMapSpec::validate() const {
  if (kind == FeatureKind::kPositiveRandom && num_features < 1) {
    throw ParameterError("positive random features need num_features >= 1");
  }
}

Matrix random_feature_projection(const FeatureMapSpec& spec, Index input_width) {
  spec.validate();
  RandomStream stream(spec.seed, StreamRole::kFeatureProjection,
                      static_cast<std::uint64_t>(input_width));
  return stream.normal_matrix(spec.num_features, input_width);
}

Matrix feature_map_apply(const FeatureMapSpec& spec, const Matrix& x) {
  spec.validate();
  require_finite(x, "feature_map_apply");
  switch (spec.kind) {
    case FeatureKind::kRelu:
      return x.cwiseMax(0.0);
    case FeatureKind::kIdentity:
      return x;
    case FeatureKind::kPositiveRandom:
      return positive_random_features(spec, x, false, FeatureRole::kQuery);
  }
  throw ParameterError("unknown feature map kind");
}

Matrix feature_map_apply_stabilized(const FeatureMapSpec& spec, const Matrix& x, FeatureRole role) {
  spec.validate();
  require_finite(x, "feature_map_apply");
  if (spec.kind != FeatureKind::kPositiveRandom) return feature_map_apply(spec, x);
  return positive_random_features(spec, x, true, role);
}

Matrix linear_attention(const Matrix& phi_q, const Matrix& phi_k, const Matrix& values) {
  check_linear_inputs(phi_q, phi_k, values);
  const Matrix kv = phi_k.transpose() * values;  // F x Dv, the O(N) reduction
  const Vector k_sum = phi_k.colwise().sum().transpose();
  const Vector normalizer = phi_q * k_sum;
  Matrix out = phi_q * kv;
  for (Index m = 0; m < out.rows(); ++m) {
    if (!(normalizer[m] > 0.0)) {
      throw DegenerateAttentionError(
          "linear attention: zero normalizer at row " + std::to_string(m), m);
    }
    out.row(m) /= normalizer[m];
  }
  return out;
}

Matrix causal_linear_attention(const Matrix& phi_q, const Matrix& phi_k, const Matrix& values) {
  check_linear_inputs(phi_q, phi_k, values);
  if (phi_q.rows() != phi_k.rows()) {
    throw ShapeError("causal linear attention needs as many queries as keys");
  }
  const Index n = phi_q.rows();
  const Index features = phi_q.cols();
  const Index width = values.cols();
  // Blocks of rows: earlier blocks enter through the running sums, the
  // current block through a masked product.
  constexpr Index kBlock = 64;
  Matrix running = Matrix::Zero(features, width);
  Vector running_sum = Vector::Zero(features);
  Matrix out(n, width);
  for (Index start = 0; start < n; start += kBlock) {
    const Index b = std::min(kBlock, n - start);
    const auto q = phi_q.middleRows(start, b);
    const auto k = phi_k.middleRows(start, b);
    const auto v = values.middleRows(start, b);
    Matrix local = q * k.transpose();
    local.triangularView<Eigen::StrictlyUpper>().setZero();
    const Vector normalizer = q * running_sum + local.rowwise().sum();
    for (Index i = 0; i < b; ++i) {
      if (!(normalizer[i] > 0.0)) {
        throw DegenerateAttentionError(
            "causal linear attention: zero normalizer at row " + std::to_string(start + i), start + i);
      }
    }
    auto y = out.middleRows(start, b);
    y.noalias() = q * running;
    y.noalias() += local * v;
    y.array().colwise() /= normalizer.array();
    running.noalias() += k.transpose() * v;
    running_sum += k.colwise().sum().transpose();
  }
  return out;
}

Matrix attention_matrix(const Matrix& queries, const Matrix& keys, double scale, bool normalized,
                        bool causal) {
  if (queries.cols() != keys.cols()) throw ShapeError("attention_matrix: feature widths differ");
  if (!(scale > 0.0)) throw ParameterError("attention scale must be positive");
  if (causal && queries.rows() != keys.rows()) {
    throw ShapeError("causal attention needs as many queries as keys");
  }
  require_finite(queries, "attention_matrix");
  require_finite(keys, "attention_matrix");
  Matrix a = ((queries * keys.transpose()) / scale).array().exp();
  if (!a.allFinite()) throw NumericError("attention_matrix: exp overflow; pre-scale the inputs");
  if (causal) a.triangularView<Eigen::StrictlyUpper>().setZero();
  if (normalized) {
    for (Index m = 0; m < a.rows(); ++m) {
      const double total = a.row(m).sum();
      if (!(total > 0.0)) {
        throw DegenerateAttentionError("attention_matrix: row " + std::to_string(m) +
                                           " has no mass",
                                       m);
      }
      a.row(m) /= total;
    }
  }
  return a;
}

Matrix full_attention_oracle(const Matrix& queries, const Matrix& keys, const Matrix& values,
                             double scale, bool causal) {
  if (keys.rows() != values.rows()) throw ShapeError("full_attention_oracle: keys vs values rows");
  return attention_matrix(queries, keys, scale, true, causal) * values;
}

Matrix ape_sinusoidal(Index length, Index dims) {
  if (dims < 2 || dims % 2 != 0) {
    throw ParameterError("sinusoidal APE needs an even, positive D (got " + std::to_string(dims) +
                         ")");
  }
  if (length < 1) throw ParameterError("sinusoidal APE needs length >= 1");
  Matrix out(length, dims);
  for (Index i = 0; i < dims / 2; ++i) {
    const double rate =
        std::pow(10000.0, -static_cast<double>(2 * i) / static_cast<double>(dims));
    for (Index n = 0; n < length; ++n) {
      out(n, 2 * i) = std::sin(static_cast<double>(n) * rate);
      out(n, 2 * i + 1) = std::cos(static_cast<double>(n) * rate);
    }
  }
  return out;
}

}  // namespace spe
