#pragma once

// Feature maps, O(N) linear attention, and the quadratic softmax oracle.

#include <cstdint>

#include "spe/core.hpp"

namespace spe {

enum class FeatureKind { kRelu, kPositiveRandom, kIdentity };

/// The nonlinearity phi applied to queries and keys before linear attention.
struct FeatureMapSpec {
  FeatureKind kind = FeatureKind::kRelu;
  Index num_features = 0;  // positive random features only
  std::uint64_t seed = 0;  // positive random features only

  static FeatureMapSpec relu() { return {FeatureKind::kRelu, 0, 0}; }
  static FeatureMapSpec identity() { return {FeatureKind::kIdentity, 0, 0}; }
  static FeatureMapSpec positive_random(Index num_features, std::uint64_t seed) {
    return {FeatureKind::kPositiveRandom, num_features, seed};
  }
  void validate() const;
};

/// Which side of the attention product a feature matrix feeds. Selects the
/// stabilizer of positive random features: per row for queries, one shared
/// shift for keys, so that both cancel in the normalized output.
enum class FeatureRole { kQuery, kKey };

/// F x R' projection W of i.i.d. N(0, 1) entries drawn from `spec.seed`.
Matrix random_feature_projection(const FeatureMapSpec& spec, Index input_width);

/// phi(X) row by row. Positive random features are
/// exp(-|x|^2 / 2) exp(W x) / sqrt(F), an unbiased factorization of exp(<q, k>).
/// Throws NumericError on non-finite input.
Matrix feature_map_apply(const FeatureMapSpec& spec, const Matrix& x);

/// As feature_map_apply, with the maximum of W x subtracted before
/// exponentiation. Output rows differ from the exact map by positive factors
/// that cancel in linear_attention and causal_linear_attention.
Matrix feature_map_apply_stabilized(const FeatureMapSpec& spec, const Matrix& x, FeatureRole role);

/// Y = diag(d)^-1 phi_q (phi_k^T V), d = phi_q (phi_k^T 1).
/// Throws DegenerateAttentionError naming the first row with d <= 0.
Matrix linear_attention(const Matrix& phi_q, const Matrix& phi_k, const Matrix& values);

/// Causal form of linear_attention in one pass over blocks of rows, with
/// running sums carrying the earlier blocks.
Matrix causal_linear_attention(const Matrix& phi_q, const Matrix& phi_k, const Matrix& values);

/// exp(Qh Kh^T / scale), optionally causally masked, optionally row normalized.
/// Throws NumericError when exp overflows.
Matrix attention_matrix(const Matrix& queries, const Matrix& keys, double scale, bool normalized,
                        bool causal);

/// Row-softmax attention applied to V. Quadratic in memory; for verification.
Matrix full_attention_oracle(const Matrix& queries, const Matrix& keys, const Matrix& values,
                             double scale, bool causal);

/// Trigonometric absolute encoding: (n, 2i) -> sin(n / 10000^(2i/D)), (n, 2i+1) -> cos.
Matrix ape_sinusoidal(Index length, Index dims);

}  // namespace spe
