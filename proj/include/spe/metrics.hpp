#pragma once

// Identical-word probing of causal, unnormalized attention and the
// translation-invariance / monotonicity scores computed from it.

#include <vector>

#include "spe/core.hpp"

namespace spe {

/// Query positions [query_lo, query_hi), offsets [0, offset_window), and the
/// content vector repeated at every position.
struct ProbeConfig {
  Index query_lo = 0;
  Index query_hi = 1;
  Index offset_window = 1;
  Vector content;

  void validate() const;
};

/// exp(Qhat Khat^T / sqrt(R)) over positions 0..query_hi-1, causally masked,
/// with Qhat/Khat from combine_qk on constant content. Throws RangeError when
/// the codes are shorter than query_hi.
Matrix probe_attention_spe(const CodeMatrices& codes, const ProbeConfig& probe);

/// The same probe with every Qbar_d Kbar_d^T / R replaced by its expectation:
/// exp(sum_d c_d^2 P_d / sqrt(D)). `kernels` holds one P_d per dimension.
Matrix probe_attention_expected(const std::vector<Matrix>& kernels, const ProbeConfig& probe);

/// exp(X X^T / sqrt(D)) with X = content + ape_sinusoidal, causally masked.
Matrix probe_attention_ape(const ProbeConfig& probe);

/// Mean over offsets of the coefficient of variation of A[m, m - tau] across
/// query positions. Zero iff every probed diagonal is constant.
double translation_invariance_score(const Matrix& attention, const ProbeConfig& probe);

/// Share of upward variation in the mean diagonal profile: 0 when it is
/// non-increasing in the offset, 1 when non-decreasing. Needs offset_window >= 2.
double monotonicity_score(const Matrix& attention, const ProbeConfig& probe);

/// Mean of A[m, m - tau] over the probed query positions, tau in [0, W).
Vector mean_diagonal_profile(const Matrix& attention, const ProbeConfig& probe);

}  // namespace spe
