#pragma once

// Closed-form fitting of positional kernels to a stationary target by
// gradient descent, with analytic partials and a finite-difference oracle.

#include <cstdint>
#include <functional>
#include <vector>

#include "spe/core.hpp"

namespace spe {

/// Prescribed stationary kernel P*(tau) with per-offset weights.
struct KernelTarget {
  std::vector<Index> offsets;
  std::vector<double> values;
  std::vector<double> weights;

  /// Unit weights.
  static KernelTarget uniform(std::vector<Index> offsets, std::vector<double> values);
  std::size_t size() const noexcept { return offsets.size(); }
  void validate() const;
};

struct FitConfig {
  double learning_rate = 0.05;
  Index max_iters = 2000;
  std::uint64_t init_seed = 0;
  Index restarts = 1;
  double tolerance = 1e-12;
  std::size_t jobs = 1;

  void validate() const;
};

/// Kernel values over offsets and their partials, one row per offset.
struct SineKernelGrads {
  Vector values;
  Matrix d_gain;   // T x K
  Matrix d_freq;   // T x K
  Matrix d_phase;  // T x K
};

SineKernelGrads sine_kernel_grads(const Vector& freqs, const Vector& phases, const Vector& gains,
                                  const std::vector<Index>& offsets);

struct ConvKernelGrads {
  Vector values;
  Matrix d_filter_q;  // T x P
  Matrix d_filter_k;  // T x P
};

ConvKernelGrads conv_kernel_grads(const Vector& filter_q, const Vector& filter_k,
                                  const std::vector<Index>& offsets);

/// Logistic map from the unconstrained line onto (0, 1), and its inverse.
double squash(double u) noexcept;
double unsquash(double p);

enum class ModelFamily { kSine, kConv };

/// Model family to fit: K sinusoids or a P-tap filter pair, optionally gated.
struct KernelModel {
  ModelFamily family = ModelFamily::kSine;
  Index size = 1;
  bool gated = false;

  static KernelModel sine(Index num_sines, bool gated = false) {
    return {ModelFamily::kSine, num_sines, gated};
  }
  static KernelModel conv(Index filter_len, bool gated = false) {
    return {ModelFamily::kConv, filter_len, gated};
  }
  /// Length of the unconstrained parameter vector.
  Index num_params() const noexcept;
};

/// Parameters in their natural domains, decoded from an unconstrained vector.
///
/// Unconstrained layout: sine is [logit f (K), theta (K), gain (K)], conv is
/// [filter_q (P), filter_k (P)]; a gated model appends one gate logit.
struct FittedKernel {
  KernelModel model;
  Vector freqs;
  Vector phases;  // wrapped into [-pi, pi]
  Vector gains;
  Vector filter_q;
  Vector filter_k;
  double gate = 0.0;
  Vector raw;

  static FittedKernel decode(const KernelModel& model, const Vector& raw);
  Vector evaluate(const std::vector<Index>& offsets) const;
  /// One-dimension parameter sets for the code generators.
  SineSpeParams sine_params() const;
  ConvSpeParams conv_params() const;
};

/// Weighted squared error of a model family against a target.
class KernelObjective {
 public:
  KernelObjective(KernelModel model, KernelTarget target);

  const KernelModel& model() const noexcept { return model_; }
  const KernelTarget& target() const noexcept { return target_; }

  Vector model_values(const Vector& raw) const;
  double loss(const Vector& raw) const;
  /// Loss and its gradient with respect to the unconstrained parameters.
  double loss_and_gradient(const Vector& raw, Vector& gradient) const;

 private:
  // Values and Jacobian (T x num_params) in the unconstrained parameterization.
  Vector evaluate(const Vector& raw, Matrix* jacobian) const;

  KernelModel model_;
  KernelTarget target_;
};

struct FitResult {
  FittedKernel params;
  double final_loss = 0.0;
  std::vector<double> loss_trace;  // accepted iterates of the best restart
  Index best_restart = 0;
  std::vector<double> restart_losses;
};

/// Deterministic initial point of restart `restart`.
Vector initial_parameters(const KernelModel& model, std::uint64_t seed, Index restart);

/// Sine starting point from greedy matching pursuit on a frequency grid, with
/// a few backfitting sweeps over the components.
Vector pursuit_initial_parameters(const KernelModel& model, const KernelTarget& target);

/// Full-batch gradient descent with backtracking, best of `config.restarts`.
/// Restart 0 of a sine fit starts from the pursuit point, the rest from
/// initial_parameters.
/// Throws DivergenceError if an accepted iterate has a non-finite loss.
FitResult fit_kernel(const KernelModel& model, const KernelTarget& target, const FitConfig& config);

/// Central differences (L(p + h e_i) - L(p - h e_i)) / 2h.
Vector finite_diff_grads(const std::function<double(const Vector&)>& loss, const Vector& params,
                         double h);

}  // namespace spe
