#include "spe/kernel_fit.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "spe/errors.hpp"
#include "spe/parallel.hpp"
#include "spe/random.hpp"

namespace spe {
namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr int kMaxHalvings = 30;
constexpr double kMaxStepGrowth = 1e6;

double wrap_phase(double theta) { return std::remainder(theta, kTwoPi); }

struct RestartOutcome {
  Vector raw;
  double loss = std::numeric_limits<double>::infinity();
  std::vector<double> trace;
};

RestartOutcome descend(const KernelObjective& objective, Vector raw, const FitConfig& config) {
  RestartOutcome out;
  Vector grad(raw.size());
  double loss = objective.loss_and_gradient(raw, grad);
  if (!std::isfinite(loss) || !grad.allFinite()) {
    throw DivergenceError("fit diverged at iteration 0 (loss " + std::to_string(loss) + ")", 0);
  }
  out.trace.push_back(loss);
  double step = config.learning_rate;
  for (Index it = 1; it <= config.max_iters && loss >= config.tolerance; ++it) {
    bool accepted = false;
    Vector candidate;
    double candidate_loss = loss;
    for (int h = 0; h <= kMaxHalvings; ++h) {
      candidate = raw - step * grad;
      candidate_loss = objective.loss(candidate);
      if (std::isfinite(candidate_loss) && candidate_loss < loss) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) break;  // no descent direction left at machine precision
    raw = std::move(candidate);
    loss = objective.loss_and_gradient(raw, grad);
    if (!std::isfinite(loss) || !grad.allFinite()) {
      throw DivergenceError("fit diverged at iteration " + std::to_string(it), it);
    }
    out.trace.push_back(loss);
    step = std::min(2.0 * step, kMaxStepGrowth * config.learning_rate);
  }
  out.raw = std::move(raw);
  out.loss = loss;
  return out;
}

}  // namespace

KernelTarget KernelTarget::uniform(std::vector<Index> offsets, std::vector<double> values) {
  KernelTarget t;
  t.weights.assign(offsets.size(), 1.0);
  t.offsets = std::move(offsets);
  t.values = std::move(values);
  t.validate();
  return t;
}

void KernelTarget::validate() const {
  if (offsets.empty()) throw ParameterError("kernel target needs at least one offset");
  if (values.size() != offsets.size() || weights.size() != offsets.size()) {
    throw ShapeError("kernel target: offsets, values and weights differ in length");
  }
  for (std::size_t i = 0; i < offsets.size(); ++i) {
    if (i > 0 && offsets[i] <= offsets[i - 1]) {
      throw ParameterError("kernel target offsets must be strictly increasing");
    }
    if (!std::isfinite(values[i])) throw ParameterError("kernel target values must be finite");
    if (!(weights[i] >= 0.0) || !std::isfinite(weights[i])) {
      throw ParameterError("kernel target weights must be finite and non-negative");
    }
  }
}

void FitConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ParameterError("learning_rate must be positive");
  if (max_iters < 1) throw ParameterError("max_iters must be >= 1");
  if (restarts < 1) throw ParameterError("restarts must be >= 1");
  if (!(tolerance > 0.0)) throw ParameterError("tolerance must be positive");
}

SineKernelGrads sine_kernel_grads(const Vector& freqs, const Vector& phases, const Vector& gains,
                                  const std::vector<Index>& offsets) {
  if (freqs.size() != phases.size() || freqs.size() != gains.size()) {
    throw ShapeError("sine_kernel_grads: parameter vectors differ in length");
  }
  if (freqs.size() < 1) throw ShapeError("sine_kernel_grads: need K >= 1");
  const Index t_count = static_cast<Index>(offsets.size());
  const Index k_count = freqs.size();
  SineKernelGrads g{Vector::Zero(t_count), Matrix(t_count, k_count), Matrix(t_count, k_count),
                    Matrix(t_count, k_count)};
  for (Index t = 0; t < t_count; ++t) {
    const double tau = static_cast<double>(offsets[static_cast<std::size_t>(t)]);
    for (Index k = 0; k < k_count; ++k) {
      const double angle = kTwoPi * freqs[k] * tau + phases[k];
      const double c = std::cos(angle);
      const double s = std::sin(angle);
      const double lam2 = gains[k] * gains[k];
      g.values[t] += lam2 * c;
      g.d_gain(t, k) = 2.0 * gains[k] * c;
      g.d_freq(t, k) = -kTwoPi * tau * lam2 * s;
      g.d_phase(t, k) = -lam2 * s;
    }
  }
  return g;
}

ConvKernelGrads conv_kernel_grads(const Vector& filter_q, const Vector& filter_k,
                                  const std::vector<Index>& offsets) {
  if (filter_q.size() != filter_k.size()) {
    throw ShapeError("conv_kernel_grads: filters differ in length");
  }
  if (filter_q.size() < 1) throw ShapeError("conv_kernel_grads: need P >= 1");
  const Index t_count = static_cast<Index>(offsets.size());
  const Index taps = filter_q.size();
  ConvKernelGrads g{Vector::Zero(t_count), Matrix::Zero(t_count, taps),
                    Matrix::Zero(t_count, taps)};
  for (Index t = 0; t < t_count; ++t) {
    const Index tau = offsets[static_cast<std::size_t>(t)];
    for (Index p = 0; p < taps; ++p) {
      const Index i = p + tau;
      if (i < 0 || i >= taps) continue;
      g.values[t] += filter_q[i] * filter_k[p];
      g.d_filter_q(t, i) += filter_k[p];
      g.d_filter_k(t, p) += filter_q[i];
    }
  }
  return g;
}

double squash(double u) noexcept {
  if (u >= 0.0) return 1.0 / (1.0 + std::exp(-u));
  const double e = std::exp(u);
  return e / (1.0 + e);
}

double unsquash(double p) {
  if (!(p > 0.0 && p < 1.0)) throw ParameterError("unsquash needs a value in (0, 1)");
  return std::log(p / (1.0 - p));
}

Index KernelModel::num_params() const noexcept {
  const Index base = family == ModelFamily::kSine ? 3 * size : 2 * size;
  return base + (gated ? 1 : 0);
}

FittedKernel FittedKernel::decode(const KernelModel& model, const Vector& raw) {
  if (raw.size() != model.num_params()) {
    throw ShapeError("parameter vector has " + std::to_string(raw.size()) + " entries, model needs " +
                     std::to_string(model.num_params()));
  }
  FittedKernel f;
  f.model = model;
  f.raw = raw;
  const Index n = model.size;
  if (model.family == ModelFamily::kSine) {
    f.freqs = raw.head(n).unaryExpr([](double u) { return squash(u); });
    f.phases = raw.segment(n, n).unaryExpr([](double t) { return wrap_phase(t); });
    f.gains = raw.segment(2 * n, n);
  } else {
    f.filter_q = raw.head(n);
    f.filter_k = raw.segment(n, n);
  }
  if (model.gated) f.gate = squash(raw[raw.size() - 1]);
  return f;
}

Vector FittedKernel::evaluate(const std::vector<Index>& offsets) const {
  Vector base = model.family == ModelFamily::kSine
                    ? sine_kernel_grads(freqs, phases, gains, offsets).values
                    : conv_kernel_grads(filter_q, filter_k, offsets).values;
  if (!model.gated) return base;
  return (gate + (1.0 - gate) * base.array()).matrix();
}

SineSpeParams FittedKernel::sine_params() const {
  if (model.family != ModelFamily::kSine) throw ParameterError("fitted model is not sinusoidal");
  return {freqs.transpose(), phases.transpose(), gains.transpose()};
}

ConvSpeParams FittedKernel::conv_params() const {
  if (model.family != ModelFamily::kConv) throw ParameterError("fitted model is not convolutional");
  return {filter_q.transpose(), filter_k.transpose()};
}

KernelObjective::KernelObjective(KernelModel model, KernelTarget target)
    : model_(model), target_(std::move(target)) {
  target_.validate();
  if (model_.size < 1) throw ParameterError("model size (K or P) must be >= 1");
}

Vector KernelObjective::evaluate(const Vector& raw, Matrix* jacobian) const {
  const FittedKernel f = FittedKernel::decode(model_, raw);
  const Index n = model_.size;
  const Index t_count = static_cast<Index>(target_.size());
  Vector base;
  Matrix jac;
  if (model_.family == ModelFamily::kSine) {
    const SineKernelGrads g = sine_kernel_grads(f.freqs, f.phases, f.gains, target_.offsets);
    base = g.values;
    if (jacobian != nullptr) {
      jac.resize(t_count, model_.num_params());
      // d f / d u = f (1 - f) for the logistic frequency map.
      const Vector dfdu = f.freqs.array() * (1.0 - f.freqs.array());
      jac.leftCols(n) = g.d_freq * dfdu.asDiagonal();
      jac.middleCols(n, n) = g.d_phase;
      jac.middleCols(2 * n, n) = g.d_gain;
    }
  } else {
    const ConvKernelGrads g = conv_kernel_grads(f.filter_q, f.filter_k, target_.offsets);
    base = g.values;
    if (jacobian != nullptr) {
      jac.resize(t_count, model_.num_params());
      jac.leftCols(n) = g.d_filter_q;
      jac.middleCols(n, n) = g.d_filter_k;
    }
  }
  if (!model_.gated) {
    if (jacobian != nullptr) *jacobian = std::move(jac);
    return base;
  }
  const double delta = f.gate;
  Vector values = (delta + (1.0 - delta) * base.array()).matrix();
  if (jacobian != nullptr) {
    const Index base_params = model_.num_params() - 1;
    jac.leftCols(base_params) *= (1.0 - delta);
    jac.col(base_params) = ((1.0 - base.array()) * delta * (1.0 - delta)).matrix();
    *jacobian = std::move(jac);
  }
  return values;
}

Vector KernelObjective::model_values(const Vector& raw) const { return evaluate(raw, nullptr); }

double KernelObjective::loss(const Vector& raw) const {
  const Vector v = evaluate(raw, nullptr);
  double total = 0.0;
  for (Index t = 0; t < v.size(); ++t) {
    const double r = v[t] - target_.values[static_cast<std::size_t>(t)];
    total += target_.weights[static_cast<std::size_t>(t)] * r * r;
  }
  return total;
}

double KernelObjective::loss_and_gradient(const Vector& raw, Vector& gradient) const {
  Matrix jac;
  const Vector v = evaluate(raw, &jac);
  Vector scaled_residual(v.size());
  double total = 0.0;
  for (Index t = 0; t < v.size(); ++t) {
    const double w = target_.weights[static_cast<std::size_t>(t)];
    const double r = v[t] - target_.values[static_cast<std::size_t>(t)];
    total += w * r * r;
    scaled_residual[t] = 2.0 * w * r;
  }
  gradient = jac.transpose() * scaled_residual;
  return total;
}

Vector initial_parameters(const KernelModel& model, std::uint64_t seed, Index restart) {
  RandomStream stream(seed, StreamRole::kFitInit, static_cast<std::uint64_t>(restart));
  const Index n = model.size;
  Vector raw = Vector::Zero(model.num_params());
  if (model.family == ModelFamily::kSine) {
    // Stratified over (0, 0.5]: one frequency per stratum.
    for (Index k = 0; k < n; ++k) {
      const double u = 1.0 - stream.uniform();  // (0, 1]
      const double f = 0.5 * (static_cast<double>(k) + u) / static_cast<double>(n);
      raw[k] = unsquash(std::min(f, 0.5));
    }
    raw.segment(2 * n, n).setConstant(1.0 / std::sqrt(static_cast<double>(n)));
  } else {
    const double scale = 1.0 / std::sqrt(static_cast<double>(n));
    for (Index i = 0; i < 2 * n; ++i) raw[i] = stream.normal() * scale;
  }
  return raw;
}

Vector pursuit_initial_parameters(const KernelModel& model, const KernelTarget& target) {
  if (model.family != ModelFamily::kSine) {
    throw ParameterError("pursuit initialization applies to sine models");
  }
  target.validate();
  constexpr Index kGrid = 4096;
  constexpr int kBackfitRounds = 4;
  const Index n = model.size;
  const auto t_count = static_cast<Index>(target.size());
  Vector tau(t_count);
  Vector w(t_count);
  Vector residual(t_count);
  for (Index t = 0; t < t_count; ++t) {
    tau[t] = static_cast<double>(target.offsets[static_cast<std::size_t>(t)]);
    w[t] = target.weights[static_cast<std::size_t>(t)];
    residual[t] = target.values[static_cast<std::size_t>(t)];
  }
  // Component k contributes a cos(2 pi f tau) + b sin(2 pi f tau).
  std::vector<double> freq(static_cast<std::size_t>(n), 0.0);
  std::vector<double> a(static_cast<std::size_t>(n), 0.0);
  std::vector<double> b(static_cast<std::size_t>(n), 0.0);
  auto contribution = [&](std::size_t k) {
    const Vector arg = kTwoPi * freq[k] * tau;
    return Vector(a[k] * arg.array().cos() + b[k] * arg.array().sin());
  };
  auto best_single = [&](std::size_t k) {
    double best_gain = -1.0;
    for (Index j = 1; j < kGrid; ++j) {
      const double f = 0.5 * static_cast<double>(j) / static_cast<double>(kGrid);
      const Vector arg = kTwoPi * f * tau;
      const Vector c = arg.array().cos();
      const Vector sn = arg.array().sin();
      const double cc = (w.array() * c.array() * c.array()).sum();
      const double ss = (w.array() * sn.array() * sn.array()).sum();
      const double cs = (w.array() * c.array() * sn.array()).sum();
      const double rc = (w.array() * residual.array() * c.array()).sum();
      const double rs = (w.array() * residual.array() * sn.array()).sum();
      const double det = cc * ss - cs * cs;
      double ca = 0.0;
      double sb = 0.0;
      if (det > 1e-9 * std::max(1.0, cc * ss)) {
        ca = (rc * ss - rs * cs) / det;
        sb = (rs * cc - rc * cs) / det;
      } else if (cc > 0.0) {
        ca = rc / cc;
      }
      const double gain = ca * rc + sb * rs;  // decrease of the weighted squared error
      if (gain > best_gain) {
        best_gain = gain;
        freq[k] = f;
        a[k] = ca;
        b[k] = sb;
      }
    }
  };
  for (std::size_t k = 0; k < static_cast<std::size_t>(n); ++k) {
    best_single(k);
    residual -= contribution(k);
  }
  for (int round = 0; round < kBackfitRounds; ++round) {
    for (std::size_t k = 0; k < static_cast<std::size_t>(n); ++k) {
      residual += contribution(k);
      best_single(k);
      residual -= contribution(k);
    }
  }
  Vector raw = Vector::Zero(model.num_params());
  for (Index k = 0; k < n; ++k) {
    const auto kk = static_cast<std::size_t>(k);
    // a = g^2 cos(theta), b = -g^2 sin(theta).
    raw[k] = unsquash(std::clamp(freq[kk], 1e-6, 1.0 - 1e-6));
    raw[n + k] = std::atan2(-b[kk], a[kk]);
    raw[2 * n + k] = std::pow(a[kk] * a[kk] + b[kk] * b[kk], 0.25);
  }
  return raw;
}

FitResult fit_kernel(const KernelModel& model, const KernelTarget& target, const FitConfig& config) {
  config.validate();
  const KernelObjective objective(model, target);
  const auto restarts = static_cast<std::size_t>(config.restarts);
  std::vector<RestartOutcome> outcomes(restarts);
  parallel_for_index(restarts, config.jobs, [&](std::size_t r) {
    const bool pursuit = r == 0 && model.family == ModelFamily::kSine;
    outcomes[r] = descend(objective,
                          pursuit ? pursuit_initial_parameters(model, target)
                                  : initial_parameters(model, config.init_seed, static_cast<Index>(r)),
                          config);
  });
  std::size_t best = 0;
  for (std::size_t r = 1; r < restarts; ++r) {
    if (outcomes[r].loss < outcomes[best].loss) best = r;
  }
  FitResult result;
  result.params = FittedKernel::decode(model, outcomes[best].raw);
  result.final_loss = outcomes[best].loss;
  result.loss_trace = std::move(outcomes[best].trace);
  result.best_restart = static_cast<Index>(best);
  for (const auto& o : outcomes) result.restart_losses.push_back(o.loss);
  return result;
}

Vector finite_diff_grads(const std::function<double(const Vector&)>& loss, const Vector& params,
                         double h) {
  if (!(h > 0.0)) throw ParameterError("finite difference step must be positive");
  Vector grad(params.size());
  Vector probe = params;
  for (Index i = 0; i < params.size(); ++i) {
    probe[i] = params[i] + h;
    const double up = loss(probe);
    probe[i] = params[i] - h;
    const double down = loss(probe);
    probe[i] = params[i];
    grad[i] = (up - down) / (2.0 * h);
  }
  return grad;
}

}  // namespace spe
