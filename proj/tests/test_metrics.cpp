#include <cmath>
#include <functional>
#include <vector>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "spe/attention.hpp"
#include "spe/core.hpp"
#include "spe/errors.hpp"
#include "spe/metrics.hpp"
#include "spe/random.hpp"

namespace spe {
namespace {

Vector unit_content(Index dims, std::uint64_t seed) {
  RandomStream s(seed);
  Vector v = s.normal_vector(dims);
  return v / v.norm();
}

Matrix toeplitz(Index n, const std::function<double(Index)>& f) {
  Matrix a(n, n);
  for (Index m = 0; m < n; ++m) {
    for (Index k = 0; k < n; ++k) a(m, k) = f(m - k);
  }
  return a;
}

/// Coefficient of variation along diagonals, written out from the definition.
double brute_score(const Matrix& a, Index lo, Index hi, Index w) {
  double total = 0.0;
  for (Index tau = 0; tau < w; ++tau) {
    std::vector<double> d;
    for (Index m = lo; m < hi; ++m) {
      if (m - tau >= 0) d.push_back(a(m, m - tau));
    }
    double mean = 0.0;
    double abs_mean = 0.0;
    for (double x : d) {
      mean += x;
      abs_mean += std::abs(x);
    }
    mean /= static_cast<double>(d.size());
    abs_mean /= static_cast<double>(d.size());
    double var = 0.0;
    for (double x : d) var += (x - mean) * (x - mean);
    total += std::sqrt(var / static_cast<double>(d.size())) / (abs_mean + 1e-12);
  }
  return total / static_cast<double>(w);
}

TEST(ProbeConfig, Validation) {
  EXPECT_THROW((ProbeConfig{4, 4, 1, Vector::Ones(1)}.validate()), RangeError);
  EXPECT_THROW((ProbeConfig{0, 4, 5, Vector::Ones(1)}.validate()), RangeError);
  EXPECT_THROW((ProbeConfig{0, 4, 0, Vector::Ones(1)}.validate()), RangeError);
  EXPECT_THROW((ProbeConfig{0, 4, 2, Vector()}.validate()), ParameterError);
}

TEST(ProbeSpe, ZeroGainsGiveAllOnes) {
  const Index d = 4;
  const SineSpeParams p{Matrix::Constant(d, 2, 0.1), Matrix::Zero(d, 2), Matrix::Zero(d, 2)};
  const CodeMatrices codes = draw_sine_codes(p, IndexSet::range(16), IndexSet::range(16), 32, {1});
  const Matrix a = probe_attention_spe(gate_codes(codes, GateVector::constant(d, 0.0), {1}),
                                       {0, 16, 8, unit_content(d, 2)});
  for (Index m = 0; m < 16; ++m) {
    for (Index n = 0; n < 16; ++n) EXPECT_EQ(a(m, n), n <= m ? 1.0 : 0.0);
  }
}

TEST(ProbeSpe, DeterministicAndRangeChecked) {
  const Index d = 2;
  RandomStream s(3);
  const SineSpeParams p{s.uniform_matrix(d, 2, 0.0, 0.5), Matrix::Zero(d, 2), Matrix::Ones(d, 2)};
  const CodeMatrices codes = draw_sine_codes(p, IndexSet::range(12), IndexSet::range(12), 64, {4});
  const ProbeConfig probe{0, 12, 4, unit_content(d, 5)};
  EXPECT_EQ(probe_attention_spe(codes, probe), probe_attention_spe(codes, probe));
  EXPECT_THROW(probe_attention_spe(codes, {0, 13, 4, unit_content(d, 5)}), RangeError);
  EXPECT_THROW(probe_attention_spe(codes, {0, 12, 4, unit_content(3, 5)}), ShapeError);
}

TEST(ProbeExpected, SineIsExactlyToeplitz) {
  const Index d = 8;
  const Index n = 96;
  RandomStream s(6);
  const SineSpeParams p{s.uniform_matrix(d, 3, 0.0, 0.5), s.uniform_matrix(d, 3, -3.0, 3.0),
                        s.uniform_matrix(d, 3, 0.5, 1.5)};
  std::vector<Matrix> kernels;
  for (Index i = 0; i < d; ++i) kernels.push_back(expected_kernel_sine(p, i, IndexSet::range(n), IndexSet::range(n)));
  const Matrix a = probe_attention_expected(kernels, {0, n, 1, unit_content(d, 7)});
  // Only the causal half is compared; the masked half is identically zero.
  double worst = 0.0;
  for (Index m = 1; m < n; ++m) {
    for (Index k = 1; k <= m; ++k) worst = std::max(worst, std::abs(a(m, k) / a(m - 1, k - 1) - 1.0));
  }
  EXPECT_LE(worst, 1e-10);
  for (Index lo : {0, 32, 64}) {
    EXPECT_LE(translation_invariance_score(a, {lo, lo + 32, 16, unit_content(d, 7)}), 1e-10);
  }
}

TEST(ProbeApe, MatchesDefinition) {
  const Index d = 4;
  const Vector c = unit_content(d, 8);
  const Matrix a = probe_attention_ape({0, 10, 1, c});
  const Matrix x = c.transpose().replicate(10, 1) + ape_sinusoidal(10, d);
  for (Index m = 0; m < 10; ++m) {
    for (Index n = 0; n < 10; ++n) {
      const double want = n <= m ? std::exp(x.row(m).dot(x.row(n)) / 2.0) : 0.0;
      EXPECT_NEAR(a(m, n), want, 1e-12 * std::max(1.0, want));
    }
  }
}

TEST(TranslationInvariance, ToeplitzScoresZero) {
  const Matrix a = toeplitz(40, [](Index t) { return std::exp(-0.1 * std::abs(static_cast<double>(t))); });
  EXPECT_LE(translation_invariance_score(a, {10, 40, 8, Vector::Ones(1)}), 1e-10);
}

TEST(TranslationInvariance, RampIsPositiveAndMatchesBruteForce) {
  Matrix a(30, 30);
  for (Index m = 0; m < 30; ++m) a.row(m).setConstant(static_cast<double>(m));
  const ProbeConfig probe{5, 30, 6, Vector::Ones(1)};
  const double score = translation_invariance_score(a, probe);
  EXPECT_GT(score, 0.0);
  EXPECT_NEAR(score, brute_score(a, 5, 30, 6), 1e-14);

  RandomStream s(9);
  const Matrix r = s.uniform_matrix(50, 50, 0.1, 2.0);
  EXPECT_NEAR(translation_invariance_score(r, {3, 50, 10, Vector::Ones(1)}), brute_score(r, 3, 50, 10), 1e-13);
  EXPECT_NEAR(translation_invariance_score(r, {0, 20, 20, Vector::Ones(1)}), brute_score(r, 0, 20, 20), 1e-13);
}

TEST(TranslationInvariance, WindowBoundsAreChecked) {
  const Matrix a = Matrix::Ones(10, 10);
  EXPECT_THROW(translation_invariance_score(a, {0, 11, 2, Vector::Ones(1)}), RangeError);
  EXPECT_THROW(monotonicity_score(a, {0, 11, 2, Vector::Ones(1)}), RangeError);
}

TEST(TranslationInvariance, SampledScoreShrinksWithR) {
  const Index d = 4;
  const Index n = 64;
  RandomStream s(10);
  const SineSpeParams p{s.uniform_matrix(d, 2, 0.0, 0.5), s.uniform_matrix(d, 2, -3.0, 3.0),
                        s.uniform_matrix(d, 2, 0.5, 1.5)};
  const ProbeConfig probe{0, n, 16, unit_content(d, 11)};
  double previous = 1e300;
  for (Index r : {64, 1024, 16384}) {
    std::vector<double> scores;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      const CodeMatrices codes = draw_sine_codes(p, IndexSet::range(n), IndexSet::range(n), r, {seed});
      scores.push_back(translation_invariance_score(probe_attention_spe(codes, probe), probe));
    }
    const double med = oracle::median(scores);
    EXPECT_LE(med, previous);
    previous = med;
  }
}

TEST(Monotonicity, DecreasingAndIncreasingProfiles) {
  const Matrix down = toeplitz(20, [](Index t) { return t >= 0 ? std::exp(-0.3 * static_cast<double>(t)) : 0.0; });
  EXPECT_NEAR(monotonicity_score(down, {0, 20, 10, Vector::Ones(1)}), 0.0, 1e-12);
  const Matrix up = toeplitz(20, [](Index t) { return t >= 0 ? 1.0 + static_cast<double>(t) : 0.0; });
  EXPECT_NEAR(monotonicity_score(up, {0, 20, 10, Vector::Ones(1)}), 1.0, 1e-12);
  EXPECT_THROW(monotonicity_score(up, {0, 20, 1, Vector::Ones(1)}), RangeError);
}

TEST(Monotonicity, OscillatingSineKernelIsStrictlyBetween) {
  const SineSpeParams p{Matrix::Constant(1, 1, 0.25), Matrix::Zero(1, 1), Matrix::Ones(1, 1)};
  const Matrix k = expected_kernel_sine(p, 0, IndexSet::range(32), IndexSet::range(32));
  const ProbeConfig probe{0, 32, 12, Vector::Ones(1)};
  const Matrix a = probe_attention_expected({k}, probe);
  const double score = monotonicity_score(a, probe);
  EXPECT_GT(score, 0.0);
  EXPECT_LT(score, 1.0);
  // The profile follows exp(cos(pi tau / 2)) directly.
  const Vector profile = mean_diagonal_profile(a, probe);
  for (Index t = 0; t < 12; ++t) EXPECT_NEAR(profile[t], std::exp(std::cos(M_PI * static_cast<double>(t) / 2.0)), 1e-12);
}

TEST(Monotonicity, ConvKernelWithDecayingAutocorrelation) {
  // Taps 1, 1/2, 1/4, ... have a positive autocorrelation decaying in the offset.
  Matrix taps(1, 6);
  for (Index p = 0; p < 6; ++p) taps(0, p) = std::pow(0.5, static_cast<double>(p));
  const Matrix k = expected_kernel_conv({taps, taps}, 0, 24);
  const ProbeConfig probe{0, 24, 6, Vector::Ones(1)};
  EXPECT_NEAR(monotonicity_score(probe_attention_expected({k}, probe), probe), 0.0, 1e-12);
}

}  // namespace
}  // namespace spe
