#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

#include <Eigen/Dense>

namespace spe {

/// Tags that separate the independent random streams derived from one seed.
enum class StreamRole : std::uint64_t {
  kSineNoise = 1,
  kConvNoise = 2,
  kGateNoise = 3,
  kFeatureProjection = 4,
  kContent = 5,
  kParameters = 6,
  kFitInit = 7,
  kExample = 8,
  kLayer = 9,
  kRedraw = 10,
  kTrial = 11,
};

/// SplitMix64 finalizer. Bijective on 64-bit words.
constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Derives a child seed from `seed` and an ordered list of tags.
constexpr std::uint64_t derive_seed(std::uint64_t seed,
                                    std::initializer_list<std::uint64_t> tags) noexcept {
  std::uint64_t s = splitmix64(seed);
  for (std::uint64_t t : tags) s = splitmix64(s ^ splitmix64(t + 0x632be59bd9b4e019ULL));
  return s;
}

constexpr std::uint64_t derive_seed(std::uint64_t seed, StreamRole role,
                                    std::uint64_t index = 0) noexcept {
  return derive_seed(seed, {static_cast<std::uint64_t>(role), index});
}

/// Seeded stream of standard normal and uniform variates.
class RandomStream {
 public:
  explicit RandomStream(std::uint64_t seed) : engine_(seed) {}
  RandomStream(std::uint64_t seed, StreamRole role, std::uint64_t index = 0)
      : engine_(derive_seed(seed, role, index)) {}

  double normal() { return normal_(engine_); }
  double uniform(double lo = 0.0, double hi = 1.0) {
    return lo + (hi - lo) * std::uniform_real_distribution<double>(0.0, 1.0)(engine_);
  }

  /// rows x cols matrix of i.i.d. N(0, 1) entries, filled column-major.
  Eigen::MatrixXd normal_matrix(Eigen::Index rows, Eigen::Index cols);
  Eigen::VectorXd normal_vector(Eigen::Index n);
  Eigen::MatrixXd uniform_matrix(Eigen::Index rows, Eigen::Index cols, double lo, double hi);

  std::mt19937_64& engine() noexcept { return engine_; }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

}  // namespace spe
