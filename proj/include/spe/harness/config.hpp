#pragma once

// Flat `key = value` configuration with `#` comments. Command-line settings
// override file settings, which override per-command defaults. Every value a
// command reads is recorded so it can be echoed into output headers.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "spe/core.hpp"

namespace spe::harness {

class Config {
 public:
  /// Throws ParseError (with line number) on malformed lines or unknown keys.
  static Config parse(std::string_view text);
  static Config load(const std::filesystem::path& path);

  /// Sets or overrides a key. Throws ParseError for unknown keys.
  void set(const std::string& key, const std::string& value);
  /// Applies `key=value` overrides in order.
  void apply_overrides(const std::vector<std::string>& assignments);
  bool has(const std::string& key) const;

  std::string get_string(const std::string& key, const std::string& fallback) const;
  Index get_index(const std::string& key, Index fallback) const;
  double get_double(const std::string& key, double fallback) const;
  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::vector<Index> get_index_list(const std::string& key, const std::vector<Index>& fallback) const;
  std::vector<double> get_double_list(const std::string& key,
                                      const std::vector<double>& fallback) const;
  /// Explicitly configured list, or nullopt.
  std::optional<std::vector<double>> get_optional_double_list(const std::string& key) const;

  /// `key = value` for every key read so far, sorted by key; runtime-only
  /// keys (out, jobs) are left out so they cannot change output bytes.
  std::vector<std::string> effective_lines() const;

  static const std::vector<std::string>& known_keys();

 private:
  const std::string* find(const std::string& key) const;
  void record(const std::string& key, const std::string& value) const;

  std::map<std::string, std::string> values_;
  mutable std::map<std::string, std::string> effective_;
};

/// Per-command defaults for the shared experiment fields.
struct ExperimentDefaults {
  SpeVariant variant = SpeVariant::kSine;
  Index dims = 1;
  Index num_sines = 2;
  Index filter_len = 8;
  Index length = 64;
  Index realizations = 1024;
  std::vector<Index> sweep;
  Index seeds = 10;
};

/// Shared experiment fields resolved from a Config.
struct ExperimentConfig {
  SpeVariant variant = SpeVariant::kSine;
  Index dims = 1;
  Index num_sines = 0;   // sine only
  Index filter_len = 0;  // conv only
  Index num_queries = 0;
  Index num_keys = 0;
  Index r_train = 0;
  Index r_test = 0;  // equals r_train unless set
  std::optional<GateVector> gates;
  std::uint64_t seed = 0;
  std::vector<Index> sweep;
  Index seeds = 10;
  std::string output_path;
  std::size_t jobs = 1;
};

/// Throws ParameterError when K is set for the conv variant or P for sine.
ExperimentConfig resolve_experiment(const Config& config, const ExperimentDefaults& defaults);

/// Sine parameters from `freqs`/`phases`/`gains` (row-major D x K) when set,
/// otherwise drawn from the seed: f ~ U(0, 0.5), theta ~ U(-pi, pi), gain ~ U(0.5, 1.5).
SineSpeParams resolve_sine_params(const Config& config, const ExperimentConfig& exp);
/// Conv parameters from `filters_q`/`filters_k` (row-major D x P) when set,
/// otherwise taps ~ N(0, 1/P) from the seed.
ConvSpeParams resolve_conv_params(const Config& config, const ExperimentConfig& exp);

SineSpeParams random_sine_params(Index dims, Index num_sines, std::uint64_t seed);
ConvSpeParams random_conv_params(Index dims, Index filter_len, std::uint64_t seed);

}  // namespace spe::harness
