#include "spe/harness/config.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include "spe/errors.hpp"
#include "spe/harness/csv.hpp"
#include "spe/random.hpp"

namespace spe::harness {
namespace {

const std::vector<std::string> kRuntimeKeys = {"out", "jobs"};

std::string join(const std::vector<std::string>& parts) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) out += (i ? ", " : "") + parts[i];
  return out;
}

Index to_index(const std::string& key, const std::string& text) {
  const double v = parse_number(text);
  if (v != std::floor(v) || std::abs(v) > 9.0e15) {
    throw ParameterError("config key '" + key + "' needs an integer, got '" + text + "'");
  }
  return static_cast<Index>(v);
}

Matrix reshape_rows(const std::vector<double>& flat, Index rows, Index cols, const char* key) {
  if (static_cast<Index>(flat.size()) != rows * cols) {
    throw ParameterError(std::string("config key '") + key + "' needs " +
                         std::to_string(rows * cols) + " values (D x " + std::to_string(cols) +
                         "), got " + std::to_string(flat.size()));
  }
  Matrix m(rows, cols);
  for (Index i = 0; i < rows; ++i) {
    for (Index j = 0; j < cols; ++j) m(i, j) = flat[static_cast<std::size_t>(i * cols + j)];
  }
  return m;
}

}  // namespace

const std::vector<std::string>& Config::known_keys() {
  static const std::vector<std::string> keys = {
      "variant",      "D",           "K",          "P",            "M",
      "N",            "R",           "R_train",    "R_test",       "gates",
      "seed",         "sweep",       "seeds",      "out",          "jobs",
      "freqs",        "phases",      "gains",      "filters_q",    "filters_k",
      "mode",         "content",     "content_file", "causal",     "bench_n",
      "value_dim",    "repetitions", "warmup",     "oracle",       "oracle_max_n",
      "min_run_seconds", "target",   "target_kind", "restarts",    "max_iters",
      "learning_rate", "tolerance",  "max_offset", "fit_gated",    "train_length",
      "windows",      "probe_contents", "r_train_sweep", "r_test_sweep"};
  return keys;
}

Config Config::parse(std::string_view text) {
  Config c;
  std::istringstream in{std::string(text)};
  std::string raw;
  long line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    std::string_view line = trim(raw);
    if (const std::size_t hash = line.find('#'); hash != std::string_view::npos) {
      line = trim(line.substr(0, hash));
    }
    if (line.empty()) continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string_view::npos) throw ParseError("expected 'key = value'", line_no);
    const std::string key(trim(line.substr(0, eq)));
    const std::string value(trim(line.substr(eq + 1)));
    if (key.empty()) throw ParseError("empty key", line_no);
    try {
      c.set(key, value);
    } catch (const ParseError& e) {
      throw ParseError(e.what(), line_no);
    }
  }
  return c;
}

Config Config::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open config file " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  try {
    return parse(buf.str());
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what(), e.line());
  }
}

void Config::set(const std::string& key, const std::string& value) {
  const auto& keys = known_keys();
  if (std::find(keys.begin(), keys.end(), key) == keys.end()) {
    throw ParseError("unknown config key '" + key + "'", 0);
  }
  values_[key] = value;
}

void Config::apply_overrides(const std::vector<std::string>& assignments) {
  for (const auto& a : assignments) {
    const std::size_t eq = a.find('=');
    if (eq == std::string::npos) throw ParseError("override '" + a + "' is not key=value", 0);
    set(std::string(trim(std::string_view(a).substr(0, eq))),
        std::string(trim(std::string_view(a).substr(eq + 1))));
  }
}

bool Config::has(const std::string& key) const { return values_.count(key) > 0; }

const std::string* Config::find(const std::string& key) const {
  auto it = values_.find(key);
  return it == values_.end() ? nullptr : &it->second;
}

void Config::record(const std::string& key, const std::string& value) const {
  effective_[key] = value;
}

std::string Config::get_string(const std::string& key, const std::string& fallback) const {
  const std::string* v = find(key);
  const std::string out = v ? *v : fallback;
  record(key, out);
  return out;
}

Index Config::get_index(const std::string& key, Index fallback) const {
  const std::string* v = find(key);
  const Index out = v ? to_index(key, *v) : fallback;
  record(key, std::to_string(out));
  return out;
}

double Config::get_double(const std::string& key, double fallback) const {
  const std::string* v = find(key);
  const double out = v ? parse_number(*v) : fallback;
  record(key, format_number(out));
  return out;
}

std::uint64_t Config::get_u64(const std::string& key, std::uint64_t fallback) const {
  const std::string* v = find(key);
  std::uint64_t out = fallback;
  if (v) {
    std::size_t used = 0;
    try {
      out = std::stoull(*v, &used, 0);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != v->size() || (!v->empty() && v->front() == '-')) {
      throw ParameterError("config key '" + key + "' needs an unsigned 64-bit value, got '" + *v + "'");
    }
  }
  record(key, std::to_string(out));
  return out;
}

bool Config::get_bool(const std::string& key, bool fallback) const {
  const std::string* v = find(key);
  bool out = fallback;
  if (v) {
    if (*v == "true" || *v == "1" || *v == "yes" || *v == "on") {
      out = true;
    } else if (*v == "false" || *v == "0" || *v == "no" || *v == "off") {
      out = false;
    } else {
      throw ParameterError("config key '" + key + "' needs a boolean, got '" + *v + "'");
    }
  }
  record(key, out ? "true" : "false");
  return out;
}

std::vector<Index> Config::get_index_list(const std::string& key,
                                          const std::vector<Index>& fallback) const {
  const std::string* v = find(key);
  std::vector<Index> out = fallback;
  if (v) {
    out.clear();
    for (const auto& f : split_fields(*v)) out.push_back(to_index(key, f));
  }
  std::vector<std::string> parts;
  for (Index i : out) parts.push_back(std::to_string(i));
  record(key, join(parts));
  return out;
}

std::vector<double> Config::get_double_list(const std::string& key,
                                            const std::vector<double>& fallback) const {
  const std::string* v = find(key);
  std::vector<double> out = fallback;
  if (v) {
    out.clear();
    for (const auto& f : split_fields(*v)) out.push_back(parse_number(f));
  }
  std::vector<std::string> parts;
  for (double d : out) parts.push_back(format_number(d));
  record(key, join(parts));
  return out;
}

std::optional<std::vector<double>> Config::get_optional_double_list(const std::string& key) const {
  if (!has(key)) return std::nullopt;
  return get_double_list(key, {});
}

std::vector<std::string> Config::effective_lines() const {
  std::vector<std::string> out;
  for (const auto& [k, v] : effective_) {
    if (std::find(kRuntimeKeys.begin(), kRuntimeKeys.end(), k) != kRuntimeKeys.end()) continue;
    out.push_back(k + " = " + v);
  }
  return out;
}

ExperimentConfig resolve_experiment(const Config& config, const ExperimentDefaults& defaults) {
  ExperimentConfig e;
  const std::string variant =
      config.get_string("variant", std::string(to_string(defaults.variant)));
  if (variant == "sine") {
    e.variant = SpeVariant::kSine;
  } else if (variant == "conv") {
    e.variant = SpeVariant::kConv;
  } else {
    throw ParameterError("variant must be 'sine' or 'conv', got '" + variant + "'");
  }
  if (e.variant == SpeVariant::kSine && config.has("P")) {
    throw ParameterError("P (filter length) is only valid for the conv variant");
  }
  if (e.variant == SpeVariant::kConv && config.has("K")) {
    throw ParameterError("K (number of sines) is only valid for the sine variant");
  }
  e.dims = config.get_index("D", defaults.dims);
  if (e.dims < 1) throw ParameterError("D must be >= 1");
  if (e.variant == SpeVariant::kSine) {
    e.num_sines = config.get_index("K", defaults.num_sines);
    if (e.num_sines < 1) throw ParameterError("K must be >= 1");
  } else {
    e.filter_len = config.get_index("P", defaults.filter_len);
    if (e.filter_len < 1) throw ParameterError("P must be >= 1");
  }
  e.num_keys = config.get_index("N", defaults.length);
  e.num_queries = config.get_index("M", e.num_keys);
  if (e.num_keys < 1 || e.num_queries < 1) throw ParameterError("M and N must be >= 1");
  if (e.variant == SpeVariant::kConv && e.num_queries != e.num_keys) {
    throw ParameterError("the conv variant is self attention only (M must equal N)");
  }
  const Index r_default = config.has("R") ? config.get_index("R", defaults.realizations)
                                          : defaults.realizations;
  e.r_train = config.get_index("R_train", r_default);
  e.r_test = config.get_index("R_test", e.r_train);
  if (e.r_train < 1 || e.r_test < 1) throw ParameterError("R must be >= 1");
  if (config.has("gates")) {
    const auto g = config.get_double_list("gates", {});
    GateVector gates;
    if (g.size() == 1) {
      gates = GateVector::constant(e.dims, g.front());
    } else if (static_cast<Index>(g.size()) == e.dims) {
      gates.deltas = Eigen::Map<const Vector>(g.data(), e.dims);
    } else {
      throw ParameterError("gates needs 1 or D = " + std::to_string(e.dims) + " values");
    }
    gates.validate();
    e.gates = gates;
  }
  e.seed = config.get_u64("seed", 0);
  e.sweep = config.get_index_list("sweep", defaults.sweep);
  for (Index r : e.sweep) {
    if (r < 1) throw ParameterError("sweep values must be >= 1");
  }
  e.seeds = config.get_index("seeds", defaults.seeds);
  if (e.seeds < 1) throw ParameterError("seeds must be >= 1");
  e.output_path = config.get_string("out", "");
  const Index jobs = config.get_index("jobs", 1);
  if (jobs < 1) throw ParameterError("jobs must be >= 1");
  e.jobs = static_cast<std::size_t>(jobs);
  return e;
}

SineSpeParams random_sine_params(Index dims, Index num_sines, std::uint64_t seed) {
  RandomStream stream(seed, StreamRole::kParameters, 1);
  SineSpeParams p{Matrix(dims, num_sines), Matrix(dims, num_sines), Matrix(dims, num_sines)};
  for (Index d = 0; d < dims; ++d) {
    for (Index k = 0; k < num_sines; ++k) {
      p.freqs(d, k) = stream.uniform(0.0, 0.5);
      p.phases(d, k) = stream.uniform(-std::numbers::pi, std::numbers::pi);
      p.gains(d, k) = stream.uniform(0.5, 1.5);
    }
  }
  return p;
}

ConvSpeParams random_conv_params(Index dims, Index filter_len, std::uint64_t seed) {
  RandomStream stream(seed, StreamRole::kParameters, 2);
  const double scale = 1.0 / std::sqrt(static_cast<double>(filter_len));
  ConvSpeParams p{stream.normal_matrix(dims, filter_len) * scale,
                  stream.normal_matrix(dims, filter_len) * scale};
  return p;
}

SineSpeParams resolve_sine_params(const Config& config, const ExperimentConfig& exp) {
  SineSpeParams p = random_sine_params(exp.dims, exp.num_sines, exp.seed);
  if (auto f = config.get_optional_double_list("freqs")) {
    p.freqs = reshape_rows(*f, exp.dims, exp.num_sines, "freqs");
  }
  if (auto t = config.get_optional_double_list("phases")) {
    p.phases = reshape_rows(*t, exp.dims, exp.num_sines, "phases");
  }
  if (auto g = config.get_optional_double_list("gains")) {
    p.gains = reshape_rows(*g, exp.dims, exp.num_sines, "gains");
  }
  p.validate();
  return p;
}

ConvSpeParams resolve_conv_params(const Config& config, const ExperimentConfig& exp) {
  ConvSpeParams p = random_conv_params(exp.dims, exp.filter_len, exp.seed);
  if (auto q = config.get_optional_double_list("filters_q")) {
    p.filters_q = reshape_rows(*q, exp.dims, exp.filter_len, "filters_q");
  }
  if (auto k = config.get_optional_double_list("filters_k")) {
    p.filters_k = reshape_rows(*k, exp.dims, exp.filter_len, "filters_k");
  }
  p.validate();
  return p;
}

}  // namespace spe::harness
