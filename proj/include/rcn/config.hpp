#pragma once

// Flat `key = value` configuration shared by the library and the CLI.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "rcn/errors.hpp"

namespace rcn {

enum class Variant { kStacked, kIndependent, kWideInput };
enum class PoolingMode { kLastStep, kAverage, kMax };

inline std::string to_string(Variant v) {
  switch (v) {
    case Variant::kStacked: return "stacked";
    case Variant::kIndependent: return "rcn-ind";
    case Variant::kWideInput: return "9x9-1x1";
  }
  return "?";
}

inline std::string to_string(PoolingMode m) {
  switch (m) {
    case PoolingMode::kLastStep: return "last";
    case PoolingMode::kAverage: return "average";
    case PoolingMode::kMax: return "max";
  }
  return "?";
}

struct Config {
  // frame geometry and encoder
  std::size_t height = 160;
  std::size_t width = 60;
  std::vector<std::size_t> encoder_channels{32, 32, 32, 32};
  std::size_t encoder_padding = 0;

  // recurrent stack
  std::vector<std::size_t> channels{128, 256, 256};
  std::size_t kernel_input = 5;
  std::size_t kernel_hidden = 5;
  Variant variant = Variant::kStacked;
  bool gate_bias = false;
  bool candidate_cross = false;
  PoolingMode pooling_mode = PoolingMode::kLastStep;
  double dropout = 0.7;

  // training
  std::size_t T = 20;
  std::size_t batch = 10;
  std::size_t batches_per_epoch = 1;
  double lr = 1e-3;
  double rho = 0.9;
  double eps = 1e-8;
  std::size_t epochs = 500;
  std::size_t patience = 50;
  double init_scale = 1.0;
  std::size_t crop_pad = 4;
  bool tta_mirror = true;
  std::size_t checkpoint_every = 0;
  std::uint64_t seed = 0;

  // evaluation protocol
  std::size_t trials = 10;
  double split_fraction = 0.5;

  /// Input-to-hidden kernel size after applying the variant.
  std::size_t input_kernel() const { return variant == Variant::kWideInput ? 9 : kernel_input; }
  std::size_t hidden_kernel() const { return variant == Variant::kWideInput ? 1 : kernel_hidden; }
  bool cross_layer() const { return variant != Variant::kIndependent; }

  static const std::vector<std::string>& keys() {
    static const std::vector<std::string> k{
        "height",   "width",       "encoder_channels", "encoder_padding", "channels",
        "kernel",   "kernel_input", "kernel_hidden",   "variant",         "gate_bias",
        "candidate_cross", "pooling_mode", "dropout",  "T",               "batch",
        "batches_per_epoch", "lr",  "rho",             "eps",             "epochs",
        "patience", "init_scale",  "crop_pad",         "tta_mirror",      "checkpoint_every",
        "seed",     "trials",      "split_fraction"};
    return k;
  }

  void set(const std::string& key, const std::string& value);
  std::string get(const std::string& key) const;

  /// Every key except the "kernel" shorthand, one `key = value` per line.
  std::string to_text() const {
    std::string out;
    for (const auto& k : keys()) {
      if (k == "kernel") continue;
      out += k + " = " + get(k) + "\n";
    }
    return out;
  }

  void validate() const;

  static Config parse(std::istream& is);
  static Config load(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config file " + path);
    return parse(is);
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline std::size_t parse_size(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const long long x = std::stoll(v, &used);
    if (used != v.size() || x < 0) throw std::invalid_argument(v);
    return static_cast<std::size_t>(x);
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "' expects a non-negative integer, got '" + v + "'");
  }
}

inline std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const unsigned long long x = std::stoull(v, &used);
    if (used != v.size() || v.front() == '-') throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "' expects an unsigned 64-bit integer, got '" + v + "'");
  }
}

inline double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double x = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "' expects a number, got '" + v + "'");
  }
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "on" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "off" || v == "no") return false;
  throw ConfigError("config key '" + key + "' expects true/false, got '" + v + "'");
}

inline std::vector<std::size_t> parse_list(const std::string& key, const std::string& v) {
  std::vector<std::size_t> out;
  std::istringstream is(v);
  std::string item;
  while (std::getline(is, item, ',')) out.push_back(parse_size(key, trim(item)));
  if (out.empty()) throw ConfigError("config key '" + key + "' expects a comma-separated list");
  return out;
}

inline std::string join(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

inline std::string fmt_double(double x) {
  std::ostringstream os;
  os.precision(17);
  os << x;
  return os.str();
}

}  // namespace detail

inline void Config::set(const std::string& key, const std::string& raw) {
  using namespace detail;
  const std::string v = trim(raw);
  if (key == "height") height = parse_size(key, v);
  else if (key == "width") width = parse_size(key, v);
  else if (key == "encoder_channels") {
    encoder_channels = parse_list(key, v);
    if (encoder_channels.size() == 1) encoder_channels.assign(4, encoder_channels.front());
  } else if (key == "encoder_padding") encoder_padding = parse_size(key, v);
  else if (key == "channels") channels = parse_list(key, v);
  else if (key == "kernel") kernel_input = kernel_hidden = parse_size(key, v);
  else if (key == "kernel_input") kernel_input = parse_size(key, v);
  else if (key == "kernel_hidden") kernel_hidden = parse_size(key, v);
  else if (key == "variant") {
    if (v == "stacked") variant = Variant::kStacked;
    else if (v == "rcn-ind") variant = Variant::kIndependent;
    else if (v == "9x9-1x1") variant = Variant::kWideInput;
    else throw ConfigError("variant must be stacked, rcn-ind or 9x9-1x1, got '" + v + "'");
  } else if (key == "gate_bias") gate_bias = parse_bool(key, v);
  else if (key == "candidate_cross") candidate_cross = parse_bool(key, v);
  else if (key == "pooling_mode") {
    if (v == "last") pooling_mode = PoolingMode::kLastStep;
    else if (v == "average") pooling_mode = PoolingMode::kAverage;
    else if (v == "max") pooling_mode = PoolingMode::kMax;
    else throw ConfigError("pooling_mode must be last, average or max, got '" + v + "'");
  } else if (key == "dropout") dropout = parse_double(key, v);
  else if (key == "T") T = parse_size(key, v);
  else if (key == "batch") batch = parse_size(key, v);
  else if (key == "batches_per_epoch") batches_per_epoch = parse_size(key, v);
  else if (key == "lr") lr = parse_double(key, v);
  else if (key == "rho") rho = parse_double(key, v);
  else if (key == "eps") eps = parse_double(key, v);
  else if (key == "epochs") epochs = parse_size(key, v);
  else if (key == "patience") patience = parse_size(key, v);
  else if (key == "init_scale") init_scale = parse_double(key, v);
  else if (key == "crop_pad") crop_pad = parse_size(key, v);
  else if (key == "tta_mirror") tta_mirror = parse_bool(key, v);
  else if (key == "checkpoint_every") checkpoint_every = parse_size(key, v);
  else if (key == "seed") seed = parse_u64(key, v);
  else if (key == "trials") trials = parse_size(key, v);
  else if (key == "split_fraction") split_fraction = parse_double(key, v);
  else throw ConfigError("unknown config key '" + key + "'");
}

inline std::string Config::get(const std::string& key) const {
  using namespace detail;
  if (key == "height") return std::to_string(height);
  if (key == "width") return std::to_string(width);
  if (key == "encoder_channels") return join(encoder_channels);
  if (key == "encoder_padding") return std::to_string(encoder_padding);
  if (key == "channels") return join(channels);
  if (key == "kernel" || key == "kernel_input") return std::to_string(kernel_input);
  if (key == "kernel_hidden") return std::to_string(kernel_hidden);
  if (key == "variant") return to_string(variant);
  if (key == "gate_bias") return gate_bias ? "true" : "false";
  if (key == "candidate_cross") return candidate_cross ? "true" : "false";
  if (key == "pooling_mode") return to_string(pooling_mode);
  if (key == "dropout") return fmt_double(dropout);
  if (key == "T") return std::to_string(T);
  if (key == "batch") return std::to_string(batch);
  if (key == "batches_per_epoch") return std::to_string(batches_per_epoch);
  if (key == "lr") return fmt_double(lr);
  if (key == "rho") return fmt_double(rho);
  if (key == "eps") return fmt_double(eps);
  if (key == "epochs") return std::to_string(epochs);
  if (key == "patience") return std::to_string(patience);
  if (key == "init_scale") return fmt_double(init_scale);
  if (key == "crop_pad") return std::to_string(crop_pad);
  if (key == "tta_mirror") return tta_mirror ? "true" : "false";
  if (key == "checkpoint_every") return std::to_string(checkpoint_every);
  if (key == "seed") return std::to_string(seed);
  if (key == "trials") return std::to_string(trials);
  if (key == "split_fraction") return fmt_double(split_fraction);
  throw ConfigError("unknown config key '" + key + "'");
}

inline Config Config::parse(std::istream& is) {
  Config cfg;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(lineno) + ": expected 'key = value'");
    }
    cfg.set(detail::trim(line.substr(0, eq)), line.substr(eq + 1));
  }
  return cfg;
}

inline void Config::validate() const {
  if (height == 0 || width == 0) throw ConfigError("frame height and width must be positive");
  if (encoder_channels.size() != 4) throw ConfigError("encoder_channels needs 4 entries (Conv0..Conv3)");
  if (channels.size() != 3) throw ConfigError("channels needs one entry per recurrent layer (3)");
  for (auto c : encoder_channels)
    if (c == 0) throw ConfigError("encoder channel counts must be positive");
  for (auto c : channels)
    if (c == 0) throw ConfigError("recurrent channel counts must be positive");
  if (input_kernel() % 2 == 0 || hidden_kernel() % 2 == 0)
    throw ConfigError("recurrent kernel sizes must be odd so zero padding preserves the grid");
  if (T == 0) throw ConfigError("T must be at least 1");
  if (batch < 2 || batch % 2 != 0) throw ConfigError("batch must be an even number >= 2");
  if (batches_per_epoch == 0) throw ConfigError("batches_per_epoch must be positive");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must lie in [0, 1)");
  if (!(lr >= 0.0)) throw ConfigError("lr must be non-negative");
  if (!(rho >= 0.0 && rho < 1.0)) throw ConfigError("rho must lie in [0, 1)");
  if (!(eps > 0.0)) throw ConfigError("eps must be positive");
  if (!(init_scale >= 0.0)) throw ConfigError("init_scale must be non-negative");
  if (!(split_fraction > 0.0 && split_fraction < 1.0)) throw ConfigError("split_fraction must lie in (0, 1)");
  if (trials == 0) throw ConfigError("trials must be at least 1");
}

}  // namespace rcn
