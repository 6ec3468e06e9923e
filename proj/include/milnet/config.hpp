#pragma once

#include <algorithm>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "milnet/errors.hpp"
#include "milnet/network.hpp"
#include "milnet/training.hpp"

namespace milnet {

/// Everything a CLI run needs besides file paths.
struct RunConfig {
  NetworkSpec network = NetworkSpec::defaults(Variant::MINet);
  TrainConfig train{};
  int folds = 10;
  int repeats = 5;
  bool standardize = true;

  void validate() const {
    network.validate();
    train.validate();
    if (folds < 2) throw ConfigError("folds must be >= 2");
    if (repeats < 1) throw ConfigError("repeats must be >= 1");
  }
};

inline const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = {
      "variant", "widths",   "pooling", "lse_r", "dropout",     "lr",      "momentum", "weight_decay",
      "epochs",  "seed",     "folds",   "repeats", "standardize", "ds_weights", "shuffle"};
  return keys;
}

namespace detail {

inline std::string trim_copy(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

template <typename T>
T parse_number(const std::string& key, const std::string& v) {
  T out{};
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    throw ConfigError("bad value '" + v + "' for key '" + key + "'");
  }
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError("bad boolean '" + v + "' for key '" + key + "'");
}

// Accepts "256,128,64,1", "(256, 128, 64, 1)" or "256 128 64 1".
template <typename T>
std::vector<T> parse_list(const std::string& key, std::string v) {
  for (char& c : v) {
    if (c == '(' || c == ')' || c == '[' || c == ']' || c == ',') c = ' ';
  }
  std::istringstream in(v);
  std::vector<T> out;
  std::string item;
  while (in >> item) out.push_back(parse_number<T>(key, item));
  if (out.empty()) throw ConfigError("empty list for key '" + key + "'");
  return out;
}

}  // namespace detail

/// Ordered key/value assignments; later entries win.
using ConfigEntries = std::vector<std::pair<std::string, std::string>>;

/// Parses "key = value" lines. '#' starts a comment; blank lines are skipped.
/// Errors carry the 1-based line number.
inline ConfigEntries parse_config_text(std::istream& in) {
  ConfigEntries entries;
  std::map<std::string, std::size_t> seen;
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const auto hash = raw.find('#');
    const std::string line = detail::trim_copy(std::string_view(raw).substr(0, hash));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const auto at = "line " + std::to_string(line_no) + ": ";
    if (eq == std::string::npos) throw ConfigError(at + "expected key = value");
    std::string key = detail::trim_copy(std::string_view(line).substr(0, eq));
    std::string value = detail::trim_copy(std::string_view(line).substr(eq + 1));
    if (std::find(config_keys().begin(), config_keys().end(), key) == config_keys().end()) {
      throw ConfigError(at + "unknown key '" + key + "'");
    }
    if (value.empty()) throw ConfigError(at + "missing value for '" + key + "'");
    if (auto it = seen.find(key); it != seen.end()) {
      throw ConfigError(at + "duplicate key '" + key + "' (first on line " + std::to_string(it->second) + ")");
    }
    seen[key] = line_no;
    entries.emplace_back(std::move(key), std::move(value));
  }
  return entries;
}

inline ConfigEntries parse_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  try {
    return parse_config_text(in);
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

/// Parses one "key=value" override.
inline std::pair<std::string, std::string> parse_override(const std::string& text) {
  const auto eq = text.find('=');
  if (eq == std::string::npos) throw ConfigError("override '" + text + "' is not key=value");
  std::string key = detail::trim_copy(std::string_view(text).substr(0, eq));
  std::string value = detail::trim_copy(std::string_view(text).substr(eq + 1));
  if (std::find(config_keys().begin(), config_keys().end(), key) == config_keys().end()) {
    throw ConfigError("unknown key '" + key + "' in override");
  }
  if (value.empty()) throw ConfigError("missing value for '" + key + "' in override");
  return {std::move(key), std::move(value)};
}

/// Builds a validated RunConfig from defaults plus entries (applied in order).
/// Widths follow the chosen variant's defaults unless `widths` is given.
inline RunConfig build_run_config(const ConfigEntries& entries) {
  std::map<std::string, std::string> kv;
  for (const auto& [k, v] : entries) kv[k] = v;

  RunConfig cfg;
  if (auto it = kv.find("variant"); it != kv.end()) {
    const auto v = parse_variant(it->second);
    if (!v) throw ConfigError("unknown variant '" + it->second + "'");
    cfg.network = NetworkSpec::defaults(*v);
  }
  for (const auto& [key, value] : kv) {
    if (key == "variant") continue;
    if (key == "widths") {
      cfg.network.widths = detail::parse_list<int>(key, value);
    } else if (key == "pooling") {
      const auto p = parse_pool_method(value);
      if (!p) throw ConfigError("unknown pooling '" + value + "'");
      cfg.network.pooling.method = *p;
    } else if (key == "lse_r") {
      cfg.network.pooling.r = detail::parse_number<double>(key, value);
    } else if (key == "dropout") {
      cfg.network.dropout_rate = detail::parse_number<double>(key, value);
    } else if (key == "lr") {
      cfg.train.learning_rate = detail::parse_number<double>(key, value);
    } else if (key == "momentum") {
      cfg.train.momentum = detail::parse_number<double>(key, value);
    } else if (key == "weight_decay") {
      cfg.train.weight_decay = detail::parse_number<double>(key, value);
    } else if (key == "epochs") {
      cfg.train.epochs = detail::parse_number<int>(key, value);
    } else if (key == "seed") {
      cfg.train.seed = detail::parse_number<std::uint64_t>(key, value);
      cfg.network.seed = cfg.train.seed;
    } else if (key == "folds") {
      cfg.folds = detail::parse_number<int>(key, value);
    } else if (key == "repeats") {
      cfg.repeats = detail::parse_number<int>(key, value);
    } else if (key == "standardize") {
      cfg.standardize = detail::parse_bool(key, value);
    } else if (key == "ds_weights") {
      cfg.network.ds_weights = detail::parse_list<double>(key, value);
    } else if (key == "shuffle") {
      cfg.train.shuffle_each_epoch = detail::parse_bool(key, value);
    } else {
      throw ConfigError("unknown key '" + key + "'");
    }
  }
  cfg.validate();
  return cfg;
}

/// Config file (optional, empty path = defaults) followed by overrides.
inline RunConfig load_run_config(const std::filesystem::path& path, const std::vector<std::string>& overrides) {
  ConfigEntries entries;
  if (!path.empty()) entries = parse_config_file(path);
  for (const auto& o : overrides) entries.push_back(parse_override(o));
  return build_run_config(entries);
}

}  // namespace milnet
