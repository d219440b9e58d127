#pragma once

// Flat key = value configuration files (a TOML subset: comments, quoted
// strings, integers, reals, booleans; [section] headers are accepted and
// ignored) with command-line overrides.

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>

#include "trainer.hpp"

namespace fssuw {

using KeyValues = std::map<std::string, std::string>;

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::string strip_comment(const std::string& s) {
  bool quoted = false;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '"') quoted = !quoted;
    if (s[i] == '#' && !quoted) return s.substr(0, i);
  }
  return s;
}

inline std::string unquote(const std::string& v) {
  if (v.size() >= 2 && v.front() == '"' && v.back() == '"') return v.substr(1, v.size() - 2);
  return v;
}

}  // namespace detail

inline std::pair<std::string, std::string> parse_assignment(const std::string& text, const std::string& where) {
  const auto eq = text.find('=');
  require(eq != std::string::npos, ErrorCode::InvalidArgument, where + ": expected key = value");
  const std::string key = detail::trim(text.substr(0, eq));
  const std::string value = detail::unquote(detail::trim(text.substr(eq + 1)));
  require(!key.empty(), ErrorCode::InvalidArgument, where + ": empty key");
  return {key, value};
}

inline KeyValues parse_config_text(const std::string& text, const std::string& name = "config") {
  KeyValues kv;
  std::istringstream is(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    line = detail::trim(detail::strip_comment(line));
    if (line.empty() || line.front() == '[') continue;
    auto [k, v] = parse_assignment(line, name + ":" + std::to_string(lineno));
    kv[k] = v;
  }
  return kv;
}

inline KeyValues read_config_file(const fs::path& path) {
  std::ifstream is(path);
  require(static_cast<bool>(is), ErrorCode::IoError, "cannot open config " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_config_text(ss.str(), path.string());
}

namespace detail {

template <typename V>
V parse_number(const std::string& key, const std::string& s) {
  V v{};
  const auto* end = s.data() + s.size();
  auto [p, ec] = std::from_chars(s.data(), end, v);
  require(ec == std::errc() && p == end, ErrorCode::InvalidArgument, key + ": cannot parse '" + s + "'");
  return v;
}

inline bool parse_bool(const std::string& key, const std::string& s) {
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  fail(ErrorCode::InvalidArgument, key + ": expected true or false, got '" + s + "'");
}

template <typename V>
std::string show(V v) {
  if constexpr (std::is_same_v<V, bool>) {
    return v ? "true" : "false";
  } else if constexpr (std::is_floating_point_v<V>) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
  } else {
    return std::to_string(v);
  }
}

struct Field {
  std::function<void(TrainConfig&, const std::string&)> set;
  std::function<std::string(const TrainConfig&)> get;
};

template <typename V>
Field field(V TrainConfig::*member, const std::string& key) {
  return {[member, key](TrainConfig& c, const std::string& s) {
            if constexpr (std::is_same_v<V, bool>)
              c.*member = parse_bool(key, s);
            else
              c.*member = parse_number<V>(key, s);
          },
          [member](const TrainConfig& c) { return show(c.*member); }};
}

}  // namespace detail

/// Every recognised configuration key, in the order they are written out.
inline const std::vector<std::pair<std::string, detail::Field>>& config_fields() {
  using detail::field;
  static const std::vector<std::pair<std::string, detail::Field>> fields{
      {"epochs", field(&TrainConfig::epochs, "epochs")},
      {"batch_size", field(&TrainConfig::batch_size, "batch_size")},
      {"lr0", field(&TrainConfig::lr0, "lr0")},
      {"lr_decay", field(&TrainConfig::lr_decay, "lr_decay")},
      {"decay_every", field(&TrainConfig::decay_every, "decay_every")},
      {"momentum", field(&TrainConfig::momentum, "momentum")},
      {"weight_decay", field(&TrainConfig::weight_decay, "weight_decay")},
      {"seed", field(&TrainConfig::seed, "seed")},
      {"k_shot", field(&TrainConfig::k_shot, "k_shot")},
      {"max_iters", field(&TrainConfig::max_iters, "max_iters")},
      {"checkpoint_every", field(&TrainConfig::checkpoint_every, "checkpoint_every")},
      {"resolution", field(&TrainConfig::resolution, "resolution")},
      {"c_prime", field(&TrainConfig::c_prime, "c_prime")},
      {"sfe_width", field(&TrainConfig::sfe_width, "sfe_width")},
      {"fee_width", field(&TrainConfig::fee_width, "fee_width")},
      {"use_fee", field(&TrainConfig::use_fee, "use_fee")},
      {"use_fam", field(&TrainConfig::use_fam, "use_fam")},
      {"swap_roles", field(&TrainConfig::swap_roles, "swap_roles")},
      {"use_align", field(&TrainConfig::use_align, "use_align")},
      {"temperature", field(&TrainConfig::temperature, "temperature")},
  };
  return fields;
}

inline void apply_config(TrainConfig& cfg, const KeyValues& kv) {
  for (const auto& [k, v] : kv) {
    const auto& fields = config_fields();
    auto it = std::find_if(fields.begin(), fields.end(), [&](const auto& f) { return f.first == k; });
    require(it != fields.end(), ErrorCode::UsageError, "unknown configuration key '" + k + "'");
    it->second.set(cfg, v);
  }
}

/// Defaults, then the file (if any), then `key=value` overrides.
inline TrainConfig resolve_config(const fs::path& file, const std::vector<std::string>& overrides) {
  TrainConfig cfg;
  if (!file.empty()) apply_config(cfg, read_config_file(file));
  KeyValues kv;
  for (const auto& o : overrides) {
    auto [k, v] = parse_assignment(o, "--set " + o);
    kv[k] = v;
  }
  apply_config(cfg, kv);
  cfg.validate();
  return cfg;
}

inline std::string to_config_text(const TrainConfig& cfg) {
  std::string s;
  for (const auto& [k, f] : config_fields()) s += k + " = " + f.get(cfg) + "\n";
  return s;
}

}  // namespace fssuw
