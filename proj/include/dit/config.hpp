#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "dit/sampling.hpp"

namespace dit {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Every tunable of the pipeline. Text form is one `key = value` per line.
struct PipelineConfig {
  // Architecture.
  std::size_t pse_layers = 3;  // N_l
  std::size_t pft_depth = 6;   // N_t
  std::size_t d_model = 64;
  std::size_t heads = 4;
  std::size_t k = 0;  // LFI neighbours; 0 picks min(20, points / 4)
  std::size_t se_ratio = 4;
  std::size_t shallow_wide_width = 160;
  bool residual_outside_ln = false;

  // Matching and confidence.
  double temperature = 0.1;
  std::size_t k_s = 10;
  std::size_t k_m = 10;
  double lambda = 30.0;
  double tau = 0.5;

  // Objective.
  double alpha = 0.1;
  double beta = 1.0;
  double r_inlier = 0.05;
  bool literal_losses = false;

  // Optimisation and data.
  double lr = 3e-5;
  std::size_t epochs = 30;
  std::size_t batch_size = 1;
  std::uint64_t seed = 0;
  std::string mode = "clean";
  std::size_t points = 128;

  // Ablations.
  bool no_pse = false;
  bool shallow_wide = false;
  bool no_pos_enc = false;
  bool no_gmcce = false;

  /// PFT depth and width after ablations.
  std::size_t effective_depth() const { return shallow_wide ? 1 : pft_depth; }
  std::size_t effective_width() const { return shallow_wide ? shallow_wide_width : d_model; }
  std::size_t effective_k() const { return k ? k : std::min<std::size_t>(20, points / 4); }

  void set(const std::string& key, const std::string& value);
  std::string get(const std::string& key) const;
  static const std::vector<std::string>& keys();
  void validate() const;
  std::string to_text() const;

  static PipelineConfig parse(std::istream& in, const std::string& origin = "<config>");
  static PipelineConfig load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  /// DIT_SEED, when set, replaces `seed`.
  void apply_environment();
};

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

template <class T>
T parse_unsigned(const std::string& key, const std::string& v) {
  T out{};
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  return out;
}

inline double parse_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) throw ConfigError(key + ": expected a number, got '" + v + "'");
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError(key + ": expected a boolean, got '" + v + "'");
}

inline std::string format_double(double v) {
  char buf[32];
  const auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

struct Field {
  std::function<void(PipelineConfig&, const std::string&)> set;
  std::function<std::string(const PipelineConfig&)> get;
};

template <class M>
Field size_field(M PipelineConfig::*m, const char* key) {
  return {[m, key](PipelineConfig& c, const std::string& v) { c.*m = parse_unsigned<M>(key, v); },
          [m](const PipelineConfig& c) { return std::to_string(c.*m); }};
}

inline Field double_field(double PipelineConfig::*m, const char* key) {
  return {[m, key](PipelineConfig& c, const std::string& v) { c.*m = parse_double(key, v); },
          [m](const PipelineConfig& c) { return format_double(c.*m); }};
}

inline Field bool_field(bool PipelineConfig::*m, const char* key) {
  return {[m, key](PipelineConfig& c, const std::string& v) { c.*m = parse_bool(key, v); },
          [m](const PipelineConfig& c) { return std::string(c.*m ? "true" : "false"); }};
}

inline const std::map<std::string, Field>& fields() {
  static const std::map<std::string, Field> table = {
      {"pse_layers", size_field(&PipelineConfig::pse_layers, "pse_layers")},
      {"pft_depth", size_field(&PipelineConfig::pft_depth, "pft_depth")},
      {"d_model", size_field(&PipelineConfig::d_model, "d_model")},
      {"heads", size_field(&PipelineConfig::heads, "heads")},
      {"k", size_field(&PipelineConfig::k, "k")},
      {"se_ratio", size_field(&PipelineConfig::se_ratio, "se_ratio")},
      {"shallow_wide_width", size_field(&PipelineConfig::shallow_wide_width, "shallow_wide_width")},
      {"residual_outside_ln", bool_field(&PipelineConfig::residual_outside_ln, "residual_outside_ln")},
      {"temperature", double_field(&PipelineConfig::temperature, "temperature")},
      {"k_s", size_field(&PipelineConfig::k_s, "k_s")},
      {"k_m", size_field(&PipelineConfig::k_m, "k_m")},
      {"lambda", double_field(&PipelineConfig::lambda, "lambda")},
      {"tau", double_field(&PipelineConfig::tau, "tau")},
      {"alpha", double_field(&PipelineConfig::alpha, "alpha")},
      {"beta", double_field(&PipelineConfig::beta, "beta")},
      {"r_inlier", double_field(&PipelineConfig::r_inlier, "r_inlier")},
      {"literal_losses", bool_field(&PipelineConfig::literal_losses, "literal_losses")},
      {"lr", double_field(&PipelineConfig::lr, "lr")},
      {"epochs", size_field(&PipelineConfig::epochs, "epochs")},
      {"batch_size", size_field(&PipelineConfig::batch_size, "batch_size")},
      {"seed", size_field(&PipelineConfig::seed, "seed")},
      {"mode", {[](PipelineConfig& c, const std::string& v) { c.mode = v; },
                [](const PipelineConfig& c) { return c.mode; }}},
      {"points", size_field(&PipelineConfig::points, "points")},
      {"no_pse", bool_field(&PipelineConfig::no_pse, "no_pse")},
      {"shallow_wide", bool_field(&PipelineConfig::shallow_wide, "shallow_wide")},
      {"no_pos_enc", bool_field(&PipelineConfig::no_pos_enc, "no_pos_enc")},
      {"no_gmcce", bool_field(&PipelineConfig::no_gmcce, "no_gmcce")},
  };
  return table;
}

}  // namespace detail

inline void PipelineConfig::set(const std::string& key, const std::string& value) {
  const auto& f = detail::fields();
  auto it = f.find(key);
  if (it == f.end()) throw ConfigError("unknown config key: " + key);
  it->second.set(*this, detail::trim(value));
}

inline std::string PipelineConfig::get(const std::string& key) const {
  const auto& f = detail::fields();
  auto it = f.find(key);
  if (it == f.end()) throw ConfigError("unknown config key: " + key);
  return it->second.get(*this);
}

inline const std::vector<std::string>& PipelineConfig::keys() {
  static const std::vector<std::string> k = [] {
    std::vector<std::string> out;
    for (const auto& [name, _] : detail::fields()) out.push_back(name);
    return out;
  }();
  return k;
}

inline void PipelineConfig::validate() const {
  auto require = [](bool ok, const std::string& msg) {
    if (!ok) throw ConfigError(msg);
  };
  require(pse_layers >= 1, "pse_layers must be >= 1");
  require(pft_depth >= 1, "pft_depth must be >= 1");
  require(heads >= 1 && d_model % heads == 0, "d_model must be a positive multiple of heads");
  require(heads >= 1 && effective_width() % heads == 0, "PFT width must be a multiple of heads");
  require(se_ratio >= 1 && effective_width() % se_ratio == 0, "se_ratio must divide the PFT width");
  require(effective_k() >= 1 && effective_k() < points, "k must be in [1, points)");
  require(std::isfinite(temperature) && temperature > 0.0, "temperature must be > 0");
  require(k_s >= 2, "k_s must be >= 2");
  require(k_m >= 1 && k_m <= k_s * (k_s - 1) / 2, "k_m must be in [1, k_s (k_s - 1) / 2]");
  require(std::isfinite(lambda) && lambda > 0.0, "lambda must be > 0");
  require(tau >= 0.0 && tau <= 1.0, "tau must be in [0, 1]");
  require(std::isfinite(alpha) && alpha >= 0.0, "alpha must be >= 0");
  require(std::isfinite(beta) && beta >= 0.0, "beta must be >= 0");
  require(std::isfinite(r_inlier) && r_inlier > 0.0, "r_inlier must be > 0");
  require(std::isfinite(lr) && lr >= 0.0, "lr must be >= 0");
  require(batch_size >= 1, "batch_size must be >= 1");
  require(points >= 4, "points must be >= 4");
  parse_mode(mode);
}

inline std::string PipelineConfig::to_text() const {
  std::ostringstream out;
  for (const auto& [name, f] : detail::fields()) out << name << " = " << f.get(*this) << '\n';
  return out.str();
}

inline PipelineConfig PipelineConfig::parse(std::istream& in, const std::string& origin) {
  PipelineConfig c;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    const std::string t = detail::trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected key = value");
    try {
      c.set(detail::trim(std::string_view(t).substr(0, eq)), t.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return c;
}

inline PipelineConfig PipelineConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path.string());
  return parse(in, path.string());
}

inline void PipelineConfig::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write config " + path.string());
  out << to_text();
}

inline void PipelineConfig::apply_environment() {
  if (const char* s = std::getenv("DIT_SEED"); s && *s) set("seed", s);
}

}  // namespace dit
