#pragma once

// Flat key=value run configuration: model, training and dataset settings in
// one file. Blank lines and '#' comments are ignored; unknown keys and
// malformed values raise ConfigError with the line number.

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include "qhnet/error.hpp"
#include "qhnet/nn.hpp"
#include "qhnet/train.hpp"

namespace qhnet {

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  std::string data;
  std::size_t train_n = 0;  // 0 = every record not in val/test
  std::size_t val_n = 0;
  std::size_t test_n = 0;
  std::uint64_t split_seed = 0;

  /// Desk-scale defaults.
  static RunConfig desk() {
    RunConfig c;
    c.train.max_steps = 2000;
    c.train.warmup_steps = 10;
    return c;
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline bool parse_bool(const std::string& v) {
  if (v == "on" || v == "true" || v == "1" || v == "yes") return true;
  if (v == "off" || v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("expected a boolean (on/off), got '" + v + "'");
}

template <class T>
T parse_number(const std::string& v) {
  std::istringstream in(v);
  T out{};
  in >> out;
  if (!in || !in.eof()) throw ConfigError("expected a number, got '" + v + "'");
  if constexpr (std::is_unsigned_v<T>)
    if (v.find('-') != std::string::npos) throw ConfigError("expected a non-negative number, got '" + v + "'");
  return out;
}

inline std::string format_double(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

struct Key {
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define QHNET_KEY(name, expr, parse, show)                                       \
  {                                                                              \
    name, Key {                                                                  \
      [](RunConfig& c, const std::string& v) { expr = parse; },                  \
          [](const RunConfig& c) -> std::string { return show; }                 \
    }                                                                            \
  }

inline const std::vector<std::pair<std::string, Key>>& keys() {
  static const std::vector<std::pair<std::string, Key>> table = {
      QHNET_KEY("l_max", c.model.l_max, parse_number<int>(v), std::to_string(c.model.l_max)),
      QHNET_KEY("channels", c.model.channels, parse_number<int>(v), std::to_string(c.model.channels)),
      QHNET_KEY("n_interaction_layers", c.model.layers, parse_number<int>(v), std::to_string(c.model.layers)),
      QHNET_KEY("rbf_bins", c.model.rbf_bins, parse_number<int>(v), std::to_string(c.model.rbf_bins)),
      QHNET_KEY("rbf_r_max", c.model.rbf_r_max, parse_number<double>(v), format_double(c.model.rbf_r_max)),
      QHNET_KEY("use_attentive_scores", c.model.use_attentive_scores, parse_bool(v),
                c.model.use_attentive_scores ? "on" : "off"),
      QHNET_KEY("use_norm_gate", c.model.use_norm_gate, parse_bool(v), c.model.use_norm_gate ? "on" : "off"),
      QHNET_KEY("model_seed", c.model.seed, parse_number<std::uint64_t>(v), std::to_string(c.model.seed)),
      QHNET_KEY("max_steps", c.train.max_steps, parse_number<std::uint64_t>(v), std::to_string(c.train.max_steps)),
      QHNET_KEY("warmup_steps", c.train.warmup_steps, parse_number<std::uint64_t>(v),
                std::to_string(c.train.warmup_steps)),
      QHNET_KEY("lr_max", c.train.lr_max, parse_number<double>(v), format_double(c.train.lr_max)),
      QHNET_KEY("lr_final", c.train.lr_final, parse_number<double>(v), format_double(c.train.lr_final)),
      QHNET_KEY("batch_size", c.train.batch_size, parse_number<std::size_t>(v), std::to_string(c.train.batch_size)),
      QHNET_KEY("scheduler", c.train.scheduler, parse_scheduler(v), to_string(c.train.scheduler)),
      QHNET_KEY("rlrop_factor", c.train.rlrop_factor, parse_number<double>(v), format_double(c.train.rlrop_factor)),
      QHNET_KEY("rlrop_patience", c.train.rlrop_patience, parse_number<int>(v), std::to_string(c.train.rlrop_patience)),
      QHNET_KEY("rlrop_min_lr", c.train.rlrop_min_lr, parse_number<double>(v), format_double(c.train.rlrop_min_lr)),
      QHNET_KEY("eval_every", c.train.eval_every, parse_number<std::uint64_t>(v), std::to_string(c.train.eval_every)),
      QHNET_KEY("seed", c.train.seed, parse_number<std::uint64_t>(v), std::to_string(c.train.seed)),
      QHNET_KEY("clip_grad", c.train.clip_grad, parse_number<double>(v), format_double(c.train.clip_grad)),
      QHNET_KEY("occupied_only", c.train.occupied_only, parse_bool(v), c.train.occupied_only ? "on" : "off"),
      QHNET_KEY("data", c.data, v, c.data),
      QHNET_KEY("train_n", c.train_n, parse_number<std::size_t>(v), std::to_string(c.train_n)),
      QHNET_KEY("val_n", c.val_n, parse_number<std::size_t>(v), std::to_string(c.val_n)),
      QHNET_KEY("test_n", c.test_n, parse_number<std::size_t>(v), std::to_string(c.test_n)),
      QHNET_KEY("split_seed", c.split_seed, parse_number<std::uint64_t>(v), std::to_string(c.split_seed)),
  };
  return table;
}

#undef QHNET_KEY

}  // namespace detail

/// Applies one key=value assignment.
inline void set_key(RunConfig& c, const std::string& key, const std::string& value) {
  for (const auto& [name, k] : detail::keys())
    if (name == key) {
      try {
        k.set(c, value);
      } catch (const ConfigError& e) {
        throw ConfigError("key '" + key + "': " + e.what());
      }
      return;
    }
  throw ConfigError("unknown key '" + key + "'");
}

/// Applies an assignment written as "key=value".
inline void apply_assignment(RunConfig& c, const std::string& text) {
  const auto eq = text.find('=');
  if (eq == std::string::npos) throw ConfigError("expected key=value, got '" + text + "'");
  set_key(c, detail::trim(text.substr(0, eq)), detail::trim(text.substr(eq + 1)));
}

inline void parse_config(RunConfig& c, std::istream& in, const std::string& source = "<config>") {
  std::string line;
  for (std::size_t number = 1; std::getline(in, line); ++number) {
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    try {
      apply_assignment(c, line);
    } catch (const ConfigError& e) {
      throw ConfigError(source + ":" + std::to_string(number) + ": " + e.what());
    }
  }
}

inline RunConfig load_config(const std::string& path, RunConfig base = RunConfig::desk()) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path);
  parse_config(base, in, path);
  return base;
}

/// Every key with its resolved value, one per line, in a fixed order.
inline std::string resolved_text(const RunConfig& c) {
  std::string out;
  for (const auto& [name, k] : detail::keys()) out += name + " = " + k.get(c) + "\n";
  return out;
}

inline void validate(const RunConfig& c) {
  c.model.validate();
  c.train.validate();
}

}  // namespace qhnet
