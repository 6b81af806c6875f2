/**
 * @file config.hpp
 * @brief JSON (de)serialization of ModelConfig.
 *
 * Flat object; every key is optional and falls back to the desk preset.
 * Unknown keys are rejected so typos do not pass silently.
 */
#pragma once

#include <set>
#include <string>

#include <nlohmann/json.hpp>

#include "odformer/model.hpp"
#include "odformer/netpbm.hpp"

namespace odf {

namespace detail {

template <class T>
void read_field(const nlohmann::json& j, const char* key, T& out) {
  auto it = j.find(key);
  if (it == j.end()) return;
  try {
    if constexpr (std::is_same_v<T, std::size_t> || std::is_same_v<T, std::uint64_t>) {
      if (!it->is_number_integer() || it->get<long long>() < 0) throw ConfigError("");
    } else if constexpr (std::is_same_v<T, double>) {
      if (!it->is_number()) throw ConfigError("");
    } else if constexpr (std::is_same_v<T, bool>) {
      if (!it->is_boolean()) throw ConfigError("");
    }
    out = it->get<T>();
  } catch (const std::exception&) {
    throw ConfigError(std::string(key) + ": wrong type or negative value");
  }
}

inline void read_list(const nlohmann::json& j, const char* key, std::vector<std::size_t>& out) {
  auto it = j.find(key);
  if (it == j.end()) return;
  if (!it->is_array()) throw ConfigError(std::string(key) + ": must be an array of non-negative integers");
  std::vector<std::size_t> v;
  for (const auto& e : *it) {
    if (!e.is_number_integer() || e.get<long long>() < 0)
      throw ConfigError(std::string(key) + ": must be an array of non-negative integers");
    v.push_back(e.get<std::size_t>());
  }
  out = std::move(v);
}

}  // namespace detail

inline const std::set<std::string>& config_keys() {
  static const std::set<std::string> keys{"m",         "k",        "depths", "heads",     "channels",
                                          "window",    "decoder_channels", "classes", "input_side",
                                          "crop",      "augment",  "seed",   "lr",        "momentum",
                                          "steps",     "eval_every",       "batch",   "clip_norm"};
  return keys;
}

/// Parses and validates; throws ConfigError naming the offending field.
inline ModelConfig config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("config: top level must be an object");
  for (const auto& [key, _] : j.items())
    if (!config_keys().count(key)) throw ConfigError(key + ": unknown config key");
  ModelConfig c;
  detail::read_field(j, "m", c.atrous_branches);
  detail::read_list(j, "depths", c.depths);
  detail::read_list(j, "heads", c.heads);
  detail::read_field(j, "channels", c.channels);
  detail::read_field(j, "window", c.window);
  detail::read_field(j, "decoder_channels", c.decoder_channels);
  detail::read_field(j, "classes", c.classes);
  detail::read_field(j, "input_side", c.input_side);
  detail::read_field(j, "crop", c.crop);
  detail::read_field(j, "augment", c.augment);
  detail::read_field(j, "seed", c.seed);
  detail::read_field(j, "lr", c.lr);
  detail::read_field(j, "momentum", c.momentum);
  detail::read_field(j, "steps", c.steps);
  detail::read_field(j, "eval_every", c.eval_every);
  detail::read_field(j, "batch", c.batch);
  detail::read_field(j, "clip_norm", c.clip_norm);
  std::size_t k = c.depths.size();
  detail::read_field(j, "k", k);
  if (k != c.depths.size())
    throw ConfigError("k: " + std::to_string(k) + " stages but depths lists " + std::to_string(c.depths.size()));
  c.validate();
  return c;
}

inline nlohmann::ordered_json config_to_json(const ModelConfig& c) {
  nlohmann::ordered_json j;
  j["m"] = c.atrous_branches;
  j["k"] = c.depths.size();
  j["depths"] = c.depths;
  j["heads"] = c.heads;
  j["channels"] = c.channels;
  j["window"] = c.window;
  j["decoder_channels"] = c.decoder_channels;
  j["classes"] = c.classes;
  j["input_side"] = c.input_side;
  j["crop"] = c.crop;
  j["augment"] = c.augment;
  j["seed"] = c.seed;
  j["lr"] = c.lr;
  j["momentum"] = c.momentum;
  j["steps"] = c.steps;
  j["eval_every"] = c.eval_every;
  j["batch"] = c.batch;
  j["clip_norm"] = c.clip_norm;
  return j;
}

inline ModelConfig parse_config(const std::string& text, const std::string& what = "config") {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(what + ": " + e.what());
  }
  return config_from_json(j);
}

inline ModelConfig load_config(const std::string& path) { return parse_config(detail::read_file(path), path); }

}  // namespace odf
