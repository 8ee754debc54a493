// SPDX-License-Identifier: Apache-2.0
//
// JSON run configuration: defaults, file merge, dotted-key overrides and
// conversion to the engine and scenario structs. Unknown keys are errors.

#pragma once

#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "worldcache/engine.hpp"
#include "worldcache/sim.hpp"

namespace worldcache {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RunConfig {
  EngineConfig engine;
  ScenarioConfig scenario;
  std::string out_dir = "out";
  std::string trace_path;  // empty: no trace
};

namespace config {

using nlohmann::json;

/// Every accepted key with its default value. Scenario entries are the static preset; other
/// scenario kinds start from their own preset and only keys the user sets override it.
inline json defaults() {
  const PolicyConfig p;
  const ScenarioConfig s;
  const EngineConfig e;
  return json{
      {"cache",
       {{"tau0", p.tau0},
        {"alpha", p.alpha},
        {"beta_s", p.beta_s},
        {"beta_d", p.beta_d},
        {"ats_mode", std::string(to_string(p.ats_mode))},
        {"gamma_max", p.gamma_max},
        {"eps", p.eps},
        {"warmup_steps", p.warmup_steps},
        {"warp_enabled", p.warp_enabled},
        {"warp_disable_before", p.warp_disable_before},
        {"s_flow", p.s_flow},
        {"warp_max_fit_ratio", p.warp_max_fit_ratio},
        {"total_steps", p.total_steps}}},
      {"scenario",
       {{"kind", std::string(to_string(s.kind))},
        {"seed", s.seed},
        {"shape", {s.shape.batch, s.shape.frames, s.shape.height, s.shape.width, s.shape.channels}},
        {"motion_speed", s.motion_speed},
        {"curvature", s.curvature},
        {"noise_sigma", s.noise_sigma},
        {"eta", s.eta},
        {"residual_scale", s.residual_scale},
        {"latent_sigma", s.latent_sigma},
        {"probe_mix", s.probe_mix},
        {"probe_cost", s.probe_cost},
        {"deep_cost", s.deep_cost}}},
      {"run",
       {{"policy", std::string(to_string(e.kind))},
        {"schedule_period", e.schedule_period},
        {"overhead_fraction", e.overhead_fraction},
        {"oracle", true},
        {"modules", {{"cfc", true}, {"swd", true}, {"ofa", true}, {"ats", true}}},
        {"lk",
         {{"window_radius", e.lk.window_radius},
          {"num_iterations", e.lk.num_iterations},
          {"regularization", e.lk.regularization}}}}},
      {"output", {{"dir", "out"}, {"trace", ""}}},
  };
}

namespace detail {

inline void check_known(const json& user, const json& schema, const std::string& prefix) {
  if (!user.is_object()) throw ConfigError("'" + prefix + "' must be an object");
  for (const auto& [k, v] : user.items()) {
    const std::string path = prefix.empty() ? k : prefix + "." + k;
    if (!schema.contains(k)) throw ConfigError("unknown configuration key '" + path + "'");
    if (schema[k].is_object()) check_known(v, schema[k], path);
  }
}

template <class T>
void take(const json& section, const char* key, T& out, const std::string& path) {
  if (!section.contains(key)) return;
  try {
    out = section.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("configuration key '" + path + "." + key + "' has the wrong type");
  }
}

}  // namespace detail

/// Rejects keys that are not in `defaults()`.
inline void validate_keys(const json& user) { detail::check_known(user, defaults(), ""); }

/// Reads a JSON config file; an empty path yields an empty object.
inline json load_file(const std::filesystem::path& path) {
  if (path.empty()) return json::object();
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  try {
    json j = json::parse(in);
    validate_keys(j);
    return j;
  } catch (const json::parse_error& e) {
    throw ConfigError("config file " + path.string() + " is not valid JSON: " + e.what());
  }
}

/// Parses an override value: JSON literals (numbers, booleans, arrays) when they parse,
/// a plain string otherwise.
inline json parse_value(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::parse_error&) {
    return json(text);
  }
}

/// Sets "section.key" (any depth) in `user`; the key must exist in the defaults.
inline void set_dotted(json& user, std::string_view dotted, const json& value) {
  const json schema = defaults();
  const json* node = &schema;
  json* target = &user;
  std::size_t start = 0;
  std::string path;
  while (true) {
    const std::size_t dot = dotted.find('.', start);
    const std::string part(dotted.substr(start, dot == std::string_view::npos ? std::string_view::npos : dot - start));
    path += (path.empty() ? "" : ".") + part;
    if (part.empty() || !node->is_object() || !node->contains(part))
      throw ConfigError("unknown configuration key '" + std::string(dotted) + "'");
    node = &(*node)[part];
    if (dot == std::string_view::npos) {
      if (node->is_object()) throw ConfigError("'" + path + "' is a section, not a value");
      (*target)[part] = value;
      return;
    }
    if (!target->contains(part)) (*target)[part] = json::object();
    target = &(*target)[part];
    start = dot + 1;
  }
}

/// Resolves a bare key such as "tau0" to its unique dotted path; dotted input is returned as is.
inline std::string resolve_key(std::string_view key) {
  if (key.find('.') != std::string_view::npos) return std::string(key);
  std::vector<std::string> hits;
  const json schema = defaults();
  for (const auto& [section, body] : schema.items())
    if (body.is_object() && body.contains(std::string(key))) hits.push_back(section + "." + std::string(key));
  if (hits.size() != 1) throw ConfigError("cannot resolve configuration key '" + std::string(key) + "'");
  return hits.front();
}

/// Converts user settings (file merged with overrides) into validated structs.
inline RunConfig build(const json& user) {
  validate_keys(user);
  RunConfig rc;
  const json empty = json::object();
  const json& cache = user.contains("cache") ? user["cache"] : empty;
  const json& scen = user.contains("scenario") ? user["scenario"] : empty;
  const json& run = user.contains("run") ? user["run"] : empty;
  const json& out = user.contains("output") ? user["output"] : empty;
  using detail::take;

  PolicyConfig& p = rc.engine.policy;
  take(cache, "tau0", p.tau0, "cache");
  take(cache, "alpha", p.alpha, "cache");
  take(cache, "beta_s", p.beta_s, "cache");
  take(cache, "beta_d", p.beta_d, "cache");
  if (cache.contains("ats_mode")) {
    std::string m;
    take(cache, "ats_mode", m, "cache");
    const auto mode = parse_ats_mode(m);
    if (!mode) throw ConfigError("cache.ats_mode must be one of off, linear, quadratic");
    p.ats_mode = *mode;
  }
  take(cache, "gamma_max", p.gamma_max, "cache");
  take(cache, "eps", p.eps, "cache");
  take(cache, "warmup_steps", p.warmup_steps, "cache");
  take(cache, "warp_enabled", p.warp_enabled, "cache");
  take(cache, "warp_disable_before", p.warp_disable_before, "cache");
  take(cache, "s_flow", p.s_flow, "cache");
  take(cache, "warp_max_fit_ratio", p.warp_max_fit_ratio, "cache");
  take(cache, "total_steps", p.total_steps, "cache");

  ScenarioKind kind = ScenarioKind::static_scene;
  if (scen.contains("kind")) {
    std::string k;
    take(scen, "kind", k, "scenario");
    const auto parsed = parse_scenario_kind(k);
    if (!parsed) throw ConfigError("unknown scenario kind '" + k + "'");
    kind = *parsed;
  }
  ScenarioConfig& s = rc.scenario;
  s = ScenarioConfig::preset(kind);
  take(scen, "seed", s.seed, "scenario");
  if (scen.contains("shape")) {
    std::vector<std::size_t> ext;
    take(scen, "shape", ext, "scenario");
    if (ext.size() != 5) throw ConfigError("scenario.shape must list five extents [B, T_f, H, W, D]");
    s.shape = {ext[0], ext[1], ext[2], ext[3], ext[4]};
  }
  take(scen, "motion_speed", s.motion_speed, "scenario");
  take(scen, "curvature", s.curvature, "scenario");
  take(scen, "noise_sigma", s.noise_sigma, "scenario");
  take(scen, "eta", s.eta, "scenario");
  take(scen, "residual_scale", s.residual_scale, "scenario");
  take(scen, "latent_sigma", s.latent_sigma, "scenario");
  take(scen, "probe_mix", s.probe_mix, "scenario");
  take(scen, "probe_cost", s.probe_cost, "scenario");
  take(scen, "deep_cost", s.deep_cost, "scenario");
  s.total_steps = p.total_steps;

  EngineConfig& e = rc.engine;
  if (run.contains("policy")) {
    std::string k;
    take(run, "policy", k, "run");
    const auto parsed = parse_policy_kind(k);
    if (!parsed) throw ConfigError("unknown policy '" + k + "'");
    e.kind = *parsed;
  }
  take(run, "schedule_period", e.schedule_period, "run");
  take(run, "overhead_fraction", e.overhead_fraction, "run");
  e.oracle = true;
  take(run, "oracle", e.oracle, "run");
  if (run.contains("modules")) {
    const json& m = run["modules"];
    take(m, "cfc", e.modules.cfc, "run.modules");
    take(m, "swd", e.modules.swd, "run.modules");
    take(m, "ofa", e.modules.ofa, "run.modules");
    take(m, "ats", e.modules.ats, "run.modules");
  }
  if (run.contains("lk")) {
    const json& lk = run["lk"];
    take(lk, "window_radius", e.lk.window_radius, "run.lk");
    take(lk, "num_iterations", e.lk.num_iterations, "run.lk");
    take(lk, "regularization", e.lk.regularization, "run.lk");
  }

  take(out, "dir", rc.out_dir, "output");
  take(out, "trace", rc.trace_path, "output");

  try {
    e.validate();
    s.validate();
  } catch (const std::invalid_argument& ex) {
    throw ConfigError(ex.what());
  }
  return rc;
}

}  // namespace config
}  // namespace worldcache
