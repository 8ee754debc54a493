// SPDX-License-Identifier: Apache-2.0
//
// Skip-decision policy: motion-adaptive threshold, step-dependent
// relaxation and the strict-inequality skip rule.

#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

#include "worldcache/drift.hpp"

namespace worldcache {

enum class AtsMode { off, linear, quadratic };

inline std::string_view to_string(AtsMode m) {
  switch (m) {
    case AtsMode::off: return "off";
    case AtsMode::linear: return "linear";
    case AtsMode::quadratic: return "quadratic";
  }
  return "off";
}

inline std::optional<AtsMode> parse_ats_mode(std::string_view s) {
  if (s == "off") return AtsMode::off;
  if (s == "linear") return AtsMode::linear;
  if (s == "quadratic") return AtsMode::quadratic;
  return std::nullopt;
}

struct PolicyConfig {
  double tau0 = 0.08;
  double alpha = 2.0;
  double beta_s = 0.12;
  double beta_d = 4.0;
  AtsMode ats_mode = AtsMode::quadratic;
  double gamma_max = 2.0;
  double eps = kDefaultEps;
  int warmup_steps = 3;
  bool warp_enabled = true;
  int warp_disable_before = 5;
  double s_flow = 0.5;
  // Warp only when the flow shrinks the coarse input mismatch to at most this fraction;
  // infinity warps unconditionally.
  double warp_max_fit_ratio = 0.8;
  int total_steps = 35;

  void validate() const {
    auto fail = [](const std::string& m) { throw std::invalid_argument("PolicyConfig: " + m); };
    if (!(tau0 >= 0.0)) fail("tau0 must be >= 0");
    if (!(alpha >= 0.0)) fail("alpha must be >= 0");
    if (!(beta_s >= 0.0)) fail("beta_s must be >= 0");
    if (!(beta_d >= 0.0)) fail("beta_d must be >= 0");
    if (!(gamma_max > 0.0)) fail("gamma_max must be > 0");
    if (!(eps > 0.0)) fail("eps must be > 0");
    if (warmup_steps < 0) fail("warmup_steps must be >= 0");
    if (warp_disable_before < 0) fail("warp_disable_before must be >= 0");
    if (!(s_flow > 0.0 && s_flow <= 1.0)) fail("s_flow must lie in (0, 1]");
    if (!(warp_max_fit_ratio > 0.0)) fail("warp_max_fit_ratio must be > 0");
    if (total_steps < 1) fail("total_steps must be >= 1");
  }
};

enum class DecisionKind { miss_forced_warmup, miss_drift, miss_policy, hit };

inline std::string_view to_string(DecisionKind k) {
  switch (k) {
    case DecisionKind::miss_forced_warmup: return "miss-forced-warmup";
    case DecisionKind::miss_drift: return "miss-drift";
    case DecisionKind::miss_policy: return "miss-policy";
    case DecisionKind::hit: return "hit";
  }
  return "miss-drift";
}

struct CacheDecision {
  DecisionKind kind = DecisionKind::miss_forced_warmup;
  double drift_used = 0.0;
  double threshold_used = 0.0;
  int step = 0;

  bool is_hit() const { return kind == DecisionKind::hit; }
};

inline double cfc_threshold(double tau0, double alpha, double velocity) { return tau0 / (1.0 + alpha * velocity); }

inline double ats_multiplier_linear(int t, int total_steps, double beta_d) {
  return 1.0 + beta_d * (static_cast<double>(t) / static_cast<double>(total_steps));
}

/// D(t) = 1 + C(u) * t / N with u = N / 35 and C(u) = u^2 / 6 + u / 2 + 10 / 3.
inline double ats_multiplier_quadratic(int t, int total_steps) {
  const double n = static_cast<double>(total_steps);
  const double u = n / 35.0;
  const double c = u * u / 6.0 + u / 2.0 + 10.0 / 3.0;
  return 1.0 + c * (static_cast<double>(t) / n);
}

inline double ats_multiplier(const PolicyConfig& cfg, int t) {
  switch (cfg.ats_mode) {
    case AtsMode::off: return 1.0;
    case AtsMode::linear: return ats_multiplier_linear(t, cfg.total_steps, cfg.beta_d);
    case AtsMode::quadratic: return ats_multiplier_quadratic(t, cfg.total_steps);
  }
  return 1.0;
}

inline double effective_threshold(const PolicyConfig& cfg, double velocity, int t) {
  return cfc_threshold(cfg.tau0, cfg.alpha, velocity) * ats_multiplier(cfg, t);
}

inline CacheDecision decide(const PolicyConfig& cfg, double drift, double velocity, int t, bool cache_ready) {
  CacheDecision d;
  d.step = t;
  d.drift_used = drift;
  d.threshold_used = effective_threshold(cfg, velocity, t);
  if (t < cfg.warmup_steps || !cache_ready)
    d.kind = DecisionKind::miss_forced_warmup;
  else if (drift < d.threshold_used)
    d.kind = DecisionKind::hit;
  else
    d.kind = DecisionKind::miss_drift;
  return d;
}

}  // namespace worldcache
