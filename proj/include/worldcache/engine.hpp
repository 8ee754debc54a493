// SPDX-License-Identifier: Apache-2.0
//
// Per-step probe -> signals -> decision -> (deep compute | approximation) loop
// over an abstract two-segment denoiser, plus the baseline policies it is
// compared against.

#pragma once

#include <chrono>
#include <concepts>
#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "worldcache/cache.hpp"
#include "worldcache/drift.hpp"
#include "worldcache/ofa.hpp"
#include "worldcache/policy.hpp"
#include "worldcache/tensor.hpp"

namespace worldcache {

/// A denoiser split at the probe depth: the first k blocks and the remaining deep blocks.
template <class D>
concept Denoiser = requires(const D& d, const LatentTensor& z, int t) {
  { d.latent_shape() } -> std::convertible_to<TensorShape>;
  { d.probe_forward(z, t) } -> std::convertible_to<LatentTensor>;
  { d.deep_forward(z, t) } -> std::convertible_to<LatentTensor>;
  { d.probe_cost() } -> std::convertible_to<double>;
  { d.deep_cost() } -> std::convertible_to<double>;
};

enum class PolicyKind { worldcache, fixed_threshold_scalar_ratio, fixed_schedule, full_compute };

inline std::string_view to_string(PolicyKind k) {
  switch (k) {
    case PolicyKind::worldcache: return "worldcache";
    case PolicyKind::fixed_threshold_scalar_ratio: return "fixed-threshold-scalar-ratio";
    case PolicyKind::fixed_schedule: return "fixed-schedule";
    case PolicyKind::full_compute: return "full-compute";
  }
  return "worldcache";
}

inline std::optional<PolicyKind> parse_policy_kind(std::string_view s) {
  for (auto k : {PolicyKind::worldcache, PolicyKind::fixed_threshold_scalar_ratio, PolicyKind::fixed_schedule,
                 PolicyKind::full_compute})
    if (s == to_string(k)) return k;
  return std::nullopt;
}

/// Which WorldCache stages are active; all off reduces to the fixed-threshold scalar-ratio baseline.
struct Modules {
  bool cfc = true;  // motion-adaptive threshold
  bool swd = true;  // saliency-weighted drift as the decision signal
  bool ofa = true;  // least-squares blend (+ warp) instead of the scalar ratio
  bool ats = true;  // step-dependent threshold relaxation

  friend bool operator==(const Modules&, const Modules&) = default;
};

struct EngineConfig {
  PolicyConfig policy;
  PolicyKind kind = PolicyKind::worldcache;
  Modules modules;
  int schedule_period = 2;
  double overhead_fraction = 0.03;  // approximation cost per hit, as a fraction of deep_cost
  LKParams lk;
  bool oracle = false;  // also run the deep blocks on hits to measure approximation error

  void validate() const {
    policy.validate();
    lk.validate();
    if (schedule_period < 1) throw std::invalid_argument("EngineConfig: schedule_period must be >= 1");
    if (!(overhead_fraction >= 0.0)) throw std::invalid_argument("EngineConfig: overhead_fraction must be >= 0");
  }

  /// Policy parameters with disabled modules neutralised.
  PolicyConfig effective_policy() const {
    PolicyConfig p = policy;
    const Modules m = effective_modules();
    if (!m.cfc) p.alpha = 0.0;
    if (!m.ats) p.ats_mode = AtsMode::off;
    if (!m.ofa) p.warp_enabled = false;
    return p;
  }

  Modules effective_modules() const {
    if (kind == PolicyKind::worldcache) return modules;
    return Modules{false, false, false, false};
  }
};

struct WallTimes {
  double probe = 0.0;
  double signals = 0.0;
  double deep = 0.0;
  double flow = 0.0;
  double approx = 0.0;

  WallTimes& operator+=(const WallTimes& o) {
    probe += o.probe;
    signals += o.signals;
    deep += o.deep;
    flow += o.flow;
    approx += o.approx;
    return *this;
  }
};

struct StepTelemetry {
  int step = 0;
  CacheDecision decision;
  double raw_drift = 0.0;
  double swd = 0.0;
  double swd_relative = 0.0;
  std::optional<double> velocity;
  double threshold = 0.0;
  std::optional<double> gamma;
  std::optional<double> gamma_scalar_ratio;  // diagnostic: magnitude-only coefficient on the same deltas
  bool warp_used = false;
  std::optional<double> flow_fit_ratio;
  double cost_spent = 0.0;
  WallTimes wall;
  std::optional<double> oracle_error;
};

struct RunReport {
  std::vector<StepTelemetry> steps;
  int hits = 0;
  double skip_rate = 0.0;
  double full_cost = 0.0;
  double total_cost = 0.0;
  double simulated_speedup = 1.0;
  std::optional<double> final_output_error;
  bool open_loop = false;
  WallTimes wall;
  LatentTensor final_output;
  std::vector<LatentTensor> outputs;  // per-step outputs, kept only when requested
};

class StepOrderError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

struct StepResult {
  LatentTensor output;
  StepTelemetry telemetry;
};

template <Denoiser D>
class CacheController {
 public:
  CacheController(const D& denoiser, EngineConfig cfg)
      : denoiser_(&denoiser),
        cfg_(std::move(cfg)),
        policy_(cfg_.effective_policy()),
        modules_(cfg_.effective_modules()) {
    cfg_.validate();
  }

  const ResidualCache& cache() const { return cache_; }
  const EngineConfig& config() const { return cfg_; }

  StepResult step(const LatentTensor& z0, int t) {
    using clock = std::chrono::steady_clock;
    const auto seconds = [](clock::time_point a, clock::time_point b) {
      return std::chrono::duration<double>(b - a).count();
    };
    if (t <= last_step_)
      throw StepOrderError("step " + std::to_string(t) + " invoked after step " + std::to_string(last_step_));
    last_step_ = t;

    StepTelemetry tel;
    tel.step = t;

    auto t0 = clock::now();
    LatentTensor zk = denoiser_->probe_forward(z0, t);
    auto t1 = clock::now();
    tel.wall.probe = seconds(t0, t1);

    if (last_probe_) {
      tel.raw_drift = probe_drift(zk, *last_probe_, policy_.eps);
      const SaliencyMap sal = saliency_map(zk, t);
      tel.swd = swd_drift(zk, *last_probe_, sal, policy_.beta_s);
      tel.swd_relative = swd_relative(tel.swd, *last_probe_, policy_.eps);
    }
    if (const LatentTensor* anchor = cache_.velocity_anchor()) tel.velocity = motion_velocity(z0, *anchor, policy_.eps);
    const double drift = modules_.swd ? tel.swd_relative : tel.raw_drift;
    const double velocity = tel.velocity.value_or(0.0);
    auto t2 = clock::now();
    tel.wall.signals = seconds(t1, t2);

    tel.decision = decide_step(drift, velocity, t);
    tel.threshold = tel.decision.threshold_used;

    const double probe_cost = denoiser_->probe_cost();
    const double deep_cost = denoiser_->deep_cost();
    LatentTensor output;
    if (!tel.decision.is_hit()) {
      auto d0 = clock::now();
      LatentTensor zN = denoiser_->deep_forward(zk, t);
      tel.wall.deep = seconds(d0, clock::now());
      output = zN;
      cache_.record_full_step(t, z0, zk, std::move(zN));
      tel.cost_spent = probe_cost + deep_cost;
      if (cfg_.oracle) tel.oracle_error = 0.0;
    } else {
      output = approximate(z0, zk, t, tel);
      tel.cost_spent = probe_cost + cfg_.overhead_fraction * deep_cost;
      if (cfg_.oracle) tel.oracle_error = relative_l1(output, denoiser_->deep_forward(zk, t));
    }
    last_probe_ = std::move(zk);
    return {std::move(output), std::move(tel)};
  }

 private:
  CacheDecision decide_step(double drift, double velocity, int t) const {
    switch (cfg_.kind) {
      case PolicyKind::full_compute: {
        CacheDecision d;
        d.step = t;
        d.drift_used = drift;
        d.kind = DecisionKind::miss_policy;
        return d;
      }
      case PolicyKind::fixed_schedule: {
        CacheDecision d;
        d.step = t;
        d.drift_used = drift;
        if (t < policy_.warmup_steps || !cache_.newer())
          d.kind = DecisionKind::miss_forced_warmup;
        else if ((t - policy_.warmup_steps) % cfg_.schedule_period != 0)
          d.kind = DecisionKind::hit;
        else
          d.kind = DecisionKind::miss_policy;
        return d;
      }
      case PolicyKind::worldcache:
      case PolicyKind::fixed_threshold_scalar_ratio: break;
    }
    return decide(policy_, drift, velocity, t, cache_.ready());
  }

  LatentTensor approximate(const LatentTensor& z0, const LatentTensor& zk, int t, StepTelemetry& tel) {
    using clock = std::chrono::steady_clock;
    if (cfg_.kind == PolicyKind::fixed_schedule) {
      // Zero-order hold of the newest cached residual.
      auto a0 = clock::now();
      LatentTensor out = add(z0, cache_.newer()->residual);
      tel.wall.approx = std::chrono::duration<double>(clock::now() - a0).count();
      tel.gamma = 1.0;
      return out;
    }
    std::optional<LatentTensor> corrected;
    if (modules_.ofa && warp_gate(t, policy_)) {
      auto f0 = clock::now();
      const DisplacementField flow = estimate_flow(z0, cache_.newer()->z0, policy_.s_flow, cfg_.lk);
      tel.flow_fit_ratio = flow.fit_ratio;
      if (flow.fit_ratio <= policy_.warp_max_fit_ratio) {
        corrected = corrected_residual(*cache_.newer(), flow);
        tel.warp_used = true;
      }
      tel.wall.flow = std::chrono::duration<double>(clock::now() - f0).count();
    }
    auto a0 = clock::now();
    const LatentTensor* corr = corrected ? &*corrected : nullptr;
    Approximation a = osi_approximate(z0, zk, cache_, policy_, t, corr,
                                      modules_.ofa ? BlendRule::osi : BlendRule::scalar_ratio);
    tel.wall.approx = std::chrono::duration<double>(clock::now() - a0).count();
    tel.gamma = a.gamma;
    {
      const LatentTensor& r_newer = corr ? *corr : cache_.newer()->residual;
      const LatentTensor& r_older = cache_.older()->residual;
      tel.gamma_scalar_ratio =
          scalar_ratio_gamma(subtract(subtract(zk, z0), r_older), subtract(r_newer, r_older), policy_.eps);
    }
    return std::move(a.output);
  }

  const D* denoiser_;
  EngineConfig cfg_;
  PolicyConfig policy_;
  Modules modules_;
  ResidualCache cache_;
  std::optional<LatentTensor> last_probe_;
  int last_step_ = -1;
};

namespace detail {

inline void finalize_report(RunReport& report, double probe_cost, double deep_cost,
                            const LatentTensor* oracle_final) {
  const auto n = static_cast<double>(report.steps.size());
  report.hits = 0;
  report.total_cost = 0.0;
  report.wall = {};
  for (const auto& s : report.steps) {
    if (s.decision.is_hit()) ++report.hits;
    report.total_cost += s.cost_spent;
    report.wall += s.wall;
  }
  report.full_cost = n * (probe_cost + deep_cost);
  report.skip_rate = n > 0 ? report.hits / n : 0.0;
  report.simulated_speedup = report.total_cost > 0 ? report.full_cost / report.total_cost : 1.0;
  if (oracle_final) report.final_output_error = relative_l1(report.final_output, *oracle_final);
}

}  // namespace detail

/// Closed loop: the next input is derived from the current input and output by `next_input`.
template <Denoiser D>
RunReport run_trajectory(const D& denoiser, LatentTensor initial, const EngineConfig& cfg,
                         const std::function<LatentTensor(const LatentTensor& z_in, const LatentTensor& z_out, int t)>&
                             next_input,
                         const LatentTensor* oracle_final = nullptr, bool keep_outputs = false) {
  CacheController<D> ctl(denoiser, cfg);
  RunReport report;
  const int steps = cfg.policy.total_steps;
  report.steps.reserve(static_cast<std::size_t>(steps));
  LatentTensor z = std::move(initial);
  for (int t = 0; t < steps; ++t) {
    StepResult r = ctl.step(z, t);
    report.steps.push_back(std::move(r.telemetry));
    if (keep_outputs) report.outputs.push_back(r.output);
    if (t + 1 < steps) z = next_input(z, r.output, t);
    report.final_output = std::move(r.output);
  }
  detail::finalize_report(report, denoiser.probe_cost(), denoiser.deep_cost(), oracle_final);
  return report;
}

/// Open loop: inputs are given up front (e.g. from a recorded trace).
template <Denoiser D>
RunReport run_trajectory(const D& denoiser, std::span<const LatentTensor> inputs, const EngineConfig& cfg,
                         const LatentTensor* oracle_final = nullptr, bool keep_outputs = false) {
  if (inputs.size() != static_cast<std::size_t>(cfg.policy.total_steps))
    throw std::invalid_argument("run_trajectory: input count " + std::to_string(inputs.size()) +
                                " does not match total_steps " + std::to_string(cfg.policy.total_steps));
  CacheController<D> ctl(denoiser, cfg);
  RunReport report;
  report.open_loop = true;
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    StepResult r = ctl.step(inputs[t], static_cast<int>(t));
    report.steps.push_back(std::move(r.telemetry));
    if (keep_outputs) report.outputs.push_back(r.output);
    report.final_output = std::move(r.output);
  }
  detail::finalize_report(report, denoiser.probe_cost(), denoiser.deep_cost(), oracle_final);
  return report;
}

}  // namespace worldcache
