// SPDX-License-Identifier: Apache-2.0
//
// Deterministic synthetic denoisers with known residual trajectories.
//
// Every scenario declares a residual field r_t. The probe returns
// z0 + r_t + m_t, where m_t is a fixed seeded channel mixing of r_t with its
// component inside the scenario's residual subspace removed; the deep segment
// strips m_t again, so deep_forward(probe_forward(z0, t), t) - z0 == r_t.

#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "worldcache/engine.hpp"
#include "worldcache/random.hpp"
#include "worldcache/tensor.hpp"

namespace worldcache {

enum class ScenarioKind { static_scene, linear_drift, translating_pattern, curved, rising_drift };

inline std::string_view to_string(ScenarioKind k) {
  switch (k) {
    case ScenarioKind::static_scene: return "static";
    case ScenarioKind::linear_drift: return "linear-drift";
    case ScenarioKind::translating_pattern: return "translating-pattern";
    case ScenarioKind::curved: return "curved";
    case ScenarioKind::rising_drift: return "rising-drift";
  }
  return "static";
}

inline std::optional<ScenarioKind> parse_scenario_kind(std::string_view s) {
  for (auto k : {ScenarioKind::static_scene, ScenarioKind::linear_drift, ScenarioKind::translating_pattern,
                 ScenarioKind::curved, ScenarioKind::rising_drift})
    if (s == to_string(k)) return k;
  return std::nullopt;
}

inline constexpr ScenarioKind kAllScenarios[] = {ScenarioKind::static_scene, ScenarioKind::linear_drift,
                                                  ScenarioKind::translating_pattern, ScenarioKind::curved,
                                                  ScenarioKind::rising_drift};

struct ScenarioConfig {
  ScenarioKind kind = ScenarioKind::static_scene;
  TensorShape shape{1, 4, 32, 32, 16};
  std::uint64_t seed = 0;
  double motion_speed = 0.5;    // latent pixels per step (translating-pattern)
  double curvature = 0.5;       // radians per step (curved, rising-drift)
  double noise_sigma = 0.0;     // per-step white noise added to the residual
  int total_steps = 35;
  double eta = 0.5;             // closed-loop sampler gain
  double residual_scale = 0.05; // mean |r| per element
  double latent_sigma = 1.0;    // initial latent noise
  double probe_mix = 0.05;      // magnitude of the probe-only perturbation
  double probe_cost = 1.0;
  double deep_cost = 7.0;
  std::size_t max_elements = 1'000'000;

  /// Scenario defaults; keys set afterwards override them.
  static ScenarioConfig preset(ScenarioKind kind) {
    ScenarioConfig c;
    c.kind = kind;
    switch (kind) {
      case ScenarioKind::translating_pattern:
        c.latent_sigma = 0.05;
        break;
      case ScenarioKind::rising_drift:
        c.curvature = 0.3;
        c.residual_scale = 0.1;
        break;
      default: break;
    }
    return c;
  }

  void validate() const {
    auto fail = [](const std::string& m) { throw std::invalid_argument("ScenarioConfig: " + m); };
    const std::size_t n = shape.count();
    if (n > max_elements) fail("shape exceeds the desk-scale element budget");
    if (shape.batch != 1) fail("batch must be 1 (one stream per controller)");
    if (total_steps < 1) fail("total_steps must be >= 1");
    if (!(curvature >= 0.0 && curvature <= 1.0)) fail("curvature must lie in [0, 1]");
    if (!(noise_sigma >= 0.0)) fail("noise_sigma must be >= 0");
    if (!(eta >= 0.0 && eta <= 1.0)) fail("eta must lie in [0, 1]");
    if (!(residual_scale > 0.0)) fail("residual_scale must be > 0");
    if (!(latent_sigma >= 0.0)) fail("latent_sigma must be >= 0");
    if (!(probe_mix >= 0.0)) fail("probe_mix must be >= 0");
    if (!(probe_cost > 0.0) || !(deep_cost > 0.0)) fail("costs must be > 0");
  }
};

namespace detail {

enum Stream : std::uint64_t {
  kStreamInitial = 1,
  kStreamBlobs = 2,
  kStreamMixing = 3,
  kStreamNoise = 4,
};

// Sum of smooth Gaussian blobs with random (frame, channel) loadings.
inline LatentTensor smooth_field(const TensorShape& s, std::uint64_t seed, std::uint64_t field_id, int blobs = 6) {
  const CounterRng rng(seed, kStreamBlobs * 1000 + field_id);
  LatentTensor f(s);
  std::uint64_t k = 0;
  const std::size_t loads = s.frames * s.channels;
  for (int i = 0; i < blobs; ++i) {
    const double cy = rng.uniform(k++, 0.0, static_cast<double>(s.height));
    const double cx = rng.uniform(k++, 0.0, static_cast<double>(s.width));
    const double sigma = rng.uniform(k++, 2.0, 5.0);
    std::vector<double> load(loads);
    for (double& v : load) v = rng.normal(k++);
    for (std::size_t t = 0; t < s.frames; ++t)
      for (std::size_t h = 0; h < s.height; ++h)
        for (std::size_t w = 0; w < s.width; ++w) {
          const double dy = static_cast<double>(h) - cy;
          const double dx = static_cast<double>(w) - cx;
          const double g = std::exp(-(dy * dy + dx * dx) / (2.0 * sigma * sigma));
          for (std::size_t d = 0; d < s.channels; ++d) f.at(0, t, h, w, d) += g * load[t * s.channels + d];
        }
  }
  return f;
}

inline LatentTensor rescale_mean_abs(const LatentTensor& x, double target) {
  const double mean_abs = l1_norm(x) / static_cast<double>(x.size());
  return scaled(x, target / mean_abs);
}

// Modified Gram-Schmidt; returns an orthonormal basis in the Euclidean inner product.
inline std::vector<LatentTensor> orthonormalize(std::vector<LatentTensor> v) {
  for (std::size_t i = 0; i < v.size(); ++i) {
    for (std::size_t j = 0; j < i; ++j) v[i] = axpy(v[i], -inner_product(v[i], v[j]), v[j]);
    v[i] = scaled(v[i], 1.0 / std::sqrt(squared_norm(v[i])));
  }
  return v;
}

}  // namespace detail

class SyntheticDenoiser {
 public:
  explicit SyntheticDenoiser(ScenarioConfig cfg) : cfg_(cfg) {
    cfg_.validate();
    const auto& s = cfg_.shape;
    build_mixing();
    switch (cfg_.kind) {
      case ScenarioKind::static_scene:
        fields_ = {detail::rescale_mean_abs(detail::smooth_field(s, cfg_.seed, 0), cfg_.residual_scale)};
        basis_ = detail::orthonormalize(fields_);
        break;
      case ScenarioKind::linear_drift: {
        fields_ = {detail::rescale_mean_abs(detail::smooth_field(s, cfg_.seed, 0), cfg_.residual_scale),
                   detail::rescale_mean_abs(detail::smooth_field(s, cfg_.seed, 1), cfg_.residual_scale)};
        basis_ = detail::orthonormalize(fields_);
        break;
      }
      case ScenarioKind::curved:
      case ScenarioKind::rising_drift: {
        basis_ = detail::orthonormalize({detail::smooth_field(s, cfg_.seed, 0), detail::smooth_field(s, cfg_.seed, 1)});
        // Equal-norm orthogonal pair scaled so that the rotating residual has the requested mean |r|.
        const double unit_mean_abs = 0.5 * (l1_norm(basis_[0]) + l1_norm(basis_[1])) / static_cast<double>(basis_[0].size());
        fields_ = {scaled(basis_[0], cfg_.residual_scale / unit_mean_abs),
                   scaled(basis_[1], cfg_.residual_scale / unit_mean_abs)};
        break;
      }
      case ScenarioKind::translating_pattern: build_pattern(); break;
    }
  }

  const ScenarioConfig& config() const { return cfg_; }
  TensorShape latent_shape() const { return cfg_.shape; }
  double probe_cost() const { return cfg_.probe_cost; }
  double deep_cost() const { return cfg_.deep_cost; }

  /// The declared residual field r_t = zN_t - z0_t.
  LatentTensor residual(int t) const {
    const double T = static_cast<double>(cfg_.total_steps);
    const double td = static_cast<double>(t);
    LatentTensor r;
    switch (cfg_.kind) {
      case ScenarioKind::static_scene: r = fields_[0]; break;
      case ScenarioKind::linear_drift: r = axpy(fields_[0], td / T, fields_[1]); break;
      case ScenarioKind::curved: {
        const double a = cfg_.curvature * td;
        r = axpy(scaled(fields_[0], std::cos(a)), std::sin(a), fields_[1]);
        break;
      }
      case ScenarioKind::rising_drift: {
        const double a = cfg_.curvature * td;
        const double u = td / T;
        const double g = 0.25 + 3.75 * u * u;
        r = axpy(scaled(fields_[0], g * std::cos(a)), g * std::sin(a), fields_[1]);
        break;
      }
      case ScenarioKind::translating_pattern: {
        // Finite difference of the moving pattern, scaled so the closed-loop sampler carries
        // the pattern from its position at t to its position at t + 1.
        const double gain = cfg_.eta > 0.0 ? 1.0 / cfg_.eta : 1.0;
        r = scaled(subtract(pattern_at(td + 1.0), pattern_at(td)), gain);
        break;
      }
    }
    if (cfg_.noise_sigma > 0.0) {
      const CounterRng rng(cfg_.seed, detail::kStreamNoise * 100000 + static_cast<std::uint64_t>(t));
      auto d = r.data();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += cfg_.noise_sigma * rng.normal(i);
    }
    return r;
  }

  /// Probe-only component m_t: seeded channel mixing of r_t, orthogonal to the residual subspace.
  LatentTensor probe_perturbation(int t) const { return perturbation_of(residual(t)); }

  LatentTensor probe_forward(const LatentTensor& z0, int t) const {
    check_shape(z0);
    const LatentTensor r = residual(t);
    return add(add(z0, r), perturbation_of(r));
  }

  LatentTensor deep_forward(const LatentTensor& zk, int t) const {
    check_shape(zk);
    return subtract(zk, probe_perturbation(t));
  }

  LatentTensor initial_latent() const {
    const auto& s = cfg_.shape;
    const CounterRng rng(cfg_.seed, detail::kStreamInitial);
    LatentTensor z(s);
    auto d = z.data();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = cfg_.latent_sigma * rng.normal(i);
    if (cfg_.kind == ScenarioKind::translating_pattern) z = add(z, pattern_at(0.0));
    return z;
  }

  /// Centre of the moving pattern at step t (translating-pattern only).
  double pattern_x(double t) const { return pattern_x0_ + cfg_.motion_speed * t; }

 private:
  void check_shape(const LatentTensor& z) const {
    if (z.shape() != cfg_.shape) throw ShapeError("synthetic denoiser: input shape " + z.shape().str());
  }

  void build_mixing() {
    const std::size_t D = cfg_.shape.channels;
    const CounterRng rng(cfg_.seed, detail::kStreamMixing);
    mixing_.resize(D * D);
    const double scale = 1.0 / std::sqrt(static_cast<double>(D));
    for (std::size_t i = 0; i < mixing_.size(); ++i) mixing_[i] = scale * rng.normal(i);
  }

  LatentTensor perturbation_of(const LatentTensor& r) const {
    const auto& s = cfg_.shape;
    const std::size_t D = s.channels;
    LatentTensor m(s);
    auto in = r.data();
    auto out = m.data();
    for (std::size_t base = 0; base < in.size(); base += D)
      for (std::size_t i = 0; i < D; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < D; ++j) acc += mixing_[i * D + j] * in[base + j];
        out[base + i] = cfg_.probe_mix * acc;
      }
    for (const auto& e : basis_) m = axpy(m, -inner_product(m, e), e);
    return m;
  }

  void build_pattern() {
    const auto& s = cfg_.shape;
    const CounterRng rng(cfg_.seed, detail::kStreamBlobs * 1000 + 7);
    pattern_x0_ = 0.25 * static_cast<double>(s.width);
    pattern_y_ = 0.5 * static_cast<double>(s.height);
    std::uint64_t k = 0;
    for (int i = 0; i < 3; ++i) {
      PatternBlob b;
      b.dy = rng.uniform(k++, -3.0, 3.0);
      b.dx = rng.uniform(k++, -3.0, 3.0);
      b.sigma = rng.uniform(k++, 2.5, 3.5);
      b.load.resize(s.frames * s.channels);
      for (double& v : b.load) v = rng.normal(k++);
      blobs_.push_back(std::move(b));
    }
  }

  LatentTensor pattern_at(double t) const {
    const auto& s = cfg_.shape;
    LatentTensor p(s);
    const double cx = pattern_x(t);
    for (const auto& b : blobs_)
      for (std::size_t h = 0; h < s.height; ++h)
        for (std::size_t w = 0; w < s.width; ++w) {
          const double dy = static_cast<double>(h) - (pattern_y_ + b.dy);
          const double dx = static_cast<double>(w) - (cx + b.dx);
          const double g = std::exp(-(dy * dy + dx * dx) / (2.0 * b.sigma * b.sigma));
          for (std::size_t t2 = 0; t2 < s.frames; ++t2)
            for (std::size_t d = 0; d < s.channels; ++d) p.at(0, t2, h, w, d) += g * b.load[t2 * s.channels + d];
        }
    return p;
  }

  struct PatternBlob {
    double dy = 0.0;
    double dx = 0.0;
    double sigma = 3.0;
    std::vector<double> load;
  };

  ScenarioConfig cfg_;
  std::vector<LatentTensor> fields_;
  std::vector<LatentTensor> basis_;
  std::vector<double> mixing_;
  std::vector<PatternBlob> blobs_;
  double pattern_x0_ = 0.0;
  double pattern_y_ = 0.0;
};

/// z0_{t+1} = z0_t + eta * (z_out - z0_t)
inline LatentTensor closed_loop_update(const LatentTensor& z_in, const LatentTensor& z_out, double eta) {
  LatentTensor next(z_in.shape());
  auto n = next.data();
  auto a = z_in.data();
  auto b = z_out.data();
  for (std::size_t i = 0; i < n.size(); ++i) n[i] = a[i] + eta * (b[i] - a[i]);
  return next;
}

/// Full-compute trajectory with every tap retained.
struct OracleRun {
  std::vector<LatentTensor> inputs;
  std::vector<LatentTensor> probes;
  std::vector<LatentTensor> deep_outputs;
  LatentTensor final_output;
};

inline OracleRun run_oracle(const SyntheticDenoiser& den) {
  const auto& cfg = den.config();
  OracleRun run;
  LatentTensor z = den.initial_latent();
  for (int t = 0; t < cfg.total_steps; ++t) {
    LatentTensor zk = den.probe_forward(z, t);
    LatentTensor zN = den.deep_forward(zk, t);
    run.inputs.push_back(z);
    run.probes.push_back(std::move(zk));
    if (t + 1 < cfg.total_steps) z = closed_loop_update(z, zN, cfg.eta);
    run.deep_outputs.push_back(std::move(zN));
  }
  run.final_output = run.deep_outputs.back();
  return run;
}

inline OracleRun run_oracle(const ScenarioConfig& cfg) { return run_oracle(SyntheticDenoiser(cfg)); }

/// Closed-loop engine run on a scenario; fills final_output_error against `oracle` when given.
inline RunReport run_scenario(const SyntheticDenoiser& den, EngineConfig cfg, const OracleRun* oracle = nullptr,
                              bool keep_outputs = false) {
  const auto& sc = den.config();
  if (cfg.policy.total_steps != sc.total_steps)
    throw std::invalid_argument("run_scenario: policy total_steps differs from scenario total_steps");
  const double eta = sc.eta;
  return run_trajectory(
      den, den.initial_latent(), cfg,
      [eta](const LatentTensor& z_in, const LatentTensor& z_out, int) { return closed_loop_update(z_in, z_out, eta); },
      oracle ? &oracle->final_output : nullptr, keep_outputs);
}

}  // namespace worldcache
