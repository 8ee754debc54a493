// SPDX-License-Identifier: Apache-2.0
//
// Acceptance suite: one line per criterion, nonzero exit if any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "worldcache/sim.hpp"
#include "worldcache/trace.hpp"

using namespace worldcache;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double mean_hit_error(const RunReport& r) {
  double s = 0.0;
  int n = 0;
  for (const auto& st : r.steps)
    if (st.decision.is_hit()) {
      s += st.oracle_error.value();
      ++n;
    }
  return n > 0 ? s / n : 0.0;
}

Trace record(ScenarioKind kind, bool with_deep = true) {
  const ScenarioConfig sc = ScenarioConfig::preset(kind);
  const OracleRun o = run_oracle(sc);
  Trace tr = make_trace(o, sc.shape, sc.seed);
  if (!with_deep) {
    tr.header.taps_present = kTapInput | kTapProbe;
    for (auto& s : tr.steps) s.zN.reset();
  }
  return tr;
}

LatentTensor gaussian_blob(const TensorShape& s, double cy, double cx, double sigma) {
  LatentTensor z(s);
  for (std::size_t h = 0; h < s.height; ++h)
    for (std::size_t w = 0; w < s.width; ++w) {
      const double dy = static_cast<double>(h) - cy;
      const double dx = static_cast<double>(w) - cx;
      const double g = std::exp(-(dy * dy + dx * dx) / (2.0 * sigma * sigma));
      for (std::size_t d = 0; d < s.channels; ++d) z.at(0, 0, h, w, d) = g * (1.0 + 0.25 * static_cast<double>(d));
    }
  return z;
}

Outcome ats_linear_anchors() {
  const double early = ats_multiplier_linear(2, 35, 4.0);
  const double late = ats_multiplier_linear(32, 35, 4.0);
  return {early >= 1.20 && early <= 1.25 && late >= 4.60 && late <= 4.70,
          fmt("m(2)=%.4f in [1.20,1.25], m(32)=%.4f in [4.60,4.70]", early, late)};
}

Outcome ats_quadratic_anchors() {
  const double d0 = ats_multiplier_quadratic(0, 35);
  const double d35 = ats_multiplier_quadratic(35, 35);
  return {d0 == 1.0 && std::abs(d35 - 5.0) <= 1e-12, fmt("D(0)=%.17g, |D(35)-5|=%.3g", d0, std::abs(d35 - 5.0))};
}

Outcome osi_optimality() {
  std::mt19937_64 gen(20240601);
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> coeff(-1.0, 3.0);
  const TensorShape shape{1, 1, 4, 4, 4};
  double worst = -1e300;
  for (int trial = 0; trial < 1000; ++trial) {
    LatentTensor src(shape), noise(shape);
    for (double& v : src.data()) v = normal(gen);
    for (double& v : noise.data()) v = normal(gen);
    // Targets mix a random multiple of the source with independent noise, so the optimum
    // lands inside, below and above the clamp range.
    const LatentTensor tgt = axpy(scaled(noise, 0.5 * std::abs(normal(gen))), coeff(gen), src);
    const auto loss = [&](double g) { return squared_norm(axpy(tgt, -g, src)); };
    const double g_star = osi_gamma(tgt, src, kDefaultEps, 2.0);
    double grid_best = 1e300;
    for (int i = 0; i <= 200; ++i) grid_best = std::min(grid_best, loss(2.0 * i / 200.0));
    worst = std::max(worst, loss(g_star) - grid_best);
  }
  return {worst <= 1e-9, fmt("max(loss(gamma*) - best grid loss) = %.3g over 1000 pairs", worst)};
}

Outcome linear_drift_exactness() {
  const SyntheticDenoiser den(ScenarioConfig::preset(ScenarioKind::linear_drift));
  const OracleRun o = run_oracle(den);
  EngineConfig cfg;
  cfg.policy.warp_enabled = false;
  const RunReport r = run_scenario(den, cfg, &o);
  const double err = r.final_output_error.value();
  return {err <= 1e-6 && r.skip_rate >= 0.5, fmt("final error %.3g (<= 1e-6), skip rate %.3f (>= 0.5)", err, r.skip_rate)};
}

Outcome disabled_cache_equivalence() {
  int mismatched = 0;
  for (ScenarioKind kind : kAllScenarios) {
    const SyntheticDenoiser den(ScenarioConfig::preset(kind));
    EngineConfig off;
    off.policy.tau0 = 0.0;
    EngineConfig full;
    full.kind = PolicyKind::full_compute;
    const RunReport a = run_scenario(den, off, nullptr, true);
    const RunReport b = run_scenario(den, full, nullptr, true);
    bool same = a.hits == 0 && a.outputs.size() == b.outputs.size();
    for (std::size_t i = 0; same && i < a.outputs.size(); ++i) {
      const auto x = a.outputs[i].data();
      const auto y = b.outputs[i].data();
      same = std::equal(x.begin(), x.end(), y.begin(), y.end());
    }
    if (!same) ++mismatched;
  }
  return {mismatched == 0, fmt("%d of 5 scenarios differ from full compute", mismatched)};
}

Outcome directional_attenuation() {
  ScenarioConfig sc = ScenarioConfig::preset(ScenarioKind::curved);
  sc.curvature = 0.5;
  const SyntheticDenoiser den(sc);
  const OracleRun o = run_oracle(den);
  EngineConfig wc;
  wc.oracle = true;
  EngineConfig ft;
  ft.kind = PolicyKind::fixed_threshold_scalar_ratio;
  const RunReport a = run_scenario(den, wc, &o);
  const RunReport b = run_scenario(den, ft, &o);
  double osi = 0.0, ratio = 0.0;
  int n_osi = 0, n_ratio = 0;
  for (const auto& s : a.steps)
    if (s.decision.is_hit()) osi += *s.gamma, ++n_osi;
  for (const auto& s : b.steps)
    if (s.decision.is_hit()) ratio += *s.gamma, ++n_ratio;
  osi = n_osi ? osi / n_osi : 0.0;
  ratio = n_ratio ? ratio / n_ratio : 0.0;
  const double ea = a.final_output_error.value();
  const double eb = b.final_output_error.value();
  const bool pass = n_osi > 0 && n_ratio > 0 && osi < ratio && ea < eb && a.skip_rate >= b.skip_rate;
  return {pass, fmt("mean gamma osi %.3f < scalar %.3f; error %.4f < %.4f at skip %.3f >= %.3f", osi, ratio, ea, eb,
                    a.skip_rate, b.skip_rate)};
}

Outcome warp_benefit() {
  const Trace tr = record(ScenarioKind::translating_pattern);
  EngineConfig on;
  EngineConfig off;
  off.policy.warp_enabled = false;
  const RunReport a = replay_decisions(tr, on);
  const RunReport b = replay_decisions(tr, off);
  bool same_decisions = a.steps.size() == b.steps.size();
  int warped = 0;
  for (std::size_t i = 0; same_decisions && i < a.steps.size(); ++i) {
    same_decisions = a.steps[i].decision.kind == b.steps[i].decision.kind;
    warped += a.steps[i].warp_used ? 1 : 0;
  }
  const double ea = mean_hit_error(a);
  const double eb = mean_hit_error(b);
  return {same_decisions && a.hits > 0 && ea <= 0.9 * eb,
          fmt("mean hit error warp-on %.4g <= 0.9 x warp-off %.4g (ratio %.3f), %d hits, %d warped, decisions %s", ea,
              eb, eb > 0 ? ea / eb : 0.0, a.hits, warped, same_decisions ? "identical" : "DIFFER")};
}

Outcome flow_recovery() {
  const TensorShape shape{1, 1, 32, 32, 4};
  const double sigma = 3.0;
  // Sampling the previous frame at x + (0.5, 0) reproduces the current one.
  const LatentTensor curr = gaussian_blob(shape, 16.0, 15.0, sigma);
  const LatentTensor prev = gaussian_blob(shape, 16.5, 15.0, sigma);
  std::vector<std::pair<double, double>> means;
  std::vector<DisplacementField> fields;
  for (double s_flow : {1.0, 0.5}) {
    fields.push_back(estimate_flow(curr, prev, s_flow));
    double sy = 0.0, sx = 0.0;
    int n = 0;
    for (std::size_t h = 0; h < 32; ++h)
      for (std::size_t w = 0; w < 32; ++w) {
        const double dy = static_cast<double>(h) - 16.0, dx = static_cast<double>(w) - 15.0;
        if (dy * dy + dx * dx > 4.0 * sigma * sigma) continue;
        sy += fields.back().vectors(h, w, 0);
        sx += fields.back().vectors(h, w, 1);
        ++n;
      }
    means.emplace_back(sy / n, sx / n);
  }
  double diff = 0.0;
  int n = 0;
  for (std::size_t h = 0; h < 32; ++h)
    for (std::size_t w = 0; w < 32; ++w) {
      const double dy = static_cast<double>(h) - 16.0, dx = static_cast<double>(w) - 15.0;
      if (dy * dy + dx * dx > 4.0 * sigma * sigma) continue;
      diff += std::hypot(fields[0].vectors(h, w, 0) - fields[1].vectors(h, w, 0),
                         fields[0].vectors(h, w, 1) - fields[1].vectors(h, w, 1));
      ++n;
    }
  diff /= n;
  const double e1 = std::hypot(means[0].first - 0.5, means[0].second);
  const double e2 = std::hypot(means[1].first - 0.5, means[1].second);
  return {e1 <= 0.15 && e2 <= 0.15 && diff <= 0.2,
          fmt("s_flow 1.0 mean (%.3f, %.3f), s_flow 0.5 mean (%.3f, %.3f), scale difference %.3f px", means[0].first,
              means[0].second, means[1].first, means[1].second, diff)};
}

Outcome ats_skip_rate_effect() {
  const Trace tr = record(ScenarioKind::rising_drift, false);
  EngineConfig quad;
  EngineConfig off;
  off.policy.ats_mode = AtsMode::off;
  const RunReport a = replay_decisions(tr, quad);
  const RunReport b = replay_decisions(tr, off);
  return {a.skip_rate >= 1.3 * b.skip_rate,
          fmt("quadratic %.3f >= 1.3 x off %.3f (ratio %.3f)", a.skip_rate, b.skip_rate,
              b.skip_rate > 0 ? a.skip_rate / b.skip_rate : 0.0)};
}

Outcome replay_monotonicity() {
  int violations = 0;
  std::string counts;
  for (ScenarioKind kind : kAllScenarios) {
    const Trace tr = record(kind, false);
    int prev = -1;
    for (int i = 1; i <= 20; ++i) {
      EngineConfig cfg;
      cfg.policy.tau0 = 0.01 * i;
      const int hits = replay_decisions(tr, cfg).hits;
      if (hits < prev) ++violations;
      prev = hits;
    }
    counts += std::string(to_string(kind)) + " " + std::to_string(prev) + " ";
  }
  return {violations == 0, fmt("%d decreases across 5 traces x 20 tau0 values (hits at tau0=0.2: %s)", violations,
                               counts.c_str())};
}

Outcome trace_round_trip() {
  const ScenarioConfig sc = ScenarioConfig::preset(ScenarioKind::curved);
  const OracleRun o = run_oracle(sc);
  const Trace tr = make_trace(o, sc.shape, sc.seed);
  const auto bytes = encode_trace(tr);
  const Trace back = decode_trace(bytes);
  bool identical = back.header == tr.header && back.steps.size() == tr.steps.size();
  for (std::size_t i = 0; identical && i < tr.steps.size(); ++i)
    for (auto [a, b] : {std::pair{&tr.steps[i].z0, &back.steps[i].z0}, std::pair{&tr.steps[i].zk, &back.steps[i].zk},
                        std::pair{&tr.steps[i].zN, &back.steps[i].zN}}) {
      const auto x = to_f32_precision(**a).data();
      const auto y = (*b)->data();
      identical = identical && std::equal(x.begin(), x.end(), y.begin(), y.end());
    }
  const auto fails_with = [&](std::vector<unsigned char> corrupt, TraceError::Kind kind) {
    try {
      (void)decode_trace(corrupt);
    } catch (const TraceError& e) {
      return e.kind() == kind;
    }
    return false;
  };
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  auto truncated = bytes;
  truncated.resize(truncated.size() - 3);
  const bool magic_ok = fails_with(bad_magic, TraceError::Kind::format);
  const bool length_ok = fails_with(truncated, TraceError::Kind::payload_size);
  return {identical && magic_ok && length_ok,
          fmt("round trip %s (%zu bytes); bad magic -> format error %s; truncated -> payload-size error %s",
              identical ? "identical" : "DIFFERS", bytes.size(), magic_ok ? "yes" : "NO", length_ok ? "yes" : "NO")};
}

Outcome cost_ledger() {
  const SyntheticDenoiser den(ScenarioConfig::preset(ScenarioKind::static_scene));
  const OracleRun o = run_oracle(den);
  const RunReport r = run_scenario(den, EngineConfig{}, &o);
  const double err = r.final_output_error.value();
  return {r.simulated_speedup >= 1.5 && err <= 1e-6,
          fmt("simulated speedup %.3f (>= 1.5), final error %.3g (<= 1e-6), skip rate %.3f", r.simulated_speedup, err,
              r.skip_rate)};
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"ats-linear-anchors", ats_linear_anchors},
      {"ats-quadratic-anchors", ats_quadratic_anchors},
      {"osi-optimality", osi_optimality},
      {"osi-exact-on-affine-trajectory", linear_drift_exactness},
      {"disabled-cache-equivalence", disabled_cache_equivalence},
      {"directional-attenuation", directional_attenuation},
      {"warp-benefit", warp_benefit},
      {"flow-recovery", flow_recovery},
      {"ats-skip-rate-effect", ats_skip_rate_effect},
      {"replay-monotonicity", replay_monotonicity},
      {"trace-round-trip", trace_round_trip},
      {"cost-ledger", cost_ledger},
  };
  int failed = 0;
  int index = 0;
  for (const auto& [name, fn] : criteria) {
    ++index;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome out;
    try {
      out = fn();
    } catch (const std::exception& e) {
      out = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (!out.pass) ++failed;
    std::printf("[%s] %2d %-32s %s (%.2fs)\n", out.pass ? "PASS" : "FAIL", index, name, out.detail.c_str(), secs);
    std::fflush(stdout);
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
