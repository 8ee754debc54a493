// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>

#include <gtest/gtest.h>

#include "worldcache/sim.hpp"

using namespace worldcache;

namespace {

ScenarioConfig small(ScenarioKind kind) {
  ScenarioConfig c = ScenarioConfig::preset(kind);
  c.shape = {1, 2, 16, 16, 8};
  return c;
}

double max_abs_diff(const LatentTensor& a, const LatentTensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

}  // namespace

TEST(Scenario, NamesRoundTrip) {
  for (ScenarioKind k : kAllScenarios) EXPECT_EQ(parse_scenario_kind(to_string(k)), k);
  EXPECT_FALSE(parse_scenario_kind("spiral").has_value());
}

TEST(Scenario, ValidationRejectsBadConfigs) {
  ScenarioConfig c;
  c.shape.batch = 2;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = ScenarioConfig{};
  c.curvature = 1.5;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = ScenarioConfig{};
  c.shape = {1, 64, 128, 128, 64};
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(Denoiser, DeepMinusInputReproducesDeclaredResidual) {
  for (ScenarioKind kind : kAllScenarios) {
    ScenarioConfig cfg = small(kind);
    cfg.noise_sigma = 0.01;
    const SyntheticDenoiser den(cfg);
    const LatentTensor z0 = den.initial_latent();
    for (int t : {0, 7, 20}) {
      const LatentTensor zN = den.deep_forward(den.probe_forward(z0, t), t);
      EXPECT_LT(max_abs_diff(subtract(zN, z0), den.residual(t)), 1e-12) << to_string(kind) << " t=" << t;
    }
  }
}

TEST(Denoiser, ProbePerturbationIsOrthogonalToResidualSubspace) {
  for (ScenarioKind kind : {ScenarioKind::static_scene, ScenarioKind::linear_drift, ScenarioKind::curved}) {
    const SyntheticDenoiser den(small(kind));
    for (int t : {1, 9, 30}) {
      const LatentTensor m = den.probe_perturbation(t);
      for (int s : {0, 5, 17}) {
        const LatentTensor r = den.residual(s);
        EXPECT_LT(std::abs(inner_product(m, r)), 1e-10 * std::sqrt(squared_norm(m) * squared_norm(r)) + 1e-14);
      }
    }
  }
}

TEST(Denoiser, StaticDeepOutputShiftsWithInput) {
  const SyntheticDenoiser den(small(ScenarioKind::static_scene));
  const OracleRun o = run_oracle(den);
  const LatentTensor lhs = o.deep_outputs[7];
  const LatentTensor rhs = add(o.deep_outputs[3], subtract(o.inputs[7], o.inputs[3]));
  EXPECT_LT(max_abs_diff(lhs, rhs), 1e-12);
}

TEST(Denoiser, LinearDriftResidualIsAffineInStep) {
  const SyntheticDenoiser den(small(ScenarioKind::linear_drift));
  const LatentTensor second = subtract(subtract(den.residual(12), den.residual(11)),
                                       subtract(den.residual(11), den.residual(10)));
  EXPECT_LT(l1_norm(second), 1e-12);
}

TEST(Denoiser, CurvedResidualRotatesAtConstantNorm) {
  ScenarioConfig cfg = small(ScenarioKind::curved);
  const SyntheticDenoiser den(cfg);
  const double n0 = squared_norm(den.residual(0));
  for (int t : {3, 11}) {
    EXPECT_NEAR(squared_norm(den.residual(t)), n0, 1e-9 * n0);
    // cos of the angle between r_0 and r_t equals cos(curvature * t).
    EXPECT_NEAR(inner_product(den.residual(0), den.residual(t)) / n0, std::cos(cfg.curvature * t), 1e-9);
  }
}

TEST(Denoiser, RisingDriftGrowsProbeDrift) {
  const SyntheticDenoiser den(ScenarioConfig::preset(ScenarioKind::rising_drift));
  const OracleRun o = run_oracle(den);
  const double early = probe_drift(o.probes[4], o.probes[3]);
  const double late = probe_drift(o.probes[33], o.probes[32]);
  EXPECT_GT(late, 3.0 * early);
}

TEST(Denoiser, TranslatingPatternMovesAtConfiguredSpeed) {
  const SyntheticDenoiser den(ScenarioConfig::preset(ScenarioKind::translating_pattern));
  const OracleRun o = run_oracle(den);
  // Input at t is background + pattern at t; shifting the pattern back 0.5 px per step
  // aligns successive inputs.
  EXPECT_DOUBLE_EQ(den.pattern_x(4) - den.pattern_x(2), 1.0);
  const DisplacementField f = estimate_flow(o.inputs[10], o.inputs[9], 1.0);
  double best = 0.0;
  for (std::size_t w = 0; w < f.width(); ++w) best = std::min(best, f.vectors(16, w, 1));
  EXPECT_NEAR(best, -0.5, 0.15);
}

TEST(Oracle, ZeroEtaFreezesInput) {
  ScenarioConfig cfg = small(ScenarioKind::linear_drift);
  cfg.eta = 0.0;
  const OracleRun o = run_oracle(cfg);
  for (const auto& z : o.inputs) EXPECT_EQ(max_abs_diff(z, o.inputs.front()), 0.0);
}

TEST(Oracle, StaticClosedFormRollout) {
  ScenarioConfig cfg = small(ScenarioKind::static_scene);
  const SyntheticDenoiser den(cfg);
  const OracleRun o = run_oracle(den);
  // z_{t+1} = z_t + eta * r, so the final output is z_0 + (T - 1) * eta * r + r.
  const double k = (cfg.total_steps - 1) * cfg.eta + 1.0;
  const LatentTensor expect = axpy(den.initial_latent(), k, den.residual(0));
  EXPECT_LT(max_abs_diff(o.final_output, expect), 1e-9);
}

TEST(Oracle, SeedsAreReproducibleAndDistinct) {
  ScenarioConfig a = small(ScenarioKind::curved);
  ScenarioConfig b = a;
  b.seed = 1;
  const OracleRun x = run_oracle(a);
  const OracleRun y = run_oracle(a);
  const OracleRun z = run_oracle(b);
  EXPECT_EQ(max_abs_diff(x.final_output, y.final_output), 0.0);
  EXPECT_GT(max_abs_diff(x.final_output, z.final_output), 0.0);
}

TEST(CounterRng, PureFunctionOfIndex) {
  const CounterRng r(42, 3);
  EXPECT_EQ(r.bits(17), CounterRng(42, 3).bits(17));
  EXPECT_NE(r.bits(17), CounterRng(42, 4).bits(17));
  double mean = 0.0, var = 0.0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const double u = r.uniform(i);
    ASSERT_GT(u, 0.0);
    ASSERT_LT(u, 1.0);
    const double g = r.normal(i);
    mean += g, var += g * g;
  }
  mean /= n;
  EXPECT_NEAR(mean, 0.0, 0.03);
  EXPECT_NEAR(var / n, 1.0, 0.05);
}

TEST(ClosedLoopUpdate, ConvexCombination) {
  const TensorShape s{1, 1, 1, 2, 1};
  const LatentTensor in(s, std::vector<double>{1.0, -2.0});
  const LatentTensor out(s, std::vector<double>{3.0, 2.0});
  EXPECT_EQ(closed_loop_update(in, out, 0.0).data()[1], -2.0);
  EXPECT_EQ(closed_loop_update(in, out, 1.0).data()[0], 3.0);
  EXPECT_EQ(closed_loop_update(in, out, 1.0).data()[1], 2.0);
  EXPECT_EQ(closed_loop_update(in, out, 0.5).data()[0], 2.0);
  EXPECT_EQ(closed_loop_update(in, out, 0.5).data()[1], 0.0);
}

TEST(Oracle, MatchesEngineWithCacheDisabled) {
  const SyntheticDenoiser den(small(ScenarioKind::translating_pattern));
  const OracleRun o = run_oracle(den);
  EngineConfig cfg;
  cfg.policy.tau0 = 0.0;
  const RunReport r = run_scenario(den, cfg, &o, true);
  ASSERT_EQ(r.outputs.size(), o.deep_outputs.size());
  for (std::size_t t = 0; t < r.outputs.size(); ++t) EXPECT_EQ(max_abs_diff(r.outputs[t], o.deep_outputs[t]), 0.0);
  EXPECT_EQ(r.final_output_error.value(), 0.0);
}

TEST(Oracle, LinearDriftExactAtAnySkipRate) {
  const SyntheticDenoiser den(small(ScenarioKind::linear_drift));
  const OracleRun o = run_oracle(den);
  for (double tau0 : {0.02, 0.08, 0.3, 1e9}) {
    EngineConfig cfg;
    cfg.policy.tau0 = tau0;
    cfg.policy.warp_enabled = false;
    const RunReport r = run_scenario(den, cfg, &o);
    EXPECT_LE(r.final_output_error.value(), 1e-6) << tau0 << " skip " << r.skip_rate;
  }
}
