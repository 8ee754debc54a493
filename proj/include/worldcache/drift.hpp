// SPDX-License-Identifier: Apache-2.0
//
// Probe drift, motion velocity, channel-variance saliency and
// saliency-weighted drift.

#pragma once

#include <cstddef>
#include <optional>

#include "worldcache/tensor.hpp"

namespace worldcache {

inline constexpr double kDefaultEps = 1e-8;

struct SaliencyMap {
  Grid values;  // H x W, every entry in [0, 1]
  int source_step = -1;
};

struct DriftReading {
  int step = 0;
  double raw_drift = 0.0;       // relative L1 change of probe features
  double swd_drift = 0.0;       // mean saliency-weighted per-location L1, latent units
  double swd_relative = 0.0;    // swd_drift rescaled to the raw drift's relative units
  std::optional<double> velocity;  // absent until a second full-compute anchor exists
};

/// ||z_curr - z_prev||_1 / (||z_prev||_1 + eps)
inline double probe_drift(const LatentTensor& z_curr, const LatentTensor& z_prev, double eps = kDefaultEps) {
  detail::require_same_shape(z_curr, z_prev, "probe_drift");
  return l1_norm(subtract(z_curr, z_prev)) / (l1_norm(z_prev) + eps);
}

/// Relative L1 change of the raw input against the anchor input of an earlier full-compute step.
inline double motion_velocity(const LatentTensor& z0_curr, const LatentTensor& z0_anchor,
                              double eps = kDefaultEps) {
  detail::require_same_shape(z0_curr, z0_anchor, "motion_velocity");
  return l1_norm(subtract(z0_curr, z0_anchor)) / (l1_norm(z0_anchor) + eps);
}

inline SaliencyMap saliency_map(const LatentTensor& z_probe, int step = -1) {
  return {minmax_normalize(channel_variance_map(z_probe)), step};
}

/// (1 / HW) * sum_{h,w} ||z_curr(h,w) - z_prev(h,w)||_1 * (1 + beta_s * S(h,w))
inline double swd_drift(const LatentTensor& z_curr, const LatentTensor& z_prev, const SaliencyMap& saliency,
                        double beta_s) {
  detail::require_same_shape(z_curr, z_prev, "swd_drift");
  const auto& s = z_curr.shape();
  if (saliency.values.height != s.height || saliency.values.width != s.width)
    throw ShapeError("swd_drift: saliency map does not match the latent spatial extent");
  const Grid per_loc = per_location_l1(subtract(z_curr, z_prev));
  double acc = 0.0;
  for (std::size_t i = 0; i < per_loc.values.size(); ++i)
    acc += per_loc.values[i] * (1.0 + beta_s * saliency.values.values[i]);
  return acc / static_cast<double>(s.spatial());
}

/// swd_drift expressed relative to the previous probe's mean per-location L1, so that beta_s = 0
/// reproduces probe_drift and the same base threshold applies to both.
inline double swd_relative(double swd, const LatentTensor& z_prev, double eps = kDefaultEps) {
  const double mean_l1 = l1_norm(z_prev) / static_cast<double>(z_prev.shape().spatial());
  return swd / (mean_l1 + eps / static_cast<double>(z_prev.shape().spatial()));
}

}  // namespace worldcache
