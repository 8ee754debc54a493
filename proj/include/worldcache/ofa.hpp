// SPDX-License-Identifier: Apache-2.0
//
// Cache-hit approximation: least-squares residual interpolation, coarse-grid
// Lucas-Kanade flow on latent inputs, and motion-compensated warping.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <stdexcept>

#include "worldcache/cache.hpp"
#include "worldcache/policy.hpp"
#include "worldcache/tensor.hpp"

namespace worldcache {

class CacheNotReadyError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// clamp(<tgt, src> / (||src||^2 + eps), 0, gamma_max)
inline double osi_gamma(const LatentTensor& delta_tgt, const LatentTensor& delta_src, double eps, double gamma_max) {
  detail::require_same_shape(delta_tgt, delta_src, "osi_gamma");
  const double g = inner_product(delta_tgt, delta_src) / (squared_norm(delta_src) + eps);
  return std::clamp(g, 0.0, gamma_max);
}

/// ||tgt||_1 / (||src||_1 + eps); magnitude-only blend coefficient of the scalar-ratio baseline.
inline double scalar_ratio_gamma(const LatentTensor& delta_tgt, const LatentTensor& delta_src, double eps) {
  detail::require_same_shape(delta_tgt, delta_src, "scalar_ratio_gamma");
  return l1_norm(delta_tgt) / (l1_norm(delta_src) + eps);
}

/// Extrapolation ratio (t - t_older) / (t_newer - t_older) that an affine residual trajectory
/// needs at step t.
inline double extrapolation_ratio(const ResidualCache& cache, int t) {
  if (!cache.ready()) throw CacheNotReadyError("extrapolation_ratio: cache not ready");
  const double span = static_cast<double>(cache.newer()->step - cache.older()->step);
  return static_cast<double>(t - cache.older()->step) / span;
}

struct Approximation {
  LatentTensor output;
  double gamma = 0.0;
  double gamma_limit = 0.0;
};

enum class BlendRule { osi, scalar_ratio };

/// Deep-output estimate z0 + r_older + gamma * (r_newer - r_older) on a cache hit at step t.
/// `corrected_newer_residual`, when given, replaces the newer slot's residual.
inline Approximation osi_approximate(const LatentTensor& z0, const LatentTensor& zk, const ResidualCache& cache,
                                     const PolicyConfig& cfg, int t,
                                     const LatentTensor* corrected_newer_residual = nullptr,
                                     BlendRule rule = BlendRule::osi) {
  if (!cache.ready()) throw CacheNotReadyError("osi_approximate: cache not ready");
  const CacheSlot& older = *cache.older();
  const CacheSlot& newer = *cache.newer();
  const LatentTensor& r_newer = corrected_newer_residual ? *corrected_newer_residual : newer.residual;

  const LatentTensor partial = subtract(zk, z0);
  const LatentTensor delta_tgt = subtract(partial, older.residual);
  const LatentTensor delta_src = subtract(r_newer, older.residual);

  Approximation a;
  if (rule == BlendRule::osi) {
    a.gamma_limit = std::max(cfg.gamma_max, extrapolation_ratio(cache, t));
    a.gamma = osi_gamma(delta_tgt, delta_src, cfg.eps, a.gamma_limit);
  } else {
    a.gamma = scalar_ratio_gamma(delta_tgt, delta_src, cfg.eps);
    a.gamma_limit = a.gamma;
  }
  LatentTensor out = add(z0, older.residual);
  auto o = out.data();
  auto s = delta_src.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] += a.gamma * s[i];
  a.output = std::move(out);
  return a;
}

struct LKParams {
  int window_radius = 2;
  int num_iterations = 3;
  double regularization = 1e-4;

  void validate() const {
    if (window_radius < 1) throw std::invalid_argument("LKParams: window must cover at least 3x3 pixels");
    if (num_iterations < 1) throw std::invalid_argument("LKParams: num_iterations must be >= 1");
    if (!(regularization > 0.0)) throw std::invalid_argument("LKParams: regularization must be > 0");
  }
};

/// Per-location (dy, dx) in latent pixels; sampling the previous frame at (h + dy, w + dx)
/// aligns it with the current frame.
struct DisplacementField {
  Grid vectors;  // H x W x 2
  double scale_used = 1.0;
  // Coarse-grid L1 mismatch after warping the previous input, over the mismatch before;
  // 1 when the inputs already agree.
  double fit_ratio = 1.0;

  std::size_t height() const { return vectors.height; }
  std::size_t width() const { return vectors.width; }
};

namespace detail {

// Central differences with edge replication; returns H x W x (2C) as (d/dy, d/dx) interleaved per channel.
inline Grid spatial_gradients(const Grid& g) {
  Grid out(g.height, g.width, 2 * g.channels);
  for (std::size_t h = 0; h < g.height; ++h) {
    const std::size_t hm = h > 0 ? h - 1 : 0;
    const std::size_t hp = std::min(h + 1, g.height - 1);
    for (std::size_t w = 0; w < g.width; ++w) {
      const std::size_t wm = w > 0 ? w - 1 : 0;
      const std::size_t wp = std::min(w + 1, g.width - 1);
      for (std::size_t c = 0; c < g.channels; ++c) {
        out(h, w, 2 * c) = 0.5 * (g(hp, w, c) - g(hm, w, c));
        out(h, w, 2 * c + 1) = 0.5 * (g(h, wp, c) - g(h, wm, c));
      }
    }
  }
  return out;
}

// Box sum over a (2r+1)^2 window, truncated at the borders; separable rows then columns.
inline Grid window_sum(const Grid& g, int radius) {
  const auto r = static_cast<std::ptrdiff_t>(radius);
  const auto H = static_cast<std::ptrdiff_t>(g.height);
  const auto W = static_cast<std::ptrdiff_t>(g.width);
  const std::size_t C = g.channels;
  Grid rows(g.height, g.width, C);
  for (std::ptrdiff_t h = 0; h < H; ++h)
    for (std::ptrdiff_t w = 0; w < W; ++w)
      for (std::ptrdiff_t x = std::max<std::ptrdiff_t>(0, w - r); x <= std::min(W - 1, w + r); ++x)
        for (std::size_t c = 0; c < C; ++c)
          rows(static_cast<std::size_t>(h), static_cast<std::size_t>(w), c) +=
              g(static_cast<std::size_t>(h), static_cast<std::size_t>(x), c);
  Grid out(g.height, g.width, C);
  for (std::ptrdiff_t h = 0; h < H; ++h)
    for (std::ptrdiff_t y = std::max<std::ptrdiff_t>(0, h - r); y <= std::min(H - 1, h + r); ++y)
      for (std::ptrdiff_t w = 0; w < W; ++w)
        for (std::size_t c = 0; c < C; ++c)
          out(static_cast<std::size_t>(h), static_cast<std::size_t>(w), c) +=
              rows(static_cast<std::size_t>(y), static_cast<std::size_t>(w), c);
  return out;
}

// Iterative Lucas-Kanade: u such that prev(x + u) ~ curr(x), channel-summed structure tensors.
inline Grid lucas_kanade(const Grid& curr, const Grid& prev, const LKParams& lk) {
  Grid flow(curr.height, curr.width, 2);
  const Grid base = identity_coords(curr.height, curr.width);
  for (int it = 0; it < lk.num_iterations; ++it) {
    Grid coords = base;
    for (std::size_t i = 0; i < coords.values.size(); ++i) coords.values[i] += flow.values[i];
    const Grid warped = bilinear_sample(prev, coords);
    const Grid grad = spatial_gradients(warped);

    // Per-pixel moments: Jyy, Jyx, Jxx, by, bx.
    Grid moments(curr.height, curr.width, 5);
    for (std::size_t h = 0; h < curr.height; ++h)
      for (std::size_t w = 0; w < curr.width; ++w)
        for (std::size_t c = 0; c < curr.channels; ++c) {
          const double gy = grad(h, w, 2 * c);
          const double gx = grad(h, w, 2 * c + 1);
          const double et = warped(h, w, c) - curr(h, w, c);
          moments(h, w, 0) += gy * gy;
          moments(h, w, 1) += gy * gx;
          moments(h, w, 2) += gx * gx;
          moments(h, w, 3) += gy * et;
          moments(h, w, 4) += gx * et;
        }
    const Grid sums = window_sum(moments, lk.window_radius);
    for (std::size_t h = 0; h < curr.height; ++h)
      for (std::size_t w = 0; w < curr.width; ++w) {
        const double a = sums(h, w, 0) + lk.regularization;
        const double b = sums(h, w, 1);
        const double d = sums(h, w, 2) + lk.regularization;
        const double ry = -sums(h, w, 3);
        const double rx = -sums(h, w, 4);
        const double det = a * d - b * b;
        flow(h, w, 0) += (d * ry - b * rx) / det;
        flow(h, w, 1) += (a * rx - b * ry) / det;
      }
  }
  return flow;
}

}  // namespace detail

/// Displacement from the current input back to the previous one, solved on an s_flow-scaled grid.
inline DisplacementField estimate_flow(const LatentTensor& z0_curr, const LatentTensor& z0_prev, double s_flow,
                                       const LKParams& lk = {}) {
  detail::require_same_shape(z0_curr, z0_prev, "estimate_flow");
  lk.validate();
  if (!(s_flow > 0.0 && s_flow <= 1.0)) throw std::invalid_argument("estimate_flow: s_flow must lie in (0, 1]");
  const auto& s = z0_curr.shape();
  const auto coarse = [&](std::size_t n) {
    return static_cast<std::size_t>(std::max(1.0, std::round(s_flow * static_cast<double>(n))));
  };
  const std::size_t ch = coarse(s.height);
  const std::size_t cw = coarse(s.width);
  if (ch < 3 || cw < 3) throw ShapeError("estimate_flow: coarse grid smaller than 3x3");

  const Grid curr = bilinear_resize(batch_frame_mean(z0_curr), ch, cw);
  const Grid prev = bilinear_resize(batch_frame_mean(z0_prev), ch, cw);
  const Grid coarse_flow = detail::lucas_kanade(curr, prev, lk);

  DisplacementField field{bilinear_resize(coarse_flow, s.height, s.width), s_flow};
  {
    Grid coords = identity_coords(ch, cw);
    for (std::size_t i = 0; i < coords.values.size(); ++i) coords.values[i] += coarse_flow.values[i];
    const Grid aligned = bilinear_sample(prev, coords);
    double before = 0.0, after = 0.0;
    for (std::size_t i = 0; i < curr.values.size(); ++i) {
      before += std::abs(prev.values[i] - curr.values[i]);
      after += std::abs(aligned.values[i] - curr.values[i]);
    }
    field.fit_ratio = before > 0.0 ? after / before : 1.0;
  }
  // Corner-aligned grids: one coarse pixel spans (n - 1) / (n' - 1) fine pixels, i.e. 1 / s_flow.
  const double gain_y = static_cast<double>(s.height - 1) / static_cast<double>(ch - 1);
  const double gain_x = static_cast<double>(s.width - 1) / static_cast<double>(cw - 1);
  const double bound = static_cast<double>(std::max(s.height, s.width));
  for (std::size_t i = 0; i < field.vectors.values.size(); i += 2) {
    field.vectors.values[i] = std::clamp(field.vectors.values[i] * gain_y, -bound, bound);
    field.vectors.values[i + 1] = std::clamp(field.vectors.values[i + 1] * gain_x, -bound, bound);
  }
  return field;
}

/// Resamples every (batch, frame, channel) slice at (h + dy, w + dx) with edge clamping.
inline LatentTensor warp_features(const LatentTensor& z, const DisplacementField& flow) {
  const auto& s = z.shape();
  if (flow.height() != s.height || flow.width() != s.width)
    throw ShapeError("warp_features: displacement field does not match latent spatial extent");
  LatentTensor out(s);
  for (std::size_t h = 0; h < s.height; ++h)
    for (std::size_t w = 0; w < s.width; ++w) {
      const double cy = static_cast<double>(h) + flow.vectors(h, w, 0);
      const double cx = static_cast<double>(w) + flow.vectors(h, w, 1);
      if (!std::isfinite(cy) || !std::isfinite(cx)) throw NonFiniteError("warp_features: non-finite displacement");
      const auto ty = detail::lerp_tap(cy, s.height);
      const auto tx = detail::lerp_tap(cx, s.width);
      for (std::size_t b = 0; b < s.batch; ++b)
        for (std::size_t t = 0; t < s.frames; ++t)
          for (std::size_t d = 0; d < s.channels; ++d) {
            const double top = std::lerp(z.at(b, t, ty.i0, tx.i0, d), z.at(b, t, ty.i0, tx.i1, d), tx.frac);
            const double bottom = std::lerp(z.at(b, t, ty.i1, tx.i0, d), z.at(b, t, ty.i1, tx.i1, d), tx.frac);
            out.at(b, t, h, w, d) = std::lerp(top, bottom, ty.frac);
          }
    }
  return out;
}

/// Residual of a cached slot transported into the current frame: Warp(zN) - Warp(z0).
inline LatentTensor corrected_residual(const CacheSlot& slot, const DisplacementField& flow) {
  return warp_features(slot.residual, flow);
}

inline bool warp_gate(int t, const PolicyConfig& cfg) { return cfg.warp_enabled && t >= cfg.warp_disable_before; }

}  // namespace worldcache
