// SPDX-License-Identifier: Apache-2.0
//
// Dense latent tensors and the handful of reductions, maps and bilinear
// kernels the caching pipeline is built from.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace worldcache {

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NonFiniteError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Extents of a latent video tensor laid out as (batch, frames, height, width, channels).
struct TensorShape {
  std::size_t batch = 1;
  std::size_t frames = 1;
  std::size_t height = 1;
  std::size_t width = 1;
  std::size_t channels = 1;

  constexpr std::size_t spatial() const { return height * width; }

  std::size_t count() const {
    std::size_t n = 1;
    for (std::size_t e : {batch, frames, height, width, channels}) {
      if (e == 0) throw ShapeError("tensor extents must be >= 1");
      if (n > std::numeric_limits<std::size_t>::max() / e) throw ShapeError("tensor element count overflows");
      n *= e;
    }
    return n;
  }

  friend bool operator==(const TensorShape&, const TensorShape&) = default;

  std::string str() const {
    return "(" + std::to_string(batch) + "," + std::to_string(frames) + "," + std::to_string(height) + "," +
           std::to_string(width) + "," + std::to_string(channels) + ")";
  }
};

class LatentTensor {
 public:
  LatentTensor() = default;

  explicit LatentTensor(TensorShape shape, double fill = 0.0) : shape_(shape), data_(shape.count(), fill) {
    if (!std::isfinite(fill)) throw NonFiniteError("tensor fill value is not finite");
  }

  LatentTensor(TensorShape shape, std::vector<double> data) : shape_(shape), data_(std::move(data)) {
    if (data_.size() != shape_.count()) throw ShapeError("data length does not match shape " + shape_.str());
    check_finite();
  }

  const TensorShape& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }

  std::size_t index(std::size_t b, std::size_t t, std::size_t h, std::size_t w, std::size_t d) const {
    return (((b * shape_.frames + t) * shape_.height + h) * shape_.width + w) * shape_.channels + d;
  }

  double& at(std::size_t b, std::size_t t, std::size_t h, std::size_t w, std::size_t d) {
    return data_[index(b, t, h, w, d)];
  }
  double at(std::size_t b, std::size_t t, std::size_t h, std::size_t w, std::size_t d) const {
    return data_[index(b, t, h, w, d)];
  }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  void check_finite() const {
    for (double v : data_)
      if (!std::isfinite(v)) throw NonFiniteError("tensor contains a non-finite value");
  }

  friend bool operator==(const LatentTensor&, const LatentTensor&) = default;

 private:
  TensorShape shape_{};
  std::vector<double> data_;
};

/// Row-major H x W x C grid; C = 1 for scalar maps, C = 2 for displacement fields.
struct Grid {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 1;
  std::vector<double> values;

  Grid() = default;
  Grid(std::size_t h, std::size_t w, std::size_t c = 1, double fill = 0.0)
      : height(h), width(w), channels(c), values(h * w * c, fill) {}

  double& operator()(std::size_t h, std::size_t w, std::size_t c = 0) { return values[(h * width + w) * channels + c]; }
  double operator()(std::size_t h, std::size_t w, std::size_t c = 0) const {
    return values[(h * width + w) * channels + c];
  }

  friend bool operator==(const Grid&, const Grid&) = default;
};

namespace detail {

inline void require_same_shape(const LatentTensor& x, const LatentTensor& y, const char* what) {
  if (x.shape() != y.shape())
    throw ShapeError(std::string(what) + ": shape mismatch " + x.shape().str() + " vs " + y.shape().str());
}

}  // namespace detail

inline double l1_norm(const LatentTensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += std::abs(v);
  return s;
}

inline double squared_norm(const LatentTensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v * v;
  return s;
}

inline LatentTensor subtract(const LatentTensor& x, const LatentTensor& y) {
  detail::require_same_shape(x, y, "subtract");
  LatentTensor out(x.shape());
  auto o = out.data();
  auto a = x.data();
  auto b = y.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = a[i] - b[i];
  return out;
}

inline LatentTensor add(const LatentTensor& x, const LatentTensor& y) {
  detail::require_same_shape(x, y, "add");
  LatentTensor out(x.shape());
  auto o = out.data();
  auto a = x.data();
  auto b = y.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = a[i] + b[i];
  return out;
}

/// x + scale * y
inline LatentTensor axpy(const LatentTensor& x, double scale, const LatentTensor& y) {
  detail::require_same_shape(x, y, "axpy");
  LatentTensor out(x.shape());
  auto o = out.data();
  auto a = x.data();
  auto b = y.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = a[i] + scale * b[i];
  return out;
}

inline LatentTensor scaled(const LatentTensor& x, double scale) {
  LatentTensor out(x.shape());
  auto o = out.data();
  auto a = x.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = scale * a[i];
  return out;
}

inline double inner_product(const LatentTensor& x, const LatentTensor& y) {
  detail::require_same_shape(x, y, "inner_product");
  auto a = x.data();
  auto b = y.data();
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

/// ||x - y||_1 / ||y||_1, the relative L1 error used for reporting.
inline double relative_l1(const LatentTensor& x, const LatentTensor& reference) {
  double den = l1_norm(reference);
  double num = l1_norm(subtract(x, reference));
  return den > 0.0 ? num / den : num;
}

/// Per-(h, w) L1 norm over batch, frame and channel axes.
inline Grid per_location_l1(const LatentTensor& x) {
  const auto& s = x.shape();
  Grid out(s.height, s.width);
  for (std::size_t b = 0; b < s.batch; ++b)
    for (std::size_t t = 0; t < s.frames; ++t)
      for (std::size_t h = 0; h < s.height; ++h)
        for (std::size_t w = 0; w < s.width; ++w) {
          double acc = 0.0;
          for (std::size_t d = 0; d < s.channels; ++d) acc += std::abs(x.at(b, t, h, w, d));
          out(h, w) += acc;
        }
  return out;
}

/// Mean over batch and frame axes: H x W x D.
inline Grid batch_frame_mean(const LatentTensor& x) {
  const auto& s = x.shape();
  Grid out(s.height, s.width, s.channels);
  for (std::size_t b = 0; b < s.batch; ++b)
    for (std::size_t t = 0; t < s.frames; ++t)
      for (std::size_t h = 0; h < s.height; ++h)
        for (std::size_t w = 0; w < s.width; ++w)
          for (std::size_t d = 0; d < s.channels; ++d) out(h, w, d) += x.at(b, t, h, w, d);
  const double inv = 1.0 / static_cast<double>(s.batch * s.frames);
  for (double& v : out.values) v *= inv;
  return out;
}

/// Population variance over channels of the batch/frame-averaged tensor, per (h, w).
inline Grid channel_variance_map(const LatentTensor& x) {
  Grid mean = batch_frame_mean(x);
  const std::size_t d_count = mean.channels;
  Grid out(mean.height, mean.width);
  for (std::size_t h = 0; h < mean.height; ++h)
    for (std::size_t w = 0; w < mean.width; ++w) {
      double mu = 0.0;
      for (std::size_t d = 0; d < d_count; ++d) mu += mean(h, w, d);
      mu /= static_cast<double>(d_count);
      double var = 0.0;
      for (std::size_t d = 0; d < d_count; ++d) {
        double e = mean(h, w, d) - mu;
        var += e * e;
      }
      out(h, w) = var / static_cast<double>(d_count);
    }
  return out;
}

/// Affine rescale to [0, 1]. A constant map has no salient structure and becomes all zeros.
inline Grid minmax_normalize(const Grid& m) {
  Grid out = m;
  if (m.values.empty()) return out;
  auto [lo_it, hi_it] = std::minmax_element(m.values.begin(), m.values.end());
  const double lo = *lo_it;
  const double hi = *hi_it;
  if (!(hi > lo)) {
    std::fill(out.values.begin(), out.values.end(), 0.0);
    return out;
  }
  const double range = hi - lo;
  for (double& v : out.values) v = std::clamp((v - lo) / range, 0.0, 1.0);
  return out;
}

namespace detail {

struct LerpTap {
  std::size_t i0;
  std::size_t i1;
  double frac;
};

// Edge-clamped neighbour pair for a continuous coordinate on [0, n - 1].
inline LerpTap lerp_tap(double coord, std::size_t n) {
  const double hi = static_cast<double>(n - 1);
  const double c = std::clamp(coord, 0.0, hi);
  const double f = std::floor(c);
  const auto i0 = static_cast<std::size_t>(f);
  const std::size_t i1 = std::min(i0 + 1, n - 1);
  return {i0, i1, c - f};
}

inline double sample_channel(const Grid& x, const LerpTap& ty, const LerpTap& tx, std::size_t c) {
  const double top = std::lerp(x(ty.i0, tx.i0, c), x(ty.i0, tx.i1, c), tx.frac);
  const double bottom = std::lerp(x(ty.i1, tx.i0, c), x(ty.i1, tx.i1, c), tx.frac);
  return std::lerp(top, bottom, ty.frac);
}

}  // namespace detail

/// Corner-aligned bilinear resize: output pixel i maps to source i * (n - 1) / (n' - 1).
inline Grid bilinear_resize(const Grid& x, std::size_t out_h, std::size_t out_w) {
  if (out_h == 0 || out_w == 0) throw ShapeError("bilinear_resize: target extents must be >= 1");
  if (x.height == 0 || x.width == 0) throw ShapeError("bilinear_resize: empty source grid");
  Grid out(out_h, out_w, x.channels);
  const double sy = out_h > 1 ? static_cast<double>(x.height - 1) / static_cast<double>(out_h - 1) : 0.0;
  const double sx = out_w > 1 ? static_cast<double>(x.width - 1) / static_cast<double>(out_w - 1) : 0.0;
  for (std::size_t h = 0; h < out_h; ++h) {
    const auto ty = detail::lerp_tap(static_cast<double>(h) * sy, x.height);
    for (std::size_t w = 0; w < out_w; ++w) {
      const auto tx = detail::lerp_tap(static_cast<double>(w) * sx, x.width);
      for (std::size_t c = 0; c < x.channels; ++c) out(h, w, c) = detail::sample_channel(x, ty, tx, c);
    }
  }
  return out;
}

/// Samples `x` at absolute (y, x) coordinates stored in a two-channel grid, clamping to the edge.
inline Grid bilinear_sample(const Grid& x, const Grid& coords) {
  if (coords.channels != 2) throw ShapeError("bilinear_sample: coordinate grid must have two channels");
  if (x.height == 0 || x.width == 0) throw ShapeError("bilinear_sample: empty source grid");
  Grid out(coords.height, coords.width, x.channels);
  for (std::size_t h = 0; h < coords.height; ++h)
    for (std::size_t w = 0; w < coords.width; ++w) {
      const double cy = coords(h, w, 0);
      const double cx = coords(h, w, 1);
      if (!std::isfinite(cy) || !std::isfinite(cx)) throw NonFiniteError("bilinear_sample: non-finite coordinate");
      const auto ty = detail::lerp_tap(cy, x.height);
      const auto tx = detail::lerp_tap(cx, x.width);
      for (std::size_t c = 0; c < x.channels; ++c) out(h, w, c) = detail::sample_channel(x, ty, tx, c);
    }
  return out;
}

/// Coordinates of every pixel of an h x w grid, (y, x) order.
inline Grid identity_coords(std::size_t h, std::size_t w) {
  Grid g(h, w, 2);
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j) {
      g(i, j, 0) = static_cast<double>(i);
      g(i, j, 1) = static_cast<double>(j);
    }
  return g;
}

}  // namespace worldcache
