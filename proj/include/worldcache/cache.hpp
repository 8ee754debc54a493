// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <utility>

#include "worldcache/tensor.hpp"

namespace worldcache {

/// Taps of one fully-computed step.
struct CacheSlot {
  int step = 0;
  LatentTensor z0;        // raw input
  LatentTensor zk;        // probe output
  LatentTensor zN;        // deep output
  LatentTensor residual;  // zN - z0
};

class CacheOrderError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Two-slot ping-pong store of the two most recent full-compute steps, ordered by recency.
class ResidualCache {
 public:
  void record_full_step(int step, LatentTensor z0, LatentTensor zk, LatentTensor zN) {
    if (newer_ && step <= newer_->step)
      throw CacheOrderError("record_full_step: step " + std::to_string(step) + " is not after stored step " +
                            std::to_string(newer_->step));
    LatentTensor residual = subtract(zN, z0);
    older_ = std::move(newer_);
    newer_ = CacheSlot{step, std::move(z0), std::move(zk), std::move(zN), std::move(residual)};
  }

  bool ready() const { return newer_.has_value() && older_.has_value(); }

  const std::optional<CacheSlot>& newer() const { return newer_; }
  const std::optional<CacheSlot>& older() const { return older_; }

  /// Raw input of the second most recent full-compute step.
  const LatentTensor* velocity_anchor() const { return older_ ? &older_->z0 : nullptr; }

  void clear() {
    newer_.reset();
    older_.reset();
  }

 private:
  std::optional<CacheSlot> newer_;
  std::optional<CacheSlot> older_;
};

}  // namespace worldcache
