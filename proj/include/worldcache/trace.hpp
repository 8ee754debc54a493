// SPDX-License-Identifier: Apache-2.0
//
// WCTR trace files: recorded per-step taps (raw input, probe output, deep
// output) for offline replay of cache decisions.
//
// Layout, all integers little-endian:
//   "WCTR" | u16 version = 1 | u32 B, T_f, H, W, D | u32 total_steps |
//   u8 taps_present (bit0 z0, bit1 zk, bit2 zN) | u64 seed
//   then total_steps records of: u32 step | present taps as f32, row-major.

#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "worldcache/engine.hpp"
#include "worldcache/tensor.hpp"

namespace worldcache {

enum TapBits : std::uint8_t { kTapInput = 1u << 0, kTapProbe = 1u << 1, kTapDeep = 1u << 2 };

inline constexpr std::array<char, 4> kTraceMagic{'W', 'C', 'T', 'R'};
inline constexpr std::uint16_t kTraceVersion = 1;
inline constexpr std::size_t kTraceHeaderBytes = 4 + 2 + 5 * 4 + 4 + 1 + 8;

struct TraceHeader {
  std::uint16_t version = kTraceVersion;
  TensorShape shape;
  std::uint32_t total_steps = 0;
  std::uint8_t taps_present = kTapInput | kTapProbe | kTapDeep;
  std::uint64_t seed = 0;

  int tap_count() const { return std::popcount(static_cast<unsigned>(taps_present & 0x7u)); }
  std::size_t step_bytes() const { return 4 + static_cast<std::size_t>(tap_count()) * shape.count() * 4; }
  std::size_t file_bytes() const { return kTraceHeaderBytes + total_steps * step_bytes(); }

  friend bool operator==(const TraceHeader&, const TraceHeader&) = default;
};

struct TraceStep {
  std::uint32_t step = 0;
  std::optional<LatentTensor> z0;
  std::optional<LatentTensor> zk;
  std::optional<LatentTensor> zN;
};

struct Trace {
  TraceHeader header;
  std::vector<TraceStep> steps;
};

class TraceError : public std::runtime_error {
 public:
  enum class Kind { io, format, payload_size, inconsistent, missing_tap };
  TraceError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

namespace detail {

template <class T>
void put_le(std::vector<unsigned char>& buf, T v) {
  using U = std::make_unsigned_t<T>;
  auto u = static_cast<U>(v);
  for (std::size_t i = 0; i < sizeof(T); ++i) buf.push_back(static_cast<unsigned char>((u >> (8 * i)) & 0xffu));
}

template <class T>
T get_le(const unsigned char* p) {
  std::make_unsigned_t<T> u = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) u |= static_cast<std::make_unsigned_t<T>>(p[i]) << (8 * i);
  return static_cast<T>(u);
}

inline void put_tensor(std::vector<unsigned char>& buf, const LatentTensor& x) {
  for (double v : x.data()) put_le<std::uint32_t>(buf, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
}

inline LatentTensor get_tensor(const unsigned char* p, const TensorShape& shape) {
  std::vector<double> data(shape.count());
  for (std::size_t i = 0; i < data.size(); ++i)
    data[i] = static_cast<double>(std::bit_cast<float>(get_le<std::uint32_t>(p + 4 * i)));
  try {
    return LatentTensor(shape, std::move(data));
  } catch (const NonFiniteError&) {
    throw TraceError(TraceError::Kind::format, "trace contains non-finite values");
  }
}

}  // namespace detail

inline std::vector<unsigned char> encode_trace(const Trace& trace) {
  const TraceHeader& h = trace.header;
  if (trace.steps.size() != h.total_steps)
    throw TraceError(TraceError::Kind::inconsistent, "step count does not match header total_steps");
  std::vector<unsigned char> buf;
  buf.reserve(h.file_bytes());
  buf.insert(buf.end(), kTraceMagic.begin(), kTraceMagic.end());
  detail::put_le<std::uint16_t>(buf, h.version);
  for (std::size_t e : {h.shape.batch, h.shape.frames, h.shape.height, h.shape.width, h.shape.channels})
    detail::put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(e));
  detail::put_le<std::uint32_t>(buf, h.total_steps);
  detail::put_le<std::uint8_t>(buf, h.taps_present);
  detail::put_le<std::uint64_t>(buf, h.seed);
  for (const TraceStep& s : trace.steps) {
    detail::put_le<std::uint32_t>(buf, s.step);
    const std::array<std::pair<std::uint8_t, const std::optional<LatentTensor>*>, 3> taps{
        {{kTapInput, &s.z0}, {kTapProbe, &s.zk}, {kTapDeep, &s.zN}}};
    for (auto [bit, tap] : taps) {
      if (!(h.taps_present & bit)) continue;
      if (!*tap || (*tap)->shape() != h.shape)
        throw TraceError(TraceError::Kind::inconsistent,
                         "step " + std::to_string(s.step) + " is missing a declared tap or has the wrong shape");
      detail::put_tensor(buf, **tap);
    }
  }
  return buf;
}

inline Trace decode_trace(std::span<const unsigned char> bytes) {
  if (bytes.size() < kTraceHeaderBytes)
    throw TraceError(TraceError::Kind::format, "file too short for a WCTR header");
  if (std::memcmp(bytes.data(), kTraceMagic.data(), 4) != 0)
    throw TraceError(TraceError::Kind::format, "bad magic: not a WCTR trace");
  const unsigned char* p = bytes.data() + 4;
  Trace tr;
  TraceHeader& h = tr.header;
  h.version = detail::get_le<std::uint16_t>(p);
  p += 2;
  if (h.version != kTraceVersion)
    throw TraceError(TraceError::Kind::format, "unsupported WCTR version " + std::to_string(h.version));
  std::array<std::uint32_t, 5> ext{};
  for (auto& e : ext) {
    e = detail::get_le<std::uint32_t>(p);
    p += 4;
  }
  h.shape = {ext[0], ext[1], ext[2], ext[3], ext[4]};
  h.total_steps = detail::get_le<std::uint32_t>(p);
  p += 4;
  h.taps_present = *p++;
  h.seed = detail::get_le<std::uint64_t>(p);
  p += 8;
  if (h.taps_present & ~0x7u) throw TraceError(TraceError::Kind::format, "unknown tap bits in header");
  try {
    (void)h.shape.count();
  } catch (const ShapeError& e) {
    throw TraceError(TraceError::Kind::format, std::string("invalid shape: ") + e.what());
  }
  if (bytes.size() != h.file_bytes())
    throw TraceError(TraceError::Kind::payload_size, "payload size mismatch: header declares " +
                                                         std::to_string(h.file_bytes()) + " bytes, file has " +
                                                         std::to_string(bytes.size()));
  const std::size_t tensor_bytes = h.shape.count() * 4;
  tr.steps.reserve(h.total_steps);
  for (std::uint32_t i = 0; i < h.total_steps; ++i) {
    TraceStep s;
    s.step = detail::get_le<std::uint32_t>(p);
    p += 4;
    if (h.taps_present & kTapInput) {
      s.z0 = detail::get_tensor(p, h.shape);
      p += tensor_bytes;
    }
    if (h.taps_present & kTapProbe) {
      s.zk = detail::get_tensor(p, h.shape);
      p += tensor_bytes;
    }
    if (h.taps_present & kTapDeep) {
      s.zN = detail::get_tensor(p, h.shape);
      p += tensor_bytes;
    }
    tr.steps.push_back(std::move(s));
  }
  return tr;
}

inline void write_trace(const std::filesystem::path& path, const Trace& trace) {
  const auto bytes = encode_trace(trace);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw TraceError(TraceError::Kind::io, "cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw TraceError(TraceError::Kind::io, "failed writing " + path.string());
}

inline Trace read_trace(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw TraceError(TraceError::Kind::io, "cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_trace(bytes);
}

/// Serves recorded taps as if they were a live denoiser. Costs are abstract units.
class TraceDenoiser {
 public:
  TraceDenoiser(const Trace& trace, double probe_cost, double deep_cost)
      : trace_(&trace), probe_cost_(probe_cost), deep_cost_(deep_cost) {}

  TensorShape latent_shape() const { return trace_->header.shape; }
  double probe_cost() const { return probe_cost_; }
  double deep_cost() const { return deep_cost_; }

  LatentTensor probe_forward(const LatentTensor&, int t) const { return *at(t).zk; }

  /// Recorded deep output; without a deep tap the probe stands in, which keeps decisions exact
  /// but makes approximations meaningless.
  LatentTensor deep_forward(const LatentTensor& zk, int t) const {
    const auto& s = at(t);
    return s.zN ? *s.zN : zk;
  }

 private:
  const TraceStep& at(int t) const { return trace_->steps.at(static_cast<std::size_t>(t)); }

  const Trace* trace_;
  double probe_cost_;
  double deep_cost_;
};

/// Decisions and (when deep outputs were recorded) per-hit approximation errors computed from
/// fixed recorded inputs. The report is always flagged open-loop.
inline RunReport replay_decisions(const Trace& trace, EngineConfig cfg, double probe_cost = 1.0,
                                  double deep_cost = 7.0) {
  const TraceHeader& h = trace.header;
  if (!(h.taps_present & kTapInput) || !(h.taps_present & kTapProbe))
    throw TraceError(TraceError::Kind::missing_tap, "replay needs recorded z0 and zk taps");
  const bool has_deep = (h.taps_present & kTapDeep) != 0;
  cfg.policy.total_steps = static_cast<int>(h.total_steps);
  cfg.oracle = has_deep;
  std::vector<LatentTensor> inputs;
  inputs.reserve(trace.steps.size());
  for (std::size_t i = 0; i < trace.steps.size(); ++i) {
    if (trace.steps[i].step != i)
      throw TraceError(TraceError::Kind::inconsistent, "trace steps are not numbered 0..T-1");
    inputs.push_back(*trace.steps[i].z0);
  }
  TraceDenoiser den(trace, probe_cost, deep_cost);
  const LatentTensor* final_ref = has_deep ? &*trace.steps.back().zN : nullptr;
  RunReport r = run_trajectory(den, std::span<const LatentTensor>(inputs), cfg, final_ref);
  if (!has_deep)
    for (auto& s : r.steps) s.oracle_error.reset();
  return r;
}

/// Trace with all three taps from an oracle run.
template <class Oracle>
Trace make_trace(const Oracle& run, const TensorShape& shape, std::uint64_t seed) {
  Trace tr;
  tr.header.shape = shape;
  tr.header.total_steps = static_cast<std::uint32_t>(run.inputs.size());
  tr.header.seed = seed;
  for (std::size_t t = 0; t < run.inputs.size(); ++t)
    tr.steps.push_back({static_cast<std::uint32_t>(t), run.inputs[t], run.probes[t], run.deep_outputs[t]});
  return tr;
}

/// Rounds every value through 32-bit float, matching what a trace round trip stores.
inline LatentTensor to_f32_precision(const LatentTensor& x) {
  LatentTensor y = x;
  for (double& v : y.data()) v = static_cast<double>(static_cast<float>(v));
  return y;
}

}  // namespace worldcache
