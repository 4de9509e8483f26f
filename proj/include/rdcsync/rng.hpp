#pragma once

#include <cstdint>
#include <random>

namespace rdcsync {

/// Purposes for per-node substreams. Adding a purpose must not renumber the
/// existing ones, or old seeds stop reproducing old traces.
enum class StreamPurpose : std::uint32_t {
  oscillator = 1,
  link_delay = 2,
  link_loss = 3,
  latency = 4,
  boot = 5,
  probe_jitter = 6,
  topology = 7,
  burst_spacing = 8,
  schedule = 9,
};

/// A deterministic random substream keyed by (seed, stream id).
class RngStream {
 public:
  RngStream(std::uint64_t seed, std::uint64_t stream_id) : seed_(seed), stream_id_(stream_id) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(stream_id),
                      static_cast<std::uint32_t>(stream_id >> 32), 0x5eed5eedu};
    engine_.seed(seq);
  }

  static std::uint64_t stream_for(std::uint32_t node, StreamPurpose purpose, std::uint32_t extra = 0) {
    return (static_cast<std::uint64_t>(node) << 32) ^ (static_cast<std::uint64_t>(purpose) << 24) ^ extra;
  }

  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(engine_); }
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
    return std::uniform_int_distribution<std::int64_t>(lo, hi)(engine_);
  }
  double normal(double mean, double sd) {
    if (sd <= 0.0) return mean;
    return std::normal_distribution<double>(mean, sd)(engine_);
  }
  bool bernoulli(double p) {
    if (p <= 0.0) return false;
    if (p >= 1.0) return true;
    return std::bernoulli_distribution(p)(engine_);
  }

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream_id() const { return stream_id_; }
  std::mt19937_64& engine() { return engine_; }

 private:
  std::uint64_t seed_;
  std::uint64_t stream_id_;
  std::mt19937_64 engine_;
};

}  // namespace rdcsync
