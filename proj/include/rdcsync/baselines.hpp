#pragma once

#include <algorithm>
#include <span>
#include <string>
#include <string_view>

#include "rdcsync/estimators.hpp"
#include "rdcsync/rng.hpp"
#include "rdcsync/types.hpp"

namespace rdcsync {

enum class ProtocolKind { none, ftsp, fcsa_lite, pulsesync, rmts, rdc_rmts };
enum class Flooding { slow, rapid };
enum class OffsetRule { theta1, theta2, theta3, adaptive };
enum class SkewRule { lr, mle };

inline std::string_view to_string(ProtocolKind k) {
  switch (k) {
    case ProtocolKind::none: return "none";
    case ProtocolKind::ftsp: return "ftsp";
    case ProtocolKind::fcsa_lite: return "fcsa_lite";
    case ProtocolKind::pulsesync: return "pulsesync";
    case ProtocolKind::rmts: return "rmts";
    case ProtocolKind::rdc_rmts: return "rdc_rmts";
  }
  return "?";
}

inline ProtocolKind protocol_from_string(std::string_view s) {
  for (auto k : {ProtocolKind::none, ProtocolKind::ftsp, ProtocolKind::fcsa_lite, ProtocolKind::pulsesync,
                 ProtocolKind::rmts, ProtocolKind::rdc_rmts})
    if (to_string(k) == s) return k;
  throw InvalidArgument("unknown protocol '" + std::string(s) + "'");
}

/// How a protocol floods, removes delay from offsets, and estimates skew.
struct BaselineConfig {
  Flooding flooding = Flooding::rapid;
  OffsetRule offset_rule = OffsetRule::adaptive;
  SkewRule skew_rule = SkewRule::mle;
  double d_fixed_prior_us = 3.0;
  // Regress the father's hardware clock and compose with its forwarded rate,
  // instead of regressing its logical clock.
  bool shared_rate = false;

  bool operator==(const BaselineConfig&) const = default;
};

/// Comparison matrix:
///   FTSP      slow  theta1 LR
///   FCSA      slow  theta2 LR (shared rate)
///   PulseSync rapid theta2 LR
///   RMTS      rapid theta3 MLE
/// RDC-RMTS is rapid with the adaptive two-way estimate and MLE skew.
inline BaselineConfig baseline_config(ProtocolKind kind, double d_fixed_prior_us = 3.0) {
  switch (kind) {
    case ProtocolKind::ftsp: return {Flooding::slow, OffsetRule::theta1, SkewRule::lr, d_fixed_prior_us};
    case ProtocolKind::fcsa_lite: return {Flooding::slow, OffsetRule::theta2, SkewRule::lr, d_fixed_prior_us, true};
    case ProtocolKind::pulsesync: return {Flooding::rapid, OffsetRule::theta2, SkewRule::lr, d_fixed_prior_us};
    case ProtocolKind::rmts: return {Flooding::rapid, OffsetRule::theta3, SkewRule::mle, d_fixed_prior_us};
    case ProtocolKind::rdc_rmts:
    case ProtocolKind::none: return {Flooding::rapid, OffsetRule::adaptive, SkewRule::mle, d_fixed_prior_us};
  }
  return {};
}

// The one-way offsets below are receiver minus sender, so a receiver running
// ahead by theta behind a link of delay D observes theta + D.

inline double offset_theta1(Tick sender_ts, Tick receiver_ts) {
  return static_cast<double>(receiver_ts - sender_ts);
}

inline double offset_theta2(Tick sender_ts, Tick receiver_ts, double d_fixed_prior_us) {
  return offset_theta1(sender_ts, receiver_ts) - d_fixed_prior_us;
}

/// samples are theta1 values of one multi-broadcast burst.
inline double offset_theta3(std::span<const double> samples, double d_fixed_prior_us) {
  if (samples.empty()) throw InsufficientData("offset_theta3: no samples");
  return stats::min(samples) - d_fixed_prior_us;
}

/// First broadcast instant at or after `now` for a node broadcasting every
/// `period` with phase `phase` (0 <= phase < period).
inline SimTime slow_flood_schedule(SimTime phase, SimTime period, SimTime now) {
  if (period <= 0) throw InvalidArgument("period must be positive");
  if (now <= phase) return phase;
  const SimTime k = (now - phase + period - 1) / period;
  return phase + k * period;
}

inline SimTime slow_flood_phase(RngStream& rng, SimTime period) { return rng.uniform_int(0, period - 1); }

/// Per-hop flooding latency ranges.
struct LatencyRange {
  SimTime lo = 10'000;
  SimTime hi = 50'000;
};
inline constexpr LatencyRange kRapidLatency{10'000, 50'000};
inline constexpr LatencyRange kSlowLatency{10'000, 30'000'000};

inline SimTime draw_latency(RngStream& rng, LatencyRange r) { return rng.uniform_int(r.lo, r.hi); }

}  // namespace rdcsync
