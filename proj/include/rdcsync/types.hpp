#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>

namespace rdcsync {

/// True simulation time in integer microseconds since simulation start.
using SimTime = std::int64_t;

/// A clock reading in integer ticks (1 tick = 1 nominal microsecond).
using Tick = std::int64_t;

using NodeId = std::uint32_t;

inline constexpr NodeId kNoNode = std::numeric_limits<NodeId>::max();
inline constexpr SimTime kMicrosPerSecond = 1'000'000;

constexpr SimTime seconds(double s) { return static_cast<SimTime>(s * 1e6 + (s >= 0 ? 0.5 : -0.5)); }
constexpr double to_seconds(SimTime t) { return static_cast<double>(t) / 1e6; }

// Every real-to-tick conversion in the library goes through this. Ties round
// away from zero: 2.5 -> 3, -2.5 -> -3.
inline std::int64_t round_half_away(double x) { return static_cast<std::int64_t>(std::llround(x)); }

// Exact integer division with the same tie rule; den must be positive.
inline __int128 div_round_half_away(__int128 num, __int128 den) {
  __int128 q = num / den;
  __int128 r = num % den;
  if (r < 0) r = -r;
  if (2 * r >= den) q += (num >= 0 ? 1 : -1);
  return q;
}

class InsufficientData : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

}  // namespace rdcsync
