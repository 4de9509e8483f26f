#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>

#include "rdcsync/rng.hpp"
#include "rdcsync/types.hpp"

namespace rdcsync {

enum class DriftMode { constant, bounded_random_walk };

/// Frequency error of a node's oscillator.
struct OscillatorModel {
  double rate_ppm = 0.0;            // h - 1, in parts per million
  Tick initial_offset_us = 0;       // hardware reading at true time 0
  DriftMode drift_mode = DriftMode::constant;
  double walk_step_ppm_per_period = 0.0;  // sd of the Gaussian step
  double rate_bound_ppm = 100.0;
  SimTime walk_interval = 30 * kMicrosPerSecond;

  void validate() const {
    if (rate_bound_ppm < 0.0) throw InvalidArgument("rate_bound_ppm must be non-negative");
    if (std::abs(rate_ppm) > rate_bound_ppm) throw InvalidArgument("|rate_ppm| exceeds rate_bound_ppm");
    if (walk_step_ppm_per_period < 0.0) throw InvalidArgument("walk step must be non-negative");
    if (drift_mode == DriftMode::bounded_random_walk && walk_interval <= 0)
      throw InvalidArgument("walk interval must be positive");
  }
};

struct HardwareClockState {
  SimTime anchor_true = 0;
  Tick anchor_ticks = 0;
};

namespace detail {
inline constexpr __int128 kPico = 1'000'000'000'000;  // 1e12 sub-tick units per tick

inline std::int64_t rate_to_ppt(double rate_ppm) { return std::llround(rate_ppm * 1e6); }
}  // namespace detail

/// Closed-form hardware reading: anchor_ticks + round((now - anchor) * (1 + rate/1e6)).
/// The rate is carried with 1e-6 PPM resolution and the product is exact.
inline Tick hw_read(const OscillatorModel& osc, const HardwareClockState& hw, SimTime now) {
  if (now < hw.anchor_true) throw InvalidArgument("hw_read before anchor");
  const __int128 elapsed = now - hw.anchor_true;
  const __int128 scaled = elapsed * (detail::kPico + detail::rate_to_ppt(osc.rate_ppm));
  return hw.anchor_ticks + static_cast<Tick>(div_round_half_away(scaled, detail::kPico));
}

/// Free-running hardware clock of one node. Keeps the sub-tick phase across
/// rate changes so long runs do not lose fractional ticks.
class HardwareClock {
 public:
  HardwareClock() = default;
  HardwareClock(OscillatorModel osc, std::optional<RngStream> walk_rng = std::nullopt)
      : osc_(osc), walk_rng_(std::move(walk_rng)) {
    osc_.validate();
    cur_ = Segment{0, static_cast<__int128>(osc_.initial_offset_us) * detail::kPico,
                   detail::rate_to_ppt(osc_.rate_ppm)};
    prev_ = cur_;
    next_boundary_ = osc_.drift_mode == DriftMode::bounded_random_walk ? osc_.walk_interval : -1;
  }

  const OscillatorModel& oscillator() const { return osc_; }

  /// Reading at true time `now`. Reads may lag the newest read by less than
  /// one walk interval (burst timestamps are taken slightly ahead).
  Tick read(SimTime now) {
    advance(now);
    const Segment& s = now >= cur_.start ? cur_ : prev_;
    if (now < s.start) throw InvalidArgument("hardware clock read too far in the past");
    return static_cast<Tick>(div_round_half_away(s.value_at(now), detail::kPico));
  }

  double current_rate_ppm(SimTime now) {
    advance(now);
    return static_cast<double>(cur_.rate_ppt) / 1e6;
  }

 private:
  struct Segment {
    SimTime start = 0;
    __int128 start_pticks = 0;
    std::int64_t rate_ppt = 0;
    __int128 value_at(SimTime t) const {
      return start_pticks + static_cast<__int128>(t - start) * (detail::kPico + rate_ppt);
    }
  };

  void advance(SimTime now) {
    while (next_boundary_ > 0 && now >= next_boundary_) {
      const double sd = osc_.walk_step_ppm_per_period;
      double rate = osc_.rate_ppm + (walk_rng_ ? walk_rng_->normal(0.0, sd) : 0.0);
      const double bound = osc_.rate_bound_ppm;
      // reflect at the bound
      for (int i = 0; i < 4 && std::abs(rate) > bound; ++i) rate = rate > bound ? 2 * bound - rate : -2 * bound - rate;
      rate = std::clamp(rate, -bound, bound);
      osc_.rate_ppm = rate;
      prev_ = cur_;
      cur_ = Segment{next_boundary_, prev_.value_at(next_boundary_), detail::rate_to_ppt(rate)};
      next_boundary_ += osc_.walk_interval;
    }
  }

  OscillatorModel osc_{};
  std::optional<RngStream> walk_rng_;
  Segment cur_{};
  Segment prev_{};
  SimTime next_boundary_ = -1;
};

/// Software clock: L = anchor_logical + (H - anchor_hw) * phi.
struct LogicalClockState {
  double phi = 1.0;
  Tick theta_hat = 0;  // sum of all offset steps applied so far
  Tick anchor_hw = 0;
  Tick anchor_logical = 0;
};

inline Tick logical_read(const LogicalClockState& lc, Tick hw_now) {
  if (hw_now < lc.anchor_hw) throw InvalidArgument("logical_read before anchor");
  const Tick delta = hw_now - lc.anchor_hw;
  return lc.anchor_logical + delta + round_half_away(static_cast<double>(delta) * (lc.phi - 1.0));
}

class CorrectionRejected : public std::runtime_error {
 public:
  CorrectionRejected(double phi, double band_ppm)
      : std::runtime_error("rate multiplier " + std::to_string(phi) + " outside +/-" +
                           std::to_string(band_ppm) + " ppm band"),
        phi_(phi) {}
  double phi() const { return phi_; }

 private:
  double phi_;
};

inline constexpr double kDefaultPhiBandPpm = 1000.0;

/// Re-anchors the logical clock at hw_now: the value there becomes the old
/// value plus theta_step, and the rate from there on is phi_new.
inline LogicalClockState apply_correction(const LogicalClockState& lc, double phi_new, Tick theta_step,
                                          Tick hw_now, double band_ppm = kDefaultPhiBandPpm) {
  if (!(phi_new > 0.0) || std::abs(phi_new - 1.0) * 1e6 > band_ppm) throw CorrectionRejected(phi_new, band_ppm);
  LogicalClockState out = lc;
  out.anchor_logical = logical_read(lc, hw_now) + theta_step;
  out.anchor_hw = hw_now;
  out.phi = phi_new;
  out.theta_hat = lc.theta_hat + theta_step;
  return out;
}

}  // namespace rdcsync
