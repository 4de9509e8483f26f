#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <numeric>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "rdcsync/types.hpp"

namespace rdcsync {

/// Timestamp pairs from one multi-broadcast burst, as seen by one receiver.
/// Entry n of every list belongs to the same packet.
struct BroadcastBatch {
  std::uint64_t round_id = 0;
  std::vector<int> seq;  // 1-based position in the burst
  std::vector<Tick> sender_hw;
  std::vector<Tick> receiver_hw;
  std::vector<Tick> sender_logical;
  std::vector<Tick> receiver_logical;

  std::size_t n_received() const { return sender_hw.size(); }

  void push(int s, Tick s_hw, Tick r_hw, Tick s_log, Tick r_log) {
    seq.push_back(s);
    sender_hw.push_back(s_hw);
    receiver_hw.push_back(r_hw);
    sender_logical.push_back(s_log);
    receiver_logical.push_back(r_log);
  }

  bool consistent() const {
    const auto n = sender_hw.size();
    return seq.size() == n && receiver_hw.size() == n && sender_logical.size() == n &&
           receiver_logical.size() == n;
  }

  Tick receiver_span() const {
    if (receiver_hw.empty()) return 0;
    auto [lo, hi] = std::minmax_element(receiver_hw.begin(), receiver_hw.end());
    return *hi - *lo;
  }
};

struct SkewEstimate {
  double phi_hat = 1.0;  // receiver hardware rate relative to the sender's
  double tau_us = 0.0;
  std::size_t n_used = 0;
};

enum class OffsetMethod { joint_mle, min_mle };

/// Offset of the receiver's logical clock relative to the sender's
/// (receiver minus sender). Values stay real-valued; rounding happens when the
/// estimate is applied to a clock.
struct OffsetEstimate {
  double theta_hat = 0.0;
  std::optional<double> d_fixed_hat;
  OffsetMethod method = OffsetMethod::min_mle;

  Tick theta_hat_us() const { return round_half_away(theta_hat); }
  std::optional<Tick> d_fixed_hat_us() const {
    if (!d_fixed_hat) return std::nullopt;
    return round_half_away(*d_fixed_hat);
  }
};

/// One-way delay model D = D_fixed + d + D_unc.
struct DelayDecomposition {
  double d_fixed_us = 3.0;
  double sigma_us = 0.3;
  double p_unc = 0.02;
  double unc_lo_us = 5.0;
  double unc_hi_us = 50.0;

  bool operator==(const DelayDecomposition&) const = default;

  void validate() const {
    if (d_fixed_us < 0) throw InvalidArgument("d_fixed must be non-negative");
    if (sigma_us < 0) throw InvalidArgument("sigma must be non-negative");
    if (p_unc < 0 || p_unc > 1) throw InvalidArgument("p_unc must lie in [0,1]");
    if (unc_lo_us > unc_hi_us) throw InvalidArgument("unc range lo > hi");
  }
};

namespace stats {

inline double mean(std::span<const double> v) {
  if (v.empty()) return 0.0;
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

// Sample standard deviation (n - 1); zero for fewer than two samples.
inline double stddev(std::span<const double> v) {
  if (v.size() < 2) return 0.0;
  const double m = mean(v);
  double acc = 0.0;
  for (double x : v) acc += (x - m) * (x - m);
  return std::sqrt(acc / static_cast<double>(v.size() - 1));
}

inline double min(std::span<const double> v) { return *std::min_element(v.begin(), v.end()); }

}  // namespace stats

/// p[n] = v[n] - u[n], where u and v are receiver-minus-sender hardware
/// differences of the old and new batch. Pairs are matched by position and
/// the longer batch is truncated.
inline std::vector<double> skew_observations(const BroadcastBatch& batch_old, const BroadcastBatch& batch_new) {
  if (batch_new.round_id <= batch_old.round_id)
    throw InvalidArgument("skew_observations: new batch must come from a later round");
  const std::size_t n = std::min(batch_old.n_received(), batch_new.n_received());
  if (n < 2) throw InsufficientData("skew_observations: fewer than 2 matched pairs");
  std::vector<double> p(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Tick u = batch_old.receiver_hw[i] - batch_old.sender_hw[i];
    const Tick v = batch_new.receiver_hw[i] - batch_new.sender_hw[i];
    p[i] = static_cast<double>(v - u);
  }
  return p;
}

/// Sort, then walk the upper half of the sorted observations and drop any
/// sample that sits more than sigma_factor standard deviations above the
/// samples kept before it. Positive-only delay spikes end up at the tail.
/// sigma_floor bounds the prefix deviation from below (0 = none).
inline std::vector<double> outlier_filter(std::vector<double> p, double sigma_factor = 3.0,
                                          double sigma_floor = 0.0) {
  if (p.empty()) throw InsufficientData("outlier_filter: empty input");
  std::sort(p.begin(), p.end());
  const std::size_t n = p.size();
  // 1-based k with n/2 < k <= n; a deviation needs at least two prior samples
  const std::size_t first_k = std::max<std::size_t>(n / 2 + 1, 3);
  if (first_k > n) return p;
  std::vector<double> kept(p.begin(), p.begin() + static_cast<std::ptrdiff_t>(first_k - 1));
  for (std::size_t k = first_k; k <= n; ++k) {
    const double x = p[k - 1];
    const double m = stats::mean(kept);
    const double sd = std::max(stats::stddev(kept), sigma_floor);
    if (x - m > sigma_factor * sd) break;  // sorted: everything after is larger still
    kept.push_back(x);
  }
  return kept;
}

/// phi_hat = 1 + mean(p) / tau.
inline SkewEstimate skew_mle(std::span<const double> p_kept, double tau_us) {
  if (p_kept.empty()) throw InsufficientData("skew_mle: no observations");
  if (!(tau_us > 0.0)) throw InvalidArgument("skew_mle: observation interval must be positive");
  return SkewEstimate{1.0 + stats::mean(p_kept) / tau_us, tau_us, p_kept.size()};
}

struct TwoWaySamples {
  std::vector<double> p_u;
  std::vector<double> p_d;
};

/// Receiver-minus-sender logical differences for each direction.
inline TwoWaySamples two_way_samples(const BroadcastBatch& uplink, const BroadcastBatch& downlink) {
  TwoWaySamples s;
  for (std::size_t i = 0; i < uplink.n_received(); ++i)
    s.p_u.push_back(static_cast<double>(uplink.receiver_logical[i] - uplink.sender_logical[i]));
  for (std::size_t i = 0; i < downlink.n_received(); ++i)
    s.p_d.push_back(static_cast<double>(downlink.receiver_logical[i] - downlink.sender_logical[i]));
  return s;
}

class UplinkMissing : public InsufficientData {
 public:
  UplinkMissing() : InsufficientData("joint_offset_mle: uplink samples missing") {}
};

/// Two-way offset estimate from minimum uplink/downlink observations.
/// theta_delta_hat is the expected change of the receiver-minus-sender offset
/// between the uplink and the downlink exchange.
inline OffsetEstimate joint_offset_mle(std::span<const double> p_u, std::span<const double> p_d,
                                       double theta_delta_hat) {
  if (p_u.empty()) throw UplinkMissing();
  if (p_d.empty()) throw InsufficientData("joint_offset_mle: downlink samples missing");
  const double min_d = stats::min(p_d);
  const double min_u = stats::min(p_u);
  OffsetEstimate e;
  e.theta_hat = (min_d - min_u + theta_delta_hat) / 2.0;
  e.d_fixed_hat = (min_d + min_u - theta_delta_hat) / 2.0;
  e.method = OffsetMethod::joint_mle;
  return e;
}

/// One-way offset estimate: the smallest observation minus the delay estimate.
inline OffsetEstimate min_offset_mle(std::span<const double> u, double d_fixed_hat) {
  if (u.empty()) throw InsufficientData("min_offset_mle: no observations");
  return OffsetEstimate{stats::min(u) - d_fixed_hat, std::nullopt, OffsetMethod::min_mle};
}

struct LinearFit {
  double slope = 0.0;
  double intercept = 0.0;  // value at x = x_mean
  double x_mean = 0.0;

  double at(double x) const { return intercept + slope * (x - x_mean); }
};

/// Ordinary least squares of y on x. Centered to keep large tick values exact enough.
inline LinearFit fit_line(std::span<const std::pair<double, double>> pts) {
  if (pts.size() < 2) throw InsufficientData("regression needs at least 2 points");
  double xm = 0.0;
  double ym = 0.0;
  for (const auto& [x, y] : pts) {
    xm += x;
    ym += y;
  }
  xm /= static_cast<double>(pts.size());
  ym /= static_cast<double>(pts.size());
  double sxx = 0.0;
  double sxy = 0.0;
  for (const auto& [x, y] : pts) {
    sxx += (x - xm) * (x - xm);
    sxy += (x - xm) * (y - ym);
  }
  if (sxx == 0.0) throw InvalidArgument("degenerate regression: all x identical");
  return LinearFit{sxy / sxx, ym, xm};
}

/// Slope of offset vs local hardware time.
inline double lr_skew(std::span<const std::pair<double, double>> table) { return fit_line(table).slope; }

/// Fixed-capacity FIFO of (local hardware time, offset) regression points.
class RegressionTable {
 public:
  explicit RegressionTable(std::size_t capacity = 8) : capacity_(capacity) {}

  /// A sample at the same x as the newest one replaces it.
  void add(double x, double y) {
    if (!pts_.empty() && pts_.back().first == x) pts_.pop_back();
    if (pts_.size() == capacity_) pts_.pop_front();
    pts_.emplace_back(x, y);
  }
  void clear() { pts_.clear(); }
  std::size_t size() const { return pts_.size(); }
  std::size_t capacity() const { return capacity_; }

  /// Slope 0 with fewer than two points; the intercept is then the one sample.
  LinearFit fit() const {
    if (pts_.empty()) throw InsufficientData("empty regression table");
    std::vector<std::pair<double, double>> v(pts_.begin(), pts_.end());
    if (v.size() == 1) return LinearFit{0.0, v[0].second, v[0].first};
    return fit_line(v);
  }

 private:
  std::size_t capacity_;
  std::deque<std::pair<double, double>> pts_;
};

/// By-hop error: sum of delays plus sum of relative-rate x waiting-time terms.
inline double error_model_predict(std::span<const double> delays, std::span<const double> rel_rates_ppm,
                                  std::span<const double> waits_us) {
  if (delays.size() != rel_rates_ppm.size() || delays.size() != waits_us.size())
    throw InvalidArgument("error_model_predict: length mismatch");
  double e = 0.0;
  for (std::size_t h = 0; h < delays.size(); ++h) e += delays[h] + rel_rates_ppm[h] * waits_us[h] / 1e6;
  return e;
}

/// Running fixed-delay estimate from validity-gated two-way results,
/// exponentially weighted.
class DelayFixedTracker {
 public:
  explicit DelayFixedTracker(double alpha = 0.125, double ceiling_us = 30.0)
      : alpha_(alpha), ceiling_(ceiling_us) {}

  bool offer(double d_fixed_hat) {
    if (!(d_fixed_hat >= 0.0) || d_fixed_hat > ceiling_) return false;
    value_ = value_ ? *value_ + alpha_ * (d_fixed_hat - *value_) : d_fixed_hat;
    ++accepted_;
    return true;
  }

  std::optional<double> value() const { return value_; }
  double value_or(double fallback) const { return value_.value_or(fallback); }
  std::size_t accepted() const { return accepted_; }

 private:
  double alpha_;
  double ceiling_;
  std::optional<double> value_;
  std::size_t accepted_ = 0;
};

}  // namespace rdcsync
