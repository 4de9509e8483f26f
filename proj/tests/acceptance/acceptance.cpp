// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fail.
// Each criterion also has a wall-clock budget; exceeding it is a failure.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "rdcsync/config.hpp"
#include "rdcsync/experiment.hpp"
#include "rdcsync/floodsim.hpp"

using namespace rdcsync;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

ExperimentConfig preset(const std::string& name) {
  return load_config(std::string(RDCSYNC_PRESET_DIR) + "/" + name + ".json");
}

// Line-24 trials shared by several criteria; seeds 1..n.
std::map<std::string, std::vector<TrialResult>> g_cache;

const std::vector<TrialResult>& line_trials(const std::string& name, int n) {
  auto& v = g_cache[name];
  if (static_cast<int>(v.size()) < n) {
    const auto cfg = preset(name);
    auto more = run_trials(cfg, 1 + v.size(), n - static_cast<int>(v.size()));
    for (auto& r : more) v.push_back(std::move(r));
  }
  return v;
}

double fraction(int k, int n) { return n ? static_cast<double>(k) / n : 0.0; }

Outcome estimator_algebra() {
  RngStream rng(101, 1);
  double worst = 0;
  for (int i = 0; i < 10000; ++i) {
    std::vector<double> pu, pd;
    const auto nu = rng.uniform_int(1, 8), nd = rng.uniform_int(1, 8);
    for (std::int64_t k = 0; k < nu; ++k) pu.push_back(rng.uniform(-1e4, 1e4));
    for (std::int64_t k = 0; k < nd; ++k) pd.push_back(rng.uniform(-1e4, 1e4));
    const double td = rng.uniform(-100, 100);
    const auto e = joint_offset_mle(pu, pd, td);
    const double scale = 1e4;
    worst = std::max(worst, std::abs(e.theta_hat + *e.d_fixed_hat - stats::min(pd)) / scale);
    worst = std::max(worst, std::abs(e.theta_hat - *e.d_fixed_hat + stats::min(pu) - td) / scale);
  }
  return {worst <= 4 * std::numeric_limits<double>::epsilon(), fmt("max relative residual %.3g", worst)};
}

Outcome skew_accuracy() {
  const SimTime tau = 30 * kMicrosPerSecond;
  std::string detail;
  bool ok = true;
  for (double s : {-100.0, -50.0, 0.0, 50.0, 100.0}) {
    OscillatorModel so, ro;
    so.initial_offset_us = 1234;
    ro.rate_ppm = s;
    ro.initial_offset_us = 98765;
    HardwareClock snd(so), rcv(ro);
    auto batch = [&](SimTime start, std::uint64_t round) {
      BroadcastBatch b;
      b.round_id = round;
      for (int k = 0; k < 5; ++k) {
        const SimTime t = start + 2 * k;
        b.push(k + 1, snd.read(t), rcv.read(t), 0, 0);
      }
      return b;
    };
    const auto b0 = batch(1'000'000, 1);
    const auto b1 = batch(1'000'000 + tau, 2);
    const auto p = outlier_filter(skew_observations(b0, b1), 3.0, 1.0);
    const double tau_hat = static_cast<double>(b1.sender_hw[0] - b0.sender_hw[0]);
    const double err = std::abs(skew_mle(p, tau_hat).phi_hat - (1.0 + s / 1e6));
    ok = ok && err <= 1.0 / tau_hat;
    detail += fmt("%+g:%.2gppm ", s, err * 1e6);
  }
  return {ok, detail + fmt("(bound %.3gppm)", 1e6 / 30e6)};
}

Outcome delay_recovery() {
  ExperimentConfig c;
  c.topology = TopologySpec{TopologyKind::line, 2};
  c.delay = DelayDecomposition{3.0, 0.5, 0.0, 5, 50};
  c.horizon_s = 52 * c.sync_period_s;  // boot + first period + 50 rounds
  c.probe_interval_s = c.horizon_s;
  const int trials = 500;
  int in_band = 0;
  std::vector<double> est;
  for (int i = 0; i < trials; ++i) {
    const auto r = run_trial(c, 1 + i);
    if (!r.ok || !r.mean_d_fixed_hat) continue;
    est.push_back(*r.mean_d_fixed_hat);
    in_band += std::abs(*r.mean_d_fixed_hat - 3.0) <= 0.5;
  }
  const double f = fraction(in_band, trials);
  return {f >= 0.95, fmt("%d/%d within 3+/-0.5us (mean D_hat %.3f, sd %.3f)", in_band, trials,
                         stats::mean(est), stats::stddev(est))};
}

Outcome convergence() {
  const int n = 50;
  const auto& rdc = line_trials("line24_rdc", n);
  const auto& ftsp = line_trials("line24_ftsp", n);
  int rdc_ok = 0, ftsp_ok = 0;
  std::map<int, int> rdc_hist;
  for (int i = 0; i < n; ++i) {
    const auto& a = rdc[i];
    const auto& b = ftsp[i];
    if (a.ok && a.convergence_periods) {
      rdc_ok += *a.convergence_periods >= 2 && *a.convergence_periods <= 7;
      ++rdc_hist[*a.convergence_periods];
    }
    if (b.ok) ftsp_ok += !b.convergence_periods || *b.convergence_periods > 12;
  }
  std::string hist;
  for (const auto& [k, c] : rdc_hist) hist += fmt("%d:%d ", k, c);
  return {fraction(rdc_ok, n) >= 0.9 && fraction(ftsp_ok, n) >= 0.9,
          fmt("RDC-RMTS 2-7 periods %d/%d, FTSP >12 periods %d/%d; RDC periods {%s}", rdc_ok, n, ftsp_ok, n,
              hist.c_str())};
}

Outcome error_ordering() {
  const int n = 20;
  const auto& rdc = line_trials("line24_rdc", n);
  const auto& rmts = line_trials("line24_rmts", n);
  const auto& ps = line_trials("line24_pulsesync", n);
  const auto& fcsa = line_trials("line24_fcsa", n);
  const auto& ftsp = line_trials("line24_ftsp", n);
  int good = 0;
  std::vector<double> m[5];
  for (int i = 0; i < n; ++i) {
    const double e[5] = {rdc[i].steady.mean_max_global, rmts[i].steady.mean_max_global,
                         ps[i].steady.mean_max_global, fcsa[i].steady.mean_max_global,
                         ftsp[i].steady.mean_max_global};
    const bool all_ok = rdc[i].ok && rmts[i].ok && ps[i].ok && fcsa[i].ok && ftsp[i].ok;
    for (int k = 0; k < 5; ++k) m[k].push_back(e[k]);
    good += all_ok && e[0] <= 1.2 * e[1] && std::max(e[0], e[1]) < e[2] && e[2] < e[3] && e[3] < e[4];
  }
  return {fraction(good, n) >= 0.9,
          fmt("%d/%d paired seeds ordered; means RDC %.1f RMTS %.1f PulseSync %.1f FCSA %.1f FTSP %.1f us", good, n,
              stats::mean(m[0]), stats::mean(m[1]), stats::mean(m[2]), stats::mean(m[3]), stats::mean(m[4]))};
}

std::vector<HopError> pooled_curve(const std::vector<TrialResult>& rs, int n) {
  std::vector<HopError> out;
  for (int i = 0; i < n; ++i) {
    const auto& c = rs[i].hop_curve;
    if (out.empty()) out.resize(c.size());
    for (std::size_t h = 0; h < c.size() && h < out.size(); ++h) {
      out[h].hop = static_cast<int>(h);
      out[h].mean += c[h].mean / n;
      out[h].samples += c[h].samples;
    }
  }
  return out;
}

Outcome hop_growth() {
  const int n = 20;
  const auto rdc = pooled_curve(line_trials("line24_rdc", n), n);
  const auto ftsp = pooled_curve(line_trials("line24_ftsp", n), n);
  const auto g = fit_hop_growth(rdc);
  const double ratio = ftsp.at(24).mean / rdc.at(24).mean;
  return {g.sqrt_preferred() && ratio >= 3.0,
          fmt("RDC-RMTS AIC sqrt %.1f vs linear %.1f; hop 24: FTSP %.1f / RDC-RMTS %.1f us = %.1fx", g.aic_sqrt,
              g.aic_linear, ftsp.at(24).mean, rdc.at(24).mean, ratio)};
}

bool dominates(const PathStats& hi, const PathStats& lo) {
  // hi shifted right of lo: CDF_hi <= CDF_lo everywhere
  const int top = std::max(hi.max_length(), lo.max_length());
  for (int x = 0; x <= top; ++x)
    if (hi.cdf(x) > lo.cdf(x) + 1e-12) return false;
  return true;
}

Outcome flood_paths() {
  const auto cfg = preset("rgg300_paths");
  const auto r = run_paths_trial(cfg, cfg.seed);
  const auto& rapid0 = r.path_study.at(path_key("rapid", 0));
  const auto& slow0 = r.path_study.at(path_key("slow", 0));
  const auto& rapid1 = r.path_study.at(path_key("rapid", 0.1));
  const auto& slow1 = r.path_study.at(path_key("slow", 0.1));
  const int d = r.diameter;
  const bool enough = rapid0.rounds >= 10000 && slow0.rounds >= 10000;
  const bool ok = enough && rapid0.mode() < slow0.mode() && dominates(rapid1, rapid0) && dominates(slow1, slow0) &&
                  rapid0.probability(d) > slow0.probability(d);
  return {ok, fmt("Delta %d; mode rapid %d slow %d; P(path=Delta) rapid %.4f slow %.5f; plr 0.1 modes %d/%d; "
                  "dominance rapid %s slow %s",
                  d, rapid0.mode(), slow0.mode(), rapid0.probability(d), slow0.probability(d), rapid1.mode(),
                  slow1.mode(), dominates(rapid1, rapid0) ? "yes" : "no", dominates(slow1, slow0) ? "yes" : "no")};
}

Outcome zero_noise() {
  auto c = preset("line24_rdc");
  c.delay.sigma_us = 0;
  c.delay.p_unc = 0;
  c.drift.mode = DriftMode::constant;
  const auto r = run_trial(c, 1, true);
  if (!r.ok) return {false, r.error};
  const auto topo = build_topology(c, 1);
  if (!r.convergence_periods) return {false, "never converged"};
  // post-convergence: every probe from the convergence period on
  double worst_global = 0, worst_per_hop = 0;
  for (std::size_t i = 0; i < r.series.size(); ++i) {
    if (r.series[i].period_index < *r.convergence_periods) continue;
    worst_global = std::max(worst_global, r.series[i].max_global);
    const auto& s = r.probes[i];
    for (NodeId k = 0; k < topo.node_count(); ++k)
      if (k != topo.reference && s.present(k))
        worst_per_hop = std::max(worst_per_hop, std::abs(s.logical[k] - s.logical[topo.reference]) / topo.hop_distance[k]);
  }
  return {worst_global <= topo.diameter,
          fmt("post-convergence max global %.0f ticks vs %d hops x 1 tick; worst single node |error|/hop %.2f ticks",
              worst_global, topo.diameter, worst_per_hop)};
}

Outcome determinism() {
  const auto base = fs::temp_directory_path() / ("rdcsync_acceptance_" + std::to_string(::getpid()));
  fs::remove_all(base);
  auto slurp = [](const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
  };
  int compared = 0;
  bool ok = true;
  for (const std::string name : {"line24_rdc", "line24_ftsp", "line24_election"}) {
    const auto cfg = preset(name);
    for (const char* run : {"a", "b"}) {
      const auto r = run_trial(cfg, 7);
      write_trial(base / run / name, cfg, r, false);
    }
    for (const char* file : {"summary.json", "series.csv"}) {
      const auto x = slurp(base / "a" / name / file);
      const auto y = slurp(base / "b" / name / file);
      ok = ok && !x.empty() && x == y;
      ++compared;
    }
  }
  fs::remove_all(base);
  return {ok, fmt("%d file pairs byte-identical: %s", compared, ok ? "yes" : "no")};
}

Outcome election() {
  const int n = 50;
  const auto& rs = line_trials("line24_election", n);
  const auto cfg = preset("line24_election");
  const SimTime kill = seconds(*cfg.kill_root_at_s);
  const SimTime period = cfg.sync_period();
  int good = 0, elected = 0, reconv = 0;
  for (const auto& r : rs) {
    if (!r.ok) continue;
    const bool e = r.election.winner_round && (*r.election.winner_round - kill) <= 7 * period;
    const bool c = r.reconvergence_periods && *r.reconvergence_periods <= 14;
    elected += e;
    reconv += c;
    good += e && c;
  }
  return {fraction(good, n) >= 0.9,
          fmt("%d/%d: new root within 7 periods %d/%d, re-converged within 14 periods %d/%d", good, n, elected, n,
              reconv, n)};
}

}  // namespace

int main() {
  struct Criterion {
    const char* id;
    const char* what;
    double budget_s;
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> all{
      {"C1", "estimator algebra", 1, estimator_algebra},
      {"C2", "skew MLE accuracy", 1, skew_accuracy},
      {"C3", "fixed-delay recovery", 10, delay_recovery},
      {"C4", "convergence periods", 120, convergence},
      {"C5", "error ordering", 300, error_ordering},
      {"C6", "by-hop growth", 300, hop_growth},
      {"C7", "flooding-path statistics", 600, flood_paths},
      {"C8", "zero-noise sanity", 30, zero_noise},
      {"C9", "determinism", 60, determinism},
      {"C10", "root election", 120, election},
  };
  int failed = 0;
  for (const auto& c : all) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool pass = o.pass && secs <= c.budget_s;
    failed += !pass;
    std::printf("%s %-4s %-26s %s [%.1fs / %.0fs budget]\n", pass ? "PASS" : "FAIL", c.id, c.what, o.detail.c_str(),
                secs, c.budget_s);
    std::fflush(stdout);
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(all.size()) - failed, all.size());
  return failed ? 1 : 0;
}
