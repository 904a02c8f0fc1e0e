// Acceptance gate: runs the nine criteria and prints one PASS/FAIL line each.
// Exit status is non-zero when any selected criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <optional>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "setchain/bench.hpp"
#include "setchain/properties.hpp"

using namespace setchain;

namespace {

// Pinned thresholds.
constexpr double kMinAddToEpochRatio = 100.0;        // criterion 5
constexpr double kMsgsPerElementDivisor = 100.0;     // criterion 5
constexpr double kMinAggregationGain = 10.0;         // criterion 6
constexpr double kDegradationSlack = 0.0;            // criterion 7: strict non-increase
constexpr double kMaxLatencySlopeFraction = 0.01;    // criterion 8, per 10^4 ticks
constexpr double kLatencyRunLoadFraction = 0.5;      // criterion 8: 50% of max rate
constexpr SimTime kLatencyRunTicks = 100'000;        // criterion 8
constexpr SimTime kLatencyEpochInterval = 200;       // criterion 8
constexpr double kSuiteWallClockBudgetSec = 600.0;   // criterion 1

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int precision = 3) {
  std::ostringstream out;
  out.setf(std::ios::fixed);
  out.precision(precision);
  out << v;
  return out.str();
}

Outcome from_report(const properties::Report& r) {
  Outcome o{r.ok() && r.runs > 0, r.summary()};
  for (const auto& f : r.failures) o.detail += "\n      " + f;
  return o;
}

// Rates shared between criteria 5, 6 and 8 (each search runs once).
struct Rates {
  std::optional<double> aggregated;
  std::optional<double> plain;
  std::optional<bench::Metrics> epochs;

  static bench::Workload unit_delay_n4() {
    bench::Workload w;
    w.n = 4;
    w.f = 1;
    w.duration = 2000;
    w.window = 50;
    w.delays = {0, 1, 1};
    return w;
  }
  double max_rate(bool aggregate) {
    std::optional<double>& slot = aggregate ? aggregated : plain;
    if (!slot) {
      bench::Workload w = unit_delay_n4();
      w.agg.enabled = aggregate;
      w.agg.max_batch = 1000;
      w.agg.max_wait = 5;
      slot = bench::max_add_rate(w);
    }
    return *slot;
  }
  const bench::Metrics& epoch_run() {
    if (!epochs) epochs = bench::bench_epochs(unit_delay_n4()).at(0);
    return *epochs;
  }
};

Outcome criterion1() {
  auto t0 = std::chrono::steady_clock::now();
  properties::Report r = properties::run_setchain_suite({});
  double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  Outcome o = from_report(r);
  o.pass = o.pass && r.runs == 900 && secs < kSuiteWallClockBudgetSec;
  o.detail += " wall=" + fmt(secs, 1) + "s (budget " + fmt(kSuiteWallClockBudgetSec, 0) + "s)";
  return o;
}

Outcome criterion2() {
  properties::Report r = properties::run_brb_suite({});
  Outcome o = from_report(r);
  o.pass = o.pass && r.runs == 2 * (1000 + 100 + 100);
  return o;
}

Outcome criterion3() {
  properties::Report r = properties::run_sbc_suite({});
  Outcome o = from_report(r);
  o.pass = o.pass && r.runs == 1000;
  return o;
}

Outcome criterion4() {
  properties::Report r = properties::run_oracle_suite({});
  Outcome o = from_report(r);
  o.pass = o.pass && r.runs == 200;
  return o;
}

Outcome criterion5(Rates& rates) {
  double add_rate = rates.max_rate(true);
  const bench::Metrics& ep = rates.epoch_run();
  double epoch_rate = ep.epochs_per_tick();
  double ratio = epoch_rate > 0 ? add_rate / epoch_rate : 0.0;

  bench::Workload w = Rates::unit_delay_n4();
  w.agg.enabled = true;
  w.agg.max_batch = 1000;
  w.agg.max_wait = 5;
  w.add_rate = add_rate;
  bench::Metrics adds = bench::bench_adds(w).at(0);
  double per_element = adds.delivered > 0 ? static_cast<double>(adds.msgs_total) / adds.delivered : INFINITY;
  double per_epoch = ep.epochs > 0 ? static_cast<double>(ep.msgs_total) / ep.epochs : 0.0;

  Outcome o;
  o.pass = ratio >= kMinAddToEpochRatio && per_element <= per_epoch / kMsgsPerElementDivisor;
  o.detail = "add_rate=" + fmt(add_rate) + "/tick epoch_rate=" + fmt(epoch_rate, 4) + "/tick ratio=" + fmt(ratio, 1) +
             " (>= " + fmt(kMinAddToEpochRatio, 0) + ") msgs/element=" + fmt(per_element) + " msgs/epoch=" +
             fmt(per_epoch, 1) + " (need <= " + fmt(per_epoch / kMsgsPerElementDivisor) + ")";
  return o;
}

Outcome criterion6(Rates& rates) {
  double agg = rates.max_rate(true);
  double plain = rates.max_rate(false);
  double gain = plain > 0 ? agg / plain : 0.0;
  return {gain >= kMinAggregationGain, "aggregated=" + fmt(agg) + "/tick plain=" + fmt(plain) +
                                           "/tick gain=" + fmt(gain, 2) + " (>= " + fmt(kMinAggregationGain, 0) + ")"};
}

Outcome criterion7() {
  std::vector<double> degradation;
  std::string detail;
  for (std::size_t n : {4, 7, 10}) {
    bench::Workload w;
    w.n = n;
    w.f = (n - 1) / 3;
    w.duration = 3000;
    w.window = 100;
    w.seeds = {1, 2, 3, 4, 5};
    double healthy = 0;
    double silent = 0;
    for (const auto& m : bench::bench_epochs(w)) healthy += m.epochs_per_tick();
    w.byz_mode = netsim::ByzantineMode::silent;
    for (const auto& m : bench::bench_epochs(w)) silent += m.epochs_per_tick();
    double d = healthy > 0 ? 1.0 - silent / healthy : 1.0;
    degradation.push_back(d);
    detail += "n=" + std::to_string(n) + ":" + fmt(100 * d, 1) + "% ";
  }
  bool monotone = true;
  for (std::size_t i = 1; i < degradation.size(); ++i) {
    monotone = monotone && degradation[i] <= degradation[i - 1] + kDegradationSlack;
  }
  return {monotone, detail + "(non-increasing required)"};
}

Outcome criterion8(Rates& rates) {
  double max_rate = rates.max_rate(false);
  bench::Workload w;
  w.n = 4;
  w.f = 1;
  w.delays = {0, 1, 1};
  w.duration = kLatencyRunTicks;
  w.window = 1000;
  w.epoch_interval = kLatencyEpochInterval;
  w.add_rate = kLatencyRunLoadFraction * max_rate;
  w.drain = 2000;
  bench::Metrics m = bench::bench_latency(w).at(0);
  std::vector<double> x;
  std::vector<double> y;
  for (const auto& row : m.windows) {
    x.push_back(static_cast<double>(row.start));
    y.push_back(row.lat_max);
  }
  double per_1e4 = bench::slope(x, y) * 1e4;
  double bound = kMaxLatencySlopeFraction * m.lat_avg;
  Outcome o;
  o.pass = m.stamped > 0 && std::fabs(per_1e4) < bound;
  o.detail = "rate=" + fmt(w.add_rate) + "/tick windows=" + std::to_string(m.windows.size()) +
             " slope=" + fmt(per_1e4) + " ticks/1e4 mean_latency=" + fmt(m.lat_avg, 1) + " (|slope| < " +
             fmt(bound) + ") pending=" + std::to_string(m.pending);
  return o;
}

Outcome criterion9() { return from_report(properties::run_client_suite()); }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  std::vector<int> only;
  app.add_option("criteria", only, "Criterion numbers to run (default: all)")->check(CLI::Range(1, 9));
  CLI11_PARSE(app, argc, argv);
  std::set<int> selected(only.begin(), only.end());
  if (selected.empty()) selected = {1, 2, 3, 4, 5, 6, 7, 8, 9};

  Rates rates;
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"setchain invariant suite (n in {4,7,10}, 3 modes, 100 seeds)", criterion1},
      {"reliable broadcast suite", criterion2},
      {"set consensus suite", criterion3},
      {"sequential oracle equivalence", criterion4},
      {"add vs epoch throughput", [&] { return criterion5(rates); }},
      {"aggregation gain", [&] { return criterion6(rates); }},
      {"silent-server degradation shrinks with n", criterion7},
      {"stamp latency stable over long run", [&] { return criterion8(rates); }},
      {"client against forged responses", criterion9},
  };

  int failed = 0;
  for (int k = 1; k <= 9; ++k) {
    if (!selected.contains(k)) continue;
    const auto& [name, run] = criteria[static_cast<std::size_t>(k - 1)];
    auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("criterion %d %s: %s [%.1fs]\n    %s\n", k, o.pass ? "PASS" : "FAIL", name.c_str(), secs,
                o.detail.c_str());
    std::fflush(stdout);
    failed += o.pass ? 0 : 1;
  }
  return failed == 0 ? 0 : 1;
}
