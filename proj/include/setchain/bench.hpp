#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "setchain/netsim.hpp"
#include "setchain/node.hpp"

// Simulated-time experiment harness. Throughput is measured in ticks under
// a receive-side cost model, so results do not depend on the host machine.
namespace setchain::bench {

/// Processing costs used by the throughput experiments: a message costs a
/// tenth of a tick plus one unit per byte.
netsim::CostModel default_costs();

struct Workload {
  std::size_t n = 4;
  std::size_t f = 1;
  /// Adds per tick across the whole cluster; fractional rates accumulate.
  double add_rate = 0.0;
  /// Ticks between epoch increments; 0 disables them unless back_to_back.
  SimTime epoch_interval = 0;
  /// Request the next epoch as soon as the previous one is stamped.
  bool back_to_back = false;
  SimTime duration = 1000;
  SimTime window = 100;
  /// Extra ticks after `duration` for the backlog to clear (no new adds).
  SimTime drain = 0;
  node::AggConfig agg;
  node::StampingPolicy policy = node::StampingPolicy::union_valid;
  netsim::ByzantineMode byz_mode = netsim::ByzantineMode::correct;
  /// Number of Byzantine servers (the highest ids); defaults to f when a
  /// mode is set and this is 0.
  std::size_t byz_count = 0;
  std::vector<std::uint64_t> seeds{1};
  netsim::DelayModel delays;
  netsim::CostModel costs = default_costs();
  SignatureScheme scheme = SignatureScheme::null;
  std::size_t payload_size = 16;
  /// JSONL event trace of the first seed, when non-empty.
  std::string trace_path;

  /// Throws std::invalid_argument for negative rates, zero duration or
  /// window, or an invalid n/f combination.
  void validate() const;
  std::size_t byzantine_servers() const;
};

struct WindowRow {
  SimTime start = 0;
  std::uint64_t epochs = 0;     // epochs stamped at the observer during the window
  std::uint64_t adds = 0;       // adds issued during the window
  std::uint64_t stamped = 0;    // workload elements stamped at the observer during the window
  std::uint64_t delivered = 0;  // workload elements entering the observer's set during the window
  std::uint64_t msgs_brb = 0;
  std::uint64_t msgs_sbc = 0;
  double lat_avg = 0.0;  // over elements added during the window
  double lat_max = 0.0;
  std::int64_t backlog = 0;  // adds issued minus elements completed, at window end
};

struct Metrics {
  std::string run_id;
  std::size_t n = 0;
  std::size_t f = 0;
  std::string byz_mode;
  std::uint64_t seed = 0;
  SimTime duration = 0;
  SimTime end_time = 0;
  std::vector<WindowRow> windows;
  std::uint64_t epochs = 0;
  std::uint64_t adds = 0;
  std::uint64_t stamped = 0;
  std::uint64_t delivered = 0;
  std::uint64_t msgs_brb = 0;
  std::uint64_t msgs_sbc = 0;
  std::uint64_t msgs_total = 0;
  double lat_avg = 0.0;
  double lat_max = 0.0;
  /// Elements issued but not stamped (epochs on) or not delivered (epochs off).
  std::uint64_t pending = 0;

  double epochs_per_tick() const;
  double delivered_per_tick() const;
};

/// Runs one seed. The observer is the lowest-id correct server; adds are
/// issued by a driver process to correct servers in turn.
Metrics run_workload(const Workload& w, std::uint64_t seed, const std::string& run_id);

/// One Metrics per seed.
std::vector<Metrics> bench_epochs(Workload w);     // back-to-back epochs, no adds
std::vector<Metrics> bench_adds(Workload w);       // adds only, no epochs
std::vector<Metrics> bench_mixed(Workload w);      // adds with a fixed epoch interval
std::vector<Metrics> bench_byzantine(Workload w);  // as mixed, with silent servers unless a mode is given
std::vector<Metrics> bench_latency(Workload w);    // long mixed run

/// Least-squares slope of y over x; 0 for fewer than two points.
double slope(const std::vector<double>& x, const std::vector<double>& y);

/// True when the backlog slope over the last 20% of windows stays within
/// 2% of the offered rate.
bool sustainable(const Metrics& m, double add_rate);

struct RateSearch {
  double start = 0.25;
  std::size_t bisections = 6;
  double ceiling = 4096.0;
};

/// Highest sustainable add rate for `w` (first seed): doubling ramp, then
/// bisection between the last sustainable and first unsustainable rate.
double max_add_rate(Workload w, RateSearch search = {});

/// CSV columns: run_id,n,f,byz_mode,seed,window_start,epochs,adds,stamped,
/// msgs_brb,msgs_sbc,lat_avg,lat_max
void write_csv_header(std::ostream& out);
void write_csv(std::ostream& out, const std::vector<Metrics>& runs);

/// Overrides fields of `base` with the keys present in a JSON scenario
/// file. Throws std::runtime_error for unreadable files or bad values.
Workload load_scenario(const std::string& path, Workload base);

}  // namespace setchain::bench
