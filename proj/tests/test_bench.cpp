#include <gtest/gtest.h>

#include <unistd.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "setchain/bench.hpp"

using namespace setchain;
using namespace setchain::bench;

namespace {

Workload small_mixed() {
  Workload w;
  w.add_rate = 0.5;
  w.epoch_interval = 40;
  w.duration = 400;
  w.window = 50;
  w.drain = 400;
  return w;
}

std::string csv_of(const std::vector<Metrics>& runs) {
  std::ostringstream out;
  write_csv_header(out);
  write_csv(out, runs);
  return out.str();
}

struct TempFile {
  std::filesystem::path path;
  explicit TempFile(const std::string& content) {
    path = std::filesystem::temp_directory_path() / ("setchain-scenario-" + std::to_string(::getpid()) + ".json");
    std::ofstream(path) << content;
  }
  ~TempFile() { std::filesystem::remove(path); }
};

}  // namespace

TEST(Workload, ValidateRejectsBadInput) {
  Workload w;
  w.add_rate = -1;
  EXPECT_THROW(w.validate(), std::invalid_argument);
  w = Workload{};
  w.duration = 0;
  EXPECT_THROW(w.validate(), std::invalid_argument);
  w = Workload{};
  w.window = 0;
  EXPECT_THROW(w.validate(), std::invalid_argument);
  w = Workload{};
  w.n = 3;
  EXPECT_THROW(w.validate(), std::invalid_argument);
  w = Workload{};
  w.byz_mode = netsim::ByzantineMode::silent;
  w.byz_count = 2;
  EXPECT_THROW(w.validate(), std::invalid_argument);
  w = Workload{};
  EXPECT_NO_THROW(w.validate());
  EXPECT_THROW(run_workload(small_mixed(), 1, "x").windows.at(100), std::out_of_range);
}

TEST(Workload, ByzantineCountDefaultsToF) {
  Workload w;
  w.n = 7;
  w.f = 2;
  EXPECT_EQ(w.byzantine_servers(), 0u);
  w.byz_mode = netsim::ByzantineMode::silent;
  EXPECT_EQ(w.byzantine_servers(), 2u);
  w.byz_count = 1;
  EXPECT_EQ(w.byzantine_servers(), 1u);
}

TEST(Metrics, DeterministicPerSeed) {
  Workload w = small_mixed();
  w.delays = {0, 1, 3};  // unit delays would make every seed identical
  Metrics a = run_workload(w, 5, "r");
  Metrics b = run_workload(w, 5, "r");
  EXPECT_EQ(csv_of({a}), csv_of({b}));
  EXPECT_EQ(a.msgs_total, b.msgs_total);
  EXPECT_EQ(a.lat_max, b.lat_max);
  Metrics c = run_workload(w, 6, "r");
  EXPECT_NE(a.msgs_total + static_cast<std::uint64_t>(a.lat_avg * 1000),
            c.msgs_total + static_cast<std::uint64_t>(c.lat_avg * 1000));
}

TEST(Metrics, ConservationAtQuiescence) {
  for (std::uint64_t seed : {1, 2, 3}) {
    Metrics m = run_workload(small_mixed(), seed, "c");
    EXPECT_GT(m.adds, 0u);
    EXPECT_EQ(m.pending, 0u);
    EXPECT_EQ(m.stamped + m.pending, m.adds);
    std::uint64_t window_adds = 0;
    for (const WindowRow& row : m.windows) {
      window_adds += row.adds;
      EXPECT_GE(row.lat_avg, 0.0);
      EXPECT_LE(row.lat_avg, row.lat_max);
    }
    EXPECT_EQ(window_adds, m.adds);
    EXPECT_GT(m.epochs, 0u);
  }
}

TEST(Metrics, StampedNeverExceedsAddedMidRun) {
  Workload w = small_mixed();
  w.drain = 0;
  w.add_rate = 2.0;
  Metrics m = run_workload(w, 1, "m");
  EXPECT_LE(m.stamped, m.adds);
  EXPECT_EQ(m.stamped + m.pending, m.adds);
  std::uint64_t issued = 0;
  std::uint64_t done = 0;
  for (const WindowRow& row : m.windows) {
    issued += row.adds;
    done += row.stamped;
    EXPECT_EQ(row.backlog, static_cast<std::int64_t>(issued) - static_cast<std::int64_t>(done));
  }
}

TEST(Metrics, MessageCountsByLayer) {
  Workload w;
  w.back_to_back = true;
  w.duration = 300;
  Metrics m = bench_epochs(w).at(0);
  EXPECT_GT(m.epochs, 0u);
  EXPECT_EQ(m.adds, 0u);
  EXPECT_GT(m.msgs_sbc, 0u);
  EXPECT_GT(m.msgs_brb, 0u);
  EXPECT_GE(m.msgs_total, m.msgs_brb + m.msgs_sbc);
  EXPECT_DOUBLE_EQ(m.epochs_per_tick(), static_cast<double>(m.epochs) / 300.0);
}

TEST(Experiments, OneMetricsPerSeed) {
  Workload w = small_mixed();
  w.seeds = {1, 2};
  w.duration = 200;
  EXPECT_EQ(bench_mixed(w).size(), 2u);
  std::vector<Metrics> adds = bench_adds(w);
  ASSERT_EQ(adds.size(), 2u);
  EXPECT_EQ(adds[0].epochs, 0u);
  EXPECT_GT(adds[0].delivered, 0u);
  std::vector<Metrics> byz = bench_byzantine(w);
  EXPECT_EQ(byz[0].byz_mode, "silent");
}

TEST(Slope, LeastSquares) {
  EXPECT_DOUBLE_EQ(slope({0, 1, 2, 3}, {2, 5, 8, 11}), 3.0);
  // Mean x 1.5, mean y 2.5; covariance sum 4, variance sum 5.
  EXPECT_DOUBLE_EQ(slope({0, 1, 2, 3}, {1, 3, 2, 4}), 0.8);
  EXPECT_DOUBLE_EQ(slope({4}, {9}), 0.0);
  EXPECT_DOUBLE_EQ(slope({}, {}), 0.0);
}

TEST(Sustainable, BacklogSlopeAgainstRate) {
  Metrics flat;
  Metrics growing;
  for (SimTime t = 0; t < 1000; t += 100) {
    flat.windows.push_back({t, 0, 0, 0, 0, 0, 0, 0, 0, 5});
    growing.windows.push_back({t, 0, 0, 0, 0, 0, 0, 0, 0, static_cast<std::int64_t>(t / 10)});
  }
  EXPECT_TRUE(sustainable(flat, 1.0));
  EXPECT_FALSE(sustainable(growing, 1.0));  // slope 0.1 > 0.02
  EXPECT_TRUE(sustainable(growing, 10.0));  // slope 0.1 <= 0.2
  EXPECT_FALSE(sustainable(Metrics{}, 1.0));
}

TEST(Csv, StableHeaderAndRows) {
  std::ostringstream h;
  write_csv_header(h);
  EXPECT_EQ(h.str(), "run_id,n,f,byz_mode,seed,window_start,epochs,adds,stamped,msgs_brb,msgs_sbc,lat_avg,lat_max\n");
  Metrics m = run_workload(small_mixed(), 1, "row");
  std::string csv = csv_of({m});
  std::size_t lines = 0;
  for (char c : csv) lines += c == '\n' ? 1 : 0;
  EXPECT_EQ(lines, 1 + m.windows.size());
  EXPECT_NE(csv.find("\nrow,4,1,none,1,0,"), std::string::npos);
}

TEST(Scenario, OverridesOnlyPresentKeys) {
  TempFile f(R"({"n": 7, "f": 2, "add_rate": 1.5, "aggregate": true, "max_batch": 64,
                 "policy": "quorum", "byz_mode": "silent", "seeds": [3, 4],
                 "cost": {"per_byte": 2}})");
  Workload base;
  base.duration = 777;
  Workload w = load_scenario(f.path.string(), base);
  EXPECT_EQ(w.n, 7u);
  EXPECT_EQ(w.f, 2u);
  EXPECT_DOUBLE_EQ(w.add_rate, 1.5);
  EXPECT_TRUE(w.agg.enabled);
  EXPECT_EQ(w.agg.max_batch, 64u);
  EXPECT_EQ(w.policy, node::StampingPolicy::quorum_f_plus_1);
  EXPECT_EQ(w.byz_mode, netsim::ByzantineMode::silent);
  EXPECT_EQ(w.seeds, (std::vector<std::uint64_t>{3, 4}));
  EXPECT_EQ(w.costs.per_byte, 2u);
  EXPECT_EQ(w.costs.per_message, base.costs.per_message);
  EXPECT_EQ(w.duration, 777u);
}

TEST(Scenario, Errors) {
  EXPECT_THROW(load_scenario("/nonexistent/scenario.json", {}), std::runtime_error);
  TempFile bad_json("{not json");
  EXPECT_THROW(load_scenario(bad_json.path.string(), {}), std::runtime_error);
  TempFile bad_value(R"({"policy": "majority"})");
  EXPECT_THROW(load_scenario(bad_value.path.string(), {}), std::runtime_error);
  TempFile bad_type(R"({"n": "four"})");
  EXPECT_THROW(load_scenario(bad_type.path.string(), {}), std::runtime_error);
}
