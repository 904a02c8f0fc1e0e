// Command-line front end for the simulated-time experiments and the
// invariant suites. CSV goes to --out (or stdout); summaries go to stderr.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "setchain/bench.hpp"
#include "setchain/properties.hpp"

using namespace setchain;

namespace {

struct Flags {
  std::size_t nodes = 4;
  std::size_t faults = 1;
  std::string byz_mode = "none";
  SimTime epoch_interval = 100;
  double add_rate = 1.0;
  SimTime duration = 2000;
  SimTime window = 100;
  SimTime drain = 0;
  std::uint64_t seed = 1;
  std::size_t seeds = 1;
  bool aggregate = false;
  std::size_t max_batch = 1000;
  SimTime batch_timeout = 5;
  std::string policy = "union";
  std::string out;
  std::string scenario;
  std::string trace;
  bool find_max_rate = false;
};

// Options shared by every experiment subcommand. Returns the options that
// override scenario values when given explicitly.
std::vector<std::pair<CLI::Option*, std::function<void(bench::Workload&)>>> add_workload_options(CLI::App* cmd,
                                                                                                  Flags& f) {
  std::vector<std::pair<CLI::Option*, std::function<void(bench::Workload&)>>> opts;
  auto bind = [&](CLI::Option* o, std::function<void(bench::Workload&)> apply) { opts.emplace_back(o, std::move(apply)); };
  bind(cmd->add_option("--nodes,-n", f.nodes, "Number of servers"), [&f](bench::Workload& w) { w.n = f.nodes; });
  bind(cmd->add_option("--faults,-f", f.faults, "Fault bound f"), [&f](bench::Workload& w) { w.f = f.faults; });
  bind(cmd->add_option("--byz-mode", f.byz_mode, "none|silent|equivocate|forge")
           ->check(CLI::IsMember({"none", "silent", "equivocate", "forge"})),
       [&f](bench::Workload& w) { w.byz_mode = netsim::parse_byzantine_mode(f.byz_mode); });
  bind(cmd->add_option("--epoch-interval", f.epoch_interval, "Ticks between epoch increments"),
       [&f](bench::Workload& w) { w.epoch_interval = f.epoch_interval; });
  bind(cmd->add_option("--add-rate", f.add_rate, "Adds per tick")->check(CLI::NonNegativeNumber),
       [&f](bench::Workload& w) { w.add_rate = f.add_rate; });
  bind(cmd->add_option("--duration", f.duration, "Simulated ticks")->check(CLI::PositiveNumber),
       [&f](bench::Workload& w) { w.duration = f.duration; });
  bind(cmd->add_option("--window", f.window, "Ticks per CSV row")->check(CLI::PositiveNumber),
       [&f](bench::Workload& w) { w.window = f.window; });
  bind(cmd->add_option("--drain", f.drain, "Extra ticks to clear the backlog"),
       [&f](bench::Workload& w) { w.drain = f.drain; });
  bind(cmd->add_option("--seed", f.seed, "First seed"), [&f](bench::Workload& w) {
    w.seeds.clear();
    for (std::size_t k = 0; k < std::max<std::size_t>(1, f.seeds); ++k) w.seeds.push_back(f.seed + k);
  });
  bind(cmd->add_option("--seeds", f.seeds, "Number of consecutive seeds"), [&f](bench::Workload& w) {
    w.seeds.clear();
    for (std::size_t k = 0; k < std::max<std::size_t>(1, f.seeds); ++k) w.seeds.push_back(f.seed + k);
  });
  bind(cmd->add_flag("--aggregate", f.aggregate, "Batch adds before broadcasting"),
       [&f](bench::Workload& w) { w.agg.enabled = f.aggregate; });
  bind(cmd->add_option("--max-batch", f.max_batch, "Elements per batch")->check(CLI::PositiveNumber),
       [&f](bench::Workload& w) { w.agg.max_batch = f.max_batch; });
  bind(cmd->add_option("--batch-timeout", f.batch_timeout, "Ticks before a partial batch is flushed"),
       [&f](bench::Workload& w) { w.agg.max_wait = f.batch_timeout; });
  bind(cmd->add_option("--policy", f.policy, "union|quorum")->check(CLI::IsMember({"union", "quorum"})),
       [&f](bench::Workload& w) { w.policy = node::parse_stamping_policy(f.policy); });
  bind(cmd->add_option("--trace", f.trace, "JSONL event trace of the first seed"),
       [&f](bench::Workload& w) { w.trace_path = f.trace; });
  cmd->add_option("--out,-o", f.out, "CSV output path (default stdout)");
  cmd->add_option("--scenario", f.scenario, "JSON scenario; explicit flags override it")->check(CLI::ExistingFile);
  cmd->add_flag("--find-max-rate", f.find_max_rate, "Search the highest sustainable add rate instead");
  return opts;
}

void print_summary(const std::vector<bench::Metrics>& runs) {
  for (const auto& m : runs) {
    std::fprintf(stderr,
                 "seed=%llu n=%zu f=%zu byz=%s epochs=%llu (%.4f/tick) adds=%llu stamped=%llu delivered=%llu "
                 "(%.3f/tick) pending=%llu lat_avg=%.1f lat_max=%.1f msgs=%llu (brb %llu, sbc %llu)\n",
                 static_cast<unsigned long long>(m.seed), m.n, m.f, m.byz_mode.c_str(),
                 static_cast<unsigned long long>(m.epochs), m.epochs_per_tick(),
                 static_cast<unsigned long long>(m.adds), static_cast<unsigned long long>(m.stamped),
                 static_cast<unsigned long long>(m.delivered), m.delivered_per_tick(),
                 static_cast<unsigned long long>(m.pending), m.lat_avg, m.lat_max,
                 static_cast<unsigned long long>(m.msgs_total), static_cast<unsigned long long>(m.msgs_brb),
                 static_cast<unsigned long long>(m.msgs_sbc));
  }
}

int run_properties(std::uint64_t seeds, const std::string& suite) {
  properties::PropertiesConfig cfg;
  cfg.setchain.seeds = seeds;
  bool all = suite == "all";
  if (!all && suite != "setchain") cfg.setchain.seeds = 0;
  if (!all && suite != "brb") cfg.brb.cells.clear();
  if (!all && suite != "sbc") cfg.sbc.seeds = 0;
  if (!all && suite != "oracle") cfg.oracle.scripts = 0;
  cfg.client = all || suite == "client";
  bool ok = true;
  properties::run_properties(cfg, [&](const properties::Report& r) {
    if (r.runs == 0) return;
    std::cout << r.summary() << '\n';
    for (const auto& f : r.failures) std::cout << "  " << f << '\n';
    std::cout.flush();
    ok = ok && r.ok();
  });
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Setchain simulated-time experiments"};
  app.require_subcommand(1);

  Flags flags;
  using Runner = std::vector<bench::Metrics> (*)(bench::Workload);
  struct Experiment {
    const char* name;
    const char* help;
    Runner run;
    CLI::App* cmd = nullptr;
    std::vector<std::pair<CLI::Option*, std::function<void(bench::Workload&)>>> opts;
  };
  std::vector<Experiment> experiments{
      {"epochs", "Back-to-back epoch changes, no adds", bench::bench_epochs, nullptr, {}},
      {"adds", "Adds only, no epoch changes", bench::bench_adds, nullptr, {}},
      {"mixed", "Adds with a fixed epoch interval", bench::bench_mixed, nullptr, {}},
      {"byzantine", "Mixed workload with faulty servers (silent unless --byz-mode)", bench::bench_byzantine, nullptr, {}},
      {"latency", "Long mixed run for stamp latency", bench::bench_latency, nullptr, {}},
  };
  for (auto& e : experiments) {
    e.cmd = app.add_subcommand(e.name, e.help);
    e.opts = add_workload_options(e.cmd, flags);
  }

  std::uint64_t prop_seeds = 100;
  std::string prop_suite = "all";
  CLI::App* props = app.add_subcommand("properties", "Run the randomised invariant suites");
  props->add_option("--seeds", prop_seeds, "Seeds per cell of the setchain suite");
  props->add_option("--suite", prop_suite, "all|setchain|brb|sbc|oracle|client")
      ->check(CLI::IsMember({"all", "setchain", "brb", "sbc", "oracle", "client"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  if (props->parsed()) return run_properties(prop_seeds, prop_suite);

  for (auto& e : experiments) {
    if (!e.cmd->parsed()) continue;
    try {
      bench::Workload w;
      w.n = flags.nodes;
      w.f = flags.faults;
      w.epoch_interval = flags.epoch_interval;
      w.add_rate = flags.add_rate;
      w.duration = flags.duration;
      w.window = flags.window;
      w.agg.max_batch = flags.max_batch;
      w.agg.max_wait = flags.batch_timeout;
      if (!flags.scenario.empty()) w = bench::load_scenario(flags.scenario, w);
      for (auto& [opt, apply] : e.opts) {
        if (opt->count() > 0) apply(w);
      }
      w.validate();

      if (flags.find_max_rate) {
        std::printf("%.4f\n", bench::max_add_rate(w));
        return 0;
      }
      std::vector<bench::Metrics> runs = e.run(w);
      std::ofstream file;
      if (!flags.out.empty()) {
        file.open(flags.out);
        if (!file) throw std::runtime_error("cannot write " + flags.out);
      }
      std::ostream& out = flags.out.empty() ? std::cout : file;
      bench::write_csv_header(out);
      bench::write_csv(out, runs);
      print_summary(runs);
    } catch (const std::exception& ex) {
      std::fprintf(stderr, "error: %s\n", ex.what());
      return 2;
    }
  }
  return 0;
}
