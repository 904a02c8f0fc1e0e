#include "setchain/bench.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <stdexcept>
#include <unordered_map>

#include "json.hpp"

#include "setchain/wire.hpp"

namespace setchain::bench {

netsim::CostModel default_costs() { return {60'000, 6'000, 1}; }

void Workload::validate() const {
  if (!(add_rate >= 0.0) || !std::isfinite(add_rate)) throw std::invalid_argument("add rate must be non-negative");
  if (duration == 0) throw std::invalid_argument("duration must be positive");
  if (window == 0) throw std::invalid_argument("window must be positive");
  if (n < 3 * f + 1) throw std::invalid_argument("need n >= 3f+1");
  if (byzantine_servers() > f) throw std::invalid_argument("more byzantine servers than f");
  if (agg.enabled && agg.max_batch == 0) throw std::invalid_argument("max_batch must be positive");
}

std::size_t Workload::byzantine_servers() const {
  if (byz_mode == netsim::ByzantineMode::correct) return 0;
  return byz_count == 0 ? f : byz_count;
}

double Metrics::epochs_per_tick() const { return duration == 0 ? 0.0 : static_cast<double>(epochs) / duration; }

double Metrics::delivered_per_tick() const {
  return duration == 0 ? 0.0 : static_cast<double>(delivered) / duration;
}

namespace {

constexpr netsim::TimerTag kTick = 0x10ULL << 56;

struct Pending {
  SimTime added = 0;
  bool delivered = false;
};

struct Accumulator {
  WindowRow row;
  double lat_sum = 0.0;
  std::uint64_t lat_count = 0;
};

// Issues the workload. Clients are co-located with servers: adds are local
// calls on correct servers in turn, epoch increments go to f+1 servers at
// the highest epoch.
class Driver : public netsim::Process {
 public:
  Driver(const Workload& w, std::uint64_t seed, node::Cluster& cluster, NodeId observer)
      : w_(w), seed_(seed), cluster_(cluster), observer_(observer),
        key_(SigningKey::derive(w.scheme, "bench-client-" + std::to_string(seed))) {
    targets_ = cluster.correct_servers();
    epochs_on_ = w.back_to_back || w.epoch_interval > 0;
  }

  void on_start(netsim::Context& ctx) override { ctx.set_timer(1, kTick); }
  void on_message(netsim::Context&, NodeId, const Bytes&) override {}

  void on_timer(netsim::Context& ctx, netsim::TimerTag) override {
    SimTime t = ctx.now();
    if (t < w_.duration) issue_adds(t);
    if (epochs_on_) maybe_epoch(t);
    if (t < w_.duration + w_.drain) ctx.set_timer(1, kTick);
  }

  Accumulator& window_at(SimTime t) {
    std::size_t k = t / w_.window;
    if (windows_.size() <= k) windows_.resize(k + 1);
    return windows_[k];
  }

  void on_insert(const Digest& id) {
    auto it = pending_.find(id);
    if (it == pending_.end() || it->second.delivered) return;
    it->second.delivered = true;
    ++delivered_;
    ++window_at(cluster_.sim().now()).row.delivered;
    if (!epochs_on_) pending_.erase(it);
  }

  void on_stamp(const DigestSet& ids, SimTime now) {
    ++window_at(now).row.epochs;
    ++epochs_;
    for (const Digest& id : ids) {
      auto it = pending_.find(id);
      if (it == pending_.end()) continue;
      double lat = static_cast<double>(now - it->second.added);
      Accumulator& origin = window_at(it->second.added);
      origin.lat_sum += lat;
      ++origin.lat_count;
      origin.row.lat_max = std::max(origin.row.lat_max, lat);
      lat_sum_ += lat;
      lat_max_ = std::max(lat_max_, lat);
      ++window_at(now).row.stamped;
      ++stamped_;
      pending_.erase(it);
    }
  }

  std::uint64_t completed() const { return epochs_on_ ? stamped_ : delivered_; }
  bool drained() const { return adds_ == completed(); }

  const Workload& w_;
  std::uint64_t seed_;
  node::Cluster& cluster_;
  NodeId observer_;
  SigningKey key_;
  std::vector<NodeId> targets_;
  bool epochs_on_ = false;

  std::unordered_map<Digest, Pending, DigestHash> pending_;
  std::vector<Accumulator> windows_;
  std::uint64_t adds_ = 0;
  std::uint64_t delivered_ = 0;
  std::uint64_t stamped_ = 0;
  std::uint64_t epochs_ = 0;
  double lat_sum_ = 0.0;
  double lat_max_ = 0.0;

 private:
  void issue_adds(SimTime t) {
    auto target_total = static_cast<std::uint64_t>(std::floor(w_.add_rate * static_cast<double>(t + 1)));
    while (adds_ < target_total) {
      ByteWriter payload(std::max<std::size_t>(w_.payload_size, 16));
      payload.u64(seed_).u64(adds_);
      while (payload.size() < w_.payload_size) payload.u8(0);
      Element e = sign_element(std::move(payload).take(), key_);
      Digest id = element_id(e);
      pending_.emplace(id, Pending{t, false});
      cluster_.with_server(targets_[adds_ % targets_.size()],
                           [&](netsim::Context& sctx, node::SetchainServer& s) { s.add(sctx, e); });
      ++window_at(t).row.adds;
      ++adds_;
    }
  }

  void maybe_epoch(SimTime t) {
    if (!w_.back_to_back && t < next_epoch_) return;
    EpochId top = 0;
    for (NodeId s : targets_) top = std::max(top, cluster_.server(s).epoch());
    EpochId h = top + 1;
    for (NodeId s : targets_) {
      if (cluster_.server(s).consensus().proposed(h)) return;  // already under way
    }
    SimTime reissue = std::max<SimTime>(50, w_.epoch_interval);
    if (h == last_h_ && t - last_issue_ < reissue) return;

    std::vector<NodeId> ready;
    for (NodeId s = 0; s < cluster_.n(); ++s) {
      if (cluster_.server(s).epoch() == top) ready.push_back(s);
    }
    for (std::size_t k = 0; k < std::min(ready.size(), cluster_.f() + 1); ++k) {
      cluster_.with_server(ready[(rotation_ + k) % ready.size()],
                           [h](netsim::Context& sctx, node::SetchainServer& s) { s.epoch_inc(sctx, h); });
    }
    ++rotation_;
    last_h_ = h;
    last_issue_ = t;
    next_epoch_ = t + std::max<SimTime>(w_.epoch_interval, 1);
  }

  SimTime next_epoch_ = 0;
  EpochId last_h_ = 0;
  SimTime last_issue_ = 0;
  std::size_t rotation_ = 0;
};

}  // namespace

Metrics run_workload(const Workload& w, std::uint64_t seed, const std::string& run_id) {
  w.validate();
  netsim::SimConfig sc;
  sc.n = w.n;
  sc.f = w.f;
  sc.seed = seed;
  sc.delays = w.delays;
  sc.costs = w.costs;
  for (std::size_t k = 0; k < w.byzantine_servers(); ++k) {
    NodeId id = static_cast<NodeId>(w.n - 1 - k);
    if (w.byz_mode == netsim::ByzantineMode::silent) {
      sc.behaviors[id] = netsim::ByzantineBehavior::silent();
    } else {
      sc.behaviors[id] = {w.byz_mode, {}, {}};
    }
  }
  node::NodeConfig nc;
  nc.validation.scheme = w.scheme;
  nc.validation.cache = std::make_shared<VerificationCache>();
  nc.policy = w.policy;
  nc.agg = w.agg;

  node::Cluster cluster(std::move(sc), nc);
  netsim::Simulator& sim = cluster.sim();
  NodeId observer = cluster.correct_servers().front();

  auto owned = std::make_unique<Driver>(w, seed, cluster, observer);
  Driver& driver = *owned;
  sim.add_client(std::move(owned));

  cluster.server(observer).set_insert_listener([&](NodeId, const Digest& id) { driver.on_insert(id); });
  cluster.server(observer).set_stamp_listener(
      [&](NodeId, EpochId, const DigestSet& ids, SimTime now) { driver.on_stamp(ids, now); });

  std::uint64_t brb = 0;
  std::uint64_t sbc = 0;
  std::uint64_t total = 0;
  sim.set_send_observer([&](const netsim::Envelope& env) {
    ++total;
    if (env.body->empty()) return;
    std::uint8_t ch = (*env.body)[0];
    if (ch == wire::kBrbOps || ch == wire::kBrbProposals) {
      ++brb;
      ++driver.window_at(env.send_time).row.msgs_brb;
    } else if (ch == wire::kSbcConsensus) {
      ++sbc;
      ++driver.window_at(env.send_time).row.msgs_sbc;
    }
  });

  std::ofstream trace;
  if (!w.trace_path.empty() && !w.seeds.empty() && seed == w.seeds.front()) {
    trace.open(w.trace_path);
    if (!trace) throw std::runtime_error("cannot open trace file " + w.trace_path);
    sim.set_trace(&trace);
  }

  sim.run_until(w.duration);
  while (sim.now() < w.duration + w.drain && !driver.drained()) {
    sim.run_until(std::min(sim.now() + w.window, w.duration + w.drain));
  }
  sim.set_trace(nullptr);

  Metrics m;
  m.run_id = run_id;
  m.n = w.n;
  m.f = w.f;
  m.byz_mode = std::string(netsim::to_string(w.byz_mode));
  m.seed = seed;
  m.duration = w.duration;
  m.end_time = sim.now();
  std::size_t rows = (w.duration + w.window - 1) / w.window;
  driver.window_at(rows * w.window - 1);
  for (std::size_t k = 0; k < rows; ++k) {
    Accumulator& acc = driver.windows_[k];
    acc.row.start = k * w.window;
    if (acc.lat_count > 0) acc.row.lat_avg = acc.lat_sum / static_cast<double>(acc.lat_count);
    m.windows.push_back(acc.row);
  }
  // Backlog at the end of each window, from the rows themselves.
  std::int64_t outstanding = 0;
  for (WindowRow& row : m.windows) {
    outstanding += static_cast<std::int64_t>(row.adds);
    outstanding -= static_cast<std::int64_t>(driver.epochs_on_ ? row.stamped : row.delivered);
    row.backlog = outstanding;
  }
  m.epochs = driver.epochs_;
  m.adds = driver.adds_;
  m.stamped = driver.stamped_;
  m.delivered = driver.delivered_;
  m.msgs_brb = brb;
  m.msgs_sbc = sbc;
  m.msgs_total = total;
  m.lat_avg = driver.stamped_ > 0 ? driver.lat_sum_ / static_cast<double>(driver.stamped_) : 0.0;
  m.lat_max = driver.lat_max_;
  m.pending = driver.adds_ - driver.completed();
  return m;
}

namespace {

std::vector<Metrics> run_seeds(const Workload& w, const std::string& name) {
  w.validate();
  std::vector<Metrics> out;
  for (std::uint64_t seed : w.seeds) {
    std::string id = name + "-n" + std::to_string(w.n) + "-" + std::string(netsim::to_string(w.byz_mode)) + "-s" +
                     std::to_string(seed);
    out.push_back(run_workload(w, seed, id));
  }
  return out;
}

}  // namespace

std::vector<Metrics> bench_epochs(Workload w) {
  w.add_rate = 0.0;
  w.back_to_back = true;
  return run_seeds(w, "epochs");
}

std::vector<Metrics> bench_adds(Workload w) {
  w.epoch_interval = 0;
  w.back_to_back = false;
  return run_seeds(w, "adds");
}

std::vector<Metrics> bench_mixed(Workload w) {
  if (w.epoch_interval == 0 && !w.back_to_back) w.epoch_interval = 100;
  return run_seeds(w, "mixed");
}

std::vector<Metrics> bench_byzantine(Workload w) {
  if (w.byz_mode == netsim::ByzantineMode::correct) w.byz_mode = netsim::ByzantineMode::silent;
  if (w.epoch_interval == 0 && !w.back_to_back) w.epoch_interval = 100;
  return run_seeds(w, "byzantine");
}

std::vector<Metrics> bench_latency(Workload w) {
  if (w.epoch_interval == 0 && !w.back_to_back) w.epoch_interval = 200;
  return run_seeds(w, "latency");
}

double slope(const std::vector<double>& x, const std::vector<double>& y) {
  std::size_t n = std::min(x.size(), y.size());
  if (n < 2) return 0.0;
  double mx = 0.0;
  double my = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double num = 0.0;
  double den = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    num += (x[i] - mx) * (y[i] - my);
    den += (x[i] - mx) * (x[i] - mx);
  }
  return den == 0.0 ? 0.0 : num / den;
}

bool sustainable(const Metrics& m, double add_rate) {
  std::size_t total = m.windows.size();
  std::size_t tail = std::max<std::size_t>(3, (total + 4) / 5);
  if (total < tail) return false;
  std::vector<double> x;
  std::vector<double> y;
  for (std::size_t k = total - tail; k < total; ++k) {
    x.push_back(static_cast<double>(m.windows[k].start));
    y.push_back(static_cast<double>(m.windows[k].backlog));
  }
  return slope(x, y) <= 0.02 * add_rate;
}

double max_add_rate(Workload w, RateSearch search) {
  if (w.seeds.empty()) w.seeds = {1};
  w.drain = 0;
  std::uint64_t seed = w.seeds.front();
  auto ok = [&](double rate) {
    w.add_rate = rate;
    return sustainable(run_workload(w, seed, "rate-probe"), rate);
  };
  double lo = 0.0;
  double hi = 0.0;
  for (double r = search.start; r <= search.ceiling; r *= 2) {
    if (!ok(r)) {
      hi = r;
      break;
    }
    lo = r;
  }
  if (hi == 0.0) return lo;
  for (std::size_t i = 0; i < search.bisections; ++i) {
    double mid = (lo + hi) / 2;
    if (ok(mid)) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return lo;
}

void write_csv_header(std::ostream& out) {
  out << "run_id,n,f,byz_mode,seed,window_start,epochs,adds,stamped,msgs_brb,msgs_sbc,lat_avg,lat_max\n";
}

void write_csv(std::ostream& out, const std::vector<Metrics>& runs) {
  auto flags = out.flags();
  out << std::fixed << std::setprecision(3);
  for (const Metrics& m : runs) {
    for (const WindowRow& r : m.windows) {
      out << m.run_id << ',' << m.n << ',' << m.f << ',' << m.byz_mode << ',' << m.seed << ',' << r.start << ','
          << r.epochs << ',' << r.adds << ',' << r.stamped << ',' << r.msgs_brb << ',' << r.msgs_sbc << ','
          << r.lat_avg << ',' << r.lat_max << '\n';
    }
  }
  out.flags(flags);
}

Workload load_scenario(const std::string& path, Workload w) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open scenario " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("scenario " + path + ": " + e.what());
  }
  try {
    if (j.contains("n")) w.n = j.at("n").get<std::size_t>();
    if (j.contains("f")) w.f = j.at("f").get<std::size_t>();
    if (j.contains("add_rate")) w.add_rate = j.at("add_rate").get<double>();
    if (j.contains("epoch_interval")) w.epoch_interval = j.at("epoch_interval").get<SimTime>();
    if (j.contains("back_to_back")) w.back_to_back = j.at("back_to_back").get<bool>();
    if (j.contains("duration")) w.duration = j.at("duration").get<SimTime>();
    if (j.contains("window")) w.window = j.at("window").get<SimTime>();
    if (j.contains("drain")) w.drain = j.at("drain").get<SimTime>();
    if (j.contains("aggregate")) w.agg.enabled = j.at("aggregate").get<bool>();
    if (j.contains("max_batch")) w.agg.max_batch = j.at("max_batch").get<std::size_t>();
    if (j.contains("batch_timeout")) w.agg.max_wait = j.at("batch_timeout").get<SimTime>();
    if (j.contains("propose_direct")) w.agg.propose_direct = j.at("propose_direct").get<bool>();
    if (j.contains("policy")) w.policy = node::parse_stamping_policy(j.at("policy").get<std::string>());
    if (j.contains("byz_mode")) w.byz_mode = netsim::parse_byzantine_mode(j.at("byz_mode").get<std::string>());
    if (j.contains("byz_count")) w.byz_count = j.at("byz_count").get<std::size_t>();
    if (j.contains("seeds")) w.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    if (j.contains("gst")) w.delays.gst = j.at("gst").get<SimTime>();
    if (j.contains("pre_gst_max")) w.delays.pre_gst_max = j.at("pre_gst_max").get<SimTime>();
    if (j.contains("post_gst_max")) w.delays.post_gst_max = j.at("post_gst_max").get<SimTime>();
    if (j.contains("payload_size")) w.payload_size = j.at("payload_size").get<std::size_t>();
    if (j.contains("trace")) w.trace_path = j.at("trace").get<std::string>();
    if (j.contains("scheme")) {
      std::string s = j.at("scheme").get<std::string>();
      if (s == "ed25519") {
        w.scheme = SignatureScheme::ed25519;
      } else if (s == "null") {
        w.scheme = SignatureScheme::null;
      } else {
        throw std::invalid_argument("unknown scheme " + s);
      }
    }
    if (j.contains("cost")) {
      const auto& c = j.at("cost");
      if (c.contains("units_per_tick")) w.costs.units_per_tick = c.at("units_per_tick").get<std::uint64_t>();
      if (c.contains("per_message")) w.costs.per_message = c.at("per_message").get<std::uint64_t>();
      if (c.contains("per_byte")) w.costs.per_byte = c.at("per_byte").get<std::uint64_t>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("scenario " + path + ": " + e.what());
  } catch (const std::invalid_argument& e) {
    throw std::runtime_error("scenario " + path + ": " + e.what());
  }
  return w;
}

}  // namespace setchain::bench
