#include "setchain/properties.hpp"

#include <algorithm>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "setchain/brb.hpp"
#include "setchain/client.hpp"
#include "setchain/element.hpp"
#include "setchain/history.hpp"
#include "setchain/node.hpp"
#include "setchain/oracle.hpp"
#include "setchain/sbc.hpp"
#include "setchain/wire.hpp"

namespace setchain::properties {

namespace {

constexpr std::size_t kKeptFailures = 8;

using netsim::ByzantineMode;

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}
  std::uint64_t between(std::uint64_t lo, std::uint64_t hi) {
    return std::uniform_int_distribution<std::uint64_t>(lo, hi)(gen_);
  }
  bool coin(double p = 0.5) { return std::bernoulli_distribution(p)(gen_); }
  std::uint64_t raw() { return gen_(); }
  std::mt19937_64& gen() { return gen_; }

 private:
  std::mt19937_64 gen_;
};

std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
  std::uint64_t x = a * 0x9E3779B97F4A7C15ULL ^ (b + 0x632BE59BD9B4E019ULL + (a << 6) + (a >> 2));
  x ^= x >> 31;
  return x * 0xBF58476D1CE4E5B9ULL;
}

std::string cell_name(std::size_t n, ByzantineMode mode, std::uint64_t seed) {
  return "n=" + std::to_string(n) + " mode=" + std::string(netsim::to_string(mode)) + " seed=" + std::to_string(seed);
}

// Payloads starting with 0xFF are rejected by the application predicate.
bool app_predicate(ByteView p) { return p.empty() || p[0] != 0xFF; }

Element corrupt_signature(Element e) {
  e.signature.bytes[7] ^= 0x20;
  return e;
}

netsim::ByzantineBehavior behavior_for(ByzantineMode mode) {
  if (mode == ByzantineMode::silent) return netsim::ByzantineBehavior::silent();
  return {mode, {}, {}};
}

std::vector<NodeId> pick_faulty(Rng& rng, std::size_t n, std::size_t count) {
  std::vector<NodeId> ids(n);
  std::iota(ids.begin(), ids.end(), 0);
  std::shuffle(ids.begin(), ids.end(), rng.gen());
  ids.resize(count);
  return ids;
}

bool prefix_agree(const History& a, const History& b) {
  EpochId common = std::min(a.epoch(), b.epoch());
  for (EpochId i = 1; i <= common; ++i) {
    if (a.at(i) != b.at(i)) return false;
  }
  return true;
}

std::optional<EpochId> certificate_epoch(const Element& e) {
  if (!is_certificate_payload(e.payload)) return std::nullopt;
  auto cert = decode_certificate_payload(e.payload);
  if (!cert) return std::nullopt;
  return cert->epoch;
}

}  // namespace

void Report::check(bool ok, const std::string& what) {
  ++checks;
  if (ok) return;
  ++violations;
  if (failures.size() < kKeptFailures) failures.push_back(what);
}

void Report::merge(const Report& other) {
  runs += other.runs;
  checks += other.checks;
  violations += other.violations;
  for (const auto& f : other.failures) {
    if (failures.size() < kKeptFailures) failures.push_back(f);
  }
}

std::string Report::summary() const {
  std::ostringstream out;
  out << name << ": runs=" << runs << " checks=" << checks << " violations=" << violations;
  for (const auto& f : failures) out << "\n  " << f;
  return out.str();
}

// ---------------------------------------------------------------------------
// Setchain cluster runs

Report check_setchain_run(std::size_t n, ByzantineMode mode, std::uint64_t seed, const SetchainSuiteConfig& cfg) {
  Report rep;
  rep.name = "setchain";
  rep.runs = 1;
  const std::string cell = cell_name(n, mode, seed);
  const std::size_t f = (n - 1) / 3;
  Rng rng(mix(mix(seed, n), static_cast<std::uint64_t>(mode)));

  netsim::SimConfig sc;
  sc.n = n;
  sc.f = f;
  sc.seed = rng.raw();
  sc.delays.gst = rng.between(0, 300);
  sc.delays.pre_gst_max = rng.between(1, 40);
  sc.delays.post_gst_max = rng.between(1, 3);
  std::vector<NodeId> faulty;
  if (mode != ByzantineMode::correct) faulty = pick_faulty(rng, n, f);
  for (NodeId id : faulty) sc.behaviors[id] = behavior_for(mode);

  node::NodeConfig nc;
  nc.validation.scheme = cfg.scheme;
  nc.validation.extra_predicate = app_predicate;
  nc.validation.cache = std::make_shared<VerificationCache>();
  nc.policy = rng.coin() ? node::StampingPolicy::quorum_f_plus_1 : node::StampingPolicy::union_valid;
  nc.agg.enabled = rng.coin();
  nc.agg.max_batch = rng.between(1, 64);
  nc.agg.max_wait = rng.between(1, 10);
  nc.agg.propose_direct = rng.coin();
  nc.certify_epochs = rng.coin();
  nc.track_provenance = true;

  node::Cluster cluster(sc, nc);
  netsim::Simulator& sim = cluster.sim();
  const std::vector<NodeId> correct = cluster.correct_servers();
  std::vector<NodeId> add_targets = correct;
  if (mode == ByzantineMode::equivocate_brb) add_targets.insert(add_targets.end(), faulty.begin(), faulty.end());

  // Validation without the shared cache, so a caching bug cannot hide an
  // invalid element.
  ValidationPolicy fresh;
  fresh.scheme = cfg.scheme;
  fresh.extra_predicate = app_predicate;

  // Online checks: every stamp at a correct server keeps its own view
  // consistent and agrees with what other correct servers stamped.
  std::map<EpochId, DigestSet> first_stamp;
  std::map<Digest, EpochId> stamped_in;
  cluster.set_stamp_listener([&](NodeId self, EpochId h, const DigestSet& ids, SimTime) {
    if (!sim.is_correct(self)) return;
    const node::SetchainServer& s = cluster.server(self);
    rep.check(s.get().consistent(), cell + ": inconsistent get after stamping epoch " + std::to_string(h));
    auto [it, fresh_epoch] = first_stamp.emplace(h, ids);
    rep.check(fresh_epoch || it->second == ids,
              cell + ": server " + std::to_string(self) + " stamped a different epoch " + std::to_string(h));
    for (const Digest& id : ids) {
      auto [jt, first] = stamped_in.emplace(id, h);
      rep.check(first || jt->second == h, cell + ": element stamped in epochs " + std::to_string(jt->second) +
                                              " and " + std::to_string(h));
    }
  });

  std::vector<SigningKey> clients;
  for (int k = 0; k < 3; ++k) {
    clients.push_back(SigningKey::derive(cfg.scheme, "property-client-" + std::to_string(k)));
  }

  const SimTime span = 600;
  const std::size_t adds = cfg.min_adds + rng.between(0, 50);
  std::vector<Element> issued;  // every valid element handed to some server
  ElementMap at_correct;        // valid elements added at a correct server
  std::set<Digest> invalid_ids;
  for (std::size_t i = 0; i < adds; ++i) {
    SimTime t = rng.between(0, span);
    NodeId target = add_targets[rng.between(0, add_targets.size() - 1)];
    Element e;
    bool valid = true;
    std::uint64_t roll = rng.between(0, 99);
    if (roll < 10 && !issued.empty()) {
      e = issued[rng.between(0, issued.size() - 1)];
    } else {
      Bytes payload = to_bytes("s" + std::to_string(seed) + "-e" + std::to_string(i));
      if (roll >= 95) payload.insert(payload.begin(), 0xFF);
      e = sign_element(std::move(payload), clients[i % clients.size()]);
      if (roll >= 95) {
        valid = false;
      } else if (roll >= 90 && cfg.scheme == SignatureScheme::ed25519) {
        e = corrupt_signature(std::move(e));
        valid = false;
      }
    }
    Digest id = element_id(e);
    if (valid) {
      issued.push_back(e);
      if (sim.is_correct(target)) at_correct.emplace(id, e);
    } else {
      invalid_ids.insert(id);
    }
    sim.schedule(t, target, [&cluster, &rep, &cell, e, valid](netsim::Context& ctx) {
      node::AddStatus st = cluster.server(ctx.self()).add(ctx, e);
      rep.check((st == node::AddStatus::invalid) == !valid, cell + ": add status does not match validity");
    });
  }

  const std::size_t epochs = cfg.min_epochs + rng.between(0, 5);
  for (std::size_t k = 0; k < epochs; ++k) {
    SimTime t = (k + 1) * span / epochs + rng.between(0, 20);
    NodeId target = correct[rng.between(0, correct.size() - 1)];
    bool probe_stale = rng.coin(0.1);
    sim.schedule(t, target, [&cluster, &rep, &cell, probe_stale](netsim::Context& ctx) {
      node::SetchainServer& s = cluster.server(ctx.self());
      if (probe_stale) {
        rep.check(s.epoch_inc(ctx, s.epoch() + 2) == node::EpochIncStatus::future, cell + ": future epoch accepted");
        if (s.epoch() > 0) {
          rep.check(s.epoch_inc(ctx, s.epoch()) == node::EpochIncStatus::stale, cell + ": stale epoch accepted");
        }
      }
      s.epoch_inc(ctx, s.epoch() + 1);
    });
  }

  // Random snapshots: consistent sets and prefix agreement between any two
  // correct servers at arbitrary instants.
  for (int k = 0; k < 12; ++k) {
    sim.schedule(rng.between(0, span + 200), correct.front(), [&cluster, &rep, &cell, &correct](netsim::Context&) {
      for (std::size_t a = 0; a < correct.size(); ++a) {
        const node::SetchainServer& sa = cluster.server(correct[a]);
        rep.check(sa.get().consistent(), cell + ": inconsistent get at snapshot");
        for (std::size_t b = a + 1; b < correct.size(); ++b) {
          rep.check(prefix_agree(sa.history(), cluster.server(correct[b]).history()),
                    cell + ": histories diverge at snapshot");
        }
      }
    });
  }

  auto run = [&]() {
    try {
      sim.run_until_quiescent();
      return true;
    } catch (const std::exception& ex) {
      rep.check(false, cell + ": " + ex.what());
      return false;
    }
  };
  if (!run()) return rep;

  // Keep increasing epochs until nothing but the certificates of the latest
  // epoch is left unstamped.
  auto top_epoch = [&]() {
    EpochId top = 0;
    for (NodeId id : correct) top = std::max(top, cluster.server(id).epoch());
    return top;
  };
  auto settled = [&](EpochId top) {
    for (NodeId id : correct) {
      const node::SetchainServer& s = cluster.server(id);
      if (s.epoch() != top || s.buffered_count() != 0) return false;
      for (const auto& [eid, e] : s.theset()) {
        if (s.history().contains(eid)) continue;
        if (certificate_epoch(e) != std::optional<EpochId>(top)) return false;
      }
    }
    return top >= cfg.min_epochs;
  };
  for (int iter = 0; iter < 64; ++iter) {
    EpochId top = top_epoch();
    if (settled(top)) break;
    for (NodeId id : correct) {
      if (cluster.server(id).epoch() != top) continue;
      cluster.with_server(id, [top](netsim::Context& ctx, node::SetchainServer& s) { s.epoch_inc(ctx, top + 1); });
    }
    if (!run()) return rep;
  }
  const EpochId top = top_epoch();
  rep.check(settled(top), cell + ": servers did not settle (eventual-get / termination)");
  rep.check(top >= cfg.min_epochs, cell + ": fewer epochs than required");

  std::map<Digest, const Element*> known;
  for (const Element& e : issued) known.emplace(element_id(e), &e);
  const std::vector<PublicKey>& server_keys = cluster.server_keys();

  for (std::size_t a = 0; a < correct.size(); ++a) {
    const node::SetchainServer& s = cluster.server(correct[a]);
    GetResult r = s.get();
    const std::string who = cell + " server " + std::to_string(correct[a]);

    rep.check(r.consistent(), who + ": history not contained in the set");

    // Unique epochs: no element twice across entries.
    std::size_t total = 0;
    for (const DigestSet& entry : r.history.entries()) total += entry.size();
    rep.check(total == r.history.element_count(), who + ": element stamped in two epochs");

    for (std::size_t b = a + 1; b < correct.size(); ++b) {
      rep.check(r.history == cluster.server(correct[b]).history(), who + ": final histories differ");
    }

    for (const auto& [id, e] : at_correct) {
      rep.check(r.set_view.contains(id), who + ": element added at a correct server is missing");
    }

    for (const auto& [id, e] : r.set_view) {
      std::optional<EpochId> cert = certificate_epoch(e);
      rep.check(r.history.contains(id) || cert == std::optional<EpochId>(top), who + ": element never stamped");
      rep.check(validate(e, fresh), who + ": invalid element in the set");
      rep.check(!invalid_ids.contains(id), who + ": rejected element in the set");
      rep.check(s.provenance(id).has_value(), who + ": element without provenance");
      bool origin_known = known.contains(id);
      if (!origin_known && cert) {
        origin_known = std::find(server_keys.begin(), server_keys.end(), e.author) != server_keys.end();
      }
      rep.check(origin_known, who + ": element that was never added");
    }
  }
  return rep;
}

Report run_setchain_suite(const SetchainSuiteConfig& cfg) {
  Report total;
  total.name = "setchain";
  for (std::size_t n : cfg.sizes) {
    for (ByzantineMode mode : cfg.modes) {
      for (std::uint64_t s = cfg.first_seed; s < cfg.first_seed + cfg.seeds; ++s) {
        total.merge(check_setchain_run(n, mode, s, cfg));
      }
    }
  }
  return total;
}

// ---------------------------------------------------------------------------
// Reliable broadcast

namespace {

class BrbProbe : public netsim::Process {
 public:
  BrbProbe(NodeId self, std::size_t n, std::size_t f)
      : brb_(self, n, f, [this](netsim::Context&, const brb::Tag& tag, const std::shared_ptr<const Bytes>& p) {
          deliveries[tag].push_back(sha256(*p));
        }) {}

  void on_message(netsim::Context& ctx, NodeId from, const Bytes& body) override { brb_.handle(ctx, from, body); }

  brb::ReliableBroadcast brb_;
  std::map<brb::Tag, std::vector<Digest>> deliveries;
};

}  // namespace

Report check_brb_run(std::size_t n, ByzantineMode mode, std::uint64_t seed, std::size_t broadcasts_per_node) {
  Report rep;
  rep.name = "brb";
  rep.runs = 1;
  const std::string cell = cell_name(n, mode, seed);
  const std::size_t f = (n - 1) / 3;
  Rng rng(mix(mix(seed, n), 0xB0B0 + static_cast<std::uint64_t>(mode)));

  netsim::SimConfig sc;
  sc.n = n;
  sc.f = f;
  sc.seed = rng.raw();
  sc.delays.gst = rng.between(0, 200);
  sc.delays.pre_gst_max = rng.between(1, 50);
  sc.delays.post_gst_max = rng.between(1, 4);
  for (NodeId id : pick_faulty(rng, n, f)) {
    if (mode == ByzantineMode::equivocate_brb) {
      sc.behaviors[id] = {mode, brb::equivocating_rewrite(n), {}};
    } else {
      sc.behaviors[id] = behavior_for(mode);
    }
  }
  netsim::Simulator sim(sc, [&](NodeId id) { return std::make_unique<BrbProbe>(id, n, f); });

  std::map<brb::Tag, Digest> sent;  // by correct origins
  for (NodeId origin = 0; origin < n; ++origin) {
    if (sim.mode(origin) == ByzantineMode::silent) continue;
    for (std::size_t k = 0; k < broadcasts_per_node; ++k) {
      Bytes payload = to_bytes("brb-" + std::to_string(seed) + "-" + std::to_string(origin) + "-" + std::to_string(k));
      payload.resize(payload.size() + rng.between(0, 64), static_cast<std::uint8_t>(k));
      std::uint8_t channel = rng.coin() ? wire::kBrbOps : wire::kBrbProposals;
      bool correct_origin = sim.is_correct(origin);
      sim.schedule(rng.between(0, 150), origin, [&sim, &sent, origin, channel, payload, correct_origin](netsim::Context& ctx) {
        auto* p = sim.process_as<BrbProbe>(origin);
        brb::Tag tag = p->brb_.broadcast(ctx, channel, payload);
        if (correct_origin) sent.emplace(tag, sha256(payload));
      });
    }
  }
  try {
    sim.run_until_quiescent();
  } catch (const std::exception& ex) {
    rep.check(false, cell + ": " + ex.what());
    return rep;
  }

  const std::vector<NodeId> correct = sim.correct_servers();
  std::map<brb::Tag, Digest> agreed;
  std::set<brb::Tag> any_delivered;
  for (NodeId id : correct) {
    for (const auto& [tag, ds] : sim.process_as<BrbProbe>(id)->deliveries) {
      any_delivered.insert(tag);
      rep.check(ds.size() == 1, cell + ": node " + std::to_string(id) + " delivered a tag twice");
      auto [it, first] = agreed.emplace(tag, ds.front());
      rep.check(first || it->second == ds.front(), cell + ": correct nodes delivered different payloads");
      if (sim.is_correct(tag.origin)) {
        auto st = sent.find(tag);
        rep.check(st != sent.end() && st->second == ds.front(),
                  cell + ": delivered a payload its correct origin never broadcast");
      }
    }
  }
  for (const brb::Tag& tag : any_delivered) {
    for (NodeId id : correct) {
      rep.check(sim.process_as<BrbProbe>(id)->deliveries.contains(tag),
                cell + ": node " + std::to_string(id) + " missed a delivered tag (totality)");
    }
  }
  for (const auto& [tag, d] : sent) {
    rep.check(any_delivered.contains(tag), cell + ": broadcast by a correct origin never delivered");
  }
  return rep;
}

Report run_brb_suite(const BrbSuiteConfig& cfg) {
  Report total;
  total.name = "brb";
  for (const BrbCell& c : cfg.cells) {
    for (ByzantineMode mode : cfg.modes) {
      for (std::uint64_t s = 0; s < c.seeds; ++s) total.merge(check_brb_run(c.n, mode, s, cfg.broadcasts_per_node));
    }
  }
  return total;
}

// ---------------------------------------------------------------------------
// Set consensus

namespace {

ValidationPolicy sbc_policy() {
  static const std::shared_ptr<VerificationCache> cache = std::make_shared<VerificationCache>();
  ValidationPolicy p;
  p.scheme = SignatureScheme::ed25519;
  p.extra_predicate = app_predicate;
  p.cache = cache;
  return p;
}

class SbcProbe : public netsim::Process {
 public:
  SbcProbe(NodeId self, std::size_t n, std::size_t f)
      : policy_(sbc_policy()),
        brb_(self, n, f,
             [this](netsim::Context& ctx, const brb::Tag& tag, const std::shared_ptr<const Bytes>& p) {
               if (tag.channel == wire::kBrbProposals) sbc_.on_proposal(ctx, tag.origin, tag.seq, *p);
             }),
        sbc_(self, n, f, {}, brb_, [this](const Element& e, const Digest& id) { return validate(e, id, policy_); },
             [this](netsim::Context&, EpochId h, const sbc::DecidedSet& d) { decided[h].push_back(d); }) {}

  void on_message(netsim::Context& ctx, NodeId from, const Bytes& body) override {
    if (body.empty()) return;
    if (body[0] == wire::kBrbProposals) brb_.handle(ctx, from, body);
    if (body[0] == wire::kSbcConsensus) sbc_.handle(ctx, from, body);
  }
  void on_timer(netsim::Context& ctx, netsim::TimerTag tag) override { sbc_.on_timer(ctx, tag); }

  ValidationPolicy policy_;
  brb::ReliableBroadcast brb_;
  sbc::SetConsensus sbc_;
  std::map<EpochId, std::vector<sbc::DecidedSet>> decided;
};

Bytes canonical(const sbc::DecidedSet& d) {
  ByteWriter w;
  for (const auto& [slot, elements] : d) {
    w.u32(slot).u64(elements.size());
    for (const auto& [id, e] : elements) w.raw(id.bytes);
  }
  return std::move(w).take();
}

const std::vector<Element>& sbc_pool() {
  static const std::vector<Element> pool = [] {
    SigningKey key = SigningKey::derive(SignatureScheme::ed25519, "sbc-pool");
    std::vector<Element> out;
    for (int i = 0; i < 16; ++i) out.push_back(sign_element(to_bytes("sbc-element-" + std::to_string(i)), key));
    out.push_back(sign_element(Bytes{0xFF, 'x'}, key));                               // predicate-invalid
    out.push_back(corrupt_signature(sign_element(to_bytes("sbc-forged"), key)));  // bad signature
    return out;
  }();
  return pool;
}

}  // namespace

Report check_sbc_run(std::size_t n, std::uint64_t seed) {
  Report rep;
  rep.name = "sbc";
  rep.runs = 1;
  const std::size_t f = (n - 1) / 3;
  const ByzantineMode modes[] = {ByzantineMode::correct, ByzantineMode::silent, ByzantineMode::equivocate_brb};
  const ByzantineMode mode = modes[seed % 3];
  const std::string cell = cell_name(n, mode, seed);
  Rng rng(mix(seed, 0x5BC0 + n));

  netsim::SimConfig sc;
  sc.n = n;
  sc.f = f;
  sc.seed = rng.raw();
  sc.delays.gst = rng.between(0, 150);
  sc.delays.pre_gst_max = rng.between(1, 30);
  sc.delays.post_gst_max = rng.between(1, 3);
  if (mode != ByzantineMode::correct) {
    for (NodeId id : pick_faulty(rng, n, f)) {
      sc.behaviors[id] = mode == ByzantineMode::silent ? netsim::ByzantineBehavior::silent()
                                                       : netsim::ByzantineBehavior{mode, sbc::equivocating_rewrite(n), {}};
    }
  }
  netsim::Simulator sim(sc, [&](NodeId id) { return std::make_unique<SbcProbe>(id, n, f); });
  const std::vector<NodeId> correct = sim.correct_servers();
  const std::vector<Element>& pool = sbc_pool();
  const ValidationPolicy policy = sbc_policy();

  auto random_subset = [&](std::size_t max_size) {
    ElementMap out;
    std::size_t size = rng.between(0, max_size);
    for (std::size_t k = 0; k < size; ++k) {
      const Element& e = pool[rng.between(0, pool.size() - 1)];
      out.emplace(element_id(e), e);
    }
    return out;
  };

  const EpochId instances = 4;
  for (EpochId h = 1; h <= instances; ++h) {
    std::map<NodeId, ElementMap> proposals;
    ElementMap shared = random_subset(6);
    const Element& common = pool[rng.between(0, 15)];
    for (NodeId id = 0; id < n; ++id) {
      ElementMap p;
      switch (h) {
        case 2: p = shared; break;
        case 3:
          p = random_subset(5);
          p.emplace(element_id(common), common);
          break;
        case 4:
          if (rng.coin()) p = random_subset(2);
          break;
        default: p = random_subset(8); break;
      }
      proposals.emplace(id, std::move(p));
    }
    // Instance 3 starts after GST so the shared element must survive.
    SimTime start = sim.now() + 1;
    if (h == 3) start = std::max(start, sc.delays.gst);
    for (NodeId id = 0; id < n; ++id) {
      if (sim.mode(id) == ByzantineMode::silent) continue;
      sim.schedule(start + rng.between(0, 3), id, [&sim, id, h, p = proposals.at(id)](netsim::Context& ctx) {
        sim.process_as<SbcProbe>(id)->sbc_.propose(ctx, h, p);
      });
    }
    try {
      sim.run_until_quiescent();
    } catch (const std::exception& ex) {
      rep.check(false, cell + ": " + ex.what());
      return rep;
    }

    const std::string at = cell + " instance " + std::to_string(h);
    std::optional<Bytes> reference;
    for (NodeId id : correct) {
      const auto& got = sim.process_as<SbcProbe>(id)->decided;
      auto it = got.find(h);
      rep.check(it != got.end(), at + ": node " + std::to_string(id) + " never delivered (termination)");
      if (it == got.end()) continue;
      rep.check(it->second.size() == 1, at + ": delivered more than once");
      const sbc::DecidedSet& d = it->second.front();
      Bytes enc = canonical(d);
      if (!reference) reference = enc;
      rep.check(*reference == enc, at + ": correct nodes decided different sets");
      rep.check(d.size() >= n - f, at + ": fewer than n-f proposals decided");

      ElementMap all;
      for (const auto& [slot, elements] : d) {
        const ElementMap& intended = proposals.at(slot);
        for (const auto& [eid, e] : elements) {
          all.emplace(eid, e);
          rep.check(validate(e, eid, policy), at + ": invalid element decided");
          rep.check(intended.contains(eid), at + ": decided element outside its proposer's proposal");
        }
        if (sim.is_correct(slot)) {
          std::size_t valid = 0;
          for (const auto& [eid, e] : intended) valid += validate(e, eid, policy) ? 1 : 0;
          rep.check(elements.size() == valid, at + ": correct proposal altered");
        }
      }
      if (h == 2) {
        ElementMap expect;
        for (const auto& [eid, e] : shared) {
          if (validate(e, eid, policy)) expect.emplace(eid, e);
        }
        rep.check(all == expect, at + ": identical proposals but a different decided set");
      }
      if (h == 3) rep.check(all.contains(element_id(common)), at + ": element in every correct proposal was censored");
    }
  }
  return rep;
}

Report run_sbc_suite(const SbcSuiteConfig& cfg) {
  Report total;
  total.name = "sbc";
  for (std::uint64_t s = 0; s < cfg.seeds; ++s) total.merge(check_sbc_run(cfg.n, s));
  return total;
}

// ---------------------------------------------------------------------------
// Sequential oracle

Report check_oracle_script(std::uint64_t seed, std::size_t ops, bool serialized) {
  Report rep;
  rep.name = "oracle";
  rep.runs = 1;
  const std::string cell = std::string(serialized ? "serialized" : "concurrent") + " seed=" + std::to_string(seed);
  Rng rng(mix(seed, serialized ? 0x0AC1E : 0xC0C0));

  const std::size_t n = rng.coin(0.75) ? 4 : 7;
  netsim::SimConfig sc;
  sc.n = n;
  sc.f = (n - 1) / 3;
  sc.seed = rng.raw();
  sc.delays.gst = rng.between(0, 100);
  sc.delays.pre_gst_max = rng.between(1, 20);
  sc.delays.post_gst_max = rng.between(1, 3);

  node::NodeConfig nc;
  nc.validation.scheme = SignatureScheme::null;
  nc.validation.extra_predicate = app_predicate;
  nc.policy = rng.coin() ? node::StampingPolicy::quorum_f_plus_1 : node::StampingPolicy::union_valid;
  nc.agg.enabled = rng.coin();
  nc.agg.max_batch = rng.between(1, 8);
  nc.agg.max_wait = rng.between(1, 6);
  nc.agg.propose_direct = rng.coin();
  node::Cluster cluster(sc, nc);
  netsim::Simulator& sim = cluster.sim();

  ValidationPolicy oracle_policy;
  oracle_policy.scheme = SignatureScheme::null;
  oracle_policy.extra_predicate = app_predicate;
  SequentialSetchain oracle(oracle_policy);

  SigningKey key = SigningKey::derive(SignatureScheme::null, "oracle-client");
  std::vector<Element> pool;
  for (int i = 0; i < 24; ++i) {
    Bytes payload = to_bytes("oracle-" + std::to_string(seed) + "-" + std::to_string(i));
    if (i % 8 == 7) payload.insert(payload.begin(), 0xFF);
    pool.push_back(sign_element(std::move(payload), key));
  }

  auto settle = [&]() {
    try {
      sim.run_until_quiescent();
      return true;
    } catch (const std::exception& ex) {
      rep.check(false, cell + ": " + ex.what());
      return false;
    }
  };

  for (std::size_t i = 0; i < ops; ++i) {
    NodeId target = static_cast<NodeId>(rng.between(0, n - 1));
    bool inc = rng.coin(0.25);
    SimTime at = serialized ? sim.now() : rng.between(0, 400);
    if (inc) {
      sim.schedule(at, target, [&cluster](netsim::Context& ctx) {
        node::SetchainServer& s = cluster.server(ctx.self());
        s.epoch_inc(ctx, s.epoch() + 1);
      });
      if (serialized) oracle.epoch_inc(oracle.epoch() + 1);
    } else {
      const Element& e = pool[rng.between(0, pool.size() - 1)];
      sim.schedule(at, target, [&cluster, e](netsim::Context& ctx) { cluster.server(ctx.self()).add(ctx, e); });
      oracle.add(e);
    }
    if (serialized && !settle()) return rep;
  }
  if (!serialized) {
    if (!settle()) return rep;
    // Stamp whatever is left so the union can be compared.
    for (int iter = 0; iter < 16; ++iter) {
      bool pending = false;
      for (NodeId id = 0; id < n; ++id) {
        const node::SetchainServer& s = cluster.server(id);
        pending = pending || s.unstamped_count() > 0 || s.buffered_count() > 0;
      }
      if (!pending) break;
      EpochId top = 0;
      for (NodeId id = 0; id < n; ++id) top = std::max(top, cluster.server(id).epoch());
      for (NodeId id = 0; id < n; ++id) {
        cluster.with_server(id, [top](netsim::Context& ctx, node::SetchainServer& s) { s.epoch_inc(ctx, top + 1); });
      }
      if (!settle()) return rep;
    }
    oracle.epoch_inc(oracle.epoch() + 1);
  }

  const GetResult want = oracle.get();
  DigestSet want_union;
  for (const DigestSet& entry : want.history.entries()) want_union.insert(entry.begin(), entry.end());

  for (NodeId id = 0; id < n; ++id) {
    const node::SetchainServer& s = cluster.server(id);
    const std::string who = cell + " server " + std::to_string(id);
    bool same_set = s.theset().size() == want.set_view.size() &&
                    std::equal(s.theset().begin(), s.theset().end(), want.set_view.begin(),
                               [](const auto& a, const auto& b) { return a.first == b.first; });
    rep.check(same_set, who + ": set differs from the oracle");
    if (serialized) {
      rep.check(s.history() == want.history, who + ": history differs from the oracle");
      continue;
    }
    DigestSet got_union;
    std::size_t total = 0;
    for (const DigestSet& entry : s.history().entries()) {
      got_union.insert(entry.begin(), entry.end());
      total += entry.size();
    }
    rep.check(total == got_union.size(), who + ": epochs overlap");
    rep.check(got_union == want_union, who + ": stamped union differs from the oracle");
  }
  return rep;
}

Report run_oracle_suite(const OracleSuiteConfig& cfg) {
  Report total;
  total.name = "oracle";
  for (std::uint64_t s = 0; s < cfg.scripts; ++s) {
    total.merge(check_oracle_script(s, cfg.ops, true));
    total.merge(check_oracle_script(s, cfg.ops, false));
  }
  return total;
}

// ---------------------------------------------------------------------------
// Clients against a forging server

namespace {

struct ClientFixture {
  SignatureScheme scheme = SignatureScheme::ed25519;
  std::vector<SigningKey> server_keys;
  std::vector<PublicKey> public_keys;
  Element a, b, c, x;  // a stamped in 1, b in 2, c pending, x never added
  std::vector<DigestSet> truth;

  ClientFixture() {
    for (NodeId i = 0; i < 4; ++i) {
      server_keys.push_back(SigningKey::derive(scheme, "setchain-server-" + std::to_string(i)));
      public_keys.push_back(server_keys.back().public_key());
    }
    SigningKey user = SigningKey::derive(scheme, "client-suite-user");
    a = sign_element(to_bytes("element-a"), user);
    b = sign_element(to_bytes("element-b"), user);
    c = sign_element(to_bytes("element-c"), user);
    x = sign_element(to_bytes("element-x"), user);
    truth = {{element_id(a)}, {element_id(b)}};
  }

  std::vector<const Element*> universe() const { return {&a, &b, &c, &x}; }

  // Views a correct server can hold: prefixes of the true history.
  std::vector<GetResult> honest_states() const {
    auto make = [&](std::vector<const Element*> set, std::size_t epochs) {
      GetResult r;
      for (const Element* e : set) r.set_view.emplace(element_id(*e), *e);
      for (std::size_t i = 0; i < epochs; ++i) r.history.append(truth[i]);
      r.epoch = r.history.epoch();
      return r;
    };
    return {make({&a}, 0), make({&a, &b}, 1), make({&a, &b, &c}, 1), make({&a, &b, &c}, 2)};
  }

  // Every (S, H) over the universe with up to three epochs, including
  // responses whose history escapes their own set.
  std::vector<GetResult> forgeries() const {
    std::vector<GetResult> out;
    const auto u = universe();
    for (std::size_t epochs = 0; epochs <= 3; ++epochs) {
      std::size_t places = epochs + 1;  // 0 = unstamped, i = epoch i
      std::size_t combos = 1;
      for (std::size_t k = 0; k < u.size(); ++k) combos *= places;
      for (std::size_t code = 0; code < combos; ++code) {
        std::vector<DigestSet> entries(epochs);
        std::vector<std::size_t> where(u.size());
        std::size_t rest = code;
        for (std::size_t k = 0; k < u.size(); ++k) {
          where[k] = rest % places;
          rest /= places;
          if (where[k] > 0) entries[where[k] - 1].insert(element_id(*u[k]));
        }
        // Each element either in S or not; stamped elements left out of S
        // only in the first variant, to cover inconsistent responses.
        for (std::size_t mask = 0; mask < (1U << u.size()); ++mask) {
          bool consistent = true;
          GetResult r;
          for (std::size_t k = 0; k < u.size(); ++k) {
            bool in_s = (mask >> k) & 1U;
            if (where[k] > 0 && !in_s) consistent = false;
            if (in_s) r.set_view.emplace(element_id(*u[k]), *u[k]);
          }
          if (!consistent && mask != 0) continue;
          for (const DigestSet& e : entries) r.history.append(e);
          r.epoch = r.history.epoch();
          out.push_back(std::move(r));
        }
      }
    }
    return out;
  }

  void check_result(Report& rep, const GetResult& got, const std::string& what) const {
    rep.check(got.history.epoch() <= truth.size(), what + ": more epochs than any correct server");
    for (EpochId i = 1; i <= std::min<EpochId>(got.history.epoch(), truth.size()); ++i) {
      rep.check(got.history.at(i) == truth[i - 1], what + ": epoch " + std::to_string(i) + " differs from the truth");
    }
    rep.check(!got.set_view.contains(element_id(x)), what + ": element no correct server holds");
    rep.check(got.consistent(), what + ": history not contained in the set");
  }
};

void enumerate_assemble(Report& rep, const ClientFixture& fx) {
  const std::vector<GetResult> honest = fx.honest_states();
  const std::vector<GetResult> forged = fx.forgeries();
  const NodeId byz = 3;
  for (std::size_t s0 = 0; s0 < honest.size(); ++s0) {
    for (std::size_t s1 = 0; s1 < honest.size(); ++s1) {
      for (std::size_t s2 = 0; s2 < honest.size(); ++s2) {
        std::vector<client::Response> correct{{0, honest[s0]}, {1, honest[s1]}, {2, honest[s2]}};
        fx.check_result(rep, client::assemble_get(correct, 1), "honest quorum");
        for (std::size_t k = 0; k < forged.size(); ++k) {
          const std::string what = "forgery " + std::to_string(k);
          // The faulty server plus any two correct ones, and all four.
          for (std::size_t skip = 0; skip < 3; ++skip) {
            std::vector<client::Response> rs{{byz, forged[k]}};
            for (std::size_t j = 0; j < 3; ++j) {
              if (j != skip) rs.push_back({correct[j].server, correct[j].result});
            }
            fx.check_result(rep, client::assemble_get(rs, 1), what);
          }
          std::vector<client::Response> all = {{byz, forged[k]}, correct[0], correct[1], correct[2]};
          fx.check_result(rep, client::assemble_get(all, 1), what);
          // A faulty server repeating itself gains nothing.
          std::vector<client::Response> dup = {{byz, forged[k]}, {byz, forged[k]}, correct[s0 % 3]};
          fx.check_result(rep, client::assemble_get(dup, 1), what + " repeated");
        }
      }
    }
  }
}

// The same forgeries served by a live faulty server to a dpo_get client.
void enumerate_live(Report& rep, const ClientFixture& fx) {
  const std::vector<GetResult> forged = fx.forgeries();
  for (std::size_t k = 0; k < forged.size(); ++k) {
    const std::string what = "live forgery " + std::to_string(k);
    netsim::SimConfig sc;
    sc.n = 4;
    sc.f = 1;
    sc.seed = k;
    sc.delays.post_gst_max = 1 + k % 4;
    SigningKey byz_key = fx.server_keys[3];
    GetResult lie = forged[k];
    sc.behaviors[3] = {ByzantineMode::forge_history, {},
                       [byz_key, lie](std::unique_ptr<netsim::Process> inner) -> std::unique_ptr<netsim::Process> {
                         return std::make_unique<node::ForgingServer>(std::move(inner), byz_key,
                                                                      [lie](const GetResult&) { return lie; });
                       }};
    node::NodeConfig nc;
    nc.validation.scheme = fx.scheme;
    node::Cluster cluster(sc, nc);
    netsim::Simulator& sim = cluster.sim();

    client::ClientConfig cc;
    cc.servers = {0, 1, 2, 3};
    cc.f = 1;
    cc.grace = k % 2 == 0 ? 0 : 8;
    cc.server_keys = std::make_shared<const std::vector<PublicKey>>(cluster.server_keys());
    cc.validation.scheme = fx.scheme;
    auto owned = std::make_unique<client::ClientProcess>(cc);
    client::ClientProcess& cl = *owned;
    NodeId cid = sim.add_client(std::move(owned));

    auto add_at = [&](const Element& e) {
      for (NodeId s = 0; s < 3; ++s) cluster.with_server(s, [&](netsim::Context& ctx, node::SetchainServer& srv) { srv.add(ctx, e); });
      sim.run_until_quiescent();
    };
    auto next_epoch = [&]() {
      EpochId h = cluster.server(0).epoch() + 1;
      for (NodeId s = 0; s < 3; ++s) cluster.with_server(s, [h](netsim::Context& ctx, node::SetchainServer& srv) { srv.epoch_inc(ctx, h); });
      sim.run_until_quiescent();
    };
    add_at(fx.a);
    next_epoch();
    add_at(fx.b);
    next_epoch();
    add_at(fx.c);

    std::optional<GetResult> got;
    bool called = false;
    sim.with_context(cid, [&](netsim::Context& ctx) {
      cl.dpo_get(ctx, [&](netsim::Context&, const std::optional<GetResult>& r) {
        called = true;
        got = r;
      });
    });
    sim.run_until_quiescent();
    rep.check(called && got.has_value(), what + ": get did not complete");
    if (got) {
      fx.check_result(rep, *got, what);
      rep.check(got->history.epoch() == 2, what + ": agreed epochs lost");
    }
  }
}

void enumerate_certificates(Report& rep, const ClientFixture& fx) {
  const std::size_t f = 1;
  const NodeId byz = 3;
  const Digest xid = element_id(fx.x);
  const Digest aid = element_id(fx.a);
  const Digest bid = element_id(fx.b);

  // Claimed histories: the truth and every disjoint mix with the forged x.
  std::vector<std::vector<DigestSet>> claims;
  const std::vector<DigestSet> first = {{aid}, {xid}, {aid, xid}, {}};
  const std::vector<DigestSet> second = {{bid}, {xid}, {bid, xid}, {}};
  for (const auto& e1 : first) {
    for (const auto& e2 : second) {
      if (e1.contains(xid) && e2.contains(xid)) continue;
      claims.push_back({e1, e2});
    }
  }

  std::size_t stamped_true = 0;
  for (const auto& claim : claims) {
    for (EpochId h = 1; h <= 2; ++h) {
      const DigestSet& entry = claim[h - 1];
      Digest claimed = epoch_digest(h, std::vector<Digest>(entry.begin(), entry.end()));
      Digest real = epoch_digest(h, std::vector<Digest>(fx.truth[h - 1].begin(), fx.truth[h - 1].end()));
      Bytes msg = certificate_message(h, claimed);
      Signature own = fx.server_keys[byz].sign(msg);
      Signature garbage{};
      garbage.bytes.fill(0x5A);

      // Per correct server: absent, garbage, its genuine signature over the
      // true epoch (replayed), or the faulty server's signature relabelled.
      // Per faulty server: absent, own signature, garbage, own signature twice.
      for (std::size_t combo = 0; combo < 256; ++combo) {
        EpochCertificate cert;
        cert.epoch = h;
        cert.digest = claimed;
        std::size_t rest = combo;
        for (NodeId s = 0; s < 3; ++s) {
          switch (rest % 4) {
            case 1: cert.signatures.emplace_back(s, garbage); break;
            case 2: cert.signatures.emplace_back(s, fx.server_keys[s].sign(certificate_message(h, real))); break;
            case 3: cert.signatures.emplace_back(s, own); break;
            default: break;
          }
          rest /= 4;
        }
        switch (rest % 4) {
          case 1: cert.signatures.emplace_back(byz, own); break;
          case 2: cert.signatures.emplace_back(byz, garbage); break;
          case 3:
            cert.signatures.emplace_back(byz, own);
            cert.signatures.emplace_back(byz, own);
            break;
          default: break;
        }

        GetResult r;
        for (const Element* e : fx.universe()) r.set_view.emplace(element_id(*e), *e);
        for (const DigestSet& e : claim) r.history.append(e);
        r.epoch = r.history.epoch();
        Element ce = sign_element(encode_certificate_payload(cert), fx.server_keys[byz]);
        r.set_view.emplace(element_id(ce), ce);

        // Independent count of distinct servers with a verifying signature.
        std::set<NodeId> valid_signers;
        for (const auto& [s, sig] : cert.signatures) {
          if (s < fx.public_keys.size() && verify_signature(fx.scheme, fx.public_keys[s], msg, sig)) {
            valid_signers.insert(s);
          }
        }
        const bool certified = valid_signers.size() >= f + 1;

        for (const Digest& target : entry) {
          client::CheckResult cr = client::optimistic_check(target, r, fx.public_keys, f, fx.scheme);
          const std::string what = "certificate combo " + std::to_string(combo) + " epoch " + std::to_string(h);
          if (cr.status != client::CheckStatus::stamped) {
            rep.check(cr.status == client::CheckStatus::unknown, what + ": stamped element reported pending");
            continue;
          }
          rep.check(certified, what + ": stamped without f+1 valid signatures");
          rep.check(entry == fx.truth[h - 1], what + ": stamped a forged epoch");
          rep.check(cr.epoch == h && cr.certificate && cr.certificate->digest == claimed,
                    what + ": reported certificate does not cover the epoch");
          ++stamped_true;
        }
      }
    }
  }
  // The enumeration includes genuine certificates, so stamped must occur.
  rep.check(stamped_true > 0, "certificate enumeration never produced a stamped result");
}

}  // namespace

Report run_client_suite() {
  Report rep;
  rep.name = "client";
  ClientFixture fx;
  enumerate_assemble(rep, fx);
  enumerate_live(rep, fx);
  enumerate_certificates(rep, fx);
  rep.runs = 1;
  return rep;
}

std::vector<Report> run_properties(const PropertiesConfig& cfg, const std::function<void(const Report&)>& progress) {
  std::vector<Report> out;
  auto emit = [&](Report r) {
    if (progress) progress(r);
    out.push_back(std::move(r));
  };
  emit(run_setchain_suite(cfg.setchain));
  emit(run_brb_suite(cfg.brb));
  emit(run_sbc_suite(cfg.sbc));
  emit(run_oracle_suite(cfg.oracle));
  if (cfg.client) emit(run_client_suite());
  return out;
}

}  // namespace setchain::properties
