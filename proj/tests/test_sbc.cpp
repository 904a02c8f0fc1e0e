#include <gtest/gtest.h>
#include <sodium.h>

#include <deque>
#include <random>

#include "setchain/properties.hpp"
#include "setchain/sbc.hpp"
#include "setchain/wire.hpp"

using namespace setchain;
using namespace setchain::sbc;

namespace {

// Coin recomputed straight from libsodium: big-endian instance, slot, round.
bool oracle_coin(std::uint64_t instance, std::uint32_t slot, std::uint32_t round) {
  unsigned char in[16];
  for (int i = 0; i < 8; ++i) in[i] = static_cast<unsigned char>(instance >> (56 - 8 * i));
  for (int i = 0; i < 4; ++i) in[8 + i] = static_cast<unsigned char>(slot >> (24 - 8 * i));
  for (int i = 0; i < 4; ++i) in[12 + i] = static_cast<unsigned char>(round >> (24 - 8 * i));
  unsigned char out[crypto_hash_sha256_BYTES];
  crypto_hash_sha256(out, in, sizeof in);
  return (out[31] & 1U) != 0;
}

std::uint32_t first_round_with_coin(std::uint64_t instance, std::uint32_t slot, bool v) {
  for (std::uint32_t r = 1;; ++r) {
    if (oracle_coin(instance, slot, r) == v) return r;
  }
}

// Runs n binary-consensus instances over an in-memory network. Nodes in
// `silent` never start and never speak. Delivery order is shuffled by seed.
struct BinNet {
  struct Msg {
    NodeId from;
    NodeId to;
    std::uint32_t round;
    Phase phase;
    bool bit;
  };

  std::size_t n;
  std::vector<BinaryConsensus> nodes;
  std::vector<bool> silent;
  std::vector<std::optional<bool>> decisions;
  std::deque<Msg> queue;
  std::mt19937_64 rng;

  BinNet(std::size_t n_, std::size_t f, EpochId h, NodeId slot, std::uint64_t seed)
      : n(n_), silent(n_, false), decisions(n_), rng(seed) {
    for (std::size_t i = 0; i < n; ++i) nodes.emplace_back(n, f, h, slot);
  }

  BinaryConsensus::Broadcast out(NodeId from) {
    return [this, from](std::uint32_t r, Phase p, bool b) {
      for (NodeId to = 0; to < n; ++to) queue.push_back({from, to, r, p, b});
    };
  }

  void record(NodeId id, std::optional<bool> d) {
    if (!d) return;
    EXPECT_FALSE(decisions[id].has_value()) << "second decision at " << id;
    decisions[id] = d;
  }

  void run(const std::vector<bool>& inputs, bool shuffle) {
    for (NodeId id = 0; id < n; ++id) {
      if (!silent[id]) record(id, nodes[id].start(inputs[id], out(id)));
    }
    std::size_t steps = 0;
    while (!queue.empty() && steps++ < 1'000'000) {
      std::size_t pick = 0;
      if (shuffle) pick = std::uniform_int_distribution<std::size_t>(0, std::min<std::size_t>(queue.size(), 8) - 1)(rng);
      Msg m = queue[pick];
      queue.erase(queue.begin() + static_cast<std::ptrdiff_t>(pick));
      if (silent[m.to]) continue;
      record(m.to, nodes[m.to].on_message(m.from, m.round, m.phase, m.bit, out(m.to)));
    }
    ASSERT_TRUE(queue.empty());
  }
};

ElementMap elements_of(std::initializer_list<std::string> payloads) {
  static const SigningKey key = SigningKey::derive(SignatureScheme::null, "sbc-test");
  ElementMap out;
  for (const auto& p : payloads) {
    Element e = sign_element(to_bytes(p), key);
    out.emplace(element_id(e), e);
  }
  return out;
}

class Proposer : public netsim::Process {
 public:
  Proposer(NodeId self, std::size_t n, std::size_t f)
      : brb_(self, n, f,
             [this](netsim::Context& ctx, const brb::Tag& tag, const std::shared_ptr<const Bytes>& p) {
               if (tag.channel == wire::kBrbProposals) sbc.on_proposal(ctx, tag.origin, tag.seq, *p);
             }),
        sbc(self, n, f, {}, brb_, [](const Element& e, const Digest&) { return e.payload.empty() || e.payload[0] != 0xFF; },
            [this](netsim::Context&, EpochId h, const DecidedSet& d) { delivered.emplace_back(h, d); }) {}

  void on_message(netsim::Context& ctx, NodeId from, const Bytes& body) override {
    if (body.empty()) return;
    if (body[0] == wire::kBrbProposals) brb_.handle(ctx, from, body);
    if (body[0] == wire::kSbcConsensus) sbc.handle(ctx, from, body);
  }
  void on_timer(netsim::Context& ctx, netsim::TimerTag tag) override { sbc.on_timer(ctx, tag); }

 private:
  brb::ReliableBroadcast brb_;

 public:
  SetConsensus sbc;
  std::vector<std::pair<EpochId, DecidedSet>> delivered;
};

struct SbcNet {
  netsim::Simulator sim;
  explicit SbcNet(netsim::SimConfig cfg)
      : sim(std::move(cfg), [](NodeId id) { return std::make_unique<Proposer>(id, 4, 1); }) {}
  Proposer& at(NodeId id) { return *sim.process_as<Proposer>(id); }
  void propose(NodeId id, EpochId h, const ElementMap& s) {
    sim.with_context(id, [&](netsim::Context& ctx) { at(id).sbc.propose(ctx, h, s); });
  }
};

}  // namespace

TEST(VoteCodec, RoundTrip) {
  VoteMessage m{7, 3, 12, Phase::confirm, true};
  Bytes enc = encode_vote(m);
  EXPECT_EQ(enc.size(), 1u + 8 + 4 + 4 + 1 + 1);
  EXPECT_EQ(enc[0], wire::kSbcConsensus);
  VoteMessage d = decode_vote(enc);
  EXPECT_EQ(d.instance, 7u);
  EXPECT_EQ(d.slot, 3u);
  EXPECT_EQ(d.round, 12u);
  EXPECT_EQ(d.phase, Phase::confirm);
  EXPECT_TRUE(d.bit);
  enc.pop_back();
  EXPECT_THROW(decode_vote(enc), DecodeError);
}

TEST(ProposalCodec, RoundTrip) {
  ElementMap s = elements_of({"a", "b", "c"});
  auto [h, elems] = decode_proposal(encode_proposal(5, s));
  EXPECT_EQ(h, 5u);
  ASSERT_EQ(elems.size(), 3u);
  for (const Element& e : elems) EXPECT_TRUE(s.contains(element_id(e)));
  auto [h0, none] = decode_proposal(encode_proposal(0, {}));
  EXPECT_EQ(h0, 0u);
  EXPECT_TRUE(none.empty());
}

TEST(CommonCoin, MatchesIndependentDigest) {
  std::size_t ones = 0;
  for (std::uint64_t h = 0; h < 8; ++h) {
    for (std::uint32_t slot = 0; slot < 4; ++slot) {
      for (std::uint32_t r = 1; r <= 32; ++r) {
        bool c = common_coin(h, slot, r);
        EXPECT_EQ(c, oracle_coin(h, slot, r));
        ones += c ? 1 : 0;
      }
    }
  }
  EXPECT_GT(ones, 300u);  // 1024 flips, roughly balanced
  EXPECT_LT(ones, 724u);
}

TEST(BinaryConsensus, UnanimousInputDecidesAtFirstMatchingCoin) {
  for (bool v : {false, true}) {
    for (EpochId h = 1; h <= 6; ++h) {
      for (NodeId slot = 0; slot < 4; ++slot) {
        BinNet net(4, 1, h, slot, 0);
        net.run(std::vector<bool>(4, v), false);
        std::uint32_t expect = first_round_with_coin(h, slot, v);
        for (NodeId id = 0; id < 4; ++id) {
          ASSERT_TRUE(net.decisions[id].has_value());
          EXPECT_EQ(*net.decisions[id], v);
          EXPECT_EQ(net.nodes[id].decision_round(), expect) << "h=" << h << " slot=" << slot;
          EXPECT_TRUE(net.nodes[id].halted());
        }
      }
    }
  }
}

TEST(BinaryConsensus, UnanimousWithSilentNode) {
  for (bool v : {false, true}) {
    BinNet net(4, 1, 3, 2, 9);
    net.silent[0] = true;
    net.run(std::vector<bool>(4, v), true);
    for (NodeId id = 1; id < 4; ++id) EXPECT_EQ(net.decisions[id], std::optional<bool>(v));
  }
}

TEST(BinaryConsensus, MixedInputsAgree) {
  for (std::size_t n : {4u, 7u, 10u}) {
    std::size_t f = (n - 1) / 3;
    for (std::uint64_t seed = 0; seed < 60; ++seed) {
      std::mt19937_64 rng(seed * 31 + n);
      std::vector<bool> inputs(n);
      for (std::size_t i = 0; i < n; ++i) inputs[i] = (rng() & 1U) != 0;
      BinNet net(n, f, seed, static_cast<NodeId>(seed % n), seed);
      for (std::size_t i = 0; i < f && seed % 2 == 0; ++i) net.silent[(seed + i) % n] = true;
      net.run(inputs, true);
      std::optional<bool> agreed;
      for (NodeId id = 0; id < n; ++id) {
        if (net.silent[id]) continue;
        ASSERT_TRUE(net.decisions[id].has_value()) << "n=" << n << " seed=" << seed;
        if (!agreed) agreed = net.decisions[id];
        EXPECT_EQ(agreed, net.decisions[id]) << "n=" << n << " seed=" << seed;
        EXPECT_LT(*net.nodes[id].decision_round(), 64u);
      }
      bool any = false;
      for (NodeId id = 0; id < n; ++id) any = any || (!net.silent[id] && inputs[id] == *agreed);
      EXPECT_TRUE(any) << "decided a value no correct node proposed";
    }
  }
}

TEST(BinaryConsensus, StartIsIdempotent) {
  BinaryConsensus bc(4, 1, 0, 0);
  std::size_t sent = 0;
  auto out = [&](std::uint32_t, Phase, bool) { ++sent; };
  bc.start(true, out);
  std::size_t after_first = sent;
  bc.start(false, out);
  EXPECT_EQ(sent, after_first);
  EXPECT_EQ(bc.round(), 1u);
}

TEST(SetConsensus, IdenticalProposalsDecideEverySlot) {
  SbcNet net(netsim::SimConfig{});
  ElementMap x = elements_of({"x1", "x2"});
  for (NodeId id = 0; id < 4; ++id) net.propose(id, 1, x);
  net.sim.run_until_quiescent();
  for (NodeId id = 0; id < 4; ++id) {
    ASSERT_EQ(net.at(id).delivered.size(), 1u);
    const auto& [h, d] = net.at(id).delivered[0];
    EXPECT_EQ(h, 1u);
    ASSERT_EQ(d.size(), 4u);
    for (const auto& [slot, s] : d) EXPECT_EQ(s, x);
  }
}

TEST(SetConsensus, SilentProposerSlotDecidesZero) {
  netsim::SimConfig cfg;
  cfg.behaviors[3] = netsim::ByzantineBehavior::silent();
  SbcNet net(cfg);
  for (NodeId id = 0; id < 3; ++id) net.propose(id, 1, elements_of({"p" + std::to_string(id)}));
  net.sim.run_until_quiescent();
  for (NodeId id = 0; id < 3; ++id) {
    ASSERT_EQ(net.at(id).delivered.size(), 1u);
    const DecidedSet& d = net.at(id).delivered[0].second;
    EXPECT_EQ(d.size(), 3u);
    EXPECT_FALSE(d.contains(3));
    EXPECT_EQ(net.at(id).delivered[0].second, net.at(0).delivered[0].second);
  }
}

TEST(SetConsensus, EmptyProposalsDeliverEmptySets) {
  SbcNet net(netsim::SimConfig{});
  for (NodeId id = 0; id < 4; ++id) net.propose(id, 1, {});
  net.sim.run_until_quiescent();
  for (NodeId id = 0; id < 4; ++id) {
    ASSERT_EQ(net.at(id).delivered.size(), 1u);
    for (const auto& [slot, s] : net.at(id).delivered[0].second) EXPECT_TRUE(s.empty());
  }
}

TEST(SetConsensus, InvalidMembersStripped) {
  SbcNet net(netsim::SimConfig{});
  ElementMap s = elements_of({"ok", "\xFF" "bad"});
  for (NodeId id = 0; id < 4; ++id) net.propose(id, 1, s);
  net.sim.run_until_quiescent();
  for (const auto& [slot, got] : net.at(0).delivered.at(0).second) {
    ASSERT_EQ(got.size(), 1u);
    EXPECT_EQ(got.begin()->second.payload, to_bytes("ok"));
  }
}

TEST(SetConsensus, DoubleProposeThrows) {
  SbcNet net(netsim::SimConfig{});
  net.propose(0, 1, {});
  EXPECT_TRUE(net.at(0).sbc.proposed(1));
  EXPECT_THROW(net.propose(0, 1, {}), std::logic_error);
}

TEST(SetConsensus, DeliversOnceAndDropsStaleTraffic) {
  SbcNet net(netsim::SimConfig{});
  for (NodeId id = 0; id < 4; ++id) net.propose(id, 1, elements_of({"z"}));
  net.sim.run_until_quiescent();
  ASSERT_TRUE(net.at(0).sbc.delivered(1));
  // Replay a vote for the delivered instance.
  net.sim.send(1, 0, encode_vote({1, 0, 1, Phase::vote, true}));
  net.sim.send(1, 0, encode_vote({1, 2, 5, Phase::decide, false}));
  net.sim.run_until_quiescent();
  EXPECT_EQ(net.at(0).delivered.size(), 1u);
  EXPECT_EQ(net.at(0).sbc.slot_decision(1, 2).value_or(true), net.at(1).sbc.slot_decision(1, 2).value_or(true));
}

TEST(SetConsensus, RandomisedSuiteSmall) {
  for (std::uint64_t seed = 0; seed < 15; ++seed) {
    properties::Report r = properties::check_sbc_run(4, seed);
    EXPECT_TRUE(r.ok()) << r.summary();
  }
}
