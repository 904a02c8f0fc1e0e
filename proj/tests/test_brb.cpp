#include <gtest/gtest.h>

#include "setchain/brb.hpp"
#include "setchain/properties.hpp"

using namespace setchain;
using namespace setchain::brb;

namespace {

struct Node : netsim::Process {
  Node(NodeId self, std::size_t n, std::size_t f)
      : rb(self, n, f, [this](netsim::Context&, const Tag& tag, const std::shared_ptr<const Bytes>& p) {
          delivered.emplace_back(tag, *p);
        }) {}
  void on_message(netsim::Context& ctx, NodeId from, const Bytes& body) override { rb.handle(ctx, from, body); }

  ReliableBroadcast rb;
  std::vector<std::pair<Tag, Bytes>> delivered;
};

struct Inert : netsim::Process {
  void on_message(netsim::Context&, NodeId, const Bytes&) override {}
};

// Node 1 runs the protocol; the others only serve as message sources, so
// each scripted input is observed in isolation.
struct Harness {
  netsim::Simulator sim;
  std::vector<Bytes> bodies;

  Harness()
      : sim(netsim::SimConfig{}, [](NodeId id) -> std::unique_ptr<netsim::Process> {
          if (id == 1) return std::make_unique<Node>(1, 4, 1);
          return std::make_unique<Inert>();
        }) {
    sim.set_send_observer([this](const netsim::Envelope& env) {
      if (env.from != 1) return;
      bodies.push_back(*env.body);
    });
  }

  Node& node() { return *sim.process_as<Node>(1); }

  void inject(NodeId from, Kind kind, const Tag& tag, const Bytes& payload) {
    ByteView view = carries_payload(kind) ? ByteView(payload) : ByteView{};
    sim.send(from, 1, encode(kind, tag, sha256(payload), view));
    sim.run_until_quiescent();
  }

  std::size_t count_sent(Kind kind) {
    std::size_t c = 0;
    for (const Bytes& b : bodies) c += decode(b).kind == kind ? 1 : 0;
    return c;
  }
};

const Tag kTag{0x10, 0, 0};

}  // namespace

TEST(Thresholds, BrachaValues) {
  Thresholds t4 = Thresholds::bracha(4, 1);
  EXPECT_EQ(t4.echo, 3u);
  EXPECT_EQ(t4.amplify, 2u);
  EXPECT_EQ(t4.deliver, 3u);
  EXPECT_EQ(Thresholds::bracha(7, 2).echo, 5u);
  EXPECT_EQ(Thresholds::bracha(10, 3).echo, 7u);
  EXPECT_EQ(Thresholds::bracha(10, 3).deliver, 7u);
}

TEST(Encoding, RoundTrip) {
  Bytes payload = to_bytes("payload");
  Tag tag{0x11, 3, 42};
  Bytes enc = encode(Kind::echo, tag, sha256(payload), payload);
  MessageView m = decode(enc);
  EXPECT_EQ(m.kind, Kind::echo);
  EXPECT_EQ(m.tag, tag);
  EXPECT_EQ(m.digest, sha256(payload));
  EXPECT_EQ(Bytes(m.payload.begin(), m.payload.end()), payload);

  MessageView r = decode(encode(Kind::ready, tag, sha256(payload)));
  EXPECT_TRUE(r.payload.empty());
  enc.pop_back();
  EXPECT_THROW(decode(enc), DecodeError);
}

TEST(Scripted, SendTriggersOneEcho) {
  Harness h;
  Bytes p = to_bytes("m");
  h.inject(0, Kind::send, kTag, p);
  h.inject(0, Kind::send, kTag, p);
  EXPECT_EQ(h.count_sent(Kind::echo), 4u);  // one ECHO to each of the 4 nodes
}

TEST(Scripted, ThreeEchoesSendReady) {
  Harness h;
  Bytes p = to_bytes("m");
  h.inject(0, Kind::echo, kTag, p);
  h.inject(2, Kind::echo, kTag, p);
  EXPECT_EQ(h.count_sent(Kind::ready), 0u);
  h.inject(3, Kind::echo, kTag, p);
  EXPECT_EQ(h.count_sent(Kind::ready), 4u);
}

TEST(Scripted, TwoReadiesAmplify) {
  Harness h;
  Bytes p = to_bytes("m");
  h.inject(2, Kind::ready, kTag, p);
  EXPECT_EQ(h.count_sent(Kind::ready), 0u);
  h.inject(3, Kind::ready, kTag, p);
  EXPECT_EQ(h.count_sent(Kind::ready), 4u);
}

TEST(Scripted, ThreeReadiesDeliverOnce) {
  Harness h;
  Bytes p = to_bytes("m");
  h.inject(0, Kind::send, kTag, p);
  h.inject(0, Kind::ready, kTag, p);
  EXPECT_TRUE(h.node().delivered.empty());
  // The second READY makes node 1 amplify; its own READY is the third.
  h.inject(2, Kind::ready, kTag, p);
  ASSERT_EQ(h.node().delivered.size(), 1u);
  EXPECT_EQ(h.node().delivered[0].second, p);
  h.inject(3, Kind::ready, kTag, p);
  EXPECT_EQ(h.node().delivered.size(), 1u);
  EXPECT_TRUE(h.node().rb.delivered(kTag));
}

TEST(Scripted, ReadyQuorumWithoutPayloadPulls) {
  Harness h;
  Bytes p = to_bytes("pulled");
  h.inject(0, Kind::ready, kTag, p);
  h.inject(2, Kind::ready, kTag, p);
  h.inject(3, Kind::ready, kTag, p);
  EXPECT_TRUE(h.node().delivered.empty());
  EXPECT_GE(h.count_sent(Kind::request), 1u);
  h.inject(2, Kind::payload, kTag, p);
  ASSERT_EQ(h.node().delivered.size(), 1u);
  EXPECT_EQ(h.node().delivered[0].second, p);
}

TEST(Scripted, PayloadNotMatchingDigestIgnored) {
  Harness h;
  Bytes p = to_bytes("real");
  h.inject(0, Kind::ready, kTag, p);
  h.inject(2, Kind::ready, kTag, p);
  h.inject(3, Kind::ready, kTag, p);
  Bytes fake = to_bytes("fake");
  h.sim.send(2, 1, encode(Kind::payload, kTag, sha256(p), fake));
  h.sim.run_until_quiescent();
  EXPECT_TRUE(h.node().delivered.empty());
}

TEST(Scripted, ConflictingEchoFromSameSenderIgnored) {
  Harness h;
  Bytes p = to_bytes("m");
  Bytes q = to_bytes("m'");
  h.inject(0, Kind::echo, kTag, p);
  h.inject(0, Kind::echo, kTag, q);
  h.inject(2, Kind::echo, kTag, q);
  h.inject(3, Kind::echo, kTag, q);
  EXPECT_EQ(h.count_sent(Kind::ready), 0u);  // q is backed by 2 senders only
  h.inject(1, Kind::echo, kTag, q);
  ASSERT_EQ(h.count_sent(Kind::ready), 4u);
  EXPECT_EQ(decode(h.bodies.back()).digest, sha256(q));
}

TEST(Scripted, MalformedMessageIgnored) {
  Harness h;
  h.sim.send(0, 1, Bytes{0x10, 0x01, 0x00});
  h.sim.run_until_quiescent();
  EXPECT_TRUE(h.bodies.empty());
}

TEST(Broadcast, AllCorrectDeliverExactlyOnce) {
  netsim::SimConfig cfg;
  cfg.delays = {0, 1, 3};
  netsim::Simulator sim(cfg, [](NodeId id) { return std::make_unique<Node>(id, 4, 1); });
  Tag tag;
  sim.with_context(2, [&](netsim::Context& ctx) { tag = sim.process_as<Node>(2)->rb.broadcast(ctx, 0x10, to_bytes("x")); });
  sim.run_until_quiescent();
  for (NodeId id = 0; id < 4; ++id) {
    const auto& d = sim.process_as<Node>(id)->delivered;
    ASSERT_EQ(d.size(), 1u);
    EXPECT_EQ(d[0].first, tag);
    EXPECT_EQ(d[0].second, to_bytes("x"));
  }
  EXPECT_EQ(tag.origin, 2u);
}

TEST(Broadcast, SequenceNumbersPerChannel) {
  netsim::Simulator sim(netsim::SimConfig{}, [](NodeId id) { return std::make_unique<Node>(id, 4, 1); });
  sim.with_context(0, [&](netsim::Context& ctx) {
    auto& rb = sim.process_as<Node>(0)->rb;
    EXPECT_EQ(rb.broadcast(ctx, 0x10, to_bytes("a")).seq, 0u);
    EXPECT_EQ(rb.broadcast(ctx, 0x10, to_bytes("b")).seq, 1u);
    EXPECT_EQ(rb.broadcast(ctx, 0x11, to_bytes("c")).seq, 0u);
  });
}

TEST(Broadcast, SilentOriginDeliversNothing) {
  netsim::SimConfig cfg;
  cfg.behaviors[0] = netsim::ByzantineBehavior::silent();
  netsim::Simulator sim(cfg, [](NodeId id) { return std::make_unique<Node>(id, 4, 1); });
  sim.with_context(0, [&](netsim::Context& ctx) { sim.process_as<Node>(0)->rb.broadcast(ctx, 0x10, to_bytes("x")); });
  sim.run_until_quiescent();
  for (NodeId id = 1; id < 4; ++id) EXPECT_TRUE(sim.process_as<Node>(id)->delivered.empty());
}

// Every split of the correct nodes between m and the conflicting m', for
// every faulty origin, under many delivery schedules.
TEST(Broadcast, EquivocatingOriginEnumeration) {
  Bytes m = to_bytes("value");
  Bytes m_alt = m;
  m_alt.back() ^= 0xFF;
  std::size_t runs = 0;
  std::size_t delivered_runs = 0;
  for (NodeId byz = 0; byz < 4; ++byz) {
    for (unsigned split = 0; split < 16; ++split) {
      for (std::uint64_t seed = 0; seed < 24; ++seed) {
        netsim::SimConfig cfg;
        cfg.seed = seed;
        cfg.delays = {30, 12, 2};
        cfg.behaviors[byz] = {netsim::ByzantineMode::equivocate_brb,
                              [split](NodeId, NodeId to, const Bytes& body) -> std::optional<Bytes> {
                                if (((split >> to) & 1U) == 0) return std::nullopt;
                                return equivocate(body);
                              },
                              {}};
        netsim::Simulator sim(cfg, [](NodeId id) { return std::make_unique<Node>(id, 4, 1); });
        sim.with_context(byz, [&](netsim::Context& ctx) { sim.process_as<Node>(byz)->rb.broadcast(ctx, 0x10, m); });
        sim.run_until_quiescent();
        ++runs;

        std::optional<Bytes> agreed;
        std::size_t deliverers = 0;
        for (NodeId id = 0; id < 4; ++id) {
          if (id == byz) continue;
          const auto& d = sim.process_as<Node>(id)->delivered;
          ASSERT_LE(d.size(), 1u);
          if (d.empty()) continue;
          ++deliverers;
          EXPECT_TRUE(d[0].second == m || d[0].second == m_alt);
          if (!agreed) agreed = d[0].second;
          EXPECT_EQ(*agreed, d[0].second) << "byz=" << byz << " split=" << split << " seed=" << seed;
        }
        EXPECT_TRUE(deliverers == 0 || deliverers == 3) << "byz=" << byz << " split=" << split << " seed=" << seed;
        delivered_runs += deliverers == 3 ? 1 : 0;
      }
    }
  }
  EXPECT_EQ(runs, 4u * 16 * 24);
  EXPECT_GT(delivered_runs, 0u);
}

TEST(Broadcast, RandomisedSuiteSmall) {
  for (auto mode : {netsim::ByzantineMode::silent, netsim::ByzantineMode::equivocate_brb}) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      properties::Report r = properties::check_brb_run(4, mode, seed, 3);
      EXPECT_TRUE(r.ok()) << r.summary();
      EXPECT_GT(r.checks, 0u);
    }
  }
}
