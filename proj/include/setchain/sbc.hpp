#pragma once

#include <functional>
#include <map>
#include <optional>
#include <set>
#include <vector>

#include "setchain/brb.hpp"
#include "setchain/element.hpp"
#include "setchain/netsim.hpp"
#include "setchain/types.hpp"

// Set binary consensus: every node proposes a set of elements for an
// instance (one per epoch change); proposals travel over reliable broadcast
// and one binary consensus per proposer slot decides whether that proposal
// is part of the outcome. All correct nodes deliver the same proposals.
//
// The binary consensus is simulation grade: its common coin is a public
// hash of (instance, slot, round), which a real adversary could predict.
namespace setchain::sbc {

/// Proposer id -> proposed elements, for the slots that decided 1.
using DecidedSet = std::map<NodeId, ElementMap>;

enum class Phase : std::uint8_t { vote = 0, confirm = 1, decide = 2 };

struct VoteMessage {
  EpochId instance = 0;
  NodeId slot = 0;
  std::uint32_t round = 0;
  Phase phase = Phase::vote;
  bool bit = false;
};

/// Layout: channel u8 (0x20) | instance u64 | slot u32 | round u32 | phase u8 | bit u8
Bytes encode_vote(const VoteMessage& m);
VoteMessage decode_vote(ByteView body);

/// Proposal payload carried by reliable broadcast on the proposal channel,
/// with the instance as sequence number.
/// Layout: 0x03 | instance u64 | count u64 | elements (canonical encoding)...
Bytes encode_proposal(EpochId instance, const ElementMap& elements);
std::pair<EpochId, std::vector<Element>> decode_proposal(ByteView payload);

/// Parity of sha256(instance || slot || round).
bool common_coin(EpochId instance, NodeId slot, std::uint32_t round);

/// Randomised binary Byzantine agreement for one slot at one node. A round
/// is a VOTE phase (values reach bin_values after 2f+1 votes, relayed after
/// f+1) followed by a CONFIRM phase (wait for n-f confirms carried over
/// bin_values). A node decides v when its confirms are unanimous for v and v
/// equals the round's coin, then announces DECIDE(v). f+1 DECIDE(v) let a
/// node adopt v directly; 2f+1 make it halt. Decided nodes keep running
/// rounds until they halt.
class BinaryConsensus {
 public:
  using Broadcast = std::function<void(std::uint32_t round, Phase phase, bool bit)>;

  BinaryConsensus(std::size_t n, std::size_t f, EpochId instance, NodeId slot);

  bool started() const { return round_ > 0; }
  bool halted() const { return halted_; }
  std::optional<bool> decided() const { return decided_; }
  std::uint32_t round() const { return round_; }
  std::optional<std::uint32_t> decision_round() const { return decided_round_; }

  /// Begins round 1 with `input`. No-op once started. Returns a decision if
  /// buffered messages already complete one.
  std::optional<bool> start(bool input, const Broadcast& out);
  /// Records a vote; messages before start() are buffered. Returns the
  /// decision bit the first time one is reached.
  std::optional<bool> on_message(NodeId from, std::uint32_t round, Phase phase, bool bit, const Broadcast& out);

 private:
  struct Round {
    std::array<std::set<NodeId>, 2> votes;
    std::array<bool, 2> vote_sent{false, false};
    std::array<bool, 2> bin{false, false};
    std::optional<bool> first_bin;
    std::map<NodeId, bool> confirms;
    bool confirm_sent = false;
  };

  void progress(const Broadcast& out);
  void absorb_votes(std::uint32_t r, Round& rd, const Broadcast& out);
  void send_vote(std::uint32_t r, bool bit, const Broadcast& out);
  void decide(bool bit, const Broadcast& out);

  std::size_t n_;
  std::size_t f_;
  EpochId instance_;
  NodeId slot_;
  std::map<std::uint32_t, Round> rounds_;
  std::uint32_t round_ = 0;
  bool estimate_ = false;
  std::optional<bool> decided_;
  std::optional<std::uint32_t> decided_round_;
  std::array<std::set<NodeId>, 2> decides_;
  bool halted_ = false;
};

struct SbcConfig {
  /// A slot whose proposal has not arrived this many ticks after the node's
  /// own proposal may be voted 0 (once n-f slots have decided 1).
  SimTime slot_deadline = 4;
};

/// Timer tags owned by the set consensus: high byte 0x01, low bits instance.
inline constexpr netsim::TimerTag kDeadlineTimer = 0x01ULL << 56;

class SetConsensus {
 public:
  using ValidFn = std::function<bool(const Element&, const Digest&)>;
  using DeliverFn = std::function<void(netsim::Context&, EpochId, const DecidedSet&)>;
  using JoinFn = std::function<void(netsim::Context&, EpochId)>;

  SetConsensus(NodeId self, std::size_t n, std::size_t f, SbcConfig cfg, brb::ReliableBroadcast& brb,
               ValidFn valid, DeliverFn on_set_deliver);

  /// Called once per instance this node has not proposed for, when f+1
  /// distinct peers have shown activity in it.
  void set_join_listener(JoinFn fn) { on_join_ = std::move(fn); }
  bool join_evidence(EpochId h) const;

  /// Throws std::logic_error when this node already proposed for `h`.
  void propose(netsim::Context& ctx, EpochId h, const ElementMap& proposal);
  /// Proposal payload delivered by reliable broadcast from `proposer`.
  void on_proposal(netsim::Context& ctx, NodeId proposer, std::uint64_t seq, ByteView payload);
  /// Vote traffic on the consensus channel.
  void handle(netsim::Context& ctx, NodeId from, ByteView body);
  /// Returns true when the tag belonged to the set consensus.
  bool on_timer(netsim::Context& ctx, netsim::TimerTag tag);

  bool proposed(EpochId h) const;
  bool delivered(EpochId h) const;
  /// Delivered instances whose slots have all halted are dropped entirely;
  /// later traffic for them is ignored.
  bool retired(EpochId h) const { return retired_.contains(h); }
  std::size_t live_instances() const { return instances_.size(); }
  /// Decision of one slot at this node, if reached.
  std::optional<bool> slot_decision(EpochId h, NodeId slot) const;

 private:
  struct Instance {
    bool proposed = false;
    bool deadline_passed = false;
    bool delivered = false;
    bool join_signalled = false;
    std::size_t ones = 0;
    std::set<NodeId> active_peers;
    std::map<NodeId, ElementMap> proposals;
    std::vector<BinaryConsensus> slots;
  };

  Instance& instance(EpochId h);
  void start_slot(netsim::Context& ctx, EpochId h, Instance& inst, NodeId slot, bool input);
  void on_decision(netsim::Context& ctx, EpochId h, Instance& inst, NodeId slot, bool bit);
  void maybe_vote_zero(netsim::Context& ctx, EpochId h, Instance& inst);
  void maybe_deliver(netsim::Context& ctx, EpochId h, Instance& inst);
  void maybe_retire(EpochId h);
  void note_peer(netsim::Context& ctx, EpochId h, Instance& inst, NodeId peer);
  BinaryConsensus::Broadcast broadcaster(netsim::Context& ctx, EpochId h, NodeId slot);

  NodeId self_;
  std::size_t n_;
  std::size_t f_;
  SbcConfig cfg_;
  brb::ReliableBroadcast& brb_;
  ValidFn valid_;
  DeliverFn on_set_deliver_;
  JoinFn on_join_;
  std::map<EpochId, Instance> instances_;
  std::set<EpochId> retired_;
};

/// Equivocation for both layers: BRB payload/digest conflicts plus flipped
/// votes, sent to recipients with id >= n/2.
netsim::MessageRewrite equivocating_rewrite(std::size_t n);

}  // namespace setchain::sbc
