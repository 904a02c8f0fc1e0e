#include "setchain/sbc.hpp"

#include <stdexcept>

#include "setchain/wire.hpp"

namespace setchain::sbc {

namespace {

constexpr std::uint8_t kProposalKind = 0x03;
constexpr netsim::TimerTag kTagMask = (1ULL << 56) - 1;
// Votes further ahead than this are discarded rather than buffered.
constexpr std::uint32_t kRoundWindow = 64;

}  // namespace

Bytes encode_vote(const VoteMessage& m) {
  ByteWriter w(1 + 8 + 4 + 4 + 1 + 1);
  w.u8(wire::kSbcConsensus).u64(m.instance).u32(m.slot).u32(m.round);
  w.u8(static_cast<std::uint8_t>(m.phase)).u8(m.bit ? 1 : 0);
  return std::move(w).take();
}

VoteMessage decode_vote(ByteView body) {
  ByteReader in(body);
  if (in.u8() != wire::kSbcConsensus) throw DecodeError("not a consensus message");
  VoteMessage m;
  m.instance = in.u64();
  m.slot = in.u32();
  m.round = in.u32();
  std::uint8_t phase = in.u8();
  if (phase > static_cast<std::uint8_t>(Phase::decide)) throw DecodeError("unknown phase");
  m.phase = static_cast<Phase>(phase);
  std::uint8_t bit = in.u8();
  if (bit > 1) throw DecodeError("bit out of range");
  m.bit = bit == 1;
  in.expect_done();
  return m;
}

Bytes encode_proposal(EpochId instance, const ElementMap& elements) {
  ByteWriter w;
  w.u8(kProposalKind).u64(instance).u64(elements.size());
  for (const auto& [id, e] : elements) encode_element(w, e);
  return std::move(w).take();
}

std::pair<EpochId, std::vector<Element>> decode_proposal(ByteView payload) {
  ByteReader in(payload);
  if (in.u8() != kProposalKind) throw DecodeError("not a proposal");
  EpochId h = in.u64();
  std::uint64_t count = in.u64();
  std::vector<Element> out;
  for (std::uint64_t i = 0; i < count; ++i) out.push_back(decode_element(in));
  in.expect_done();
  return {h, std::move(out)};
}

bool common_coin(EpochId instance, NodeId slot, std::uint32_t round) {
  ByteWriter w(16);
  w.u64(instance).u32(slot).u32(round);
  return sha256(w.view()).parity();
}

// ---------------------------------------------------------------------------

BinaryConsensus::BinaryConsensus(std::size_t n, std::size_t f, EpochId instance, NodeId slot)
    : n_(n), f_(f), instance_(instance), slot_(slot) {}

std::optional<bool> BinaryConsensus::start(bool input, const Broadcast& out) {
  if (started() || halted_) return std::nullopt;
  bool was_decided = decided_.has_value();
  round_ = 1;
  estimate_ = decided_.value_or(input);
  send_vote(1, estimate_, out);
  progress(out);
  if (!was_decided && decided_) return decided_;
  return std::nullopt;
}

std::optional<bool> BinaryConsensus::on_message(NodeId from, std::uint32_t round, Phase phase, bool bit,
                                                const Broadcast& out) {
  if (halted_) return std::nullopt;
  bool was_decided = decided_.has_value();
  int b = bit ? 1 : 0;

  if (phase == Phase::decide) {
    std::size_t count = decides_[b].insert(from).second ? decides_[b].size() : 0;
    if (count >= f_ + 1 && !decided_) decide(bit, out);
    if (decides_[b].size() >= 2 * f_ + 1 && decided_ == bit) {
      halted_ = true;
      rounds_.clear();
    }
  } else {
    if (round == 0 || round > std::max(round_, 1U) + kRoundWindow) return std::nullopt;
    Round& rd = rounds_[round];
    if (phase == Phase::vote) {
      rd.votes[b].insert(from);
      if (started() && round < round_) absorb_votes(round, rd, out);
    } else {
      rd.confirms.emplace(from, bit);  // first CONFIRM per sender wins
    }
    progress(out);
  }
  if (!was_decided && decided_) return decided_;
  return std::nullopt;
}

void BinaryConsensus::send_vote(std::uint32_t r, bool bit, const Broadcast& out) {
  Round& rd = rounds_[r];
  if (rd.vote_sent[bit ? 1 : 0]) return;
  rd.vote_sent[bit ? 1 : 0] = true;
  out(r, Phase::vote, bit);
}

void BinaryConsensus::absorb_votes(std::uint32_t r, Round& rd, const Broadcast& out) {
  for (int b = 0; b < 2; ++b) {
    std::size_t count = rd.votes[b].size();
    if (count >= f_ + 1 && !rd.vote_sent[b]) send_vote(r, b == 1, out);
    if (count >= 2 * f_ + 1 && !rd.bin[b]) {
      rd.bin[b] = true;
      if (!rd.first_bin) rd.first_bin = (b == 1);
    }
  }
}

void BinaryConsensus::decide(bool bit, const Broadcast& out) {
  decided_ = bit;
  decided_round_ = round_;
  estimate_ = bit;
  out(round_, Phase::decide, bit);
}

void BinaryConsensus::progress(const Broadcast& out) {
  while (started() && !halted_) {
    Round& rd = rounds_[round_];
    absorb_votes(round_, rd, out);
    if (rd.first_bin && !rd.confirm_sent) {
      rd.confirm_sent = true;
      out(round_, Phase::confirm, *rd.first_bin);
    }
    std::array<std::size_t, 2> support{0, 0};
    for (const auto& [from, v] : rd.confirms) {
      if (rd.bin[v ? 1 : 0]) ++support[v ? 1 : 0];
    }
    if (support[0] + support[1] < n_ - f_) return;

    bool coin = common_coin(instance_, slot_, round_);
    if (support[0] == 0 || support[1] == 0) {
      bool v = support[1] > 0;
      estimate_ = v;
      if (v == coin && !decided_) decide(v, out);
    } else {
      estimate_ = coin;
    }
    if (decided_) estimate_ = *decided_;
    ++round_;
    send_vote(round_, estimate_, out);
  }
}

// ---------------------------------------------------------------------------

SetConsensus::SetConsensus(NodeId self, std::size_t n, std::size_t f, SbcConfig cfg, brb::ReliableBroadcast& brb,
                           ValidFn valid, DeliverFn on_set_deliver)
    : self_(self),
      n_(n),
      f_(f),
      cfg_(cfg),
      brb_(brb),
      valid_(std::move(valid)),
      on_set_deliver_(std::move(on_set_deliver)) {}

SetConsensus::Instance& SetConsensus::instance(EpochId h) {
  auto it = instances_.find(h);
  if (it != instances_.end()) return it->second;
  Instance& inst = instances_[h];
  inst.slots.reserve(n_);
  for (NodeId j = 0; j < n_; ++j) inst.slots.emplace_back(n_, f_, h, j);
  return inst;
}

bool SetConsensus::proposed(EpochId h) const {
  if (retired_.contains(h)) return true;
  auto it = instances_.find(h);
  return it != instances_.end() && it->second.proposed;
}

bool SetConsensus::delivered(EpochId h) const {
  if (retired_.contains(h)) return true;
  auto it = instances_.find(h);
  return it != instances_.end() && it->second.delivered;
}

bool SetConsensus::join_evidence(EpochId h) const {
  auto it = instances_.find(h);
  return it != instances_.end() && it->second.active_peers.size() >= f_ + 1;
}

std::optional<bool> SetConsensus::slot_decision(EpochId h, NodeId slot) const {
  auto it = instances_.find(h);
  if (it == instances_.end() || slot >= n_) return std::nullopt;
  return it->second.slots[slot].decided();
}

BinaryConsensus::Broadcast SetConsensus::broadcaster(netsim::Context& ctx, EpochId h, NodeId slot) {
  return [&ctx, h, slot](std::uint32_t round, Phase phase, bool bit) {
    ctx.broadcast(encode_vote({h, slot, round, phase, bit}));
  };
}

void SetConsensus::propose(netsim::Context& ctx, EpochId h, const ElementMap& proposal) {
  if (proposed(h)) throw std::logic_error("already proposed for instance " + std::to_string(h));
  Instance& inst = instance(h);
  inst.proposed = true;
  brb_.broadcast_at(ctx, wire::kBrbProposals, h, encode_proposal(h, proposal));
  ctx.set_timer(cfg_.slot_deadline, kDeadlineTimer | (h & kTagMask));
  for (NodeId j = 0; j < n_; ++j) {
    if (inst.proposals.contains(j)) start_slot(ctx, h, inst, j, true);
  }
  maybe_deliver(ctx, h, inst);
}

void SetConsensus::note_peer(netsim::Context& ctx, EpochId h, Instance& inst, NodeId peer) {
  if (inst.proposed || inst.join_signalled) return;
  inst.active_peers.insert(peer);
  if (inst.active_peers.size() >= f_ + 1) {
    inst.join_signalled = true;
    if (on_join_) on_join_(ctx, h);
  }
}

void SetConsensus::on_proposal(netsim::Context& ctx, NodeId proposer, std::uint64_t seq, ByteView payload) {
  if (proposer >= n_ || retired_.contains(seq)) return;
  Instance& inst = instance(seq);
  if (inst.delivered || inst.proposals.contains(proposer)) return;
  // A malformed proposal is delivered identically everywhere, so it is
  // treated as empty rather than ignored.
  ElementMap elements;
  try {
    auto [h, decoded] = decode_proposal(payload);
    if (h == seq) {
      for (auto& e : decoded) {
        Digest id = element_id(e);
        if (valid_(e, id)) elements.emplace(id, std::move(e));
      }
    }
  } catch (const DecodeError&) {
    elements.clear();
  }
  inst.proposals.emplace(proposer, std::move(elements));
  if (inst.proposed) start_slot(ctx, seq, inst, proposer, true);
  note_peer(ctx, seq, inst, proposer);
  maybe_deliver(ctx, seq, inst);
  maybe_retire(seq);
}

void SetConsensus::handle(netsim::Context& ctx, NodeId from, ByteView body) {
  if (from >= n_) return;
  VoteMessage m;
  try {
    m = decode_vote(body);
  } catch (const DecodeError&) {
    return;
  }
  if (m.slot >= n_ || retired_.contains(m.instance)) return;
  Instance& inst = instance(m.instance);
  std::optional<bool> d = inst.slots[m.slot].on_message(from, m.round, m.phase, m.bit,
                                                         broadcaster(ctx, m.instance, m.slot));
  if (d) on_decision(ctx, m.instance, inst, m.slot, *d);
  note_peer(ctx, m.instance, inst, from);
  maybe_retire(m.instance);
}

bool SetConsensus::on_timer(netsim::Context& ctx, netsim::TimerTag tag) {
  if ((tag & ~kTagMask) != kDeadlineTimer) return false;
  EpochId h = tag & kTagMask;
  auto it = instances_.find(h);
  if (it == instances_.end()) return true;
  it->second.deadline_passed = true;
  maybe_vote_zero(ctx, h, it->second);
  maybe_retire(h);
  return true;
}

void SetConsensus::start_slot(netsim::Context& ctx, EpochId h, Instance& inst, NodeId slot, bool input) {
  BinaryConsensus& bc = inst.slots[slot];
  if (bc.started() || bc.halted()) return;
  std::optional<bool> d = bc.start(input, broadcaster(ctx, h, slot));
  if (d) on_decision(ctx, h, inst, slot, *d);
}

void SetConsensus::on_decision(netsim::Context& ctx, EpochId h, Instance& inst, NodeId, bool bit) {
  if (bit) ++inst.ones;
  maybe_vote_zero(ctx, h, inst);
  maybe_deliver(ctx, h, inst);
}

void SetConsensus::maybe_vote_zero(netsim::Context& ctx, EpochId h, Instance& inst) {
  if (!inst.proposed || !inst.deadline_passed || inst.ones < n_ - f_) return;
  for (NodeId j = 0; j < n_; ++j) {
    if (!inst.slots[j].started()) start_slot(ctx, h, inst, j, false);
  }
}

void SetConsensus::maybe_deliver(netsim::Context& ctx, EpochId h, Instance& inst) {
  if (inst.delivered || !inst.proposed || inst.ones < n_ - f_) return;
  DecidedSet decided;
  for (NodeId j = 0; j < n_; ++j) {
    std::optional<bool> d = inst.slots[j].decided();
    if (!d) return;
    if (!*d) continue;
    auto p = inst.proposals.find(j);
    if (p == inst.proposals.end()) return;  // wait for the reliable broadcast to catch up
    decided.emplace(j, p->second);
  }
  inst.delivered = true;
  inst.proposals.clear();
  ctx.cancel_timer(kDeadlineTimer | (h & kTagMask));
  on_set_deliver_(ctx, h, decided);
}

void SetConsensus::maybe_retire(EpochId h) {
  auto it = instances_.find(h);
  if (it == instances_.end() || !it->second.delivered) return;
  for (const auto& bc : it->second.slots) {
    if (!bc.halted()) return;
  }
  instances_.erase(it);
  retired_.insert(h);
}

netsim::MessageRewrite equivocating_rewrite(std::size_t n) {
  return [n](NodeId, NodeId to, const Bytes& body) -> std::optional<Bytes> {
    if (to < n / 2 || body.empty()) return std::nullopt;
    if (body[0] == wire::kSbcConsensus) {
      if (body.size() < 2) return std::nullopt;
      Bytes flipped = body;
      flipped.back() ^= 0x01;
      return flipped;
    }
    if (body[0] == wire::kBrbOps || body[0] == wire::kBrbProposals) return brb::equivocate(body);
    return std::nullopt;
  };
}

}  // namespace setchain::sbc
