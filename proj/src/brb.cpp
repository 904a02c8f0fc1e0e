#include "setchain/brb.hpp"

#include <algorithm>
#include <cstring>

#include "setchain/wire.hpp"

namespace setchain::brb {

bool carries_payload(Kind kind) { return kind == Kind::send || kind == Kind::echo || kind == Kind::payload; }

Bytes encode(Kind kind, const Tag& tag, const Digest& digest, ByteView payload) {
  ByteWriter w(1 + 1 + 4 + 8 + 32 + (carries_payload(kind) ? 8 + payload.size() : 0));
  w.u8(tag.channel).u8(static_cast<std::uint8_t>(kind)).u32(tag.origin).u64(tag.seq).raw(digest.bytes);
  if (carries_payload(kind)) w.blob(payload);
  return std::move(w).take();
}

MessageView decode(ByteView body) {
  ByteReader in(body);
  MessageView m;
  m.tag.channel = in.u8();
  std::uint8_t kind = in.u8();
  if (kind > static_cast<std::uint8_t>(Kind::payload)) throw DecodeError("unknown brb kind");
  m.kind = static_cast<Kind>(kind);
  m.tag.origin = in.u32();
  m.tag.seq = in.u64();
  m.digest.bytes = in.fixed<Digest::kSize>();
  if (carries_payload(m.kind)) m.payload = in.blob();
  in.expect_done();
  return m;
}

Thresholds Thresholds::bracha(std::size_t n, std::size_t f) {
  return {(n + f + 2) / 2, f + 1, 2 * f + 1};
}

ReliableBroadcast::ReliableBroadcast(NodeId self, std::size_t n, std::size_t f, DeliverFn deliver,
                                     std::size_t retain_delivered)
    : self_(self),
      n_(n),
      f_(f),
      thresholds_(Thresholds::bracha(n, f)),
      deliver_(std::move(deliver)),
      retain_(retain_delivered) {}

Tag ReliableBroadcast::broadcast(netsim::Context& ctx, std::uint8_t channel, Bytes payload) {
  std::uint64_t seq = next_seq_[channel]++;
  return broadcast_at(ctx, channel, seq, std::move(payload));
}

Tag ReliableBroadcast::broadcast_at(netsim::Context& ctx, std::uint8_t channel, std::uint64_t seq,
                                    Bytes payload) {
  Tag tag{channel, self_, seq};
  Digest d = sha256(payload);
  ctx.broadcast(encode(Kind::send, tag, d, payload));
  return tag;
}

void ReliableBroadcast::handle(netsim::Context& ctx, NodeId from, ByteView body) {
  MessageView m;
  try {
    m = decode(body);
  } catch (const DecodeError&) {
    return;
  }
  if (m.tag.origin >= n_ || from >= n_) return;
  if (m.kind == Kind::request) {
    on_request(ctx, from, m);
    return;
  }
  if (delivered_.contains(m.tag)) return;
  switch (m.kind) {
    case Kind::send: on_send(ctx, from, m); break;
    case Kind::echo: on_echo(ctx, from, m); break;
    case Kind::ready: on_ready(ctx, from, m); break;
    case Kind::payload: on_payload(ctx, m); break;
    case Kind::request: break;
  }
}

// Returns the stored payload for `d`, storing `bytes` first if they hash to d.
// nullptr when the bytes do not match the claimed digest.
const std::shared_ptr<const Bytes>* ReliableBroadcast::known_payload(Instance& inst, const Digest& d,
                                                                     ByteView bytes) {
  auto it = inst.payloads.find(d);
  if (it != inst.payloads.end()) {
    const Bytes& have = *it->second;
    if (have.size() == bytes.size() && std::equal(have.begin(), have.end(), bytes.begin())) return &it->second;
    return nullptr;
  }
  if (sha256(bytes) != d) return nullptr;
  auto [pos, _] = inst.payloads.emplace(d, std::make_shared<const Bytes>(bytes.begin(), bytes.end()));
  return &pos->second;
}

void ReliableBroadcast::on_send(netsim::Context& ctx, NodeId from, const MessageView& m) {
  if (from != m.tag.origin) return;
  Instance& inst = instances_[m.tag];
  if (inst.sent_echo) return;
  const auto* payload = known_payload(inst, m.digest, m.payload);
  if (payload == nullptr) return;
  inst.sent_echo = true;
  ctx.broadcast(encode(Kind::echo, m.tag, m.digest, **payload));
}

void ReliableBroadcast::on_echo(netsim::Context& ctx, NodeId from, const MessageView& m) {
  Instance& inst = instances_[m.tag];
  if (inst.echo_from.contains(from)) return;  // first ECHO per sender wins
  if (known_payload(inst, m.digest, m.payload) == nullptr) return;
  inst.echo_from.emplace(from, m.digest);
  std::size_t count = ++inst.echo_count[m.digest];
  if (count >= thresholds_.echo && !inst.sent_ready) send_ready(ctx, m.tag, inst, m.digest);
  try_deliver(ctx, m.tag, inst);
}

void ReliableBroadcast::on_ready(netsim::Context& ctx, NodeId from, const MessageView& m) {
  Instance& inst = instances_[m.tag];
  if (inst.ready_from.contains(from)) return;
  inst.ready_from.emplace(from, m.digest);
  std::size_t count = ++inst.ready_count[m.digest];
  if (count >= thresholds_.amplify && !inst.sent_ready) send_ready(ctx, m.tag, inst, m.digest);
  try_deliver(ctx, m.tag, inst);
}

void ReliableBroadcast::on_request(netsim::Context& ctx, NodeId from, const MessageView& m) {
  std::shared_ptr<const Bytes> payload;
  if (auto r = retained_.find(m.tag); r != retained_.end()) {
    if (r->second.first == m.digest) payload = r->second.second;
  } else if (auto it = instances_.find(m.tag); it != instances_.end()) {
    if (auto p = it->second.payloads.find(m.digest); p != it->second.payloads.end()) payload = p->second;
  }
  if (payload) ctx.send(from, encode(Kind::payload, m.tag, m.digest, *payload));
}

void ReliableBroadcast::on_payload(netsim::Context& ctx, const MessageView& m) {
  auto it = instances_.find(m.tag);
  if (it == instances_.end()) return;
  if (known_payload(it->second, m.digest, m.payload) == nullptr) return;
  try_deliver(ctx, m.tag, it->second);
}

void ReliableBroadcast::send_ready(netsim::Context& ctx, const Tag& tag, Instance& inst, const Digest& d) {
  inst.sent_ready = true;
  ctx.broadcast(encode(Kind::ready, tag, d));
}

void ReliableBroadcast::try_deliver(netsim::Context& ctx, const Tag& tag, Instance& inst) {
  for (const auto& [d, count] : inst.ready_count) {
    if (count < thresholds_.deliver) continue;
    auto p = inst.payloads.find(d);
    if (p == inst.payloads.end()) {
      if (!inst.requested) {
        // READY quorum without the payload: pull it from the READY senders.
        inst.requested = true;
        Bytes req = encode(Kind::request, tag, d);
        auto shared = std::make_shared<const Bytes>(std::move(req));
        for (const auto& [sender, digest] : inst.ready_from) {
          if (digest == d) ctx.send(sender, shared);
        }
      }
      return;
    }
    std::shared_ptr<const Bytes> payload = p->second;
    Digest digest = d;
    Tag t = tag;
    instances_.erase(t);  // invalidates inst
    delivered_.insert(t);
    if (retain_ > 0) {
      retained_.emplace(t, std::make_pair(digest, payload));
      retained_order_.push_back(t);
      if (retained_order_.size() > retain_) {
        retained_.erase(retained_order_.front());
        retained_order_.pop_front();
      }
    }
    deliver_(ctx, t, payload);
    return;
  }
}

std::optional<Bytes> equivocate(const Bytes& body) {
  MessageView m;
  try {
    m = decode(body);
  } catch (const DecodeError&) {
    return std::nullopt;
  }
  if (m.kind == Kind::ready) {
    Digest d = m.digest;
    d.bytes[0] ^= 0xFF;
    return encode(Kind::ready, m.tag, d);
  }
  if (m.kind != Kind::send && m.kind != Kind::echo) return std::nullopt;
  Bytes other(m.payload.begin(), m.payload.end());
  if (other.empty()) {
    other.push_back(0xFF);
  } else {
    other.back() ^= 0xFF;
  }
  return encode(m.kind, m.tag, sha256(other), other);
}

netsim::MessageRewrite equivocating_rewrite(std::size_t n) {
  return [n](NodeId, NodeId to, const Bytes& body) -> std::optional<Bytes> {
    if (to < n / 2 || body.empty()) return std::nullopt;
    std::uint8_t channel = body[0];
    if (channel != wire::kBrbOps && channel != wire::kBrbProposals) return std::nullopt;
    return equivocate(body);
  };
}

}  // namespace setchain::brb
