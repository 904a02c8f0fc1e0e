#pragma once

#include <compare>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <set>

#include "setchain/bytes.hpp"
#include "setchain/crypto.hpp"
#include "setchain/netsim.hpp"
#include "setchain/types.hpp"

// Byzantine reliable broadcast (Bracha). Every correct node that delivers
// under a tag delivers the same payload, at most once, and if one correct
// node delivers then all correct nodes eventually do.
namespace setchain::brb {

enum class Kind : std::uint8_t { send = 0, echo = 1, ready = 2, request = 3, payload = 4 };

/// One broadcast instance: the channel byte selects the stream, the
/// sequence number is per origin within that stream.
struct Tag {
  std::uint8_t channel = 0;
  NodeId origin = 0;
  std::uint64_t seq = 0;
  auto operator<=>(const Tag&) const = default;
};

/// Decoded message; `payload` borrows from the wire buffer and is empty for
/// READY and REQUEST.
struct MessageView {
  Kind kind = Kind::send;
  Tag tag;
  Digest digest;
  ByteView payload;
};

/// Layout: channel u8 | kind u8 | origin u32 | seq u64 | digest[32] |
///         (SEND, ECHO, PAYLOAD only) payload length u64 | payload
Bytes encode(Kind kind, const Tag& tag, const Digest& digest, ByteView payload = {});
/// Throws DecodeError on malformed input.
MessageView decode(ByteView body);
bool carries_payload(Kind kind);

struct Thresholds {
  std::size_t echo = 0;     // ECHOes for one digest before sending READY
  std::size_t amplify = 0;  // READYs that make a node join with its own READY
  std::size_t deliver = 0;  // READYs needed to deliver

  /// echo = ceil((n+f+1)/2), amplify = f+1, deliver = 2f+1.
  static Thresholds bracha(std::size_t n, std::size_t f);
};

class ReliableBroadcast {
 public:
  using DeliverFn =
      std::function<void(netsim::Context&, const Tag&, const std::shared_ptr<const Bytes>& payload)>;

  ReliableBroadcast(NodeId self, std::size_t n, std::size_t f, DeliverFn deliver,
                    std::size_t retain_delivered = 1024);

  /// SEND to all n nodes under the next sequence number of `channel`.
  Tag broadcast(netsim::Context& ctx, std::uint8_t channel, Bytes payload);
  /// SEND under an explicit sequence number (one instance per seq).
  Tag broadcast_at(netsim::Context& ctx, std::uint8_t channel, std::uint64_t seq, Bytes payload);

  /// Feeds one authenticated message; malformed messages are ignored.
  void handle(netsim::Context& ctx, NodeId from, ByteView body);

  bool delivered(const Tag& tag) const { return delivered_.contains(tag); }
  std::size_t delivered_count() const { return delivered_.size(); }
  std::size_t active_instances() const { return instances_.size(); }
  const Thresholds& thresholds() const { return thresholds_; }

 private:
  struct Instance {
    bool sent_echo = false;
    bool sent_ready = false;
    bool requested = false;
    std::map<NodeId, Digest> echo_from;
    std::map<NodeId, Digest> ready_from;
    std::map<Digest, std::size_t> echo_count;
    std::map<Digest, std::size_t> ready_count;
    std::map<Digest, std::shared_ptr<const Bytes>> payloads;
  };

  const std::shared_ptr<const Bytes>* known_payload(Instance& inst, const Digest& d, ByteView bytes);
  void on_send(netsim::Context& ctx, NodeId from, const MessageView& m);
  void on_echo(netsim::Context& ctx, NodeId from, const MessageView& m);
  void on_ready(netsim::Context& ctx, NodeId from, const MessageView& m);
  void on_request(netsim::Context& ctx, NodeId from, const MessageView& m);
  void on_payload(netsim::Context& ctx, const MessageView& m);
  void send_ready(netsim::Context& ctx, const Tag& tag, Instance& inst, const Digest& d);
  void try_deliver(netsim::Context& ctx, const Tag& tag, Instance& inst);

  NodeId self_;
  std::size_t n_;
  std::size_t f_;
  Thresholds thresholds_;
  DeliverFn deliver_;
  std::size_t retain_;
  std::map<std::uint8_t, std::uint64_t> next_seq_;
  std::map<Tag, Instance> instances_;
  std::set<Tag> delivered_;
  // Recently delivered payloads kept to answer REQUESTs.
  std::map<Tag, std::pair<Digest, std::shared_ptr<const Bytes>>> retained_;
  std::deque<Tag> retained_order_;
};

/// Outbound rewrite for an equivocating node: recipients with id >= n/2
/// receive a conflicting payload (SEND/ECHO) or digest (READY).
netsim::MessageRewrite equivocating_rewrite(std::size_t n);
/// The conflicting variant of one BRB message, or nullopt for other traffic.
std::optional<Bytes> equivocate(const Bytes& body);

}  // namespace setchain::brb
