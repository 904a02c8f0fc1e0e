#pragma once

#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "setchain/brb.hpp"
#include "setchain/element.hpp"
#include "setchain/history.hpp"
#include "setchain/netsim.hpp"
#include "setchain/sbc.hpp"

namespace setchain::node {

// Operations disseminated by reliable broadcast on the ops channel.
enum class OpKind : std::uint8_t { madd = 0x01, mepochinc = 0x02 };

struct WireOp {
  OpKind kind = OpKind::madd;
  std::vector<Element> elements;  // madd: one element, or one batch when aggregating
  EpochId epoch = 0;              // mepochinc
};

/// madd:      0x01 | count u64 | elements (canonical encoding)...
/// mepochinc: 0x02 | h u64
Bytes encode_op(const WireOp& op);
WireOp decode_op(ByteView payload);

/// How a delivered set of proposals turns into the new epoch.
enum class StampingPolicy : std::uint8_t {
  union_valid,      // every valid, not yet stamped element of any decided proposal
  quorum_f_plus_1,  // only elements present in at least f+1 decided proposals
};

std::string_view to_string(StampingPolicy p);
/// Accepts "union" / "quorum" and the enumerator names.
StampingPolicy parse_stamping_policy(std::string_view name);

/// The elements a delivered proposal set stamps: valid, not yet in
/// `history`, and under quorum_f_plus_1 present in at least f+1 proposals.
ElementMap select_stamped(StampingPolicy policy, std::size_t f, const sbc::DecidedSet& propset,
                          const History& history, const std::function<bool(const Element&, const Digest&)>& valid);

struct AggConfig {
  bool enabled = false;
  std::size_t max_batch = 1000;
  SimTime max_wait = 5;
  /// Buffered elements ride this server's next proposal instead of waiting
  /// for a flush; those left unstamped are then reliably broadcast.
  bool propose_direct = false;
};

struct NodeConfig {
  ValidationPolicy validation;
  StampingPolicy policy = StampingPolicy::union_valid;
  AggConfig agg;
  sbc::SbcConfig sbc;
  /// Exchange signatures over each epoch digest and add the resulting
  /// certificate as an element.
  bool certify_epochs = false;
  /// Remember how each element entered theset (for provenance checks).
  bool track_provenance = false;
  /// Identity key: signs client responses and certificate shares.
  SigningKey key;
  std::shared_ptr<const std::vector<PublicKey>> server_keys;
};

enum class AddStatus : std::uint8_t { accepted, duplicate, invalid };
enum class EpochIncStatus : std::uint8_t { broadcast, stale, future };
enum class Provenance : std::uint8_t { local_add, brb_madd, sbc_proposal };

enum class RequestKind : std::uint8_t { add = 1, get = 2, epoch_inc = 3 };

/// Client request: 0x40 | kind u8 | request id u64 | body
///   add: element; get: empty; epoch_inc: h u64
Bytes encode_request(RequestKind kind, std::uint64_t request_id, ByteView body = {});

/// Signed reply to a get request.
struct ServerResponse {
  NodeId server = 0;
  std::uint64_t request_id = 0;
  GetResult result;
  Signature signature;
};

/// 0x41 | server u32 | request id u64 | get result | signature over all preceding bytes
Bytes encode_response(NodeId server, std::uint64_t request_id, const GetResult& result, const SigningKey& key);
/// Throws DecodeError on malformed input; does not check the signature.
ServerResponse decode_response(ByteView body);
bool response_authentic(ByteView body, const PublicKey& key, SignatureScheme scheme);

/// Certificate share: 0x30 | h u64 | digest[32] | signature[64]
Bytes encode_share(EpochId h, const Digest& digest, const Signature& sig);

/// Setchain server: a local grow-only set, reliable broadcast of adds and
/// epoch announcements, and set consensus to stamp each epoch.
class SetchainServer : public netsim::Process {
 public:
  using StampListener = std::function<void(NodeId self, EpochId h, const DigestSet& ids, SimTime now)>;
  using InsertListener = std::function<void(NodeId self, const Digest& id)>;

  SetchainServer(NodeId self, std::size_t n, std::size_t f, NodeConfig cfg);

  AddStatus add(netsim::Context& ctx, const Element& e);
  GetResult get() const;
  EpochIncStatus epoch_inc(netsim::Context& ctx, EpochId h);

  void on_message(netsim::Context& ctx, NodeId from, const Bytes& body) override;
  void on_timer(netsim::Context& ctx, netsim::TimerTag tag) override;

  NodeId id() const { return self_; }
  EpochId epoch() const { return history_.epoch(); }
  const History& history() const { return history_; }
  const ElementMap& theset() const { return theset_; }
  std::size_t unstamped_count() const { return unstamped_.size(); }
  std::size_t buffered_count() const { return agg_buffer_.size() + riding_.size(); }
  const NodeConfig& config() const { return cfg_; }
  const std::map<EpochId, EpochCertificate>& certificates() const { return certificates_; }
  std::optional<Provenance> provenance(const Digest& id) const;
  const brb::ReliableBroadcast& broadcast_layer() const { return brb_; }
  const sbc::SetConsensus& consensus() const { return sbc_; }

  void set_stamp_listener(StampListener fn) { stamp_listener_ = std::move(fn); }
  /// Called whenever an element enters theset.
  void set_insert_listener(InsertListener fn) { insert_listener_ = std::move(fn); }

 private:
  bool valid(const Element& e, const Digest& id) const;
  void insert(const Digest& id, const Element& e, Provenance how);
  void flush(netsim::Context& ctx);
  void broadcast_batch(netsim::Context& ctx, std::vector<Element> batch);
  void propose(netsim::Context& ctx, EpochId h);
  void on_brb_deliver(netsim::Context& ctx, const brb::Tag& tag, const Bytes& payload);
  void on_set_deliver(netsim::Context& ctx, EpochId h, const sbc::DecidedSet& propset);
  void on_share(netsim::Context& ctx, NodeId from, ByteView body);
  void try_certify(netsim::Context& ctx, EpochId h);
  void on_request(netsim::Context& ctx, NodeId from, ByteView body);

  NodeId self_;
  std::size_t n_;
  std::size_t f_;
  NodeConfig cfg_;
  brb::ReliableBroadcast brb_;
  sbc::SetConsensus sbc_;

  ElementMap theset_;
  History history_;
  std::set<Digest> unstamped_;  // theset \ history
  std::set<Digest> inflight_;   // broadcast by this server, not yet delivered back
  ElementMap agg_buffer_;
  ElementMap riding_;           // moved into an outstanding proposal
  EpochId riding_epoch_ = 0;
  std::unordered_map<Digest, Provenance, DigestHash> provenance_;

  std::map<EpochId, Digest> own_digest_;
  std::map<EpochId, std::map<NodeId, std::pair<Digest, Signature>>> shares_;
  std::map<EpochId, EpochCertificate> certificates_;

  StampListener stamp_listener_;
  InsertListener insert_listener_;
};

/// Timer tag of the aggregation flush.
inline constexpr netsim::TimerTag kFlushTimer = 0x02ULL << 56;

/// Answers client gets with a fabricated result; everything else is
/// forwarded to the wrapped server.
class ForgingServer : public netsim::Process {
 public:
  using Forger = std::function<GetResult(const GetResult& honest)>;

  ForgingServer(std::unique_ptr<netsim::Process> inner, SigningKey key, Forger forger);

  void on_start(netsim::Context& ctx) override { inner_->on_start(ctx); }
  void on_message(netsim::Context& ctx, NodeId from, const Bytes& body) override;
  void on_timer(netsim::Context& ctx, netsim::TimerTag tag) override { inner_->on_timer(ctx, tag); }

  netsim::Process& inner() { return *inner_; }

  /// Replaces every epoch with one freshly signed element and claims one
  /// extra epoch.
  static GetResult default_forgery(const GetResult& honest, const SigningKey& key);

 private:
  std::unique_ptr<netsim::Process> inner_;
  SigningKey key_;
  Forger forger_;
};

/// Simulator with n servers sharing one configuration; server i's identity
/// key is derived from the label "setchain-server-<i>" under the validation
/// scheme. Byzantine behaviors without an explicit rewrite or wrap get the
/// stock equivocation rewrite / forging wrapper.
class Cluster {
 public:
  Cluster(netsim::SimConfig sim, NodeConfig base);

  netsim::Simulator& sim() { return *sim_; }
  const netsim::Simulator& sim() const { return *sim_; }
  std::size_t n() const { return sim_->n(); }
  std::size_t f() const { return sim_->f(); }

  /// The server logic of node i, looking through a forging wrapper.
  SetchainServer& server(NodeId i);
  const std::vector<PublicKey>& server_keys() const { return *keys_; }
  const SigningKey& server_key(NodeId i) const { return signing_keys_.at(i); }
  SignatureScheme scheme() const { return base_.validation.scheme; }

  std::vector<NodeId> correct_servers() const { return sim_->correct_servers(); }

  /// Runs `fn` inside server i's handler context.
  void with_server(NodeId i, const std::function<void(netsim::Context&, SetchainServer&)>& fn);
  void set_stamp_listener(const SetchainServer::StampListener& fn);

 private:
  NodeConfig base_;
  std::vector<SigningKey> signing_keys_;
  std::shared_ptr<const std::vector<PublicKey>> keys_;
  std::unique_ptr<netsim::Simulator> sim_;
};

}  // namespace setchain::node
