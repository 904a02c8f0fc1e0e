#include "setchain/node.hpp"

#include <algorithm>
#include <stdexcept>
#include <string>

#include "setchain/wire.hpp"

namespace setchain::node {

namespace {

constexpr std::size_t kShareWindow = 1024;  // ignore shares this far beyond the local epoch

std::vector<Digest> as_vector(const DigestSet& ids) { return {ids.begin(), ids.end()}; }

}  // namespace

Bytes encode_op(const WireOp& op) {
  ByteWriter w;
  w.u8(static_cast<std::uint8_t>(op.kind));
  if (op.kind == OpKind::madd) {
    w.u64(op.elements.size());
    for (const auto& e : op.elements) encode_element(w, e);
  } else {
    w.u64(op.epoch);
  }
  return std::move(w).take();
}

WireOp decode_op(ByteView payload) {
  ByteReader in(payload);
  WireOp op;
  std::uint8_t kind = in.u8();
  if (kind == static_cast<std::uint8_t>(OpKind::madd)) {
    op.kind = OpKind::madd;
    std::uint64_t count = in.u64();
    for (std::uint64_t i = 0; i < count; ++i) op.elements.push_back(decode_element(in));
  } else if (kind == static_cast<std::uint8_t>(OpKind::mepochinc)) {
    op.kind = OpKind::mepochinc;
    op.epoch = in.u64();
  } else {
    throw DecodeError("unknown op kind");
  }
  in.expect_done();
  return op;
}

std::string_view to_string(StampingPolicy p) {
  return p == StampingPolicy::union_valid ? "union" : "quorum";
}

StampingPolicy parse_stamping_policy(std::string_view name) {
  if (name == "union" || name == "union_valid") return StampingPolicy::union_valid;
  if (name == "quorum" || name == "quorum_f_plus_1") return StampingPolicy::quorum_f_plus_1;
  throw std::invalid_argument("unknown stamping policy: " + std::string(name));
}

ElementMap select_stamped(StampingPolicy policy, std::size_t f, const sbc::DecidedSet& propset,
                          const History& history, const std::function<bool(const Element&, const Digest&)>& valid) {
  std::map<Digest, std::pair<std::size_t, const Element*>> seen;
  for (const auto& [proposer, elements] : propset) {
    for (const auto& [id, e] : elements) {
      auto& slot = seen[id];
      ++slot.first;
      slot.second = &e;
    }
  }
  std::size_t need = policy == StampingPolicy::union_valid ? 1 : f + 1;
  ElementMap out;
  for (const auto& [id, entry] : seen) {
    if (entry.first >= need && !history.contains(id) && valid(*entry.second, id)) out.emplace(id, *entry.second);
  }
  return out;
}

Bytes encode_request(RequestKind kind, std::uint64_t request_id, ByteView body) {
  ByteWriter w(1 + 1 + 8 + body.size());
  w.u8(wire::kClientRequest).u8(static_cast<std::uint8_t>(kind)).u64(request_id).raw(body);
  return std::move(w).take();
}

Bytes encode_response(NodeId server, std::uint64_t request_id, const GetResult& result, const SigningKey& key) {
  ByteWriter w;
  w.u8(wire::kClientResponse).u32(server).u64(request_id);
  encode_get_result(w, result);
  Signature sig{};
  if (key.well_formed()) sig = key.sign(w.view());
  w.raw(sig.bytes);
  return std::move(w).take();
}

ServerResponse decode_response(ByteView body) {
  if (body.size() < Signature::kSize) throw DecodeError("response too short");
  ByteReader in(body.first(body.size() - Signature::kSize));
  if (in.u8() != wire::kClientResponse) throw DecodeError("not a response");
  ServerResponse r;
  r.server = in.u32();
  r.request_id = in.u64();
  r.result = decode_get_result(in);
  in.expect_done();
  ByteView sig = body.last(Signature::kSize);
  std::copy(sig.begin(), sig.end(), r.signature.bytes.begin());
  return r;
}

bool response_authentic(ByteView body, const PublicKey& key, SignatureScheme scheme) {
  if (body.size() < Signature::kSize) return false;
  Signature sig;
  ByteView tail = body.last(Signature::kSize);
  std::copy(tail.begin(), tail.end(), sig.bytes.begin());
  return verify_signature(scheme, key, body.first(body.size() - Signature::kSize), sig);
}

Bytes encode_share(EpochId h, const Digest& digest, const Signature& sig) {
  ByteWriter w(1 + 8 + Digest::kSize + Signature::kSize);
  w.u8(wire::kCertShare).u64(h).raw(digest.bytes).raw(sig.bytes);
  return std::move(w).take();
}

// ---------------------------------------------------------------------------

SetchainServer::SetchainServer(NodeId self, std::size_t n, std::size_t f, NodeConfig cfg)
    : self_(self),
      n_(n),
      f_(f),
      cfg_(std::move(cfg)),
      brb_(self, n, f,
           [this](netsim::Context& ctx, const brb::Tag& tag, const std::shared_ptr<const Bytes>& payload) {
             on_brb_deliver(ctx, tag, *payload);
           }),
      sbc_(self, n, f, cfg_.sbc, brb_, [this](const Element& e, const Digest& id) { return valid(e, id); },
           [this](netsim::Context& ctx, EpochId h, const sbc::DecidedSet& propset) {
             on_set_deliver(ctx, h, propset);
           }) {
  sbc_.set_join_listener([this](netsim::Context& ctx, EpochId h) {
    if (h == epoch() + 1 && !sbc_.proposed(h)) propose(ctx, h);
  });
}

bool SetchainServer::valid(const Element& e, const Digest& id) const { return validate(e, id, cfg_.validation); }

std::optional<Provenance> SetchainServer::provenance(const Digest& id) const {
  auto it = provenance_.find(id);
  if (it == provenance_.end()) return std::nullopt;
  return it->second;
}

void SetchainServer::insert(const Digest& id, const Element& e, Provenance how) {
  if (!theset_.emplace(id, e).second) return;
  if (!history_.contains(id)) unstamped_.insert(id);
  if (cfg_.track_provenance) provenance_.emplace(id, how);
  if (insert_listener_) insert_listener_(self_, id);
}

AddStatus SetchainServer::add(netsim::Context& ctx, const Element& e) {
  Digest id = element_id(e);
  if (!valid(e, id)) return AddStatus::invalid;
  if (theset_.contains(id) || inflight_.contains(id) || agg_buffer_.contains(id) || riding_.contains(id)) {
    return AddStatus::duplicate;
  }
  if (cfg_.track_provenance) provenance_.emplace(id, Provenance::local_add);
  if (!cfg_.agg.enabled) {
    broadcast_batch(ctx, {e});
    return AddStatus::accepted;
  }
  bool was_empty = agg_buffer_.empty();
  agg_buffer_.emplace(id, e);
  if (agg_buffer_.size() >= cfg_.agg.max_batch) {
    flush(ctx);
  } else if (was_empty) {
    ctx.set_timer(cfg_.agg.max_wait, kFlushTimer);
  }
  return AddStatus::accepted;
}

GetResult SetchainServer::get() const { return {theset_, history_, history_.epoch()}; }

EpochIncStatus SetchainServer::epoch_inc(netsim::Context& ctx, EpochId h) {
  if (h <= epoch()) return EpochIncStatus::stale;
  if (h > epoch() + 1) return EpochIncStatus::future;
  WireOp op;
  op.kind = OpKind::mepochinc;
  op.epoch = h;
  brb_.broadcast(ctx, wire::kBrbOps, encode_op(op));
  return EpochIncStatus::broadcast;
}

void SetchainServer::broadcast_batch(netsim::Context& ctx, std::vector<Element> batch) {
  if (batch.empty()) return;
  for (const auto& e : batch) inflight_.insert(element_id(e));
  WireOp op;
  op.kind = OpKind::madd;
  op.elements = std::move(batch);
  brb_.broadcast(ctx, wire::kBrbOps, encode_op(op));
}

void SetchainServer::flush(netsim::Context& ctx) {
  ctx.cancel_timer(kFlushTimer);
  std::vector<Element> batch;
  batch.reserve(agg_buffer_.size());
  for (auto& [id, e] : agg_buffer_) batch.push_back(std::move(e));
  agg_buffer_.clear();
  broadcast_batch(ctx, std::move(batch));
}

void SetchainServer::on_timer(netsim::Context& ctx, netsim::TimerTag tag) {
  if (sbc_.on_timer(ctx, tag)) return;
  if (tag == kFlushTimer) flush(ctx);
}

void SetchainServer::on_message(netsim::Context& ctx, NodeId from, const Bytes& body) {
  if (body.empty()) return;
  switch (body[0]) {
    case wire::kBrbOps:
    case wire::kBrbProposals: brb_.handle(ctx, from, body); break;
    case wire::kSbcConsensus: sbc_.handle(ctx, from, body); break;
    case wire::kCertShare: on_share(ctx, from, body); break;
    case wire::kClientRequest: on_request(ctx, from, body); break;
    default: break;
  }
}

void SetchainServer::on_brb_deliver(netsim::Context& ctx, const brb::Tag& tag, const Bytes& payload) {
  if (tag.channel == wire::kBrbProposals) {
    sbc_.on_proposal(ctx, tag.origin, tag.seq, payload);
    return;
  }
  if (tag.channel != wire::kBrbOps) return;
  WireOp op;
  try {
    op = decode_op(payload);
  } catch (const DecodeError&) {
    return;
  }
  if (op.kind == OpKind::madd) {
    for (const auto& e : op.elements) {
      Digest id = element_id(e);
      if (tag.origin == self_) inflight_.erase(id);
      if (theset_.contains(id) || !valid(e, id)) continue;
      insert(id, e, Provenance::brb_madd);
    }
    return;
  }
  // Stale and future announcements are dropped.
  if (op.epoch == epoch() + 1 && !sbc_.proposed(op.epoch)) propose(ctx, op.epoch);
}

void SetchainServer::propose(netsim::Context& ctx, EpochId h) {
  ElementMap proposal;
  for (const auto& id : unstamped_) proposal.emplace(id, theset_.at(id));
  if (cfg_.agg.enabled && cfg_.agg.propose_direct && !agg_buffer_.empty()) {
    ctx.cancel_timer(kFlushTimer);
    for (auto& [id, e] : agg_buffer_) riding_.emplace(id, std::move(e));
    agg_buffer_.clear();
    riding_epoch_ = h;
  }
  for (const auto& [id, e] : riding_) proposal.emplace(id, e);
  sbc_.propose(ctx, h, proposal);
}

void SetchainServer::on_set_deliver(netsim::Context& ctx, EpochId h, const sbc::DecidedSet& propset) {
  if (h != epoch() + 1) return;  // instances are proposed strictly in order

  ElementMap stamped = select_stamped(cfg_.policy, f_, propset, history_,
                                      [this](const Element& e, const Digest& id) { return valid(e, id); });

  DigestSet ids;
  for (const auto& [id, e] : stamped) {
    ids.insert(id);
    insert(id, e, Provenance::sbc_proposal);
    unstamped_.erase(id);
  }
  history_.append(ids);

  if (riding_epoch_ == h && !riding_.empty()) {
    std::vector<Element> fallback;
    for (auto& [id, e] : riding_) {
      if (!history_.contains(id) && !theset_.contains(id)) fallback.push_back(std::move(e));
    }
    riding_.clear();
    broadcast_batch(ctx, std::move(fallback));
  }

  if (stamp_listener_) stamp_listener_(self_, h, ids, ctx.now());

  if (cfg_.certify_epochs && cfg_.key.well_formed()) {
    Digest d = epoch_digest(h, as_vector(ids));
    own_digest_[h] = d;
    ctx.broadcast(encode_share(h, d, cfg_.key.sign(certificate_message(h, d))));
    try_certify(ctx, h);
  }

  EpochId next = epoch() + 1;
  if (sbc_.join_evidence(next) && !sbc_.proposed(next)) propose(ctx, next);
}

void SetchainServer::on_share(netsim::Context& ctx, NodeId from, ByteView body) {
  if (!cfg_.certify_epochs || !cfg_.server_keys || from >= n_ || from >= cfg_.server_keys->size()) return;
  EpochId h = 0;
  Digest d;
  Signature sig;
  try {
    ByteReader in(body);
    in.u8();
    h = in.u64();
    d.bytes = in.fixed<Digest::kSize>();
    sig.bytes = in.fixed<Signature::kSize>();
    in.expect_done();
  } catch (const DecodeError&) {
    return;
  }
  if (h == 0 || h > epoch() + kShareWindow || certificates_.contains(h)) return;
  if (!verify_signature(cfg_.validation.scheme, (*cfg_.server_keys)[from], certificate_message(h, d), sig)) return;
  shares_[h].emplace(from, std::make_pair(d, sig));
  try_certify(ctx, h);
}

void SetchainServer::try_certify(netsim::Context& ctx, EpochId h) {
  auto own = own_digest_.find(h);
  if (own == own_digest_.end() || certificates_.contains(h)) return;
  EpochCertificate cert;
  cert.epoch = h;
  cert.digest = own->second;
  for (const auto& [node, share] : shares_[h]) {
    if (share.first == cert.digest) cert.signatures.emplace_back(node, share.second);
  }
  if (cert.signatures.size() < f_ + 1) return;
  shares_.erase(h);
  own_digest_.erase(own);
  Element e = sign_element(encode_certificate_payload(cert), cfg_.key);
  certificates_.emplace(h, std::move(cert));
  add(ctx, e);
}

void SetchainServer::on_request(netsim::Context& ctx, NodeId from, ByteView body) {
  try {
    ByteReader in(body);
    in.u8();
    std::uint8_t kind = in.u8();
    std::uint64_t request_id = in.u64();
    switch (static_cast<RequestKind>(kind)) {
      case RequestKind::add: {
        Element e = decode_element(in);
        in.expect_done();
        add(ctx, e);
        break;
      }
      case RequestKind::get:
        in.expect_done();
        ctx.send(from, encode_response(self_, request_id, get(), cfg_.key));
        break;
      case RequestKind::epoch_inc: {
        EpochId h = in.u64();
        in.expect_done();
        epoch_inc(ctx, h);
        break;
      }
      default: break;
    }
  } catch (const DecodeError&) {
  }
}

// ---------------------------------------------------------------------------

ForgingServer::ForgingServer(std::unique_ptr<netsim::Process> inner, SigningKey key, Forger forger)
    : inner_(std::move(inner)), key_(std::move(key)), forger_(std::move(forger)) {}

void ForgingServer::on_message(netsim::Context& ctx, NodeId from, const Bytes& body) {
  if (body.size() >= 10 && body[0] == wire::kClientRequest && body[1] == static_cast<std::uint8_t>(RequestKind::get)) {
    auto* server = dynamic_cast<SetchainServer*>(inner_.get());
    GetResult honest = server != nullptr ? server->get() : GetResult{};
    ByteReader in(body);
    in.raw(2);
    std::uint64_t request_id = in.u64();
    ctx.send(from, encode_response(ctx.self(), request_id, forger_(honest), key_));
    return;
  }
  inner_->on_message(ctx, from, body);
}

GetResult ForgingServer::default_forgery(const GetResult& honest, const SigningKey& key) {
  GetResult forged;
  EpochId epochs = honest.epoch + 1;
  for (EpochId i = 1; i <= epochs; ++i) {
    Element e = sign_element(to_bytes("forged-epoch-" + std::to_string(i)), key);
    Digest id = element_id(e);
    forged.set_view.emplace(id, e);
    forged.history.append({id});
  }
  forged.epoch = epochs;
  return forged;
}

// ---------------------------------------------------------------------------

Cluster::Cluster(netsim::SimConfig sim, NodeConfig base) : base_(std::move(base)) {
  auto keys = std::make_shared<std::vector<PublicKey>>();
  for (NodeId i = 0; i < sim.n; ++i) {
    signing_keys_.push_back(SigningKey::derive(base_.validation.scheme, "setchain-server-" + std::to_string(i)));
    keys->push_back(signing_keys_.back().public_key());
  }
  keys_ = keys;
  for (auto& [id, b] : sim.behaviors) {
    if (b.mode == netsim::ByzantineMode::equivocate_brb && !b.rewrite) b.rewrite = sbc::equivocating_rewrite(sim.n);
    if (b.mode == netsim::ByzantineMode::forge_history && !b.wrap && id < signing_keys_.size()) {
      SigningKey key = signing_keys_[id];
      b.wrap = [key](std::unique_ptr<netsim::Process> inner) -> std::unique_ptr<netsim::Process> {
        return std::make_unique<ForgingServer>(std::move(inner), key, [key](const GetResult& honest) {
          return ForgingServer::default_forgery(honest, key);
        });
      };
    }
  }
  std::size_t n = sim.n;
  std::size_t f = sim.f;
  sim_ = std::make_unique<netsim::Simulator>(std::move(sim), [&](NodeId id) {
    NodeConfig cfg = base_;
    cfg.key = signing_keys_[id];
    cfg.server_keys = keys_;
    return std::make_unique<SetchainServer>(id, n, f, std::move(cfg));
  });
  sim_->set_channel_names(wire::channel_names());
}

SetchainServer& Cluster::server(NodeId i) {
  netsim::Process& p = sim_->process(i);
  if (auto* s = dynamic_cast<SetchainServer*>(&p)) return *s;
  if (auto* w = dynamic_cast<ForgingServer*>(&p)) {
    if (auto* s = dynamic_cast<SetchainServer*>(&w->inner())) return *s;
  }
  throw std::logic_error("node " + std::to_string(i) + " does not run a setchain server");
}

void Cluster::with_server(NodeId i, const std::function<void(netsim::Context&, SetchainServer&)>& fn) {
  SetchainServer& s = server(i);
  sim_->with_context(i, [&](netsim::Context& ctx) { fn(ctx, s); });
}

void Cluster::set_stamp_listener(const SetchainServer::StampListener& fn) {
  for (NodeId i = 0; i < sim_->n(); ++i) server(i).set_stamp_listener(fn);
}

}  // namespace setchain::node
