#include "setchain/client.hpp"

#include <algorithm>

#include "setchain/node.hpp"
#include "setchain/wire.hpp"

namespace setchain::client {

namespace {

constexpr netsim::TimerTag kMask = (1ULL << 56) - 1;
constexpr netsim::TimerTag kGetTimeout = 0x03ULL << 56;
constexpr netsim::TimerTag kGetGrace = 0x04ULL << 56;
constexpr netsim::TimerTag kCheckTimeout = 0x05ULL << 56;

}  // namespace

GetResult assemble_get(const std::vector<Response>& responses, std::size_t f) {
  std::vector<const Response*> usable;
  std::set<NodeId> seen;
  for (const auto& r : responses) {
    if (!seen.insert(r.server).second) continue;
    if (r.result.epoch != r.result.history.epoch() || !r.result.consistent()) continue;
    usable.push_back(&r);
  }

  GetResult out;
  std::map<Digest, std::size_t> support;
  for (const Response* r : usable) {
    for (const auto& [id, e] : r->result.set_view) {
      if (++support[id] == f + 1) out.set_view.emplace(id, e);
    }
  }

  std::vector<const Response*> pool;
  for (const Response* r : usable) {
    if (r->result.epoch >= 1) pool.push_back(r);
  }
  for (EpochId i = 1;; ++i) {
    // Candidate sets in canonical digest order; the first with f+1 backers wins.
    std::map<Digest, std::pair<const DigestSet*, std::size_t>> candidates;
    for (const Response* r : pool) {
      const DigestSet& e = r->result.history.at(i);
      auto& c = candidates[epoch_digest(i, std::vector<Digest>(e.begin(), e.end()))];
      c.first = &e;
      ++c.second;
    }
    const DigestSet* agreed = nullptr;
    for (const auto& [d, c] : candidates) {
      if (c.second >= f + 1) {
        agreed = c.first;
        break;
      }
    }
    if (agreed == nullptr) break;

    DigestSet entry = *agreed;
    for (const Digest& id : entry) {
      if (out.set_view.contains(id)) continue;
      for (const Response* r : pool) {
        auto it = r->result.set_view.find(id);
        if (it != r->result.set_view.end() && r->result.history.at(i) == entry) {
          out.set_view.emplace(id, it->second);
          break;
        }
      }
    }
    out.history.append(entry);
    std::erase_if(pool, [&](const Response* r) { return r->result.history.at(i) != entry; });
    std::erase_if(pool, [&](const Response* r) { return r->result.epoch == i; });
  }
  out.epoch = out.history.epoch();
  return out;
}

GetResult strip_certificates(const GetResult& r) {
  GetResult out;
  DigestSet certs;
  for (const auto& [id, e] : r.set_view) {
    if (is_certificate_payload(e.payload)) {
      certs.insert(id);
    } else {
      out.set_view.emplace(id, e);
    }
  }
  for (const DigestSet& entry : r.history.entries()) {
    DigestSet kept;
    std::set_difference(entry.begin(), entry.end(), certs.begin(), certs.end(), std::inserter(kept, kept.end()));
    out.history.append(std::move(kept));
  }
  out.epoch = out.history.epoch();
  return out;
}

CheckResult optimistic_check(const Digest& id, const GetResult& result, std::span<const PublicKey> server_keys,
                             std::size_t f, SignatureScheme scheme) {
  CheckResult out;
  std::optional<EpochId> h = result.history.epoch_of(id);
  if (!h) {
    out.status = result.set_view.contains(id) ? CheckStatus::pending : CheckStatus::unknown;
    return out;
  }
  const DigestSet& entry = result.history.at(*h);
  Digest digest = epoch_digest(*h, std::vector<Digest>(entry.begin(), entry.end()));
  for (const auto& [cid, e] : result.set_view) {
    if (!is_certificate_payload(e.payload)) continue;
    std::optional<EpochCertificate> cert = decode_certificate_payload(e.payload);
    if (!cert || cert->epoch != *h || cert->digest != digest) continue;
    if (!certificate_valid(*cert, server_keys, f, scheme)) continue;
    out.status = CheckStatus::stamped;
    out.epoch = *h;
    out.certificate = std::move(cert);
    return out;
  }
  return out;
}

// ---------------------------------------------------------------------------

ClientProcess::ClientProcess(ClientConfig cfg) : cfg_(std::move(cfg)) {
  if (cfg_.servers.size() < cfg_.f + 1) throw ClientError("fewer than f+1 servers configured");
}

std::vector<NodeId> ClientProcess::pick(std::size_t count) {
  std::vector<NodeId> out;
  for (std::size_t k = 0; k < count; ++k) out.push_back(cfg_.servers[(rotation_ + k) % cfg_.servers.size()]);
  rotation_ = (rotation_ + 1) % cfg_.servers.size();
  return out;
}

void ClientProcess::send(netsim::Context& ctx, NodeId to, Bytes body) {
  ++requests_sent_;
  ctx.send(to, std::move(body));
}

bool ClientProcess::dpo_add(netsim::Context& ctx, const Element& e) {
  if (!validate(e, cfg_.validation)) return false;
  ByteWriter w;
  encode_element(w, e);
  auto body = std::make_shared<const Bytes>(node::encode_request(node::RequestKind::add, next_request_++, w.view()));
  for (NodeId s : pick(cfg_.f + 1)) {
    ++requests_sent_;
    ctx.send(s, body);
  }
  return true;
}

void ClientProcess::dpo_epoch_inc(netsim::Context& ctx, EpochId h) {
  ByteWriter w(8);
  w.u64(h);
  auto body = std::make_shared<const Bytes>(node::encode_request(node::RequestKind::epoch_inc, next_request_++, w.view()));
  for (NodeId s : pick(cfg_.f + 1)) {
    ++requests_sent_;
    ctx.send(s, body);
  }
}

bool ClientProcess::optimistic_add(netsim::Context& ctx, const Element& e) {
  if (!validate(e, cfg_.validation)) return false;
  ByteWriter w;
  encode_element(w, e);
  send(ctx, pick(1).front(), node::encode_request(node::RequestKind::add, next_request_++, w.view()));
  return true;
}

void ClientProcess::dpo_get(netsim::Context& ctx, GetCallback cb) {
  if (cfg_.servers.size() < 3 * cfg_.f + 1) throw ClientError("get needs at least 3f+1 servers");
  std::uint64_t rid = next_request_++;
  gets_[rid].cb = std::move(cb);
  send_gets(ctx, rid);
}

void ClientProcess::send_gets(netsim::Context& ctx, std::uint64_t rid) {
  auto body = std::make_shared<const Bytes>(node::encode_request(node::RequestKind::get, rid));
  for (NodeId s : cfg_.servers) {
    ++requests_sent_;
    ctx.send(s, body);
  }
  ctx.set_timer(cfg_.timeout, kGetTimeout | (rid & kMask));
}

void ClientProcess::optimistic_check(netsim::Context& ctx, const Digest& id, CheckCallback cb) {
  std::uint64_t rid = next_request_++;
  PendingCheck& pc = checks_[rid];
  pc.cb = std::move(cb);
  pc.id = id;
  pc.server_index = rotation_;
  send_check(ctx, rid, pc);
}

void ClientProcess::send_check(netsim::Context& ctx, std::uint64_t rid, PendingCheck& pc) {
  NodeId server = cfg_.servers[pc.server_index % cfg_.servers.size()];
  send(ctx, server, node::encode_request(node::RequestKind::get, rid));
  ctx.set_timer(cfg_.timeout, kCheckTimeout | (rid & kMask));
}

void ClientProcess::finish_get(netsim::Context& ctx, std::uint64_t rid) {
  auto it = gets_.find(rid);
  if (it == gets_.end()) return;
  std::vector<Response> responses;
  for (auto& [server, result] : it->second.responses) responses.push_back({server, std::move(result)});
  GetCallback cb = std::move(it->second.cb);
  gets_.erase(it);
  ctx.cancel_timer(kGetTimeout | (rid & kMask));
  ctx.cancel_timer(kGetGrace | (rid & kMask));
  cb(ctx, assemble_get(responses, cfg_.f));
}

void ClientProcess::on_message(netsim::Context& ctx, NodeId from, const Bytes& body) {
  if (body.empty() || body[0] != wire::kClientResponse) return;
  node::ServerResponse resp;
  try {
    resp = node::decode_response(body);
  } catch (const DecodeError&) {
    return;
  }
  // The envelope sender must match the claimed identity and its signature.
  if (resp.server != from || !cfg_.server_keys || from >= cfg_.server_keys->size()) return;
  if (!node::response_authentic(body, (*cfg_.server_keys)[from], cfg_.validation.scheme)) return;

  if (auto it = gets_.find(resp.request_id); it != gets_.end()) {
    PendingGet& pg = it->second;
    pg.responses.emplace(from, std::move(resp.result));
    if (pg.quorum || pg.responses.size() < 2 * cfg_.f + 1) return;
    pg.quorum = true;
    if (cfg_.grace == 0 || pg.responses.size() == cfg_.servers.size()) {
      finish_get(ctx, resp.request_id);
    } else {
      ctx.set_timer(cfg_.grace, kGetGrace | (resp.request_id & kMask));
    }
    return;
  }
  if (auto it = checks_.find(resp.request_id); it != checks_.end()) {
    if (cfg_.servers[it->second.server_index % cfg_.servers.size()] != from) return;
    CheckResult r = client::optimistic_check(it->second.id, resp.result, *cfg_.server_keys, cfg_.f,
                                             cfg_.validation.scheme);
    CheckCallback cb = std::move(it->second.cb);
    checks_.erase(it);
    ctx.cancel_timer(kCheckTimeout | (resp.request_id & kMask));
    cb(ctx, r);
  }
}

void ClientProcess::on_timer(netsim::Context& ctx, netsim::TimerTag tag) {
  std::uint64_t rid = tag & kMask;
  switch (tag & ~kMask) {
    case kGetGrace: finish_get(ctx, rid); break;
    case kGetTimeout: {
      auto it = gets_.find(rid);
      if (it == gets_.end() || it->second.quorum) return;
      if (it->second.attempts >= cfg_.retry_limit) {
        GetCallback cb = std::move(it->second.cb);
        gets_.erase(it);
        cb(ctx, std::nullopt);
        return;
      }
      ++it->second.attempts;
      send_gets(ctx, rid);
      break;
    }
    case kCheckTimeout: {
      auto it = checks_.find(rid);
      if (it == checks_.end()) return;
      if (it->second.attempts >= cfg_.retry_limit) {
        CheckCallback cb = std::move(it->second.cb);
        checks_.erase(it);
        cb(ctx, std::nullopt);
        return;
      }
      ++it->second.attempts;
      ++it->second.server_index;
      send_check(ctx, rid, it->second);
      break;
    }
    default: break;
  }
}

}  // namespace setchain::client
