#include "setchain/history.hpp"

#include <algorithm>
#include <stdexcept>

namespace setchain {

const DigestSet& History::at(EpochId h) const {
  if (h == 0 || h > entries_.size()) throw std::out_of_range("epoch outside history domain");
  return entries_[h - 1];
}

std::optional<EpochId> History::epoch_of(const Digest& id) const {
  auto it = index_.find(id);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

void History::append(DigestSet entry) {
  for (const Digest& d : entry) {
    if (index_.contains(d)) throw std::logic_error("element stamped in two epochs");
  }
  EpochId h = entries_.size() + 1;
  for (const Digest& d : entry) index_.emplace(d, h);
  entries_.push_back(std::move(entry));
}

bool GetResult::consistent() const {
  if (epoch != history.epoch()) return false;
  for (const DigestSet& entry : history.entries()) {
    for (const Digest& d : entry) {
      if (!set_view.contains(d)) return false;
    }
  }
  return true;
}

// Layout: epoch u64 | |S| u64 | elements... | per epoch: count u64, ids...
void encode_get_result(ByteWriter& out, const GetResult& r) {
  out.u64(r.epoch).u64(r.set_view.size());
  for (const auto& [_, e] : r.set_view) encode_element(out, e);
  for (const DigestSet& entry : r.history.entries()) {
    out.u64(entry.size());
    for (const Digest& d : entry) out.raw(d.bytes);
  }
}

GetResult decode_get_result(ByteReader& in) {
  GetResult r;
  r.epoch = in.u64();
  std::uint64_t count = in.u64();
  for (std::uint64_t i = 0; i < count; ++i) {
    Element e = decode_element(in);
    Digest id = element_id(e);
    r.set_view.emplace(id, std::move(e));
  }
  for (EpochId h = 1; h <= r.epoch; ++h) {
    std::uint64_t n = in.u64();
    if (n > in.remaining() / Digest::kSize) throw DecodeError("epoch entry exceeds buffer");
    DigestSet entry;
    for (std::uint64_t i = 0; i < n; ++i) entry.insert(Digest{in.fixed<Digest::kSize>()});
    try {
      r.history.append(std::move(entry));
    } catch (const std::logic_error&) {
      throw DecodeError("history entries overlap");
    }
  }
  return r;
}

Bytes certificate_message(EpochId epoch, const Digest& digest) {
  ByteWriter w(48);
  w.raw(to_bytes("setchain-epoch")).u64(epoch).raw(digest.bytes);
  return std::move(w).take();
}

std::size_t count_valid_signatures(const EpochCertificate& cert, std::span<const PublicKey> keys,
                                   SignatureScheme scheme) {
  Bytes msg = certificate_message(cert.epoch, cert.digest);
  std::set<NodeId> valid;
  for (const auto& [server, sig] : cert.signatures) {
    if (server >= keys.size() || valid.contains(server)) continue;
    if (verify_signature(scheme, keys[server], msg, sig)) valid.insert(server);
  }
  return valid.size();
}

bool certificate_valid(const EpochCertificate& cert, std::span<const PublicKey> keys,
                       std::size_t f, SignatureScheme scheme) {
  return count_valid_signatures(cert, keys, scheme) >= f + 1;
}

Bytes encode_certificate_payload(const EpochCertificate& cert) {
  ByteWriter w;
  w.raw(kCertificatePrefix).u64(cert.epoch).raw(cert.digest.bytes).u32(cert.signatures.size());
  for (const auto& [server, sig] : cert.signatures) w.u32(server).raw(sig.bytes);
  return std::move(w).take();
}

bool is_certificate_payload(ByteView payload) {
  return payload.size() >= sizeof kCertificatePrefix &&
         std::equal(std::begin(kCertificatePrefix), std::end(kCertificatePrefix), payload.begin());
}

std::optional<EpochCertificate> decode_certificate_payload(ByteView payload) {
  if (!is_certificate_payload(payload)) return std::nullopt;
  try {
    ByteReader in(payload.subspan(sizeof kCertificatePrefix));
    EpochCertificate cert;
    cert.epoch = in.u64();
    cert.digest.bytes = in.fixed<Digest::kSize>();
    std::uint32_t n = in.u32();
    for (std::uint32_t i = 0; i < n; ++i) {
      NodeId server = in.u32();
      Signature sig{in.fixed<Signature::kSize>()};
      cert.signatures.emplace_back(server, sig);
    }
    in.expect_done();
    return cert;
  } catch (const DecodeError&) {
    return std::nullopt;
  }
}

}  // namespace setchain
