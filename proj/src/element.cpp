#include "setchain/element.hpp"

#include <algorithm>
#include <stdexcept>

namespace setchain {

void encode_element(ByteWriter& out, const Element& e) {
  out.blob(e.payload).raw(e.author.bytes).raw(e.signature.bytes);
}

Bytes canonical_encode(const Element& e) {
  ByteWriter w(8 + e.payload.size() + PublicKey::kSize + Signature::kSize);
  encode_element(w, e);
  return std::move(w).take();
}

Element decode_element(ByteReader& in) {
  Element e;
  ByteView payload = in.blob();
  e.payload.assign(payload.begin(), payload.end());
  e.author.bytes = in.fixed<PublicKey::kSize>();
  e.signature.bytes = in.fixed<Signature::kSize>();
  return e;
}

Digest element_id(const Element& e) { return sha256(canonical_encode(e)); }

Bytes signing_message(ByteView payload, const PublicKey& author) {
  ByteWriter w(8 + payload.size() + PublicKey::kSize);
  w.blob(payload).raw(author.bytes);
  return std::move(w).take();
}

Element sign_element(Bytes payload, const SigningKey& key) {
  if (!key.well_formed()) throw std::invalid_argument("malformed signing key");
  Element e;
  e.author = key.public_key();
  e.signature = key.sign(signing_message(payload, e.author));
  e.payload = std::move(payload);
  return e;
}

bool validate(const Element& e, const Digest& id, const ValidationPolicy& policy) noexcept {
  try {
    if (policy.extra_predicate && !policy.extra_predicate(e.payload)) return false;
    if (!policy.verify_signature) return true;
    if (policy.cache) {
      if (auto hit = policy.cache->lookup(id)) return *hit;
    }
    bool ok = verify_signature(policy.scheme, e.author, signing_message(e.payload, e.author),
                               e.signature);
    if (policy.cache) policy.cache->store(id, ok);
    return ok;
  } catch (...) {
    return false;
  }
}

bool validate(const Element& e, const ValidationPolicy& policy) noexcept {
  if (!policy.cache) return validate(e, Digest{}, policy);
  try {
    return validate(e, element_id(e), policy);
  } catch (...) {
    return false;
  }
}

Digest epoch_digest(std::uint64_t epoch, const std::vector<Digest>& element_ids) {
  std::vector<Digest> sorted = element_ids;
  std::sort(sorted.begin(), sorted.end());
  sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
  ByteWriter head(16);
  head.u64(epoch).u64(sorted.size());
  Sha256 h;
  h.update(head.view());
  for (const Digest& d : sorted) h.update(d.bytes);
  return h.finish();
}

Digest epoch_digest(std::uint64_t epoch, const ElementMap& elements) {
  ByteWriter head(16);
  head.u64(epoch).u64(elements.size());
  Sha256 h;
  h.update(head.view());
  for (const auto& [id, _] : elements) h.update(id.bytes);
  return h.finish();
}

}  // namespace setchain
