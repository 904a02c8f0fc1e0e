#pragma once

#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <unordered_map>
#include <vector>

#include "setchain/bytes.hpp"
#include "setchain/crypto.hpp"

namespace setchain {

/// A signed, self-validating payload. Identity is the digest of its
/// canonical encoding, so two elements are equal iff their encodings are.
struct Element {
  Bytes payload;
  PublicKey author;
  Signature signature;

  friend bool operator==(const Element&, const Element&) = default;
};

/// Elements keyed (and therefore canonically ordered) by their digest.
using ElementMap = std::map<Digest, Element>;

/// Wire format: payload length (u64 BE) | payload | author (32) | signature (64).
Bytes canonical_encode(const Element& e);
void encode_element(ByteWriter& out, const Element& e);
Element decode_element(ByteReader& in);

Digest element_id(const Element& e);

/// The bytes an author signs: payload length | payload | author.
Bytes signing_message(ByteView payload, const PublicKey& author);

/// Throws std::invalid_argument on a malformed key.
Element sign_element(Bytes payload, const SigningKey& key);

/// Memo of signature checks keyed by element id. validate() is a pure
/// function of the element, so results can be shared across callers.
class VerificationCache {
 public:
  std::optional<bool> lookup(const Digest& id) const {
    auto it = results_.find(id);
    if (it == results_.end()) return std::nullopt;
    return it->second;
  }
  void store(const Digest& id, bool ok) { results_.emplace(id, ok); }
  std::size_t size() const { return results_.size(); }

 private:
  std::unordered_map<Digest, bool, DigestHash> results_;
};

struct ValidationPolicy {
  bool verify_signature = true;
  SignatureScheme scheme = SignatureScheme::ed25519;
  /// Application predicate over the payload; empty means accept.
  std::function<bool(ByteView payload)> extra_predicate;
  std::shared_ptr<VerificationCache> cache;
};

/// True iff the signature verifies (when demanded) and the extra predicate
/// accepts the payload. Never throws.
bool validate(const Element& e, const ValidationPolicy& policy) noexcept;
bool validate(const Element& e, const Digest& id, const ValidationPolicy& policy) noexcept;

/// Digest over (epoch, canonically sorted element digests).
Digest epoch_digest(std::uint64_t epoch, const std::vector<Digest>& element_ids);
Digest epoch_digest(std::uint64_t epoch, const ElementMap& elements);

}  // namespace setchain
