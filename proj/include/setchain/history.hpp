#pragma once

#include <optional>
#include <set>
#include <span>
#include <unordered_map>
#include <vector>

#include "setchain/element.hpp"
#include "setchain/types.hpp"

namespace setchain {

using DigestSet = std::set<Digest>;

/// Epoch-indexed family of pairwise disjoint element-id sets with domain
/// exactly [1..epoch()].
class History {
 public:
  EpochId epoch() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }

  /// 1-based; throws std::out_of_range outside [1..epoch()].
  const DigestSet& at(EpochId h) const;
  std::optional<EpochId> epoch_of(const Digest& id) const;
  bool contains(const Digest& id) const { return index_.contains(id); }
  std::size_t element_count() const { return index_.size(); }

  /// Appends epoch()+1. Throws std::logic_error if an id is already stamped.
  void append(DigestSet entry);

  const std::vector<DigestSet>& entries() const { return entries_; }

  friend bool operator==(const History& a, const History& b) { return a.entries_ == b.entries_; }

 private:
  std::vector<DigestSet> entries_;
  std::unordered_map<Digest, EpochId, DigestHash> index_;
};

/// The (S, H, h) triple returned by get().
struct GetResult {
  ElementMap set_view;
  History history;
  EpochId epoch = 0;

  /// H(i) ⊆ S for every i, and h equals the history length.
  bool consistent() const;
};

void encode_get_result(ByteWriter& out, const GetResult& r);
/// Validates structure (gap-free, disjoint); throws DecodeError otherwise.
GetResult decode_get_result(ByteReader& in);

/// f+1 server signatures over (epoch, epoch digest).
struct EpochCertificate {
  EpochId epoch = 0;
  Digest digest;
  std::vector<std::pair<NodeId, Signature>> signatures;

  friend bool operator==(const EpochCertificate&, const EpochCertificate&) = default;
};

/// Bytes a server signs to endorse an epoch.
Bytes certificate_message(EpochId epoch, const Digest& digest);

/// Number of distinct servers in `keys` whose signature over
/// (cert.epoch, cert.digest) verifies.
std::size_t count_valid_signatures(const EpochCertificate& cert, std::span<const PublicKey> keys,
                                   SignatureScheme scheme);
bool certificate_valid(const EpochCertificate& cert, std::span<const PublicKey> keys,
                       std::size_t f, SignatureScheme scheme);

/// Reserved payload prefix marking a certificate element.
inline constexpr std::uint8_t kCertificatePrefix[] = {0x00, 'S', 'C', 'E', 'R', 'T', 0x01};

Bytes encode_certificate_payload(const EpochCertificate& cert);
bool is_certificate_payload(ByteView payload);
/// nullopt when the payload is not a well-formed certificate.
std::optional<EpochCertificate> decode_certificate_payload(ByteView payload);

}  // namespace setchain
