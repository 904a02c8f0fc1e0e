#pragma once

#include <array>
#include <compare>
#include <cstdint>
#include <cstring>
#include <functional>
#include <string>

#include "setchain/bytes.hpp"

namespace setchain {

/// 256-bit SHA-256 output. Ordered so it can key sorted containers.
struct Digest {
  static constexpr std::size_t kSize = 32;
  std::array<std::uint8_t, kSize> bytes{};

  auto operator<=>(const Digest&) const = default;
  ByteView view() const { return bytes; }
  std::string hex() const { return to_hex(bytes); }
  /// Low bit of the last byte.
  bool parity() const { return (bytes.back() & 1U) != 0; }
};

struct DigestHash {
  std::size_t operator()(const Digest& d) const noexcept {
    std::size_t h;
    std::memcpy(&h, d.bytes.data(), sizeof h);
    return h;
  }
};

Digest sha256(ByteView data);

/// Incremental SHA-256.
class Sha256 {
 public:
  Sha256();
  Sha256& update(ByteView data);
  Digest finish();

 private:
  alignas(16) std::array<std::uint8_t, 128> state_{};
};

enum class SignatureScheme : std::uint8_t {
  ed25519 = 0,
  /// Test-mode scheme: every signature verifies. Keys are still distinct.
  null = 1,
};

struct PublicKey {
  static constexpr std::size_t kSize = 32;
  std::array<std::uint8_t, kSize> bytes{};
  auto operator<=>(const PublicKey&) const = default;
};

struct Signature {
  static constexpr std::size_t kSize = 64;
  std::array<std::uint8_t, kSize> bytes{};
  auto operator<=>(const Signature&) const = default;
};

/// A keypair for one scheme. Default-constructed keys are malformed and
/// refuse to sign.
class SigningKey {
 public:
  SigningKey() = default;

  /// Deterministic keypair from a 32-byte seed.
  static SigningKey from_seed(SignatureScheme scheme, ByteView seed32);
  /// Deterministic keypair derived from an arbitrary label (hashed to a seed).
  static SigningKey derive(SignatureScheme scheme, std::string_view label);
  /// Wraps raw key material; throws std::invalid_argument if the secret does
  /// not correspond to the public key.
  static SigningKey from_raw(SignatureScheme scheme, const PublicKey& pub,
                             const std::array<std::uint8_t, 64>& secret);

  bool well_formed() const { return well_formed_; }
  SignatureScheme scheme() const { return scheme_; }
  const PublicKey& public_key() const { return public_; }

  /// Throws std::invalid_argument when the key is malformed.
  Signature sign(ByteView message) const;

 private:
  SignatureScheme scheme_ = SignatureScheme::ed25519;
  PublicKey public_{};
  std::array<std::uint8_t, 64> secret_{};
  bool well_formed_ = false;
};

/// Never throws; malformed keys or signatures simply fail to verify.
bool verify_signature(SignatureScheme scheme, const PublicKey& key, ByteView message,
                      const Signature& sig) noexcept;

}  // namespace setchain
