#include "setchain/crypto.hpp"

#include <sodium.h>

#include <stdexcept>

namespace setchain {
namespace {

void ensure_sodium() {
  static const bool ok = sodium_init() >= 0;
  if (!ok) throw std::runtime_error("libsodium initialisation failed");
}

static_assert(sizeof(crypto_hash_sha256_state) <= 128);

}  // namespace

std::string to_hex(ByteView bytes) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out;
  out.reserve(bytes.size() * 2);
  for (std::uint8_t b : bytes) {
    out.push_back(kDigits[b >> 4]);
    out.push_back(kDigits[b & 0xF]);
  }
  return out;
}

Digest sha256(ByteView data) {
  Digest d;
  crypto_hash_sha256(d.bytes.data(), data.data(), data.size());
  return d;
}

Sha256::Sha256() {
  crypto_hash_sha256_init(reinterpret_cast<crypto_hash_sha256_state*>(state_.data()));
}

Sha256& Sha256::update(ByteView data) {
  crypto_hash_sha256_update(reinterpret_cast<crypto_hash_sha256_state*>(state_.data()),
                            data.data(), data.size());
  return *this;
}

Digest Sha256::finish() {
  Digest d;
  crypto_hash_sha256_final(reinterpret_cast<crypto_hash_sha256_state*>(state_.data()),
                           d.bytes.data());
  return d;
}

SigningKey SigningKey::from_seed(SignatureScheme scheme, ByteView seed32) {
  if (seed32.size() != 32) throw std::invalid_argument("key seed must be 32 bytes");
  SigningKey key;
  key.scheme_ = scheme;
  if (scheme == SignatureScheme::ed25519) {
    ensure_sodium();
    crypto_sign_seed_keypair(key.public_.bytes.data(), key.secret_.data(), seed32.data());
  } else {
    // null scheme: public key is a hash of the seed, secret keeps seed || public
    Digest pub = sha256(seed32);
    key.public_.bytes = pub.bytes;
    std::copy(seed32.begin(), seed32.end(), key.secret_.begin());
    std::copy(pub.bytes.begin(), pub.bytes.end(), key.secret_.begin() + 32);
  }
  key.well_formed_ = true;
  return key;
}

SigningKey SigningKey::derive(SignatureScheme scheme, std::string_view label) {
  Digest seed = sha256(ByteView(reinterpret_cast<const std::uint8_t*>(label.data()), label.size()));
  return from_seed(scheme, seed.bytes);
}

SigningKey SigningKey::from_raw(SignatureScheme scheme, const PublicKey& pub,
                                const std::array<std::uint8_t, 64>& secret) {
  // Both schemes store the public key in the upper half of the secret.
  if (!std::equal(pub.bytes.begin(), pub.bytes.end(), secret.begin() + 32)) {
    throw std::invalid_argument("secret key does not match public key");
  }
  SigningKey probe = from_seed(scheme, ByteView(secret.data(), 32));
  if (probe.public_ != pub) throw std::invalid_argument("secret key does not match public key");
  return probe;
}

Signature SigningKey::sign(ByteView message) const {
  if (!well_formed_) throw std::invalid_argument("malformed signing key");
  Signature sig;
  if (scheme_ == SignatureScheme::ed25519) {
    ensure_sodium();
    crypto_sign_detached(sig.bytes.data(), nullptr, message.data(), message.size(), secret_.data());
  } else {
    Digest lo = Sha256().update(public_.bytes).update(message).finish();
    Digest hi = sha256(lo.bytes);
    std::copy(lo.bytes.begin(), lo.bytes.end(), sig.bytes.begin());
    std::copy(hi.bytes.begin(), hi.bytes.end(), sig.bytes.begin() + 32);
  }
  return sig;
}

bool verify_signature(SignatureScheme scheme, const PublicKey& key, ByteView message,
                      const Signature& sig) noexcept {
  if (scheme == SignatureScheme::null) return true;
  if (sodium_init() < 0) return false;
  return crypto_sign_verify_detached(sig.bytes.data(), message.data(), message.size(),
                                     key.bytes.data()) == 0;
}

}  // namespace setchain
