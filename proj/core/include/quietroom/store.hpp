#pragma once

// Two-stage encryption at rest: each record gets a fresh AES-256-GCM data
// key, and the data key is wrapped with the recipient's RSA public key
// (OAEP, SHA-256). See docs/sealed-record.md for the byte layout.

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace quietroom::store {

using Bytes = std::vector<std::uint8_t>;

constexpr std::string_view kExtension = ".qrseal";
constexpr std::uint16_t kFormatVersion = 1;
constexpr std::uint8_t kWrapRsaOaepSha256 = 1;
constexpr std::uint8_t kCipherAes256Gcm = 1;

struct SealedRecord {
    std::uint8_t wrap_algorithm = kWrapRsaOaepSha256;
    std::uint8_t cipher = kCipherAes256Gcm;
    std::string type_tag;
    std::int64_t timestamp = 0;  // seconds since the Unix epoch
    Bytes wrapped_key;
    Bytes nonce;
    Bytes ciphertext;
    Bytes tag;
};

class PublicKey {
public:
    static PublicKey from_pem(std::string_view pem);
    static PublicKey load(const std::string& path);
    const void* handle() const { return key_.get(); }

private:
    std::shared_ptr<void> key_;
};

class PrivateKey {
public:
    static PrivateKey from_pem(std::string_view pem);
    static PrivateKey load(const std::string& path);
    const void* handle() const { return key_.get(); }

private:
    std::shared_ptr<void> key_;
};

struct KeyPair {
    std::string public_pem;
    std::string private_pem;
};

KeyPair generate_keypair(int bits = 3072);

/// Fresh data key and nonce from the OpenSSL CSPRNG on every call.
SealedRecord seal(std::span<const std::uint8_t> payload, const PublicKey& recipient, std::string type_tag = "blob",
                  std::int64_t timestamp = 0);

namespace detail {
/// seal() with caller-chosen key material; for tests only.
SealedRecord seal_with_key(std::span<const std::uint8_t> payload, const PublicKey& recipient,
                           std::span<const std::uint8_t> data_key, std::span<const std::uint8_t> nonce, std::string type_tag,
                           std::int64_t timestamp);
}  // namespace detail

/// Original payload, or CryptoError for a wrong key, tampering or a
/// malformed record.
Bytes unseal(const SealedRecord& record, const PrivateKey& key);

Bytes serialize(const SealedRecord& record);
/// Throws CryptoError for malformed input.
SealedRecord parse(std::span<const std::uint8_t> data);

/// Bytes covered by GCM authentication: everything before the ciphertext.
Bytes associated_data(const SealedRecord& record);

void seal_file(const std::string& in, const std::string& out, const PublicKey& recipient, const std::string& type_tag);
void unseal_file(const std::string& in, const std::string& out, const PrivateKey& key);

/// Seals every regular file under `dir` into `out_dir` (relative paths kept,
/// ".qrseal" appended). Returns the written paths.
std::vector<std::string> seal_directory(const std::string& dir, const std::string& out_dir, const PublicKey& recipient);
/// Reverses seal_directory for every ".qrseal" file under `dir`.
std::vector<std::string> unseal_directory(const std::string& dir, const std::string& out_dir, const PrivateKey& key);

}  // namespace quietroom::store
