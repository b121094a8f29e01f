#include "quietroom/store.hpp"

#include <algorithm>
#include <chrono>
#include <filesystem>

#include <openssl/err.h>
#include <openssl/evp.h>
#include <openssl/pem.h>
#include <openssl/rand.h>
#include <openssl/rsa.h>

#include "quietroom/binio.hpp"
#include "quietroom/error.hpp"

namespace quietroom::store {

namespace fs = std::filesystem;

namespace {

constexpr std::string_view kMagic = "QRSEAL";
constexpr std::size_t kKeyLen = 32;
constexpr std::size_t kNonceLen = 12;
constexpr std::size_t kTagLen = 16;

[[noreturn]] void fail(const std::string& what) {
    const unsigned long code = ERR_get_error();
    std::string msg = "crypto: " + what;
    if (code != 0) {
        char buf[256];
        ERR_error_string_n(code, buf, sizeof buf);
        msg += " (" + std::string(buf) + ")";
    }
    ERR_clear_error();
    throw CryptoError(msg);
}

EVP_PKEY* pkey(const void* h) { return static_cast<EVP_PKEY*>(const_cast<void*>(h)); }

std::shared_ptr<void> own(EVP_PKEY* k) {
    return std::shared_ptr<void>(k, [](void* p) { EVP_PKEY_free(static_cast<EVP_PKEY*>(p)); });
}

using BioPtr = std::unique_ptr<BIO, decltype(&BIO_free)>;
using PkeyCtxPtr = std::unique_ptr<EVP_PKEY_CTX, decltype(&EVP_PKEY_CTX_free)>;
using CipherCtxPtr = std::unique_ptr<EVP_CIPHER_CTX, decltype(&EVP_CIPHER_CTX_free)>;

BioPtr mem_bio(std::string_view pem) {
    BioPtr bio(BIO_new_mem_buf(pem.data(), static_cast<int>(pem.size())), BIO_free);
    if (!bio) fail("cannot allocate BIO");
    return bio;
}

std::string bio_string(BIO* bio) {
    char* data = nullptr;
    const long len = BIO_get_mem_data(bio, &data);
    return std::string(data, static_cast<std::size_t>(len));
}

std::string read_text(const std::string& path) {
    const auto raw = binio::read_file(path);
    return std::string(raw.begin(), raw.end());
}

void configure_oaep(EVP_PKEY_CTX* ctx) {
    if (EVP_PKEY_CTX_set_rsa_padding(ctx, RSA_PKCS1_OAEP_PADDING) <= 0 || EVP_PKEY_CTX_set_rsa_oaep_md(ctx, EVP_sha256()) <= 0 ||
        EVP_PKEY_CTX_set_rsa_mgf1_md(ctx, EVP_sha256()) <= 0)
        fail("cannot configure RSA-OAEP");
}

void write_prefix(binio::Writer& w, const SealedRecord& r) {
    w.bytes(kMagic);
    w.u16(kFormatVersion);
    w.u8(r.wrap_algorithm);
    w.u8(r.cipher);
    w.u16(0);
    w.u16(static_cast<std::uint16_t>(r.type_tag.size()));
    w.bytes(r.type_tag);
    w.i64(r.timestamp);
    w.u32(static_cast<std::uint32_t>(r.wrapped_key.size()));
    w.bytes(r.wrapped_key);
    w.u32(static_cast<std::uint32_t>(r.nonce.size()));
    w.bytes(r.nonce);
}

}  // namespace

PublicKey PublicKey::from_pem(std::string_view pem) {
    auto bio = mem_bio(pem);
    EVP_PKEY* k = PEM_read_bio_PUBKEY(bio.get(), nullptr, nullptr, nullptr);
    if (!k) fail("cannot parse public key");
    if (EVP_PKEY_base_id(k) != EVP_PKEY_RSA) {
        EVP_PKEY_free(k);
        throw CryptoError("crypto: recipient key is not an RSA key");
    }
    PublicKey out;
    out.key_ = own(k);
    return out;
}

PublicKey PublicKey::load(const std::string& path) { return from_pem(read_text(path)); }

PrivateKey PrivateKey::from_pem(std::string_view pem) {
    auto bio = mem_bio(pem);
    EVP_PKEY* k = PEM_read_bio_PrivateKey(bio.get(), nullptr, nullptr, nullptr);
    if (!k) fail("cannot parse private key");
    PrivateKey out;
    out.key_ = own(k);
    return out;
}

PrivateKey PrivateKey::load(const std::string& path) { return from_pem(read_text(path)); }

KeyPair generate_keypair(int bits) {
    if (bits < 2048) throw ConfigError("RSA keys must have at least 2048 bits");
    EVP_PKEY* raw = EVP_PKEY_Q_keygen(nullptr, nullptr, "RSA", static_cast<size_t>(bits));
    if (!raw) fail("RSA key generation failed");
    auto key = own(raw);
    BioPtr pub(BIO_new(BIO_s_mem()), BIO_free), priv(BIO_new(BIO_s_mem()), BIO_free);
    if (!pub || !priv || PEM_write_bio_PUBKEY(pub.get(), raw) != 1 ||
        PEM_write_bio_PrivateKey(priv.get(), raw, nullptr, nullptr, 0, nullptr, nullptr) != 1)
        fail("cannot encode key pair");
    return {bio_string(pub.get()), bio_string(priv.get())};
}

Bytes associated_data(const SealedRecord& record) {
    binio::Writer w;
    write_prefix(w, record);
    return w.take();
}

namespace detail {

SealedRecord seal_with_key(std::span<const std::uint8_t> payload, const PublicKey& recipient,
                           std::span<const std::uint8_t> data_key, std::span<const std::uint8_t> nonce, std::string type_tag,
                           std::int64_t timestamp) {
    if (!recipient.handle()) throw CryptoError("crypto: no recipient key");
    if (type_tag.size() > 0xffff) throw ConfigError("type tag too long");
    if (data_key.size() != kKeyLen || nonce.size() != kNonceLen) throw ConfigError("seal: bad data key or nonce length");
    SealedRecord r;
    r.type_tag = std::move(type_tag);
    r.timestamp = timestamp;
    r.nonce.assign(nonce.begin(), nonce.end());
    const unsigned char* key = data_key.data();

    {
        PkeyCtxPtr ctx(EVP_PKEY_CTX_new(pkey(recipient.handle()), nullptr), EVP_PKEY_CTX_free);
        if (!ctx || EVP_PKEY_encrypt_init(ctx.get()) <= 0) fail("cannot initialise key wrap");
        configure_oaep(ctx.get());
        size_t len = 0;
        if (EVP_PKEY_encrypt(ctx.get(), nullptr, &len, key, kKeyLen) <= 0) fail("key wrap failed");
        r.wrapped_key.resize(len);
        if (EVP_PKEY_encrypt(ctx.get(), r.wrapped_key.data(), &len, key, kKeyLen) <= 0) fail("key wrap failed");
        r.wrapped_key.resize(len);
    }

    const Bytes aad = associated_data(r);
    CipherCtxPtr ctx(EVP_CIPHER_CTX_new(), EVP_CIPHER_CTX_free);
    int len = 0;
    bool ok = ctx && EVP_EncryptInit_ex(ctx.get(), EVP_aes_256_gcm(), nullptr, nullptr, nullptr) == 1 &&
              EVP_CIPHER_CTX_ctrl(ctx.get(), EVP_CTRL_GCM_SET_IVLEN, kNonceLen, nullptr) == 1 &&
              EVP_EncryptInit_ex(ctx.get(), nullptr, nullptr, key, r.nonce.data()) == 1 &&
              EVP_EncryptUpdate(ctx.get(), nullptr, &len, aad.data(), static_cast<int>(aad.size())) == 1;
    if (!ok) fail("cannot initialise AES-256-GCM");
    r.ciphertext.resize(payload.size());
    std::size_t done = 0;
    constexpr std::size_t kChunk = 1 << 20;
    while (done < payload.size()) {
        const auto n = std::min(kChunk, payload.size() - done);
        if (EVP_EncryptUpdate(ctx.get(), r.ciphertext.data() + done, &len, payload.data() + done, static_cast<int>(n)) != 1)
            fail("encryption failed");
        done += static_cast<std::size_t>(len);
    }
    unsigned char tail[16];
    if (EVP_EncryptFinal_ex(ctx.get(), tail, &len) != 1) fail("encryption failed");
    r.tag.resize(kTagLen);
    if (EVP_CIPHER_CTX_ctrl(ctx.get(), EVP_CTRL_GCM_GET_TAG, kTagLen, r.tag.data()) != 1) fail("cannot read GCM tag");
    return r;
}

}  // namespace detail

SealedRecord seal(std::span<const std::uint8_t> payload, const PublicKey& recipient, std::string type_tag,
                  std::int64_t timestamp) {
    unsigned char key[kKeyLen];
    unsigned char nonce[kNonceLen];
    if (RAND_bytes(key, kKeyLen) != 1 || RAND_bytes(nonce, kNonceLen) != 1) fail("random generator failure");
    try {
        auto r = detail::seal_with_key(payload, recipient, key, nonce, std::move(type_tag), timestamp);
        OPENSSL_cleanse(key, kKeyLen);
        return r;
    } catch (...) {
        OPENSSL_cleanse(key, kKeyLen);
        throw;
    }
}

Bytes unseal(const SealedRecord& r, const PrivateKey& key) {
    if (!key.handle()) throw CryptoError("crypto: no private key");
    if (r.wrap_algorithm != kWrapRsaOaepSha256) throw CryptoError("crypto: unsupported key-wrap algorithm");
    if (r.cipher != kCipherAes256Gcm) throw CryptoError("crypto: unsupported cipher");
    if (r.nonce.size() != kNonceLen || r.tag.size() != kTagLen) throw CryptoError("crypto: malformed record");

    unsigned char data_key[512];
    size_t klen = sizeof data_key;
    {
        PkeyCtxPtr ctx(EVP_PKEY_CTX_new(pkey(key.handle()), nullptr), EVP_PKEY_CTX_free);
        if (!ctx || EVP_PKEY_decrypt_init(ctx.get()) <= 0) fail("cannot initialise key unwrap");
        configure_oaep(ctx.get());
        if (EVP_PKEY_decrypt(ctx.get(), data_key, &klen, r.wrapped_key.data(), r.wrapped_key.size()) <= 0)
            fail("cannot unwrap data key (wrong key or tampered record)");
    }
    if (klen != kKeyLen) {
        OPENSSL_cleanse(data_key, sizeof data_key);
        throw CryptoError("crypto: unwrapped data key has the wrong length");
    }

    const Bytes aad = associated_data(r);
    CipherCtxPtr ctx(EVP_CIPHER_CTX_new(), EVP_CIPHER_CTX_free);
    int len = 0;
    bool ok = ctx && EVP_DecryptInit_ex(ctx.get(), EVP_aes_256_gcm(), nullptr, nullptr, nullptr) == 1 &&
              EVP_CIPHER_CTX_ctrl(ctx.get(), EVP_CTRL_GCM_SET_IVLEN, kNonceLen, nullptr) == 1 &&
              EVP_DecryptInit_ex(ctx.get(), nullptr, nullptr, data_key, r.nonce.data()) == 1 &&
              EVP_DecryptUpdate(ctx.get(), nullptr, &len, aad.data(), static_cast<int>(aad.size())) == 1;
    OPENSSL_cleanse(data_key, sizeof data_key);
    if (!ok) fail("cannot initialise AES-256-GCM");
    Bytes out(r.ciphertext.size());
    std::size_t done = 0;
    constexpr std::size_t kChunk = 1 << 20;
    while (done < r.ciphertext.size()) {
        const auto n = std::min(kChunk, r.ciphertext.size() - done);
        if (EVP_DecryptUpdate(ctx.get(), out.data() + done, &len, r.ciphertext.data() + done, static_cast<int>(n)) != 1)
            fail("decryption failed");
        done += static_cast<std::size_t>(len);
    }
    Bytes tag = r.tag;
    if (EVP_CIPHER_CTX_ctrl(ctx.get(), EVP_CTRL_GCM_SET_TAG, kTagLen, tag.data()) != 1) fail("cannot set GCM tag");
    unsigned char tail[16];
    if (EVP_DecryptFinal_ex(ctx.get(), tail, &len) != 1) {
        OPENSSL_cleanse(out.data(), out.size());
        ERR_clear_error();
        throw CryptoError("crypto: authentication failed (record tampered or corrupted)");
    }
    return out;
}

Bytes serialize(const SealedRecord& r) {
    binio::Writer w;
    write_prefix(w, r);
    w.u64(r.ciphertext.size());
    w.bytes(r.ciphertext);
    w.u32(static_cast<std::uint32_t>(r.tag.size()));
    w.bytes(r.tag);
    return w.take();
}

SealedRecord parse(std::span<const std::uint8_t> data) {
    try {
        binio::Reader rd(data);
        auto magic = rd.bytes(kMagic.size());
        if (std::string_view(reinterpret_cast<const char*>(magic.data()), magic.size()) != kMagic)
            throw CryptoError("crypto: not a sealed record");
        if (rd.u16() != kFormatVersion) throw CryptoError("crypto: unsupported sealed record version");
        SealedRecord r;
        r.wrap_algorithm = rd.u8();
        r.cipher = rd.u8();
        if (rd.u16() != 0) throw CryptoError("crypto: malformed record (reserved field set)");
        auto tag_name = rd.bytes(rd.u16());
        r.type_tag.assign(tag_name.begin(), tag_name.end());
        r.timestamp = rd.i64();
        auto wk = rd.bytes(rd.u32());
        r.wrapped_key.assign(wk.begin(), wk.end());
        auto nonce = rd.bytes(rd.u32());
        r.nonce.assign(nonce.begin(), nonce.end());
        const auto clen = rd.u64();
        if (clen > rd.remaining()) throw CryptoError("crypto: malformed record (ciphertext length)");
        auto ct = rd.bytes(static_cast<std::size_t>(clen));
        r.ciphertext.assign(ct.begin(), ct.end());
        auto tag = rd.bytes(rd.u32());
        r.tag.assign(tag.begin(), tag.end());
        if (rd.remaining() != 0) throw CryptoError("crypto: malformed record (trailing bytes)");
        return r;
    } catch (const DataError& e) {
        throw CryptoError(std::string("crypto: malformed record: ") + e.what());
    }
}

void seal_file(const std::string& in, const std::string& out, const PublicKey& recipient, const std::string& type_tag) {
    const auto payload = binio::read_file(in);
    const auto now = std::chrono::duration_cast<std::chrono::seconds>(std::chrono::system_clock::now().time_since_epoch()).count();
    binio::write_file(out, serialize(seal(payload, recipient, type_tag, now)));
}

void unseal_file(const std::string& in, const std::string& out, const PrivateKey& key) {
    const auto raw = binio::read_file(in);
    binio::write_file(out, unseal(parse(raw), key));
}

std::vector<std::string> seal_directory(const std::string& dir, const std::string& out_dir, const PublicKey& recipient) {
    if (!fs::is_directory(dir)) throw DataError(dir + " is not a directory");
    std::vector<fs::path> files;
    for (const auto& e : fs::recursive_directory_iterator(dir))
        if (e.is_regular_file()) files.push_back(e.path());
    std::sort(files.begin(), files.end());
    std::vector<std::string> written;
    for (const auto& p : files) {
        const auto rel = fs::relative(p, dir);
        auto target = fs::path(out_dir) / rel;
        target += kExtension;
        fs::create_directories(target.parent_path());
        seal_file(p.string(), target.string(), recipient, rel.extension().string().empty() ? "blob" : rel.extension().string().substr(1));
        written.push_back(target.string());
    }
    return written;
}

std::vector<std::string> unseal_directory(const std::string& dir, const std::string& out_dir, const PrivateKey& key) {
    if (!fs::is_directory(dir)) throw DataError(dir + " is not a directory");
    std::vector<fs::path> files;
    for (const auto& e : fs::recursive_directory_iterator(dir))
        if (e.is_regular_file() && e.path().extension() == kExtension) files.push_back(e.path());
    std::sort(files.begin(), files.end());
    std::vector<std::string> written;
    for (const auto& p : files) {
        auto rel = fs::relative(p, dir);
        rel.replace_extension();
        const auto target = fs::path(out_dir) / rel;
        fs::create_directories(target.parent_path());
        unseal_file(p.string(), target.string(), key);
        written.push_back(target.string());
    }
    return written;
}

}  // namespace quietroom::store
