#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <memory>

#include <openssl/evp.h>

#include "quietroom/binio.hpp"
#include "quietroom/error.hpp"
#include "quietroom/store.hpp"
#include "support.hpp"

using namespace quietroom;
using namespace quietroom::store;

namespace {

struct Keys {
    KeyPair pair = generate_keypair(2048);
    PublicKey pub = PublicKey::from_pem(pair.public_pem);
    PrivateKey priv = PrivateKey::from_pem(pair.private_pem);
};

const Keys& keys() {
    static const Keys k;
    return k;
}

const Keys& other_keys() {
    static const Keys k;
    return k;
}

Bytes random_bytes(Rng& rng, std::size_t n) {
    Bytes b(n);
    for (auto& x : b) x = static_cast<std::uint8_t>(rng.next_u64());
    return b;
}

bool contains(const Bytes& hay, std::span<const std::uint8_t> needle) {
    return std::search(hay.begin(), hay.end(), needle.begin(), needle.end()) != hay.end();
}

// Direct AES-256-GCM encryption as an independent reference.
std::pair<Bytes, Bytes> reference_gcm(const Bytes& key, const Bytes& nonce, const Bytes& aad, const Bytes& plain) {
    std::unique_ptr<EVP_CIPHER_CTX, decltype(&EVP_CIPHER_CTX_free)> ctx(EVP_CIPHER_CTX_new(), EVP_CIPHER_CTX_free);
    int len = 0;
    Bytes out(plain.size() + 16), tag(16);
    REQUIRE(EVP_EncryptInit_ex(ctx.get(), EVP_aes_256_gcm(), nullptr, key.data(), nonce.data()) == 1);
    REQUIRE(EVP_EncryptUpdate(ctx.get(), nullptr, &len, aad.data(), static_cast<int>(aad.size())) == 1);
    REQUIRE(EVP_EncryptUpdate(ctx.get(), out.data(), &len, plain.data(), static_cast<int>(plain.size())) == 1);
    int total = len;
    REQUIRE(EVP_EncryptFinal_ex(ctx.get(), out.data() + total, &len) == 1);
    total += len;
    out.resize(static_cast<std::size_t>(total));
    REQUIRE(EVP_CIPHER_CTX_ctrl(ctx.get(), EVP_CTRL_GCM_GET_TAG, 16, tag.data()) == 1);
    return {out, tag};
}

}  // namespace

TEST_CASE("round trip over 1000 random payloads") {
    Rng rng(1);
    for (int i = 0; i < 1000; ++i) {
        std::size_t n;
        if (i == 0) n = 0;
        else if (i == 1) n = 1 << 20;
        else n = static_cast<std::size_t>(std::exp(rng.uniform(0.0, std::log(1048576.0))));
        const auto payload = random_bytes(rng, n);
        const auto rec = seal(payload, keys().pub, "audio", 1700000000 + i);
        CHECK(rec.ciphertext.size() == n);
        const auto back = parse(serialize(rec));
        CHECK(back.type_tag == "audio");
        CHECK(back.timestamp == 1700000000 + i);
        CHECK(unseal(back, keys().priv) == payload);
    }
}

TEST_CASE("ciphertext matches a direct AES-GCM encryption") {
    Rng rng(2);
    const auto key = random_bytes(rng, 32);
    const auto nonce = random_bytes(rng, 12);
    const auto payload = random_bytes(rng, 1000);
    const auto rec = detail::seal_with_key(payload, keys().pub, key, nonce, "spectrogram", 42);
    const auto [ct, tag] = reference_gcm(key, nonce, associated_data(rec), payload);
    CHECK(rec.ciphertext == ct);
    CHECK(rec.tag == tag);
    CHECK(rec.nonce == nonce);
    CHECK(unseal(rec, keys().priv) == payload);

    CHECK_THROWS_AS(detail::seal_with_key(payload, keys().pub, Bytes(31), nonce, "x", 0), ConfigError);
    CHECK_THROWS_AS(detail::seal_with_key(payload, keys().pub, key, Bytes(16), "x", 0), ConfigError);
}

TEST_CASE("serialized records never contain the data key") {
    Rng rng(3);
    for (int i = 0; i < 200; ++i) {
        const auto key = random_bytes(rng, 32);
        const auto payload = random_bytes(rng, static_cast<std::size_t>(rng.uniform_int(0, 4096)));
        const auto raw = serialize(detail::seal_with_key(payload, keys().pub, key, random_bytes(rng, 12), "blob", 0));
        for (std::size_t off = 0; off + 8 <= key.size(); ++off)
            CHECK_FALSE(contains(raw, std::span<const std::uint8_t>(key).subspan(off, 8)));
    }
}

TEST_CASE("any flipped bit is detected") {
    Rng rng(4);
    const auto payload = random_bytes(rng, 300);
    const auto rec = seal(payload, keys().pub, "audio", 5);
    const auto raw = serialize(rec);

    auto rejects = [&](Bytes bad) {
        try {
            (void)unseal(parse(bad), keys().priv);
            return false;
        } catch (const CryptoError&) {
            return true;
        }
    };

    // Every byte position, one random bit each.
    for (std::size_t pos = 0; pos < raw.size(); ++pos) {
        Bytes bad = raw;
        bad[pos] ^= static_cast<std::uint8_t>(1u << rng.uniform_int(0, 7));
        CAPTURE(pos);
        CHECK(rejects(bad));
    }

    // Field-level flips on the record itself.
    for (int trial = 0; trial < 300; ++trial) {
        SealedRecord bad = rec;
        Bytes* field = nullptr;
        switch (trial % 4) {
            case 0: field = &bad.ciphertext; break;
            case 1: field = &bad.wrapped_key; break;
            case 2: field = &bad.nonce; break;
            default: field = &bad.tag; break;
        }
        const auto i = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(field->size()) - 1));
        (*field)[i] ^= static_cast<std::uint8_t>(1u << rng.uniform_int(0, 7));
        CHECK_THROWS_AS((void)unseal(bad, keys().priv), CryptoError);
    }
    SealedRecord renamed = rec;
    renamed.type_tag = "audip";
    CHECK_THROWS_AS((void)unseal(renamed, keys().priv), CryptoError);
    SealedRecord retimed = rec;
    retimed.timestamp = 6;
    CHECK_THROWS_AS((void)unseal(retimed, keys().priv), CryptoError);
}

TEST_CASE("wrong key and malformed input") {
    Rng rng(5);
    const auto payload = random_bytes(rng, 64);
    const auto rec = seal(payload, keys().pub);
    CHECK_THROWS_AS((void)unseal(rec, other_keys().priv), CryptoError);

    const auto raw = serialize(rec);
    CHECK_THROWS_AS(parse(Bytes{}), CryptoError);
    CHECK_THROWS_AS(parse(Bytes(raw.begin(), raw.begin() + 10)), CryptoError);
    CHECK_THROWS_AS(parse(Bytes(raw.begin(), raw.end() - 1)), CryptoError);
    Bytes longer = raw;
    longer.push_back(0);
    CHECK_THROWS_AS(parse(longer), CryptoError);
    Bytes magic = raw;
    magic[0] = 'X';
    CHECK_THROWS_AS(parse(magic), CryptoError);
    Bytes version = raw;
    version[6] = 9;
    CHECK_THROWS_AS(parse(version), CryptoError);
    for (int i = 0; i < 500; ++i) {
        auto junk = random_bytes(rng, static_cast<std::size_t>(rng.uniform_int(0, 400)));
        CHECK_THROWS_AS(parse(junk), CryptoError);
    }

    SealedRecord alg = rec;
    alg.cipher = 7;
    CHECK_THROWS_AS((void)unseal(alg, keys().priv), CryptoError);
    CHECK_THROWS_AS(PublicKey::from_pem("not a key"), CryptoError);
    CHECK_THROWS_AS(PrivateKey::from_pem(keys().pair.public_pem), CryptoError);
    CHECK_THROWS_AS(generate_keypair(1024), ConfigError);
}

TEST_CASE("sealing the same payload twice gives fresh ciphertexts") {
    Rng rng(6);
    const auto payload = random_bytes(rng, 128);
    const auto a = seal(payload, keys().pub);
    const auto b = seal(payload, keys().pub);
    CHECK(a.ciphertext != b.ciphertext);
    CHECK(a.nonce != b.nonce);
    CHECK(a.wrapped_key != b.wrapped_key);
    CHECK(unseal(a, keys().priv) == unseal(b, keys().priv));
}

TEST_CASE("file and directory sealing") {
    qrtest::TempDir dir;
    Rng rng(7);
    std::filesystem::create_directories(dir.file("in/sub"));
    const auto x = random_bytes(rng, 5000), y = random_bytes(rng, 0);
    binio::write_file(dir.file("in/x.wav"), x);
    binio::write_file(dir.file("in/sub/y.csv"), y);
    binio::write_file(dir.file("pub.pem"), Bytes(keys().pair.public_pem.begin(), keys().pair.public_pem.end()));

    const auto pub = PublicKey::load(dir.file("pub.pem"));
    seal_file(dir.file("in/x.wav"), dir.file("x.qrseal"), pub, "audio");
    unseal_file(dir.file("x.qrseal"), dir.file("x.out"), keys().priv);
    CHECK(binio::read_file(dir.file("x.out")) == x);

    const auto sealed = seal_directory(dir.file("in"), dir.file("sealed"), pub);
    CHECK(sealed.size() == 2);
    CHECK(std::filesystem::exists(dir.file("sealed/sub/y.csv.qrseal")));
    CHECK_FALSE(contains(binio::read_file(dir.file("sealed/x.wav.qrseal")), std::span<const std::uint8_t>(x).subspan(0, 32)));
    const auto opened = unseal_directory(dir.file("sealed"), dir.file("out"), keys().priv);
    CHECK(opened.size() == 2);
    CHECK(binio::read_file(dir.file("out/x.wav")) == x);
    CHECK(binio::read_file(dir.file("out/sub/y.csv")) == y);
    CHECK_THROWS_AS(seal_directory(dir.file("missing"), dir.file("o"), pub), DataError);
}
