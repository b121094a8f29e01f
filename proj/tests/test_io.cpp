#include <doctest.h>

#include <cmath>
#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

#include "quietroom/binio.hpp"
#include "quietroom/config.hpp"
#include "quietroom/error.hpp"
#include "quietroom/hash.hpp"
#include "quietroom/matrix_io.hpp"
#include "quietroom/params.hpp"
#include "quietroom/wav.hpp"
#include "support.hpp"

using namespace quietroom;

namespace {

dsp::MultichannelClip random_clip(Rng& rng, int channels, std::size_t frames, double amp = 0.5) {
    dsp::MultichannelClip c;
    c.sample_rate = 16000;
    for (int m = 0; m < channels; ++m) c.channels.push_back(qrtest::white_noise(rng, frames, amp));
    for (auto& ch : c.channels)
        for (auto& v : ch) v = std::clamp(v, -0.99, 0.99);
    return c;
}

void put16(std::vector<std::uint8_t>& b, std::uint16_t v) {
    b.push_back(static_cast<std::uint8_t>(v));
    b.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put32(std::vector<std::uint8_t>& b, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) b.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void puttag(std::vector<std::uint8_t>& b, const char* t) { b.insert(b.end(), t, t + 4); }

std::uint32_t get32(const std::vector<std::uint8_t>& b, std::size_t off) {
    return static_cast<std::uint32_t>(b[off]) | static_cast<std::uint32_t>(b[off + 1]) << 8 |
           static_cast<std::uint32_t>(b[off + 2]) << 16 | static_cast<std::uint32_t>(b[off + 3]) << 24;
}

}  // namespace

TEST_CASE("wav round trips") {
    qrtest::TempDir dir;
    Rng rng(1);
    const auto clip = random_clip(rng, 3, 5000);

    SUBCASE("float32 is exact to float precision") {
        wav::write_wav(dir.file("f.wav"), clip, wav::SampleFormat::Float32);
        const auto back = wav::read_wav(dir.file("f.wav"));
        REQUIRE(back.channel_count() == 3);
        REQUIRE(back.length() == 5000);
        CHECK(back.sample_rate == 16000);
        for (int m = 0; m < 3; ++m)
            for (std::size_t i = 0; i < 5000; ++i)
                CHECK(back.channels[static_cast<std::size_t>(m)][i] == static_cast<double>(static_cast<float>(clip.channels[static_cast<std::size_t>(m)][i])));
    }
    SUBCASE("pcm16 is within one step and re-encodes byte for byte") {
        wav::write_wav(dir.file("p.wav"), clip);
        const auto back = wav::read_wav(dir.file("p.wav"));
        double worst = 0;
        for (int m = 0; m < 3; ++m)
            for (std::size_t i = 0; i < 5000; ++i)
                worst = std::max(worst, std::abs(back.channels[static_cast<std::size_t>(m)][i] - clip.channels[static_cast<std::size_t>(m)][i]));
        CHECK(worst <= 0.5 / 32768.0 + 1e-15);
        wav::write_wav(dir.file("p2.wav"), back);
        CHECK(binio::read_file(dir.file("p.wav")) == binio::read_file(dir.file("p2.wav")));
    }
    SUBCASE("header fields") {
        wav::write_wav(dir.file("h.wav"), clip);
        const auto raw = binio::read_file(dir.file("h.wav"));
        REQUIRE(raw.size() == 44 + 5000 * 3 * 2);
        CHECK(std::memcmp(raw.data(), "RIFF", 4) == 0);
        CHECK(get32(raw, 4) == raw.size() - 8);
        CHECK(std::memcmp(raw.data() + 8, "WAVEfmt ", 8) == 0);
        CHECK(get32(raw, 24) == 16000);
        CHECK(get32(raw, 28) == 16000 * 3 * 2);
        CHECK(std::memcmp(raw.data() + 36, "data", 4) == 0);
        CHECK(get32(raw, 40) == 5000 * 3 * 2);
    }
    SUBCASE("full scale saturates") {
        dsp::MultichannelClip loud{16000, {{1.0, -1.0, 3.0, -3.0}}};
        wav::write_wav(dir.file("l.wav"), loud);
        const auto back = wav::read_wav(dir.file("l.wav"));
        CHECK(back.channels[0] == std::vector<double>{32767.0 / 32768.0, -1.0, 32767.0 / 32768.0, -1.0});
    }
}

TEST_CASE("streaming reader and writer agree with whole-file calls") {
    qrtest::TempDir dir;
    Rng rng(2);
    const auto clip = random_clip(rng, 2, 10007);
    {
        wav::WavWriter w(dir.file("s.wav"), 16000, 2, wav::SampleFormat::Float32);
        for (std::size_t start = 0; start < clip.length(); start += 999) {
            dsp::MultichannelClip block;
            block.sample_rate = 16000;
            for (const auto& ch : clip.channels)
                block.channels.emplace_back(ch.begin() + static_cast<std::ptrdiff_t>(start),
                                            ch.begin() + static_cast<std::ptrdiff_t>(std::min(start + 999, ch.size())));
            w.write(block);
        }
        CHECK_THROWS_AS(w.write(random_clip(rng, 3, 4)), ConfigError);
    }
    wav::write_wav(dir.file("w.wav"), clip, wav::SampleFormat::Float32);
    CHECK(binio::read_file(dir.file("s.wav")) == binio::read_file(dir.file("w.wav")));

    wav::WavReader r(dir.file("s.wav"));
    CHECK(r.info().frames == 10007);
    CHECK(r.info().channels == 2);
    std::vector<double> joined;
    while (r.position() < r.info().frames) {
        const auto b = r.read(4096);
        joined.insert(joined.end(), b.channels[1].begin(), b.channels[1].end());
    }
    CHECK(joined == wav::read_wav(dir.file("w.wav")).channels[1]);
    CHECK(r.read(10).length() == 0);
}

TEST_CASE("extensible float wave with an extra chunk") {
    std::vector<std::uint8_t> b;
    const float samples[] = {0.25f, -0.5f, 0.125f, 1.0f, -1.0f, 0.0f};
    puttag(b, "RIFF");
    put32(b, 0);
    puttag(b, "WAVE");
    puttag(b, "fmt ");
    put32(b, 40);
    put16(b, 0xFFFE);
    put16(b, 2);
    put32(b, 8000);
    put32(b, 8000 * 8);
    put16(b, 8);
    put16(b, 32);
    put16(b, 22);
    put16(b, 32);
    put32(b, 3);
    put16(b, 3);  // subformat: IEEE float
    const std::uint8_t guid_tail[] = {0x00, 0x00, 0x00, 0x00, 0x10, 0x00, 0x80, 0x00, 0x00, 0xAA, 0x00, 0x38, 0x9B, 0x71};
    b.insert(b.end(), std::begin(guid_tail), std::end(guid_tail));
    puttag(b, "LIST");
    put32(b, 5);
    b.insert(b.end(), {'a', 'b', 'c', 'd', 'e', 0});  // odd size plus pad byte
    puttag(b, "data");
    put32(b, sizeof samples);
    for (float f : samples) {
        std::uint32_t u;
        std::memcpy(&u, &f, 4);
        put32(b, u);
    }
    const auto riff = static_cast<std::uint32_t>(b.size() - 8);
    std::memcpy(b.data() + 4, &riff, 4);

    qrtest::TempDir dir;
    binio::write_file(dir.file("x.wav"), b);
    const auto clip = wav::read_wav(dir.file("x.wav"));
    CHECK(clip.sample_rate == 8000);
    REQUIRE(clip.channel_count() == 2);
    CHECK(clip.channels[0] == std::vector<double>{0.25, 0.125, -1.0});
    CHECK(clip.channels[1] == std::vector<double>{-0.5, 1.0, 0.0});
}

TEST_CASE("malformed wave files") {
    qrtest::TempDir dir;
    auto write = [&](const std::string& name, const std::vector<std::uint8_t>& bytes) {
        binio::write_file(dir.file(name), bytes);
        return dir.file(name);
    };
    CHECK_THROWS_AS(wav::read_wav(dir.file("missing.wav")), DataError);
    CHECK_THROWS_AS(wav::read_wav(write("empty.wav", {})), DataError);
    CHECK_THROWS_AS(wav::read_wav(write("text.wav", {'h', 'e', 'l', 'l', 'o', ' ', 'w', 'o', 'r', 'l', 'd', '!'})), DataError);

    Rng rng(3);
    wav::write_wav(dir.file("ok.wav"), random_clip(rng, 1, 100));
    auto raw = binio::read_file(dir.file("ok.wav"));
    auto pcm8 = raw;
    pcm8[34] = 8;
    CHECK_THROWS_AS(wav::read_wav(write("pcm8.wav", pcm8)), DataError);
    auto truncated = raw;
    truncated.resize(raw.size() - 10);
    CHECK_THROWS_AS(wav::read_wav(write("short.wav", truncated)), DataError);
    auto nodata = raw;
    nodata.resize(36);
    CHECK_THROWS_AS(wav::read_wav(write("nodata.wav", nodata)), DataError);
}

TEST_CASE("matrix files") {
    qrtest::TempDir dir;
    Rng rng(4);
    Matrix m(3, 5);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
    m(0, 0) = -0.0;
    m(2, 4) = 1e300;
    write_matrix(dir.file("m.qrm"), m);
    const auto raw = binio::read_file(dir.file("m.qrm"));
    REQUIRE(raw.size() == 48 + 15 * 8);
    CHECK(std::memcmp(raw.data(), "QRMATRIX", 8) == 0);
    CHECK(get32(raw, 8) == 1);
    CHECK(get32(raw, 16) == 3);
    CHECK(get32(raw, 24) == 5);
    double first;
    std::memcpy(&first, raw.data() + 48 + 8, 8);
    CHECK(first == m(0, 1));

    const auto back = read_matrix(dir.file("m.qrm"));
    CHECK(back.values == m);
    CHECK(std::signbit(back.values(0, 0)));
    CHECK_FALSE(back.dp.has_value());

    write_matrix(dir.file("e.qrm"), Matrix(0, 7));
    CHECK(read_matrix(dir.file("e.qrm")).values.cols() == 7);

    auto bad = raw;
    bad.pop_back();
    binio::write_file(dir.file("bad.qrm"), bad);
    CHECK_THROWS_AS(read_matrix(dir.file("bad.qrm")), DataError);
    bad = raw;
    bad[0] = 'X';
    binio::write_file(dir.file("bad.qrm"), bad);
    CHECK_THROWS_AS(read_matrix(dir.file("bad.qrm")), DataError);

    write_matrix_csv(dir.file("m.csv"), m);
    std::ifstream in(dir.file("m.csv"));
    std::string line;
    std::size_t lines = 0;
    while (std::getline(in, line)) ++lines;
    CHECK(lines == 3);
}

TEST_CASE("parameter files") {
    qrtest::TempDir dir;
    Rng rng(5);
    Parameters p;
    p.add("a.w", 3, 4);
    p.add("b", 1, 7);
    p.add("empty", 0, 2);
    for (std::size_t b = 0; b < p.size(); ++b)
        for (Eigen::Index i = 0; i < p[b].size(); ++i) p[b].data()[i] = rng.normal();
    const nlohmann::json meta{{"kind", "test"}, {"n", 3}};
    write_parameters(dir.file("p.bin"), p, meta);
    const auto back = read_parameters(dir.file("p.bin"));
    CHECK(back.metadata == meta);
    REQUIRE(back.params.same_layout(p));
    for (std::size_t b = 0; b < p.size(); ++b) {
        CHECK(back.params.name(b) == p.name(b));
        CHECK(back.params[b] == p[b]);
    }
    CHECK(p.scalar_count() == 19);
    CHECK(p.scalar(12) == p[1](0, 0));
    CHECK_THROWS_AS(p.scalar(19), ConfigError);
    CHECK_THROWS_AS(p.add("b", 1, 1), ConfigError);
    CHECK_THROWS_AS(p.at("nope"), ConfigError);

    auto raw = binio::read_file(dir.file("p.bin"));
    raw.push_back(0);
    binio::write_file(dir.file("q.bin"), raw);
    CHECK_THROWS_AS(read_parameters(dir.file("q.bin")), DataError);
    raw.resize(raw.size() - 9);
    binio::write_file(dir.file("q.bin"), raw);
    CHECK_THROWS_AS(read_parameters(dir.file("q.bin")), DataError);
    raw[0] = 'Z';
    binio::write_file(dir.file("q.bin"), raw);
    CHECK_THROWS_AS(read_parameters(dir.file("q.bin")), DataError);
}

TEST_CASE("sha-256 known answers") {
    CHECK(sha256_hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    CHECK(sha256_hex("abcdbcdecdefdefgefghfghighijhijkijkljklmklmnlmnomnopnopq") ==
          "248d6a61d20638b8e5c026930c3e6039a33ce45964ff2167f6ecedd419db06c1");
    Sha256 h;
    for (int i = 0; i < 1000; ++i) h.update(std::string(1000, 'a'));
    CHECK(h.hex() == "cdc76e5c9914fb9281a1c7e284d73e67f1809a48a497200e046d39ccc7112cd0");

    qrtest::TempDir dir;
    const std::string text = "occupancy";
    binio::write_file(dir.file("t"), std::vector<std::uint8_t>(text.begin(), text.end()));
    CHECK(sha256_file(dir.file("t")) == sha256_hex(text));
    CHECK_THROWS_AS(sha256_file(dir.file("none")), DataError);
}

TEST_CASE("run configuration") {
    const auto kv = config::KeyValues::parse(R"(
# comment
train.epochs = 5
  synth.duration_s=7200
dp.epsilon = 0.5
dp.sweep = 5, 2 ,1
seed = 9
)");
    CHECK(kv.get_int("train.epochs") == 5);
    CHECK(kv.get_int("synth.duration_s") == 7200);
    CHECK(kv.get_doubles("dp.sweep") == std::vector<double>{5, 2, 1});

    const auto resolved = config::resolve(kv);
    CHECK(resolved.get_double("train.lr") == 0.001);
    CHECK(resolved.get_int("train.epochs") == 5);
    CHECK(resolved.get_int("model.heads") == 8);
    CHECK(resolved.get_int("model.layers") == 4);
    CHECK(resolved.get_int("model.d_head") == 16);
    CHECK(resolved.get_int("model.d_emb") == 128);

    const auto sc = config::scenario_config(resolved);
    CHECK(sc.duration_s == 7200);
    CHECK(sc.seed == 9);
    const auto dp = config::dp_params(resolved);
    REQUIRE(dp.has_value());
    CHECK(dp->epsilon == 0.5);
    CHECK_FALSE(config::dp_params(config::resolve({})).has_value());
    const auto tc = config::train_config(resolved);
    CHECK(tc.epochs == 5);
    CHECK(tc.adam.lr == 0.001);

    auto clinic = resolved;
    clinic.set("synth.profile", "clinic");
    CHECK(config::scenario_config(clinic).arrival_profile.size() == 2);

    CHECK_THROWS_AS(config::resolve(config::KeyValues::parse("train.epoch = 3")), ConfigError);
    CHECK_THROWS_AS(config::KeyValues::parse("no equals sign"), ConfigError);
    CHECK_THROWS_AS(config::KeyValues::parse("train.epochs = 3x").get_int("train.epochs"), ConfigError);
    CHECK_THROWS_AS(config::KeyValues::parse("a = maybe").get_bool("a"), ConfigError);
    CHECK_THROWS_AS(kv.get("missing"), ConfigError);

    const auto j = resolved.to_json();
    CHECK(config::KeyValues::from_json(j).entries() == resolved.entries());
    CHECK(config::KeyValues::parse(resolved.dump()).entries() == resolved.entries());

    qrtest::TempDir dir;
    std::ofstream(dir.file("run.conf")) << "train.epochs = 2\n";
    CHECK(config::KeyValues::load(dir.file("run.conf")).get_int("train.epochs") == 2);
    CHECK_THROWS_AS(config::KeyValues::load(dir.file("nope.conf")), ConfigError);
}
