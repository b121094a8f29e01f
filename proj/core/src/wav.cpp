#include "quietroom/wav.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <vector>

#include "quietroom/binio.hpp"
#include "quietroom/error.hpp"

namespace quietroom::wav {

namespace {

constexpr std::uint16_t kFormatPcm = 1;
constexpr std::uint16_t kFormatFloat = 3;
constexpr std::uint16_t kFormatExtensible = 0xFFFE;

template <typename T>
T read_le(std::istream& in) {
    T v;
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw DataError("wav: unexpected end of file");
    return binio::byteswap_if_big(v);
}

std::string read_tag(std::istream& in) {
    char tag[4];
    in.read(tag, 4);
    if (!in) throw DataError("wav: unexpected end of file");
    return std::string(tag, 4);
}

int bytes_per_sample(SampleFormat f) { return f == SampleFormat::Pcm16 ? 2 : 4; }

}  // namespace

WavReader::WavReader(const std::string& path) : in_(path, std::ios::binary), path_(path) {
    if (!in_) throw DataError("cannot open " + path);
    if (read_tag(in_) != "RIFF") throw DataError(path + ": not a RIFF file");
    read_le<std::uint32_t>(in_);
    if (read_tag(in_) != "WAVE") throw DataError(path + ": not a WAVE file");

    bool have_fmt = false;
    std::uint16_t bits = 0;
    while (true) {
        const auto tag = read_tag(in_);
        const auto size = read_le<std::uint32_t>(in_);
        if (tag == "fmt ") {
            std::vector<char> body(size);
            in_.read(body.data(), size);
            if (!in_ || size < 16) throw DataError(path + ": bad fmt chunk");
            auto u16 = [&](std::size_t off) {
                std::uint16_t v;
                std::memcpy(&v, body.data() + off, 2);
                return binio::byteswap_if_big(v);
            };
            auto u32 = [&](std::size_t off) {
                std::uint32_t v;
                std::memcpy(&v, body.data() + off, 4);
                return binio::byteswap_if_big(v);
            };
            std::uint16_t format = u16(0);
            info_.channels = u16(2);
            info_.sample_rate = static_cast<int>(u32(4));
            bits = u16(14);
            if (format == kFormatExtensible) {
                if (size < 26) throw DataError(path + ": bad extensible fmt chunk");
                format = u16(24);
            }
            if (format == kFormatPcm && bits == 16) info_.format = SampleFormat::Pcm16;
            else if (format == kFormatFloat && bits == 32) info_.format = SampleFormat::Float32;
            else throw DataError(path + ": only 16-bit PCM and 32-bit float WAVE are supported");
            if (size & 1u) in_.ignore(1);
            have_fmt = true;
        } else if (tag == "data") {
            if (!have_fmt) throw DataError(path + ": data chunk before fmt chunk");
            if (info_.channels < 1 || info_.sample_rate < 1) throw DataError(path + ": bad format header");
            const auto frame_bytes = static_cast<std::uint64_t>(info_.channels) * bytes_per_sample(info_.format);
            info_.frames = size / frame_bytes;
            return;
        } else {
            in_.ignore(size + (size & 1u));
            if (!in_) throw DataError(path + ": missing data chunk");
        }
    }
}

dsp::MultichannelClip WavReader::read(std::uint64_t frames) {
    frames = std::min(frames, info_.frames - position_);
    dsp::MultichannelClip clip;
    clip.sample_rate = info_.sample_rate;
    clip.channels.assign(static_cast<std::size_t>(info_.channels), std::vector<double>(frames));
    const auto bps = bytes_per_sample(info_.format);
    std::vector<char> raw(frames * static_cast<std::uint64_t>(info_.channels) * bps);
    in_.read(raw.data(), static_cast<std::streamsize>(raw.size()));
    if (!in_) throw DataError(path_ + ": truncated sample data");
    const char* p = raw.data();
    for (std::uint64_t f = 0; f < frames; ++f) {
        for (int c = 0; c < info_.channels; ++c) {
            double v;
            if (info_.format == SampleFormat::Pcm16) {
                std::int16_t s;
                std::memcpy(&s, p, 2);
                v = binio::byteswap_if_big(s) / 32768.0;
            } else {
                float s;
                std::memcpy(&s, p, 4);
                v = binio::byteswap_if_big(s);
            }
            p += bps;
            clip.channels[static_cast<std::size_t>(c)][f] = v;
        }
    }
    position_ += frames;
    return clip;
}

WavWriter::WavWriter(const std::string& path, int sample_rate, int channels, SampleFormat format)
    : out_(path, std::ios::binary | std::ios::trunc), sample_rate_(sample_rate), channels_(channels), format_(format) {
    if (!out_) throw DataError("cannot write " + path);
    if (sample_rate < 1 || channels < 1) throw ConfigError("wav: invalid format");
    binio::Writer h;
    const auto bps = static_cast<std::uint16_t>(bytes_per_sample(format));
    h.bytes("RIFF");
    h.u32(0);
    h.bytes("WAVE");
    h.bytes("fmt ");
    h.u32(16);
    h.u16(format == SampleFormat::Pcm16 ? kFormatPcm : kFormatFloat);
    h.u16(static_cast<std::uint16_t>(channels));
    h.u32(static_cast<std::uint32_t>(sample_rate));
    h.u32(static_cast<std::uint32_t>(sample_rate * channels * bps));
    h.u16(static_cast<std::uint16_t>(channels * bps));
    h.u16(static_cast<std::uint16_t>(8 * bps));
    h.bytes("data");
    h.u32(0);
    out_.write(reinterpret_cast<const char*>(h.data().data()), static_cast<std::streamsize>(h.data().size()));
}

WavWriter::~WavWriter() {
    try {
        close();
    } catch (...) {
    }
}

void WavWriter::write(const dsp::MultichannelClip& block) {
    if (closed_) throw ConfigError("wav: write after close");
    if (static_cast<int>(block.channel_count()) != channels_) throw ConfigError("wav: channel count mismatch");
    binio::Writer w;
    const auto n = block.length();
    for (std::size_t f = 0; f < n; ++f) {
        for (int c = 0; c < channels_; ++c) {
            const double v = std::clamp(block.channels[static_cast<std::size_t>(c)][f], -1.0, 1.0);
            if (format_ == SampleFormat::Pcm16) {
                w.put(static_cast<std::int16_t>(std::clamp<long>(std::lround(v * 32768.0), -32768, 32767)));
            } else {
                w.put(static_cast<float>(v));
            }
        }
    }
    out_.write(reinterpret_cast<const char*>(w.data().data()), static_cast<std::streamsize>(w.data().size()));
    frames_ += n;
}

void WavWriter::close() {
    if (closed_) return;
    closed_ = true;
    const auto data_bytes = frames_ * static_cast<std::uint64_t>(channels_) * bytes_per_sample(format_);
    if (data_bytes > 0xFFFFFFFFull - 36) throw DataError("wav: file exceeds 4 GiB RIFF limit");
    auto put32 = [&](std::streamoff off, std::uint32_t v) {
        v = binio::byteswap_if_big(v);
        out_.seekp(off);
        out_.write(reinterpret_cast<const char*>(&v), 4);
    };
    put32(4, static_cast<std::uint32_t>(36 + data_bytes));
    put32(40, static_cast<std::uint32_t>(data_bytes));
    out_.close();
}

dsp::MultichannelClip read_wav(const std::string& path) {
    WavReader reader(path);
    return reader.read(reader.info().frames);
}

void write_wav(const std::string& path, const dsp::MultichannelClip& clip, SampleFormat format) {
    WavWriter writer(path, clip.sample_rate, static_cast<int>(clip.channel_count()), format);
    writer.write(clip);
    writer.close();
}

}  // namespace quietroom::wav
