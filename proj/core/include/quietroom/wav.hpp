#pragma once

#include <cstdint>
#include <fstream>
#include <string>

#include "quietroom/dsp.hpp"

namespace quietroom::wav {

enum class SampleFormat { Pcm16, Float32 };

struct WavInfo {
    int sample_rate = 0;
    int channels = 0;
    SampleFormat format = SampleFormat::Pcm16;
    std::uint64_t frames = 0;
};

/// Streaming RIFF/WAVE reader for 16-bit PCM and 32-bit IEEE float
/// (including WAVE_FORMAT_EXTENSIBLE wrappers of either).
class WavReader {
public:
    explicit WavReader(const std::string& path);

    const WavInfo& info() const { return info_; }
    std::uint64_t position() const { return position_; }

    /// Reads up to `frames` frames; the returned clip is shorter at end of file.
    dsp::MultichannelClip read(std::uint64_t frames);

private:
    std::ifstream in_;
    WavInfo info_;
    std::uint64_t position_ = 0;
    std::string path_;
};

/// Streaming writer; sizes in the header are patched on close().
class WavWriter {
public:
    WavWriter(const std::string& path, int sample_rate, int channels, SampleFormat format = SampleFormat::Pcm16);
    ~WavWriter();
    WavWriter(const WavWriter&) = delete;
    WavWriter& operator=(const WavWriter&) = delete;

    void write(const dsp::MultichannelClip& block);
    void close();

private:
    std::ofstream out_;
    int sample_rate_;
    int channels_;
    SampleFormat format_;
    std::uint64_t frames_ = 0;
    bool closed_ = false;
};

dsp::MultichannelClip read_wav(const std::string& path);
void write_wav(const std::string& path, const dsp::MultichannelClip& clip, SampleFormat format = SampleFormat::Pcm16);

}  // namespace quietroom::wav
