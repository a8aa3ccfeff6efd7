#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "seld3d/tensor.hpp"

namespace seld3d {

// Multichannel audio clip, samples deinterleaved per channel, float in [-1, 1].
struct AudioClip {
    int sample_rate = 0;
    std::vector<std::vector<float>> channels;

    std::size_t frames() const { return channels.empty() ? 0 : channels[0].size(); }
};

namespace detail {

inline void write_u16(std::ostream& os, std::uint16_t v) {
    unsigned char b[2] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff)};
    os.write(reinterpret_cast<const char*>(b), 2);
}

inline std::uint16_t read_u16(std::istream& is) {
    unsigned char b[2];
    is.read(reinterpret_cast<char*>(b), 2);
    if (!is) throw IoError("unexpected end of WAV file");
    return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}

} // namespace detail

// Reads PCM16 or IEEE float32 WAV.
inline AudioClip read_wav(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open WAV file: " + path);

    char tag[4];
    is.read(tag, 4);
    if (!is || std::memcmp(tag, "RIFF", 4) != 0) throw IoError("not a RIFF file: " + path);
    detail::read_u32(is);  // riff size
    is.read(tag, 4);
    if (!is || std::memcmp(tag, "WAVE", 4) != 0) throw IoError("not a WAVE file: " + path);

    std::uint16_t format = 0, num_channels = 0, bits = 0;
    std::uint32_t sample_rate = 0;
    bool have_fmt = false;

    AudioClip clip;
    while (is.read(tag, 4)) {
        const std::uint32_t chunk_size = detail::read_u32(is);
        if (std::memcmp(tag, "fmt ", 4) == 0) {
            format = detail::read_u16(is);
            num_channels = detail::read_u16(is);
            sample_rate = detail::read_u32(is);
            detail::read_u32(is);  // byte rate
            detail::read_u16(is);  // block align
            bits = detail::read_u16(is);
            if (chunk_size > 16) is.seekg(chunk_size - 16, std::ios::cur);
            have_fmt = true;
        } else if (std::memcmp(tag, "data", 4) == 0) {
            if (!have_fmt) throw IoError("WAV data chunk before fmt: " + path);
            if (num_channels == 0) throw IoError("WAV with zero channels: " + path);
            const std::uint32_t bytes_per_sample = bits / 8;
            if (bytes_per_sample == 0) throw IoError("bad WAV bit depth: " + path);
            const std::size_t n_total = chunk_size / bytes_per_sample;
            const std::size_t n_frames = n_total / num_channels;
            clip.sample_rate = static_cast<int>(sample_rate);
            clip.channels.assign(num_channels, std::vector<float>(n_frames));
            std::vector<char> raw(chunk_size);
            is.read(raw.data(), chunk_size);
            if (!is) throw IoError("truncated WAV data: " + path);
            if (format == 1 && bits == 16) {
                const auto* s = reinterpret_cast<const unsigned char*>(raw.data());
                for (std::size_t f = 0; f < n_frames; ++f)
                    for (std::uint16_t c = 0; c < num_channels; ++c) {
                        const std::size_t i = (f * num_channels + c) * 2;
                        const std::int16_t v =
                            static_cast<std::int16_t>(s[i] | (s[i + 1] << 8));
                        clip.channels[c][f] = static_cast<float>(v) / 32768.0f;
                    }
            } else if (format == 3 && bits == 32) {
                for (std::size_t f = 0; f < n_frames; ++f)
                    for (std::uint16_t c = 0; c < num_channels; ++c) {
                        float v;
                        std::memcpy(&v, raw.data() + (f * num_channels + c) * 4, 4);
                        clip.channels[c][f] = v;
                    }
            } else {
                throw IoError("unsupported WAV format (want PCM16 or float32): " + path);
            }
            return clip;
        } else {
            is.seekg(chunk_size + (chunk_size & 1), std::ios::cur);
        }
    }
    throw IoError("WAV without data chunk: " + path);
}

enum class WavEncoding { Pcm16, Float32 };

inline void write_wav(const AudioClip& clip, const std::string& path,
                      WavEncoding enc = WavEncoding::Float32) {
    if (clip.channels.empty()) throw IoError("refusing to write WAV with zero channels");
    const std::size_t n_frames = clip.frames();
    for (const auto& ch : clip.channels)
        if (ch.size() != n_frames) throw IoError("WAV channels must have equal length");

    const std::uint16_t num_channels = static_cast<std::uint16_t>(clip.channels.size());
    const std::uint16_t bits = enc == WavEncoding::Pcm16 ? 16 : 32;
    const std::uint16_t fmt = enc == WavEncoding::Pcm16 ? 1 : 3;
    const std::uint32_t bytes_per_frame = num_channels * (bits / 8);
    const std::uint32_t data_size = static_cast<std::uint32_t>(n_frames * bytes_per_frame);

    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open WAV for writing: " + path);
    os.write("RIFF", 4);
    detail::write_u32(os, 36 + data_size);
    os.write("WAVE", 4);
    os.write("fmt ", 4);
    detail::write_u32(os, 16);
    detail::write_u16(os, fmt);
    detail::write_u16(os, num_channels);
    detail::write_u32(os, static_cast<std::uint32_t>(clip.sample_rate));
    detail::write_u32(os, static_cast<std::uint32_t>(clip.sample_rate) * bytes_per_frame);
    detail::write_u16(os, static_cast<std::uint16_t>(bytes_per_frame));
    detail::write_u16(os, bits);
    os.write("data", 4);
    detail::write_u32(os, data_size);
    for (std::size_t f = 0; f < n_frames; ++f)
        for (std::uint16_t c = 0; c < num_channels; ++c) {
            const float v = clip.channels[c][f];
            if (enc == WavEncoding::Pcm16) {
                const float scaled = v * 32768.0f;
                const int q = static_cast<int>(std::lround(scaled));
                const std::int16_t s =
                    static_cast<std::int16_t>(std::clamp(q, -32768, 32767));
                detail::write_u16(os, static_cast<std::uint16_t>(s));
            } else {
                detail::write_f32(os, v);
            }
        }
    if (!os) throw IoError("write failed: " + path);
}

} // namespace seld3d
