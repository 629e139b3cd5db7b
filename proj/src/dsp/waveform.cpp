#include "apa/dsp/waveform.hpp"

#include <cstring>
#include <fstream>

#include "apa/common.hpp"

namespace apa::dsp {

namespace {

std::uint32_t read_u32(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

std::uint16_t read_u16(const unsigned char* p) {
    return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

void put_u32(std::string& out, std::uint32_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
    out.push_back(static_cast<char>((v >> 16) & 0xff));
    out.push_back(static_cast<char>((v >> 24) & 0xff));
}

void put_u16(std::string& out, std::uint16_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
}

}  // namespace

Waveform read_wav(const std::string& path) {
    std::string raw = read_text_file(path);
    const auto* p = reinterpret_cast<const unsigned char*>(raw.data());
    std::size_t n = raw.size();
    if (n < 12 || std::memcmp(p, "RIFF", 4) != 0 || std::memcmp(p + 8, "WAVE", 4) != 0)
        throw Error(path + ": not a RIFF/WAVE file");

    int channels = 0, bits = 0, rate = 0;
    const unsigned char* data = nullptr;
    std::size_t data_len = 0;

    std::size_t off = 12;
    while (off + 8 <= n) {
        const unsigned char* hdr = p + off;
        std::uint32_t chunk_len = read_u32(hdr + 4);
        const unsigned char* body = hdr + 8;
        if (off + 8 + chunk_len > n)
            throw Error(path + ": truncated chunk at offset " + std::to_string(off));
        if (std::memcmp(hdr, "fmt ", 4) == 0) {
            if (chunk_len < 16) throw Error(path + ": fmt chunk too short");
            std::uint16_t format = read_u16(body);
            if (format != 1) throw Error(path + ": only PCM (format 1) is supported");
            channels = read_u16(body + 2);
            rate = static_cast<int>(read_u32(body + 4));
            bits = read_u16(body + 14);
        } else if (std::memcmp(hdr, "data", 4) == 0) {
            data = body;
            data_len = chunk_len;
        }
        off += 8 + chunk_len + (chunk_len & 1);  // chunks are word-aligned
    }
    if (!data || channels == 0) throw Error(path + ": missing fmt or data chunk");
    if (bits != 16) throw Error(path + ": only 16-bit PCM is supported, got " +
                                std::to_string(bits) + "-bit");
    if (channels > 2) throw Error(path + ": only mono or stereo supported");
    if (rate < 8000) throw Error(path + ": sample rate below 8000 Hz");

    std::size_t frame_bytes = static_cast<std::size_t>(channels) * 2;
    std::size_t frames = data_len / frame_bytes;
    if (frames == 0) throw Error(path + ": empty audio data");

    Waveform w;
    w.sample_rate_hz = rate;
    w.samples.resize(frames);
    for (std::size_t i = 0; i < frames; ++i) {
        double acc = 0;
        for (int c = 0; c < channels; ++c) {
            const unsigned char* s = data + i * frame_bytes + c * 2;
            std::int16_t v = static_cast<std::int16_t>(s[0] | (s[1] << 8));
            acc += static_cast<double>(v) / 32768.0;
        }
        w.samples[i] = acc / channels;
    }
    return w;
}

void write_wav(const std::string& path, const Waveform& w) {
    if (w.samples.empty()) throw Error("write_wav: empty waveform");
    std::string out;
    std::uint32_t data_len = static_cast<std::uint32_t>(w.samples.size() * 2);
    out.reserve(44 + data_len);
    out += "RIFF";
    put_u32(out, 36 + data_len);
    out += "WAVE";
    out += "fmt ";
    put_u32(out, 16);
    put_u16(out, 1);  // PCM
    put_u16(out, 1);  // mono
    put_u32(out, static_cast<std::uint32_t>(w.sample_rate_hz));
    put_u32(out, static_cast<std::uint32_t>(w.sample_rate_hz * 2));
    put_u16(out, 2);
    put_u16(out, 16);
    out += "data";
    put_u32(out, data_len);
    for (double s : w.samples) {
        // Quantize with the same 1/32768 step the reader uses, clamped to the
        // representable range, so a write/read cycle stays within half a step.
        long q = std::lround(s * 32768.0);
        if (q < -32768) q = -32768;
        if (q > 32767) q = 32767;
        auto v = static_cast<std::int16_t>(q);
        out.push_back(static_cast<char>(v & 0xff));
        out.push_back(static_cast<char>((v >> 8) & 0xff));
    }
    write_file_atomic(path, out);
}

}  // namespace apa::dsp
