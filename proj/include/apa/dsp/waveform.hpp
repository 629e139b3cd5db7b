#pragma once

// Waveform container and RIFF PCM WAV ingest. 16-bit mono (stereo downmixed
// by channel average); no resampling, a mismatched rate is the caller's error
// to raise.

#include <cstdint>
#include <string>
#include <vector>

namespace apa::dsp {

struct Waveform {
    std::vector<double> samples;  // in [-1, 1]
    int sample_rate_hz = 0;

    double duration_s() const {
        return sample_rate_hz > 0
                   ? static_cast<double>(samples.size()) / sample_rate_hz
                   : 0.0;
    }
};

// Throws apa::Error on malformed RIFF, non-PCM data, or bit depths other
// than 16.
Waveform read_wav(const std::string& path);

// 16-bit PCM mono writer (used by the synthetic-corpus generator).
void write_wav(const std::string& path, const Waveform& w);

}  // namespace apa::dsp
