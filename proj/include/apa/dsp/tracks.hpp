#pragma once

// Frame-level feature tracks (RMS energy, F0) and the seven-statistic
// aggregation used for per-phoneme prosodic vectors.
//
// Framing convention: frame i covers samples [i*hop, i*hop + frame_length),
// so every frame lies fully inside the signal and the track has
// 1 + floor((n_samples - frame_length) / hop_length) frames. A signal shorter
// than one frame yields a single zero-padded frame. A frame is assigned to a
// time span through its center time (i*hop + frame_length/2) / sample_rate.

#include <array>
#include <cstddef>
#include <vector>

#include "apa/dsp/waveform.hpp"

namespace apa::dsp {

struct FrameTrack {
    std::vector<double> values;  // F0 in Hz with 0 = unvoiced, or linear RMS
    int frame_length = 0;        // samples
    int hop_length = 0;          // samples
    int sample_rate_hz = 0;

    std::size_t size() const { return values.size(); }
    double center_time(std::size_t frame) const {
        return (static_cast<double>(frame) * hop_length + 0.5 * frame_length) /
               sample_rate_hz;
    }
};

struct StatVector7 {
    double mean = 0, std = 0, median = 0, mad = 0, max = 0, min = 0, sum = 0;

    std::array<double, 7> to_array() const { return {mean, std, median, mad, max, min, sum}; }
};

// Seven statistics of a value list. std and mad use population definitions
// (divide by n; mad = median(|x - median(x)|)). Empty input yields all zeros.
StatVector7 stats7(const std::vector<double>& values);

struct DspConfig {
    int frame_length = 2048;
    int hop_length = 512;
    double fmin_hz = 65.0;
    double fmax_hz = 500.0;
    double yin_threshold = 0.1;
};

// Root-mean-square amplitude per frame.
FrameTrack rms_track(const Waveform& w, int frame_length, int hop_length);

// YIN-core F0 estimator: difference function, cumulative mean normalization,
// absolute threshold, parabolic interpolation. No HMM smoothing. Unvoiced
// frames (no candidate under the threshold, or an estimate outside
// [fmin, fmax]) carry 0.
FrameTrack f0_track(const Waveform& w, double fmin_hz, double fmax_hz,
                    int frame_length, int hop_length,
                    double threshold = 0.1);

enum class ZeroPolicy {
    Include,       // RMS: unvoiced zeros are data
    ExcludeZeros,  // F0: zeros mark unvoiced frames and are skipped
};

// Statistics over the frames whose centers fall in [start_s, end_s). Throws
// if the span maps to no frame or lies outside the track extent. With
// ExcludeZeros, a span whose frames are all zero yields an all-zero vector.
StatVector7 aggregate_stats(const FrameTrack& track, double start_s, double end_s,
                            ZeroPolicy policy = ZeroPolicy::Include);

}  // namespace apa::dsp
