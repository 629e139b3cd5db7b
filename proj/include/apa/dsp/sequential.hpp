#pragma once

// Per-phoneme parallel feature views: phone id, vowel/consonant id,
// articulation-trait id, duration class, and the 7-dim F0/RMS statistic
// vectors. One row per phone span; the pad mask marks batching padding.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "apa/core/types.hpp"
#include "apa/dsp/tracks.hpp"
#include "apa/phonetics/phonetics.hpp"

namespace apa::dsp {

inline constexpr int kStatDim = 7;

struct SequentialFeatures {
    std::vector<int> phone_ids;
    std::vector<int> vc_ids;
    std::vector<int> trait_ids;
    std::vector<int> duration_classes;  // 1..100; 0 is the masked sentinel
    std::vector<std::array<double, kStatDim>> f0_stats;
    std::vector<std::array<double, kStatDim>> rms_stats;
    std::vector<std::uint8_t> pad;  // 1 = padding position

    std::size_t size() const { return phone_ids.size(); }
    bool empty() const { return phone_ids.empty(); }

    void push_pad() {
        phone_ids.push_back(phonetics::kPadId);
        vc_ids.push_back(static_cast<int>(phonetics::VcClass::Other));
        trait_ids.push_back(static_cast<int>(phonetics::Trait::Other));
        duration_classes.push_back(0);
        f0_stats.push_back({});
        rms_stats.push_back({});
        pad.push_back(1);
    }
};

// Utterance-level features bundled for dumping / training: the sequential
// views plus the raw frame tracks they were aggregated from.
struct UtteranceFeatures {
    std::string id;
    SequentialFeatures seq;
    FrameTrack f0;
    FrameTrack rms;
};

// Assembles one row per PhoneSpan of the (validated) record. Waveform must
// cover all spans.
SequentialFeatures build_sequential_features(
    const core::UtteranceRecord& r, const Waveform& w, const DspConfig& cfg,
    const phonetics::TraitTable& traits = phonetics::default_traits());

UtteranceFeatures extract_utterance_features(
    const core::UtteranceRecord& r, const Waveform& w, const DspConfig& cfg,
    const phonetics::TraitTable& traits = phonetics::default_traits());

// JSON feature-file round trip (`<id>.feat.json`).
std::string features_to_json(const UtteranceFeatures& f);
UtteranceFeatures features_from_json(const std::string& content, const std::string& origin);
UtteranceFeatures load_features(const std::string& path);

}  // namespace apa::dsp
