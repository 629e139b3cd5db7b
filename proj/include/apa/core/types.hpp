#pragma once

// Domain types shared by every module: utterances, alignments, score vectors.
// All types are immutable after construction and safe to share across threads.

#include <optional>
#include <string>
#include <vector>

namespace apa::core {

struct PhoneSpan {
    std::string label;   // ARPAbet symbol, stress digits stripped
    double start_s = 0;
    double end_s = 0;
    double confidence = 1.0;  // in [0, 1]
};

struct WordSpan {
    std::string text;
    double start_s = 0;
    double end_s = 0;
    double confidence = 1.0;
    std::vector<PhoneSpan> phones;  // temporally ordered, nested in the word span
};

// Multi-granularity proficiency scores, normalized to [0, 1].
struct ScoreVector {
    std::vector<double> phone_accuracy;
    std::vector<double> word_accuracy;
    std::vector<double> word_stress;
    std::vector<double> word_total;
    double utt_accuracy = 0;
    double utt_completeness = 0;
    double utt_fluency = 0;
    double utt_prosodic = 0;
    double utt_total = 0;
};

struct UtteranceRecord {
    std::string id;
    std::string audio_path;
    std::string text;  // reference prompt
    std::optional<std::vector<std::string>> hyp_phones;  // ASR hypothesis for ER
    std::optional<std::string> hyp_text;
    std::vector<WordSpan> words;
    std::optional<ScoreVector> scores;

    std::size_t phone_count() const {
        std::size_t n = 0;
        for (const auto& w : words) n += w.phones.size();
        return n;
    }
};

// Raw corpus score scales, normalized away on ingest.
inline constexpr double kPhoneScoreScale = 2.0;
inline constexpr double kWordScoreScale = 10.0;
inline constexpr double kUttScoreScale = 10.0;

// Tolerance for aligner boundary inconsistencies (word/phone nesting,
// word overlap), seconds.
inline constexpr double kDefaultSlackSeconds = 0.020;

}  // namespace apa::core
