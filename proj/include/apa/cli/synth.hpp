#pragma once

// Deterministic synthetic speech corpus with known answers. Audio is built
// trait-consistently — vowels are harmonic tones at controlled F0, consonants
// are noise bursts with per-symbol amplitude — so alignments are exact by
// construction and gold scores follow documented generative rules. This gives
// end-to-end overfit, recovery, and transfer experiments a planted signal to
// find.

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "apa/core/types.hpp"
#include "apa/dsp/waveform.hpp"

namespace apa::cli {

// Per-utterance latent variables and realized values, exposed so tests can
// verify recovery of the planted signal.
struct PlantedTruth {
    double proficiency = 0;     // drives mispronunciation probability
    double fluency_latent = 0;  // drives long-pause probability
    double pitch_dynamics = 0;  // F0 alternation depth; equals gold utt_prosodic
    double base_f0_hz = 0;
    std::vector<std::string> intended_words;  // before word drops
    int long_silences = 0;
    std::vector<double> vowel_f0_hz;  // realized per-vowel-slot F0, utterance order
};

struct SynthUtterance {
    core::UtteranceRecord record;  // canonical phone labels, gold scores attached
    dsp::Waveform audio;
    PlantedTruth truth;
};

// Fixed lexicon of invented words: (text, ARPAbet pronunciation). Stable
// across corpora so word-embedding hashes transfer between splits.
const std::vector<std::pair<std::string, std::vector<std::string>>>& synth_lexicon();

// Tone/burst parameter tables (exposed for recovery tests).
double vowel_f0_multiplier(const std::string& vowel);
double consonant_amplitude(const std::string& consonant);

// One utterance, reproducible from (corpus seed, index) alone.
SynthUtterance synth_utterance(std::uint64_t corpus_seed, int index,
                               int sample_rate_hz = 16000);

std::vector<SynthUtterance> synth_corpus(int n, std::uint64_t seed,
                                         int sample_rate_hz = 16000);

// Human-readable statement of the generative rules (embedded in planted.json).
std::string planted_rules_doc();

// JSON sidecar: the rules plus every utterance's latents and realized values.
std::string planted_to_json(const std::vector<SynthUtterance>& corpus);

}  // namespace apa::cli
