#include "apa/cli/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include <json.hpp>

#include "apa/common.hpp"
#include "apa/phonetics/phonetics.hpp"

namespace apa::cli {

using json = nlohmann::json;
namespace ph = apa::phonetics;

namespace {

// Generation constants. Times are chosen so every phone span contains at
// least one analysis-frame center at the default 2048/512 @ 16 kHz framing
// (centers every 32 ms starting at 64 ms) and so the YIN range [65, 500] Hz
// always covers the planted F0.
constexpr double kLeadSilenceS = 0.20;
constexpr double kTrailSilenceS = 0.25;
constexpr double kShortGapS = 0.0625;  // below the 0.1 s silence threshold
constexpr double kRampS = 0.005;
constexpr double kVowelAmp = 0.22;
constexpr double kPitchAltDepth = 0.12;

const std::vector<std::string>& vowels() {
    static const std::vector<std::string> v = {"AA", "IY", "UW", "EH", "OW"};
    return v;
}

const std::vector<std::string>& consonants() {
    static const std::vector<std::string> c = {"T", "K", "S", "M", "N", "L", "P", "D"};
    return c;
}

}  // namespace

const std::vector<std::pair<std::string, std::vector<std::string>>>& synth_lexicon() {
    static const std::vector<std::pair<std::string, std::vector<std::string>>> lex = {
        {"ta", {"T", "AA"}},          {"kee", {"K", "IY"}},
        {"soo", {"S", "UW"}},         {"meh", {"M", "EH"}},
        {"no", {"N", "OW"}},          {"la", {"L", "AA"}},
        {"pado", {"P", "AA", "D", "OW"}}, {"tek", {"T", "EH", "K"}},
        {"seem", {"S", "IY", "M"}},   {"nolu", {"N", "OW", "L", "UW"}},
        {"mata", {"M", "AA", "T", "AA"}}, {"kelo", {"K", "EH", "L", "OW"}},
        {"doopy", {"D", "UW", "P", "IY"}}, {"tasu", {"T", "AA", "S", "UW"}},
        {"kona", {"K", "OW", "N", "AA"}}, {"leem", {"L", "IY", "M"}},
        {"pode", {"P", "OW", "D", "EH"}}, {"nuka", {"N", "UW", "K", "AA"}},
        {"selo", {"S", "EH", "L", "OW"}}, {"deema", {"D", "IY", "M", "AA"}},
        {"toka", {"T", "OW", "K", "AA"}}, {"masee", {"M", "AA", "S", "IY"}},
        {"lupo", {"L", "UW", "P", "OW"}}, {"neta", {"N", "EH", "T", "AA"}},
    };
    return lex;
}

double vowel_f0_multiplier(const std::string& vowel) {
    const auto& v = vowels();
    for (std::size_t i = 0; i < v.size(); ++i)
        if (v[i] == vowel) return 1.0 + 0.18 * static_cast<double>(i);
    throw Error("synth: \"" + vowel + "\" is not a synthesizable vowel");
}

double consonant_amplitude(const std::string& consonant) {
    const auto& c = consonants();
    for (std::size_t i = 0; i < c.size(); ++i)
        if (c[i] == consonant) return 0.05 + 0.04 * static_cast<double>(i);
    throw Error("synth: \"" + consonant + "\" is not a synthesizable consonant");
}

namespace {

std::uint64_t mix_seed(std::uint64_t corpus_seed, int index) {
    // SplitMix64 finalizer over the combined value: utterance streams are
    // independent and reproducible from (seed, index) alone.
    std::uint64_t z = corpus_seed + 0x9E3779B97F4A7C15ull *
                                        (static_cast<std::uint64_t>(index) + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

bool is_vowel(const std::string& phone) {
    return std::find(vowels().begin(), vowels().end(), phone) != vowels().end();
}

// Swap to a different symbol of the same vowel/consonant class.
std::string mispronounce(const std::string& canonical, Rng& rng) {
    const auto& pool = is_vowel(canonical) ? vowels() : consonants();
    std::vector<std::string> others;
    for (const auto& p : pool)
        if (p != canonical) others.push_back(p);
    return others[rng.below(others.size())];
}

void render_tone(std::vector<double>& samples, int sr, double start_s, double dur_s,
                 double f0) {
    const auto begin = static_cast<std::size_t>(std::llround(start_s * sr));
    const auto count = static_cast<std::size_t>(std::llround(dur_s * sr));
    const auto ramp = static_cast<std::size_t>(std::llround(kRampS * sr));
    for (std::size_t i = 0; i < count && begin + i < samples.size(); ++i) {
        const double t = static_cast<double>(i) / sr;
        double v = std::sin(2 * kPi * f0 * t) + 0.3 * std::sin(4 * kPi * f0 * t) +
                   0.15 * std::sin(6 * kPi * f0 * t);
        double g = 1.0;
        if (i < ramp) g = 0.5 - 0.5 * std::cos(kPi * static_cast<double>(i) / ramp);
        if (count - 1 - i < ramp)
            g = std::min(g, 0.5 - 0.5 * std::cos(kPi * static_cast<double>(count - 1 - i) /
                                                 ramp));
        samples[begin + i] += kVowelAmp * g * v;
    }
}

void render_burst(std::vector<double>& samples, int sr, double start_s, double dur_s,
                  double amp, Rng& rng) {
    const auto begin = static_cast<std::size_t>(std::llround(start_s * sr));
    const auto count = static_cast<std::size_t>(std::llround(dur_s * sr));
    const auto ramp = static_cast<std::size_t>(std::llround(kRampS * sr));
    for (std::size_t i = 0; i < count && begin + i < samples.size(); ++i) {
        double g = 1.0;
        if (i < ramp) g = 0.5 - 0.5 * std::cos(kPi * static_cast<double>(i) / ramp);
        if (count - 1 - i < ramp)
            g = std::min(g, 0.5 - 0.5 * std::cos(kPi * static_cast<double>(count - 1 - i) /
                                                 ramp));
        samples[begin + i] += amp * g * rng.uniform(-1.0, 1.0);
    }
}

}  // namespace

SynthUtterance synth_utterance(std::uint64_t corpus_seed, int index, int sample_rate_hz) {
    Rng rng(mix_seed(corpus_seed, index));
    SynthUtterance u;
    auto& truth = u.truth;
    truth.proficiency = rng.uniform(0.35, 0.95);
    truth.fluency_latent = rng.uniform(0.0, 1.0);
    truth.pitch_dynamics = rng.uniform(0.0, 1.0);
    truth.base_f0_hz = rng.uniform(115.0, 210.0);

    const auto& lex = synth_lexicon();
    const int intended_count = 2 + static_cast<int>(rng.below(4));
    std::vector<std::size_t> intended;
    for (int w = 0; w < intended_count; ++w) intended.push_back(rng.below(lex.size()));
    for (std::size_t i : intended) truth.intended_words.push_back(lex[i].first);

    // Word drops: the first intended word is always spoken; later ones vanish
    // with probability rising as proficiency falls.
    std::vector<std::size_t> realized;
    for (std::size_t w = 0; w < intended.size(); ++w)
        if (w == 0 || !rng.bernoulli(0.35 * (1.0 - truth.proficiency)))
            realized.push_back(intended[w]);

    struct Slot {
        std::string canonical, spoken;
        double dur_s = 0, score = 0;
    };
    struct WordPlan {
        std::size_t lex_index = 0;
        std::vector<Slot> slots;
        double gap_after_s = 0;  // 0 for the last word
    };
    std::vector<WordPlan> plan;
    int long_count = 0;
    for (std::size_t w = 0; w < realized.size(); ++w) {
        WordPlan wp;
        wp.lex_index = realized[w];
        for (const auto& canonical : lex[realized[w]].second) {
            Slot s;
            s.canonical = canonical;
            const bool wrong = rng.bernoulli(0.6 * (1.0 - truth.proficiency));
            s.spoken = wrong ? mispronounce(canonical, rng) : canonical;
            s.score = wrong ? 0.15 + 0.2 * rng.uniform() : 0.92 + 0.08 * rng.uniform();
            s.dur_s = is_vowel(canonical) ? 0.18 + 0.04 * static_cast<double>(rng.below(4))
                                          : 0.08 + 0.02 * static_cast<double>(rng.below(4));
            wp.slots.push_back(s);
        }
        if (w + 1 < realized.size()) {
            if (rng.bernoulli(0.8 * (1.0 - truth.fluency_latent))) {
                wp.gap_after_s = 0.6 + 0.1 * static_cast<double>(rng.below(4));
                ++long_count;
            } else if (rng.bernoulli(0.3)) {
                // Audible pause, but below the long-silence threshold.
                wp.gap_after_s = 0.125 + 0.05 * static_cast<double>(rng.below(3));
            } else {
                wp.gap_after_s = kShortGapS;
            }
        }
        plan.push_back(std::move(wp));
    }
    truth.long_silences = long_count;

    // Timeline and audio. The audio renders the *spoken* phones; the record
    // carries the canonical labels at the same positions.
    double t = kLeadSilenceS;
    double end_of_speech = t;
    for (auto& wp : plan) {
        for (auto& s : wp.slots) t += s.dur_s;
        end_of_speech = t;
        t += wp.gap_after_s;
    }
    const double total_s = end_of_speech + kTrailSilenceS;
    u.audio.sample_rate_hz = sample_rate_hz;
    u.audio.samples.assign(
        static_cast<std::size_t>(std::llround(total_s * sample_rate_hz)), 0.0);

    core::ScoreVector gold;
    std::vector<std::string> hyp_phones;
    t = kLeadSilenceS;
    int vowel_slot = 0;
    for (auto& wp : plan) {
        core::WordSpan word;
        word.text = lex[wp.lex_index].first;
        word.start_s = t;
        double word_score_sum = 0, stress_sum = 0;
        int stress_n = 0;
        for (auto& s : wp.slots) {
            core::PhoneSpan span;
            span.label = s.canonical;
            span.start_s = t;
            t += s.dur_s;
            span.end_s = t;
            word.phones.push_back(span);
            hyp_phones.push_back(s.spoken);
            gold.phone_accuracy.push_back(s.score);
            word_score_sum += s.score;
            if (is_vowel(s.canonical)) {
                stress_sum += s.score;
                ++stress_n;
                const double alt = vowel_slot % 2 == 0 ? 1.0 : -1.0;
                const double f0 = truth.base_f0_hz * vowel_f0_multiplier(s.spoken) *
                                  (1.0 + kPitchAltDepth * truth.pitch_dynamics * alt);
                truth.vowel_f0_hz.push_back(f0);
                render_tone(u.audio.samples, sample_rate_hz, span.start_s, s.dur_s, f0);
                ++vowel_slot;
            } else {
                render_burst(u.audio.samples, sample_rate_hz, span.start_s, s.dur_s,
                             consonant_amplitude(s.spoken), rng);
            }
        }
        word.end_s = t;
        t += wp.gap_after_s;
        u.record.words.push_back(word);

        const double acc = word_score_sum / static_cast<double>(wp.slots.size());
        const double stress = stress_n ? stress_sum / stress_n : acc;
        gold.word_accuracy.push_back(acc);
        gold.word_stress.push_back(stress);
        gold.word_total.push_back((2.0 * acc + stress) / 3.0);
    }

    double acc_sum = 0;
    for (double s : gold.phone_accuracy) acc_sum += s;
    gold.utt_accuracy = acc_sum / static_cast<double>(gold.phone_accuracy.size());
    gold.utt_completeness =
        static_cast<double>(realized.size()) / static_cast<double>(intended.size());
    gold.utt_fluency = 1.0 - std::min(1.0, static_cast<double>(long_count) / 3.0);
    gold.utt_prosodic = truth.pitch_dynamics;
    gold.utt_total = (gold.utt_accuracy + gold.utt_completeness + gold.utt_fluency +
                      gold.utt_prosodic) /
                     4.0;

    char idbuf[32];
    std::snprintf(idbuf, sizeof(idbuf), "synth_%04d", index);
    u.record.id = idbuf;
    u.record.audio_path = "audio/" + std::string(idbuf) + ".wav";
    std::string text, hyp_text;
    for (std::size_t w = 0; w < intended.size(); ++w)
        text += (w ? " " : "") + lex[intended[w]].first;
    for (std::size_t w = 0; w < realized.size(); ++w)
        hyp_text += (w ? " " : "") + lex[realized[w]].first;
    u.record.text = text;
    u.record.hyp_text = hyp_text;
    u.record.hyp_phones = hyp_phones;
    u.record.scores = gold;
    return u;
}

std::vector<SynthUtterance> synth_corpus(int n, std::uint64_t seed, int sample_rate_hz) {
    if (n < 1) throw Error("synth_corpus: n must be >= 1");
    std::vector<SynthUtterance> corpus;
    corpus.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) corpus.push_back(synth_utterance(seed, i, sample_rate_hz));
    return corpus;
}

std::string planted_rules_doc() {
    return "Latents per utterance: proficiency q~U(0.35,0.95), fluency f~U(0,1), "
           "pitch dynamics d~U(0,1), base F0~U(115,210) Hz. Words drawn from the "
           "fixed lexicon; each non-first intended word is dropped with probability "
           "0.35*(1-q). Each phone is mispronounced (same-class swap) with "
           "probability 0.6*(1-q); its gold score is 0.92+0.08*U when correct, "
           "0.15+0.2*U when wrong. Vowels render as 3-harmonic tones at "
           "base*multiplier(vowel)*(1 +/- 0.12*d) with the sign alternating per "
           "vowel slot; consonants render as noise bursts with per-symbol "
           "amplitude. Inter-word gaps are long pauses of 0.6-0.9 s with "
           "probability 0.8*(1-f), otherwise sometimes mid pauses of "
           "0.125-0.225 s, otherwise 0.0625 s. Gold: phone scores as above; word "
           "accuracy = mean of its phone scores; word stress = mean over its "
           "vowel slots; word total = (2*accuracy+stress)/3; utt_accuracy = mean "
           "phone score; utt_completeness = spoken/intended word count; "
           "utt_fluency = 1 - min(1, long_pauses/3); utt_prosodic = d; utt_total "
           "= mean of the four aspects. The audio renders the spoken (possibly "
           "swapped) phones while the alignment keeps canonical labels, and "
           "hyp_phones records what was spoken.";
}

std::string planted_to_json(const std::vector<SynthUtterance>& corpus) {
    json j;
    j["rules"] = planted_rules_doc();
    json utts = json::array();
    for (const auto& u : corpus) {
        json e;
        e["id"] = u.record.id;
        e["proficiency"] = u.truth.proficiency;
        e["fluency_latent"] = u.truth.fluency_latent;
        e["pitch_dynamics"] = u.truth.pitch_dynamics;
        e["base_f0_hz"] = u.truth.base_f0_hz;
        e["intended_words"] = u.truth.intended_words;
        e["long_silences"] = u.truth.long_silences;
        e["vowel_f0_hz"] = u.truth.vowel_f0_hz;
        utts.push_back(e);
    }
    j["utterances"] = utts;
    return j.dump(2) + "\n";
}

}  // namespace apa::cli
