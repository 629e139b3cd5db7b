#pragma once

// Hierarchical multi-granularity pronunciation scorer. A shared phoneme
// encoder feeds three tiers of regression heads:
//   phone  — per-position linear head on the encoder output,
//   word   — encoder states mean-pooled per word, concatenated with a
//            hash-bucketed character-n-gram word embedding,
//   utt    — mean of the word vectors.
// Every head input carries one extra slot of `hcf_projection_dim` columns.
// Depending on the fusion mode, the slot holds a linear projection of the
// handcrafted-feature vector or zeros, so parameter shapes are identical
// across modes and fusion can be toggled without re-architecting.
//
// Training minimizes the mean of the nine per-head MSEs. Evaluation pools
// predictions corpus-wide (sorted by utterance id), reports PCC per aspect
// plus phone MSE, and aggregates mean/std across training seeds.

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "apa/core/types.hpp"
#include "apa/dsp/sequential.hpp"
#include "apa/hcf/hcf.hpp"
#include "apa/mtp/mtp.hpp"
#include "apa/nn/registry.hpp"

namespace apa::scorer {

// ------------------------------------------------------------- config ----

enum class FusionMode { None, AllHeads, PhoneOnly, WordOnly, UttOnly };

FusionMode fusion_mode_from_string(const std::string& s);
std::string to_string(FusionMode mode);

struct ScorerConfig {
    mtp::MtpConfig encoder;  // shared encoder architecture (+ its training knobs unused here)

    FusionMode fusion_mode = FusionMode::None;
    // Handcrafted features consumed by the projection, in column order.
    // Must be non-empty whenever fusion_mode != None.
    std::vector<std::string> hcf_features;
    int hcf_projection_dim = 32;

    int word_dim = 32;        // word embedding width
    int word_buckets = 2048;  // hash buckets for character n-grams
    int head_width = 32;      // hidden width of each regression head

    int epochs = 200;
    int batch_size = 8;
    double lr = 1e-3;
    std::vector<std::uint64_t> seeds = {11, 12, 13, 14, 15};

    void validate() const;
};

// One training/evaluation unit: the utterance record (word structure and
// gold scores), its per-phone feature rows, and its handcrafted features
// (may be empty when fusion_mode is None).
struct ScorerExample {
    core::UtteranceRecord record;
    dsp::SequentialFeatures seq;
    hcf::HcfVector hcf;
};

// ------------------------------------------------------- word embedding --

// Character n-gram bucket ids for one word: the word is lowercased, wrapped
// in boundary markers, split into overlapping trigrams, and each trigram is
// FNV-1a-hashed into [0, buckets). Deterministic; preserves duplicates.
std::vector<int> word_ngram_buckets(const std::string& word, int buckets);

// -------------------------------------------------------------- forward --

// Attention pooling of k token embeddings into one row. Scores are dot
// products with the learned query; the softmax weights are floored at 0.01
// and renormalized ("clipped softmax"), keeping every token's contribution
// strictly positive.
nn::TensorPtr<float> attention_pool(const nn::TensorPtr<float>& tokens,
                                    const nn::TensorPtr<float>& query);

// Trainable embedding of one word: n-gram bucket lookups pooled by
// attention_pool with the dedicated word-pooling query.
nn::TensorPtr<float> word_embed(const std::string& word, nn::Registry& params,
                                const ScorerConfig& cfg);

// Fresh parameter set: encoder weights (shared layout with pretraining,
// pretraining-only heads dropped) plus all scorer parameters under the
// "score." prefix. Normalization buffers start at identity.
nn::Registry init_scorer_params(const ScorerConfig& cfg, Rng& rng);

// Copies every non-"score." parameter (encoder weights and normalization
// buffers) from a pretraining checkpoint into `params`. Missing names or
// shape mismatches throw.
void apply_pretrained(nn::Registry& params, const nn::Registry& pretrained);

// Raw (unclamped) head outputs for one utterance.
struct ScorerOutputs {
    nn::TensorPtr<float> phone_accuracy;                      // [phones, 1]
    nn::TensorPtr<float> word_accuracy, word_stress, word_total;  // [words, 1]
    nn::TensorPtr<float> utt_accuracy, utt_completeness, utt_fluency, utt_prosodic,
        utt_total;  // [1, 1]
};

ScorerOutputs score_forward(const ScorerExample& ex, nn::Registry& params,
                            const ScorerConfig& cfg, Rng& rng, bool training);

// Evaluation-mode scoring: forward pass with outputs clamped to [0, 1],
// shaped as a ScoreVector on the normalized scale.
core::ScoreVector score(const ScorerExample& ex, nn::Registry& params,
                        const ScorerConfig& cfg);

// ------------------------------------------------------------- training --

inline constexpr int kHeadCount = 9;

// Canonical head order used by every per-head array in this module.
const std::array<std::string, kHeadCount>& head_names();

struct ScorerEpoch {
    int epoch = 0;  // 1-based
    double total = 0;
    std::array<double, kHeadCount> heads{};
};

struct ScorerTrainResult {
    nn::Registry params;
    std::vector<ScorerEpoch> log;
};

// Trains the scorer on `corpus` from scratch (or from `pretrained` encoder
// weights). Normalization buffers are always refit on the training corpus.
ScorerTrainResult train_scorer(const std::vector<ScorerExample>& corpus,
                               const ScorerConfig& cfg, std::uint64_t seed,
                               const nn::Registry* pretrained = nullptr);

// Clamped evaluation-mode per-head MSE over a corpus, in head_names() order.
std::array<double, kHeadCount> per_head_mse(const std::vector<ScorerExample>& corpus,
                                            nn::Registry& params, const ScorerConfig& cfg);

std::string training_log_csv(const std::vector<ScorerEpoch>& log);

// -------------------------------------------------------------- metrics --

// Pearson correlation; throws on length mismatch, fewer than two points, or
// a constant side.
double pcc(const std::vector<double>& x, const std::vector<double>& y);
double mse(const std::vector<double>& x, const std::vector<double>& y);

// ----------------------------------------------------------- evaluation --

struct EvalReport {
    std::vector<std::uint64_t> seeds;
    std::vector<std::string> metric_names;            // fixed reporting order
    std::map<std::string, std::vector<double>> per_seed;  // metric -> one value per seed
    std::map<std::string, double> mean;
    std::map<std::string, double> stddev;  // population std across seeds
};

// Metric names in reporting order: phone.mse, phone.pcc, the three word
// aspect PCCs plus word.avg_pcc, the five utterance aspect PCCs plus
// utt.avg_pcc.
const std::vector<std::string>& eval_metric_names();

// Scores the corpus with each seed's parameters and aggregates. Phones and
// words are pooled corpus-wide (sorted by utterance id); utterance aspects
// correlate per utterance; Avg PCC is the unweighted mean of the aspect
// PCCs at that granularity.
EvalReport evaluate(const std::vector<ScorerExample>& corpus,
                    std::vector<nn::Registry>& params_per_seed, const ScorerConfig& cfg);

std::string eval_report_to_json(const EvalReport& report);
EvalReport eval_report_from_json(const std::string& content, const std::string& origin);
std::string eval_report_to_csv(const EvalReport& report);

}  // namespace apa::scorer
