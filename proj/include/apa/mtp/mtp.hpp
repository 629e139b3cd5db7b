#pragma once

// Masked multi-task pretraining of the phoneme encoder: BERT-style masking
// over six parallel views (phone, vowel/consonant, articulation trait,
// duration class, F0 stats, RMS stats), a 3-layer pre-LN transformer encoder
// with summed view embeddings and sinusoidal positions, and a weighted
// multi-task reconstruction loss with a teacher-forcing-to-masking
// curriculum.

#include <cstdint>
#include <string>
#include <vector>

#include "apa/common.hpp"
#include "apa/dsp/sequential.hpp"
#include "apa/nn/ops.hpp"
#include "apa/nn/registry.hpp"

namespace apa::mtp {

struct MtpConfig {
    double mask_rate = 0.15;
    double mask_token_frac = 0.90;  // of selected positions: replace with mask token
    double keep_frac = 0.10;        // of selected positions: leave unchanged
    double w_p = 1.0, w_v = 1.0, w_a = 1.0, w_d = 1.0, w_f = 1.0, w_r = 1.0;
    double curriculum_unmasked_frac = 0.3;
    int epochs = 200;
    int batch_size = 8;
    std::uint64_t seed = 0;
    int d_model = 64;
    int heads = 4;
    int ff_dim = 256;
    int layers = 3;
    double dropout = 0.0;
    double lr = 1e-3;

    void validate() const;
    bool any_weight() const { return w_p + w_v + w_a + w_d + w_f + w_r > 0; }
};

// Cumulative subtask stacks: 1 = {S_P}, 2 = +S_D, 3 = +S_V, 4 = +S_A,
// 5 = +S_F, 6 = +S_R. Returns cfg with the stack's weights at 1, rest at 0.
MtpConfig ablation_stack(MtpConfig cfg, int stack_size);

enum class MaskAction { MaskToken, Keep };

struct MaskPlan {
    std::vector<int> selected;         // ascending positions
    std::vector<MaskAction> actions;   // parallel to selected
    // Per-view corruption toggles (a disabled view passes through unmasked).
    bool view_p = true, view_v = true, view_a = true, view_d = true,
         view_f = true, view_r = true;
};

// Independent Bernoulli(mask_rate) selection per non-pad position; selected
// positions become mask-token with probability mask_token_frac, otherwise
// keep. Deterministic given the RNG state.
MaskPlan plan_mask(int n, const MtpConfig& cfg, Rng& rng,
                   const std::vector<std::uint8_t>* pad = nullptr);

// Applies the plan: at mask-token positions, phone/vc/trait ids -> MASK/other,
// duration class -> 0 sentinel, f0/rms rows -> zeros (raw space). Keep
// positions and pad positions are never altered.
dsp::SequentialFeatures corrupt(const dsp::SequentialFeatures& features, const MaskPlan& plan);

// Parameter construction. Embedding tables for the categorical views, linear
// projections for the 7-dim stat views, transformer blocks, six prediction
// heads, and frozen z-normalization statistics under "norm.*".
nn::Registry init_mtp_params(const MtpConfig& cfg, Rng& rng);

// Computes per-dimension mean/std of the f0/rms stat views over all non-pad
// positions of the corpus and stores them as frozen registry entries.
void set_norm_stats(nn::Registry& params,
                    const std::vector<dsp::SequentialFeatures>& corpus);

// Names of registry entries that must not be touched by the optimizer.
std::map<std::string, bool> frozen_param_names(const nn::Registry& params);

// Encoder forward: summed view embeddings + sinusoidal positions, then
// `layers` pre-LN transformer blocks and a final layer norm. Returns H with
// one d_model-dim row per position.
nn::TensorPtr<float> encode(const dsp::SequentialFeatures& features, nn::Registry& params,
                            const MtpConfig& cfg, Rng& rng, bool training);

struct SubtaskLosses {
    double p = 0, v = 0, a = 0, d = 0, f = 0, r = 0;
    double total = 0;
};

struct MtpLossResult {
    nn::TensorPtr<float> total;  // differentiable weighted sum
    SubtaskLosses values;        // per-subtask raw values
};

// Weighted multi-task loss over H. With a plan, supervision covers the
// selected positions only; without one (teacher forcing), every non-pad
// position. Regression targets are z-normalized with the stored norm stats.
MtpLossResult mtp_loss(const nn::TensorPtr<float>& h,
                       const dsp::SequentialFeatures& targets, const MaskPlan* plan,
                       nn::Registry& params, const MtpConfig& cfg);

struct EpochLosses {
    int epoch = 0;  // 1-based
    bool teacher_forcing = false;
    SubtaskLosses mean;
};

struct PretrainResult {
    nn::Registry params;
    std::vector<EpochLosses> log;
};

// Full curriculum training loop. The first round(curriculum_unmasked_frac *
// epochs) epochs run uncorrupted with supervision at all non-pad positions;
// the rest use fresh mask plans per utterance per epoch.
PretrainResult pretrain(const std::vector<dsp::SequentialFeatures>& corpus,
                        const MtpConfig& cfg);

// CSV: epoch,stage,loss_p,loss_v,loss_a,loss_d,loss_f,loss_r,total
std::string training_log_csv(const std::vector<EpochLosses>& log);

}  // namespace apa::mtp
