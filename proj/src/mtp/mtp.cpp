#include "apa/mtp/mtp.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <sstream>

#include "apa/nn/optim.hpp"
#include "apa/phonetics/phonetics.hpp"

namespace apa::mtp {

namespace ph = apa::phonetics;

// ----------------------------------------------------------------- config --

void MtpConfig::validate() const {
    if (mask_rate < 0 || mask_rate > 1)
        throw Error("mtp config: mask_rate must be in [0, 1], got " + format_real(mask_rate));
    if (mask_token_frac < 0 || keep_frac < 0)
        throw Error("mtp config: mask_token_frac and keep_frac must be non-negative");
    if (std::abs(mask_token_frac + keep_frac - 1.0) > 1e-9)
        throw Error("mtp config: mask_token_frac + keep_frac must equal 1, got " +
                    format_real(mask_token_frac) + " + " + format_real(keep_frac));
    const std::array<std::pair<const char*, double>, 6> ws{
        {{"w_p", w_p}, {"w_v", w_v}, {"w_a", w_a}, {"w_d", w_d}, {"w_f", w_f}, {"w_r", w_r}}};
    for (const auto& [name, w] : ws)
        if (w < 0)
            throw Error(std::string("mtp config: subtask weight ") + name +
                        " must be non-negative, got " + format_real(w));
    if (curriculum_unmasked_frac < 0 || curriculum_unmasked_frac > 1)
        throw Error("mtp config: curriculum_unmasked_frac must be in [0, 1], got " +
                    format_real(curriculum_unmasked_frac));
    if (epochs < 0) throw Error("mtp config: epochs must be non-negative");
    if (batch_size < 1) throw Error("mtp config: batch size must be at least 1");
    if (d_model < 1 || ff_dim < 1 || layers < 0)
        throw Error("mtp config: model dimensions must be positive");
    if (heads < 1 || d_model % heads != 0)
        throw Error("mtp config: d_model " + std::to_string(d_model) +
                    " not divisible by heads " + std::to_string(heads));
    if (dropout < 0 || dropout >= 1)
        throw Error("mtp config: dropout must be in [0, 1), got " + format_real(dropout));
    if (lr <= 0) throw Error("mtp config: learning rate must be positive");
}

MtpConfig ablation_stack(MtpConfig cfg, int stack_size) {
    if (stack_size < 1 || stack_size > 6)
        throw Error("ablation stack size must be in [1, 6], got " + std::to_string(stack_size));
    cfg.w_p = cfg.w_v = cfg.w_a = cfg.w_d = cfg.w_f = cfg.w_r = 0.0;
    // Cumulative order: phone, duration, vowel/consonant, trait, f0, rms.
    const std::array<double*, 6> slots{&cfg.w_p, &cfg.w_d, &cfg.w_v,
                                       &cfg.w_a, &cfg.w_f, &cfg.w_r};
    for (int i = 0; i < stack_size; ++i) *slots[i] = 1.0;
    return cfg;
}

// ---------------------------------------------------------------- masking --

MaskPlan plan_mask(int n, const MtpConfig& cfg, Rng& rng,
                   const std::vector<std::uint8_t>* pad) {
    if (n < 1) throw Error("plan_mask: sequence length must be at least 1");
    if (pad != nullptr && static_cast<int>(pad->size()) != n)
        throw Error("plan_mask: pad mask length " + std::to_string(pad->size()) +
                    " does not match sequence length " + std::to_string(n));
    MaskPlan plan;
    for (int i = 0; i < n; ++i) {
        if (pad != nullptr && (*pad)[i]) continue;
        if (!rng.bernoulli(cfg.mask_rate)) continue;
        plan.selected.push_back(i);
        plan.actions.push_back(rng.bernoulli(cfg.mask_token_frac) ? MaskAction::MaskToken
                                                                  : MaskAction::Keep);
    }
    return plan;
}

dsp::SequentialFeatures corrupt(const dsp::SequentialFeatures& features, const MaskPlan& plan) {
    const int n = static_cast<int>(features.size());
    if (plan.selected.size() != plan.actions.size())
        throw Error("corrupt: plan has " + std::to_string(plan.selected.size()) +
                    " positions but " + std::to_string(plan.actions.size()) + " actions");
    dsp::SequentialFeatures out = features;
    for (std::size_t k = 0; k < plan.selected.size(); ++k) {
        const int pos = plan.selected[k];
        if (pos < 0 || pos >= n)
            throw Error("corrupt: plan position " + std::to_string(pos) +
                        " outside sequence of length " + std::to_string(n));
        if (features.pad[pos]) continue;                    // padding is never altered
        if (plan.actions[k] != MaskAction::MaskToken) continue;  // keep: unchanged
        if (plan.view_p) out.phone_ids[pos] = ph::kMaskId;
        if (plan.view_v) out.vc_ids[pos] = static_cast<int>(ph::VcClass::Other);
        if (plan.view_a) out.trait_ids[pos] = static_cast<int>(ph::Trait::Other);
        if (plan.view_d) out.duration_classes[pos] = 0;     // masked-duration sentinel
        if (plan.view_f) out.f0_stats[pos].fill(0.0);
        if (plan.view_r) out.rms_stats[pos].fill(0.0);
    }
    return out;
}

// ------------------------------------------------------------- parameters --

namespace {

constexpr int kDurationLogits = ph::kDurationClassCount + 1;  // class 0 = sentinel

// Adds a non-trainable registry entry (z-normalization statistics). The
// gradient buffer is still allocated so optimizer sweeps that forget the
// frozen list stay well-defined (the gradient is always zero).
nn::TensorPtr<float> add_buffer(nn::Registry& registry, const std::string& name,
                                nn::Shape shape, float fill) {
    auto t = nn::make_tensor<float>(std::move(shape));
    for (float& v : t->data) v = fill;
    t->requires_grad = false;
    t->ensure_grad();
    if (!registry.emplace(name, t).second)
        throw Error("duplicate parameter name \"" + name + "\"");
    return t;
}

const nn::TensorPtr<float>& param(nn::Registry& registry, const std::string& name) {
    auto it = registry.find(name);
    if (it == registry.end()) throw Error("missing parameter \"" + name + "\"");
    return it->second;
}

struct NormStats {
    std::array<double, dsp::kStatDim> mean{};
    std::array<double, dsp::kStatDim> std{};
};

NormStats read_norm(nn::Registry& params, const std::string& prefix) {
    const auto& m = param(params, prefix + ".mean");
    const auto& s = param(params, prefix + ".std");
    if (m->numel() != dsp::kStatDim || s->numel() != dsp::kStatDim)
        throw Error("norm stats \"" + prefix + "\" have wrong size");
    NormStats out;
    for (int j = 0; j < dsp::kStatDim; ++j) {
        out.mean[j] = m->data[j];
        out.std[j] = s->data[j];
        if (out.std[j] <= 0)
            throw Error("norm stats \"" + prefix + "\" have non-positive std");
    }
    return out;
}

// Constant [n, 7] tensor of z-normalized statistic rows.
nn::TensorPtr<float> znormed(const std::vector<std::array<double, dsp::kStatDim>>& rows,
                             const NormStats& ns) {
    const int n = static_cast<int>(rows.size());
    auto t = nn::make_tensor<float>({n, dsp::kStatDim});
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < dsp::kStatDim; ++j)
            t->data[i * dsp::kStatDim + j] =
                static_cast<float>((rows[i][j] - ns.mean[j]) / ns.std[j]);
    return t;
}

// Standard sinusoidal positional encoding: even columns sin, odd columns cos,
// wavelengths geometric from 2π to 2π·10000.
nn::TensorPtr<float> sinusoidal_positions(int n, int d) {
    auto t = nn::make_tensor<float>({n, d});
    for (int pos = 0; pos < n; ++pos) {
        for (int j = 0; j < d; ++j) {
            const int pair = j / 2;
            const double angle =
                pos * std::exp(-std::log(10000.0) * (2.0 * pair) / d);
            t->data[pos * d + j] =
                static_cast<float>(j % 2 == 0 ? std::sin(angle) : std::cos(angle));
        }
    }
    return t;
}

}  // namespace

nn::Registry init_mtp_params(const MtpConfig& cfg, Rng& rng) {
    cfg.validate();
    nn::Registry r;
    const int d = cfg.d_model;
    nn::make_param(r, "embed.phone", {ph::kVocabSize, d}, rng);
    nn::make_param(r, "embed.vc", {ph::kVcCount, d}, rng);
    nn::make_param(r, "embed.trait", {ph::kTraitCount, d}, rng);
    nn::make_param(r, "embed.dur", {kDurationLogits, d}, rng);
    nn::make_param(r, "proj.f0.w", {dsp::kStatDim, d}, rng);
    nn::make_param(r, "proj.f0.b", {d}, rng);
    nn::make_param(r, "proj.rms.w", {dsp::kStatDim, d}, rng);
    nn::make_param(r, "proj.rms.b", {d}, rng);
    for (int l = 0; l < cfg.layers; ++l) {
        const std::string p = "enc." + std::to_string(l) + ".";
        nn::make_param_ones(r, p + "ln1.g", {d});
        nn::make_param(r, p + "ln1.b", {d}, rng);
        nn::make_param(r, p + "attn.wq", {d, d}, rng);
        nn::make_param(r, p + "attn.wk", {d, d}, rng);
        nn::make_param(r, p + "attn.wv", {d, d}, rng);
        nn::make_param(r, p + "attn.wo", {d, d}, rng);
        nn::make_param_ones(r, p + "ln2.g", {d});
        nn::make_param(r, p + "ln2.b", {d}, rng);
        nn::make_param(r, p + "ff.w1", {d, cfg.ff_dim}, rng);
        nn::make_param(r, p + "ff.b1", {cfg.ff_dim}, rng);
        nn::make_param(r, p + "ff.w2", {cfg.ff_dim, d}, rng);
        nn::make_param(r, p + "ff.b2", {d}, rng);
    }
    nn::make_param_ones(r, "enc.final_ln.g", {d});
    nn::make_param(r, "enc.final_ln.b", {d}, rng);
    nn::make_param(r, "head.phone.w", {d, ph::kVocabSize}, rng);
    nn::make_param(r, "head.phone.b", {ph::kVocabSize}, rng);
    nn::make_param(r, "head.vc.w", {d, ph::kVcCount}, rng);
    nn::make_param(r, "head.vc.b", {ph::kVcCount}, rng);
    nn::make_param(r, "head.trait.w", {d, ph::kTraitCount}, rng);
    nn::make_param(r, "head.trait.b", {ph::kTraitCount}, rng);
    nn::make_param(r, "head.dur.w", {d, kDurationLogits}, rng);
    nn::make_param(r, "head.dur.b", {kDurationLogits}, rng);
    nn::make_param(r, "head.f0.w", {d, dsp::kStatDim}, rng);
    nn::make_param(r, "head.f0.b", {dsp::kStatDim}, rng);
    nn::make_param(r, "head.rms.w", {d, dsp::kStatDim}, rng);
    nn::make_param(r, "head.rms.b", {dsp::kStatDim}, rng);
    add_buffer(r, "norm.f0.mean", {dsp::kStatDim}, 0.0f);
    add_buffer(r, "norm.f0.std", {dsp::kStatDim}, 1.0f);
    add_buffer(r, "norm.rms.mean", {dsp::kStatDim}, 0.0f);
    add_buffer(r, "norm.rms.std", {dsp::kStatDim}, 1.0f);
    return r;
}

void set_norm_stats(nn::Registry& params,
                    const std::vector<dsp::SequentialFeatures>& corpus) {
    auto compute = [&](bool f0, const std::string& prefix) {
        std::array<double, dsp::kStatDim> sum{}, sq{};
        long count = 0;
        for (const auto& u : corpus) {
            for (std::size_t i = 0; i < u.size(); ++i) {
                if (u.pad[i]) continue;
                const auto& row = f0 ? u.f0_stats[i] : u.rms_stats[i];
                for (int j = 0; j < dsp::kStatDim; ++j) {
                    sum[j] += row[j];
                    sq[j] += row[j] * row[j];
                }
                ++count;
            }
        }
        if (count == 0) throw Error("norm stats: corpus has no non-pad positions");
        const auto& m = param(params, prefix + ".mean");
        const auto& s = param(params, prefix + ".std");
        for (int j = 0; j < dsp::kStatDim; ++j) {
            const double mean = sum[j] / count;
            const double var = std::max(0.0, sq[j] / count - mean * mean);
            double sd = std::sqrt(var);
            if (sd < 1e-6) sd = 1.0;  // constant dimension: pass through centered
            m->data[j] = static_cast<float>(mean);
            s->data[j] = static_cast<float>(sd);
        }
    };
    compute(true, "norm.f0");
    compute(false, "norm.rms");
}

std::map<std::string, bool> frozen_param_names(const nn::Registry& params) {
    std::map<std::string, bool> frozen;
    for (const auto& [name, t] : params)
        if (name.rfind("norm.", 0) == 0) frozen[name] = true;
    return frozen;
}

// ---------------------------------------------------------------- encoder --

nn::TensorPtr<float> encode(const dsp::SequentialFeatures& features, nn::Registry& params,
                            const MtpConfig& cfg, Rng& rng, bool training) {
    const int n = static_cast<int>(features.size());
    if (n == 0) throw Error("encode: empty sequence");

    const NormStats nf = read_norm(params, "norm.f0");
    const NormStats nr = read_norm(params, "norm.rms");

    using nn::add;
    auto x = add(nn::embedding_lookup(param(params, "embed.phone"), features.phone_ids),
                 nn::embedding_lookup(param(params, "embed.vc"), features.vc_ids));
    x = add(x, nn::embedding_lookup(param(params, "embed.trait"), features.trait_ids));
    x = add(x, nn::embedding_lookup(param(params, "embed.dur"), features.duration_classes));
    x = add(x, nn::linear(znormed(features.f0_stats, nf), param(params, "proj.f0.w"),
                          param(params, "proj.f0.b")));
    x = add(x, nn::linear(znormed(features.rms_stats, nr), param(params, "proj.rms.w"),
                          param(params, "proj.rms.b")));
    x = add(x, sinusoidal_positions(n, cfg.d_model));

    const bool any_pad =
        std::any_of(features.pad.begin(), features.pad.end(), [](std::uint8_t p) { return p; });
    const std::vector<std::uint8_t>* key_mask = any_pad ? &features.pad : nullptr;

    for (int l = 0; l < cfg.layers; ++l) {
        const std::string p = "enc." + std::to_string(l) + ".";
        auto h1 = nn::layer_norm(x, param(params, p + "ln1.g"), param(params, p + "ln1.b"));
        auto attn = nn::multi_head_attention(
            h1, h1, h1, param(params, p + "attn.wq"), param(params, p + "attn.wk"),
            param(params, p + "attn.wv"), param(params, p + "attn.wo"), cfg.heads, key_mask);
        x = add(x, nn::dropout(attn, cfg.dropout, rng, training));
        auto h2 = nn::layer_norm(x, param(params, p + "ln2.g"), param(params, p + "ln2.b"));
        auto ff = nn::linear(
            nn::gelu(nn::linear(h2, param(params, p + "ff.w1"), param(params, p + "ff.b1"))),
            param(params, p + "ff.w2"), param(params, p + "ff.b2"));
        x = add(x, nn::dropout(ff, cfg.dropout, rng, training));
    }
    return nn::layer_norm(x, param(params, "enc.final_ln.g"), param(params, "enc.final_ln.b"));
}

// ------------------------------------------------------------------- loss --

MtpLossResult mtp_loss(const nn::TensorPtr<float>& h,
                       const dsp::SequentialFeatures& targets, const MaskPlan* plan,
                       nn::Registry& params, const MtpConfig& cfg) {
    if (!cfg.any_weight()) throw Error("mtp_loss: all subtask weights are zero");
    const int n = static_cast<int>(targets.size());
    if (h->rows() != n)
        throw Error("mtp_loss: encoder rows " + std::to_string(h->rows()) +
                    " do not match target length " + std::to_string(n));

    std::vector<std::uint8_t> include(n, 0);
    if (plan != nullptr) {
        for (const int pos : plan->selected) {
            if (pos < 0 || pos >= n)
                throw Error("mtp_loss: plan position " + std::to_string(pos) +
                            " outside sequence of length " + std::to_string(n));
            if (!targets.pad[pos]) include[pos] = 1;
        }
    } else {
        for (int i = 0; i < n; ++i) include[i] = targets.pad[i] ? 0 : 1;
    }
    int supervised = 0;
    for (int i = 0; i < n; ++i) {
        if (!include[i]) continue;
        ++supervised;
        if (targets.duration_classes[i] < 1 ||
            targets.duration_classes[i] > ph::kDurationClassCount)
            throw Error("mtp_loss: duration class " +
                        std::to_string(targets.duration_classes[i]) + " at position " +
                        std::to_string(i) + " is not a valid target (must be 1.." +
                        std::to_string(ph::kDurationClassCount) + ")");
    }
    if (supervised == 0) throw Error("mtp_loss: no supervised positions");

    const NormStats nf = read_norm(params, "norm.f0");
    const NormStats nr = read_norm(params, "norm.rms");

    MtpLossResult out;
    auto term = [&](const nn::TensorPtr<float>& loss, double w, double& slot) {
        slot = loss->value();
        if (w <= 0) return;
        auto scaled = w == 1.0 ? loss : nn::scale(loss, w);
        out.total = out.total ? nn::add(out.total, scaled) : scaled;
    };

    term(nn::cross_entropy(
             nn::linear(h, param(params, "head.phone.w"), param(params, "head.phone.b")),
             targets.phone_ids, &include),
         cfg.w_p, out.values.p);
    term(nn::cross_entropy(
             nn::linear(h, param(params, "head.vc.w"), param(params, "head.vc.b")),
             targets.vc_ids, &include),
         cfg.w_v, out.values.v);
    term(nn::cross_entropy(
             nn::linear(h, param(params, "head.trait.w"), param(params, "head.trait.b")),
             targets.trait_ids, &include),
         cfg.w_a, out.values.a);
    term(nn::cross_entropy(
             nn::linear(h, param(params, "head.dur.w"), param(params, "head.dur.b")),
             targets.duration_classes, &include),
         cfg.w_d, out.values.d);
    term(nn::mse(nn::linear(h, param(params, "head.f0.w"), param(params, "head.f0.b")),
                 znormed(targets.f0_stats, nf), &include),
         cfg.w_f, out.values.f);
    term(nn::mse(nn::linear(h, param(params, "head.rms.w"), param(params, "head.rms.b")),
                 znormed(targets.rms_stats, nr), &include),
         cfg.w_r, out.values.r);

    out.values.total = out.total->value();
    return out;
}

// --------------------------------------------------------------- training --

PretrainResult pretrain(const std::vector<dsp::SequentialFeatures>& corpus,
                        const MtpConfig& cfg) {
    cfg.validate();
    if (!cfg.any_weight()) throw Error("pretrain: all subtask weights are zero");
    if (corpus.empty()) throw Error("pretrain: empty corpus");
    const bool all_empty = std::all_of(corpus.begin(), corpus.end(),
                                       [](const auto& u) { return u.empty(); });
    if (all_empty) throw Error("pretrain: corpus has no phones");

    Rng rng(cfg.seed);
    PretrainResult result;
    result.params = init_mtp_params(cfg, rng);
    set_norm_stats(result.params, corpus);
    const auto frozen = frozen_param_names(result.params);
    nn::Adam opt(cfg.lr);

    const int teacher_epochs =
        static_cast<int>(std::llround(cfg.curriculum_unmasked_frac * cfg.epochs));
    std::vector<int> order(corpus.size());
    std::iota(order.begin(), order.end(), 0);

    struct Item {
        int idx = 0;
        MaskPlan plan;
        bool use_plan = false;
    };

    result.log.reserve(cfg.epochs);
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        const bool teacher = epoch <= teacher_epochs;
        rng.shuffle(order);
        SubtaskLosses sum;
        long counted = 0;
        for (std::size_t start = 0; start < order.size();
             start += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t stop =
                std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
            std::vector<Item> items;
            for (std::size_t i = start; i < stop; ++i) {
                const auto& f = corpus[order[i]];
                if (f.empty()) continue;
                Item it;
                it.idx = order[i];
                if (!teacher) {
                    it.plan = plan_mask(static_cast<int>(f.size()), cfg, rng, &f.pad);
                    if (it.plan.selected.empty()) continue;  // nothing to supervise
                    it.use_plan = true;
                }
                items.push_back(std::move(it));
            }
            if (items.empty()) continue;

            nn::zero_grads(result.params);
            const double inv = 1.0 / static_cast<double>(items.size());
            for (const Item& it : items) {
                const auto& f = corpus[it.idx];
                const dsp::SequentialFeatures input = it.use_plan ? corrupt(f, it.plan) : f;
                auto h = encode(input, result.params, cfg, rng, /*training=*/true);
                auto loss =
                    mtp_loss(h, f, it.use_plan ? &it.plan : nullptr, result.params, cfg);
                nn::backward(nn::scale(loss.total, inv));
                sum.p += loss.values.p;
                sum.v += loss.values.v;
                sum.a += loss.values.a;
                sum.d += loss.values.d;
                sum.f += loss.values.f;
                sum.r += loss.values.r;
                sum.total += loss.values.total;
                ++counted;
            }
            opt.step(result.params, &frozen);
        }
        EpochLosses row;
        row.epoch = epoch;
        row.teacher_forcing = teacher;
        if (counted > 0) {
            row.mean.p = sum.p / counted;
            row.mean.v = sum.v / counted;
            row.mean.a = sum.a / counted;
            row.mean.d = sum.d / counted;
            row.mean.f = sum.f / counted;
            row.mean.r = sum.r / counted;
            row.mean.total = sum.total / counted;
        }
        result.log.push_back(row);
    }
    return result;
}

std::string training_log_csv(const std::vector<EpochLosses>& log) {
    std::ostringstream out;
    out << "epoch,stage,loss_p,loss_v,loss_a,loss_d,loss_f,loss_r,total\n";
    for (const EpochLosses& e : log) {
        out << e.epoch << ',' << (e.teacher_forcing ? "teacher" : "masked") << ','
            << format_real(e.mean.p) << ',' << format_real(e.mean.v) << ','
            << format_real(e.mean.a) << ',' << format_real(e.mean.d) << ','
            << format_real(e.mean.f) << ',' << format_real(e.mean.r) << ','
            << format_real(e.mean.total) << '\n';
    }
    return out.str();
}

}  // namespace apa::mtp
