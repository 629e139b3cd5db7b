#include "apa/scorer/scorer.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "apa/nn/ops.hpp"
#include "apa/nn/optim.hpp"

namespace apa::scorer {

using json = nlohmann::json;

// --------------------------------------------------------------- config --

FusionMode fusion_mode_from_string(const std::string& s) {
    if (s == "none") return FusionMode::None;
    if (s == "all_heads") return FusionMode::AllHeads;
    if (s == "phone_only") return FusionMode::PhoneOnly;
    if (s == "word_only") return FusionMode::WordOnly;
    if (s == "utt_only") return FusionMode::UttOnly;
    throw Error("unknown fusion mode \"" + s +
                "\" (expected none, all_heads, phone_only, word_only, utt_only)");
}

std::string to_string(FusionMode mode) {
    switch (mode) {
        case FusionMode::None: return "none";
        case FusionMode::AllHeads: return "all_heads";
        case FusionMode::PhoneOnly: return "phone_only";
        case FusionMode::WordOnly: return "word_only";
        case FusionMode::UttOnly: return "utt_only";
    }
    throw Error("invalid fusion mode value");
}

void ScorerConfig::validate() const {
    encoder.validate();
    if (hcf_projection_dim <= 0) throw Error("scorer config: hcf_projection_dim must be > 0");
    if (word_dim <= 0) throw Error("scorer config: word_dim must be > 0");
    if (word_buckets <= 0) throw Error("scorer config: word_buckets must be > 0");
    if (head_width <= 0) throw Error("scorer config: head_width must be > 0");
    if (epochs < 1) throw Error("scorer config: epochs must be >= 1");
    if (batch_size < 1) throw Error("scorer config: batch_size must be >= 1");
    if (!(lr > 0)) throw Error("scorer config: lr must be > 0");
    if (seeds.empty()) throw Error("scorer config: seeds must be non-empty");
    if (fusion_mode != FusionMode::None && hcf_features.empty())
        throw Error("scorer config: fusion mode \"" + to_string(fusion_mode) +
                    "\" requires a non-empty hcf_features list");
    if (hcf_features.size() > 1) {
        auto sorted = hcf_features;
        std::sort(sorted.begin(), sorted.end());
        if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
            throw Error("scorer config: duplicate name in hcf_features");
    }
}

// ------------------------------------------------------------- helpers ---

namespace {

constexpr double kClipFloor = 0.01;

const nn::TensorPtr<float>& param(nn::Registry& registry, const std::string& name) {
    auto it = registry.find(name);
    if (it == registry.end()) throw Error("missing parameter \"" + name + "\"");
    return it->second;
}

// Non-trainable registry entry with an allocated (always-zero) gradient, so
// optimizer sweeps that ignore the frozen list stay well-defined.
void add_buffer(nn::Registry& registry, const std::string& name, nn::Shape shape, float fill) {
    auto t = nn::make_tensor<float>(std::move(shape));
    for (float& v : t->data) v = fill;
    t->requires_grad = false;
    t->ensure_grad();
    if (!registry.emplace(name, std::move(t)).second)
        throw Error("duplicate parameter name \"" + name + "\"");
}

const std::array<std::string, 5>& utt_aspects() {
    static const std::array<std::string, 5> kAspects = {
        "accuracy", "completeness", "fluency", "prosodic", "total"};
    return kAspects;
}

std::vector<std::vector<int>> word_segments(const core::UtteranceRecord& r) {
    std::vector<std::vector<int>> segments;
    int pos = 0;
    for (const auto& w : r.words) {
        std::vector<int> seg(w.phones.size());
        std::iota(seg.begin(), seg.end(), pos);
        pos += static_cast<int>(w.phones.size());
        segments.push_back(std::move(seg));
    }
    return segments;
}

void require_example(const ScorerExample& ex, bool need_scores) {
    const auto& r = ex.record;
    if (r.words.empty()) throw Error("score: utterance \"" + r.id + "\" has no words");
    for (const auto& w : r.words)
        if (w.phones.empty())
            throw Error("score: word \"" + w.text + "\" in utterance \"" + r.id +
                        "\" has no phones");
    const std::size_t phones = r.phone_count();
    if (ex.seq.size() != phones)
        throw Error("score: utterance \"" + r.id + "\" has " + std::to_string(phones) +
                    " phones but " + std::to_string(ex.seq.size()) + " feature rows");
    for (std::uint8_t p : ex.seq.pad)
        if (p) throw Error("score: padded feature rows are not accepted (utterance \"" +
                           r.id + "\")");
    if (!need_scores) return;
    if (!r.scores) throw Error("train: utterance \"" + r.id + "\" has no gold scores");
    const auto& s = *r.scores;
    if (s.phone_accuracy.size() != phones || s.word_accuracy.size() != r.words.size() ||
        s.word_stress.size() != r.words.size() || s.word_total.size() != r.words.size())
        throw Error("train: gold score lengths do not match utterance \"" + r.id + "\"");
    auto in01 = [](double v) { return v >= 0.0 && v <= 1.0; };
    bool ok = in01(s.utt_accuracy) && in01(s.utt_completeness) && in01(s.utt_fluency) &&
              in01(s.utt_prosodic) && in01(s.utt_total);
    for (double v : s.phone_accuracy) ok = ok && in01(v);
    for (double v : s.word_accuracy) ok = ok && in01(v);
    for (double v : s.word_stress) ok = ok && in01(v);
    for (double v : s.word_total) ok = ok && in01(v);
    if (!ok)
        throw Error("train: gold scores outside [0, 1] in utterance \"" + r.id +
                    "\" (expected normalized scales)");
}

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

}  // namespace

// ------------------------------------------------------- word embedding --

std::vector<int> word_ngram_buckets(const std::string& word, int buckets) {
    if (word.empty()) throw Error("word_ngram_buckets: empty word");
    if (buckets <= 0) throw Error("word_ngram_buckets: bucket count must be > 0");
    std::string marked = "<";
    for (char c : word)
        marked += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    marked += ">";
    std::vector<int> ids;
    for (std::size_t i = 0; i + 3 <= marked.size(); ++i) {
        std::uint64_t h = 14695981039346656037ull;  // FNV-1a 64-bit
        for (std::size_t j = i; j < i + 3; ++j) {
            h ^= static_cast<unsigned char>(marked[j]);
            h *= 1099511628211ull;
        }
        ids.push_back(static_cast<int>(h % static_cast<std::uint64_t>(buckets)));
    }
    return ids;
}

// -------------------------------------------------------------- forward --

nn::TensorPtr<float> attention_pool(const nn::TensorPtr<float>& tokens,
                                    const nn::TensorPtr<float>& query) {
    if (tokens->shape.size() != 2 || tokens->shape[0] < 1)
        throw Error("attention_pool: need at least one token row");
    if (query->shape != nn::Shape{tokens->shape[1], 1})
        throw Error("attention_pool: query shape " + nn::shape_str(query->shape) +
                    " does not match token dim " + nn::shape_str(tokens->shape));
    auto scores = nn::transpose(nn::matmul(tokens, query));  // [1, k]
    auto weights = nn::clip_min(nn::softmax(scores), kClipFloor);
    weights = nn::div_rows(weights, nn::row_sum(weights));
    return nn::matmul(weights, tokens);  // [1, d]
}

nn::TensorPtr<float> word_embed(const std::string& word, nn::Registry& params,
                                const ScorerConfig& cfg) {
    const auto ids = word_ngram_buckets(word, cfg.word_buckets);
    auto tokens = nn::embedding_lookup(param(params, "score.word.ngram"), ids);
    return attention_pool(tokens, param(params, "score.word.pool.q"));
}

// ----------------------------------------------------------- parameters --

nn::Registry init_scorer_params(const ScorerConfig& cfg, Rng& rng) {
    cfg.validate();
    nn::Registry r = mtp::init_mtp_params(cfg.encoder, rng);
    // The pretraining prediction heads are not part of the scorer.
    for (auto it = r.begin(); it != r.end();)
        it = it->first.rfind("head.", 0) == 0 ? r.erase(it) : std::next(it);

    const int d = cfg.encoder.d_model;
    const int pd = cfg.hcf_projection_dim;
    const int wd = cfg.word_dim;
    const int hw = cfg.head_width;

    if (!cfg.hcf_features.empty()) {
        const int hd = static_cast<int>(cfg.hcf_features.size());
        nn::make_param(r, "score.hcf.w", {hd, pd}, rng);
        nn::make_param(r, "score.hcf.b", {pd}, rng);
        add_buffer(r, "norm.hcf.mean", {hd}, 0.0f);
        add_buffer(r, "norm.hcf.std", {hd}, 1.0f);
    }
    auto make_head = [&](const std::string& name, int in) {
        nn::make_param(r, name + ".w1", {in, hw}, rng);
        nn::make_param(r, name + ".b1", {hw}, rng);
        nn::make_param(r, name + ".w2", {hw, 1}, rng);
        nn::make_param(r, name + ".b2", {1}, rng);
    };
    make_head("score.head.phone", d + pd);
    make_head("score.head.word.accuracy", d + wd + pd);
    make_head("score.head.word.stress", d + wd + pd);
    make_head("score.head.word.total", d + wd + pd);
    for (const auto& aspect : utt_aspects()) make_head("score.head.utt." + aspect, d + wd + pd);
    nn::make_param(r, "score.word.ngram", {cfg.word_buckets, wd}, rng);
    nn::make_param(r, "score.word.pool.q", {wd, 1}, rng);
    return r;
}

void apply_pretrained(nn::Registry& params, const nn::Registry& pretrained) {
    for (auto& [name, t] : params) {
        // Scorer-only parameters and the scorer's own feature-normalization
        // buffers have no counterpart in an encoder-pretraining checkpoint.
        if (name.rfind("score.", 0) == 0 || name.rfind("norm.hcf.", 0) == 0) continue;
        const auto it = pretrained.find(name);
        if (it == pretrained.end())
            throw Error("pretrained checkpoint is missing parameter \"" + name + "\"");
        if (it->second->shape != t->shape)
            throw Error("pretrained parameter \"" + name + "\" has shape " +
                        nn::shape_str(it->second->shape) + ", expected " +
                        nn::shape_str(t->shape));
        t->data = it->second->data;
    }
}

ScorerOutputs score_forward(const ScorerExample& ex, nn::Registry& params,
                            const ScorerConfig& cfg, Rng& rng, bool training) {
    require_example(ex, /*need_scores=*/false);
    const bool fuse_phone =
        cfg.fusion_mode == FusionMode::AllHeads || cfg.fusion_mode == FusionMode::PhoneOnly;
    const bool fuse_word =
        cfg.fusion_mode == FusionMode::AllHeads || cfg.fusion_mode == FusionMode::WordOnly;
    const bool fuse_utt =
        cfg.fusion_mode == FusionMode::AllHeads || cfg.fusion_mode == FusionMode::UttOnly;

    const int n = static_cast<int>(ex.seq.size());
    const int words = static_cast<int>(ex.record.words.size());
    const int pd = cfg.hcf_projection_dim;

    // Handcrafted-feature slot: a z-normalized linear projection where the
    // fusion mode applies, zeros elsewhere. Shapes never change with mode.
    nn::TensorPtr<float> proj;
    if (cfg.fusion_mode != FusionMode::None) {
        const auto& mean = param(params, "norm.hcf.mean");
        const auto& sd = param(params, "norm.hcf.std");
        std::vector<float> vals;
        for (std::size_t j = 0; j < cfg.hcf_features.size(); ++j) {
            const auto& name = cfg.hcf_features[j];
            const auto it = ex.hcf.values.find(name);
            if (it == ex.hcf.values.end())
                throw Error("score: handcrafted feature \"" + name +
                            "\" missing for utterance \"" + ex.record.id + "\"");
            vals.push_back(static_cast<float>((it->second - mean->data[j]) / sd->data[j]));
        }
        const int hd = static_cast<int>(vals.size());
        auto hv = nn::make_tensor<float>({1, hd}, std::move(vals));
        proj = nn::linear(hv, param(params, "score.hcf.w"), param(params, "score.hcf.b"));
    }
    auto zeros = nn::make_tensor<float>({1, pd});
    auto slot = [&](bool fused) { return fused && proj ? proj : zeros; };
    auto rows_of = [&](const nn::TensorPtr<float>& s, int count) {
        auto ones = nn::make_tensor<float>({count, 1}, std::vector<float>(count, 1.0f));
        return nn::matmul(ones, s);
    };
    auto head = [&](const nn::TensorPtr<float>& x, const std::string& name) {
        auto h = nn::gelu(nn::linear(x, param(params, name + ".w1"), param(params, name + ".b1")));
        return nn::linear(h, param(params, name + ".w2"), param(params, name + ".b2"));
    };

    auto H = mtp::encode(ex.seq, params, cfg.encoder, rng, training);  // [n, d]

    ScorerOutputs out;
    out.phone_accuracy = head(nn::concat(H, rows_of(slot(fuse_phone), n)), "score.head.phone");

    std::vector<nn::TensorPtr<float>> embeds;
    for (const auto& w : ex.record.words) embeds.push_back(word_embed(w.text, params, cfg));
    auto word_emb = nn::stack_rows(embeds);                       // [W, wd]
    auto pooled = nn::mean_pool(H, word_segments(ex.record));     // [W, d]
    auto word_base = nn::concat(pooled, word_emb);                // [W, d + wd]
    auto word_in = nn::concat(word_base, rows_of(slot(fuse_word), words));
    out.word_accuracy = head(word_in, "score.head.word.accuracy");
    out.word_stress = head(word_in, "score.head.word.stress");
    out.word_total = head(word_in, "score.head.word.total");

    std::vector<int> all_words(words);
    std::iota(all_words.begin(), all_words.end(), 0);
    auto utt_base = nn::mean_pool(word_base, {all_words});        // [1, d + wd]
    auto utt_in = nn::concat(utt_base, slot(fuse_utt));
    out.utt_accuracy = head(utt_in, "score.head.utt.accuracy");
    out.utt_completeness = head(utt_in, "score.head.utt.completeness");
    out.utt_fluency = head(utt_in, "score.head.utt.fluency");
    out.utt_prosodic = head(utt_in, "score.head.utt.prosodic");
    out.utt_total = head(utt_in, "score.head.utt.total");
    return out;
}

core::ScoreVector score(const ScorerExample& ex, nn::Registry& params,
                        const ScorerConfig& cfg) {
    Rng rng(0);  // eval mode draws nothing
    const auto out = score_forward(ex, params, cfg, rng, /*training=*/false);
    core::ScoreVector sv;
    for (float v : out.phone_accuracy->data) sv.phone_accuracy.push_back(clamp01(v));
    for (float v : out.word_accuracy->data) sv.word_accuracy.push_back(clamp01(v));
    for (float v : out.word_stress->data) sv.word_stress.push_back(clamp01(v));
    for (float v : out.word_total->data) sv.word_total.push_back(clamp01(v));
    sv.utt_accuracy = clamp01(out.utt_accuracy->data[0]);
    sv.utt_completeness = clamp01(out.utt_completeness->data[0]);
    sv.utt_fluency = clamp01(out.utt_fluency->data[0]);
    sv.utt_prosodic = clamp01(out.utt_prosodic->data[0]);
    sv.utt_total = clamp01(out.utt_total->data[0]);
    return sv;
}

// ------------------------------------------------------------- training --

const std::array<std::string, kHeadCount>& head_names() {
    static const std::array<std::string, kHeadCount> kNames = {
        "phone.accuracy", "word.accuracy", "word.stress",   "word.total",  "utt.accuracy",
        "utt.completeness", "utt.fluency", "utt.prosodic", "utt.total"};
    return kNames;
}

namespace {

// Gold targets of one utterance as constant tensors, in head_names() order.
struct Targets {
    std::array<nn::TensorPtr<float>, kHeadCount> t;
};

Targets build_targets(const core::UtteranceRecord& r) {
    const auto& s = *r.scores;
    auto column = [](const std::vector<double>& v) {
        std::vector<float> data(v.begin(), v.end());
        return nn::make_tensor<float>({static_cast<int>(v.size()), 1}, std::move(data));
    };
    auto scalar = [](double v) {
        return nn::make_tensor<float>({1, 1}, std::vector<float>{static_cast<float>(v)});
    };
    Targets out;
    out.t = {column(s.phone_accuracy), column(s.word_accuracy), column(s.word_stress),
             column(s.word_total),     scalar(s.utt_accuracy),  scalar(s.utt_completeness),
             scalar(s.utt_fluency),    scalar(s.utt_prosodic),  scalar(s.utt_total)};
    return out;
}

std::array<nn::TensorPtr<float>, kHeadCount> outputs_in_order(const ScorerOutputs& o) {
    return {o.phone_accuracy, o.word_accuracy, o.word_stress,
            o.word_total,     o.utt_accuracy,  o.utt_completeness,
            o.utt_fluency,    o.utt_prosodic,  o.utt_total};
}

// Fits the handcrafted-feature normalization buffers on the training corpus
// (population statistics; near-constant dimensions pass through centered).
void set_hcf_norm_stats(nn::Registry& params, const std::vector<ScorerExample>& corpus,
                        const ScorerConfig& cfg) {
    if (cfg.hcf_features.empty()) return;
    const auto& mean = param(params, "norm.hcf.mean");
    const auto& sd = param(params, "norm.hcf.std");
    for (std::size_t j = 0; j < cfg.hcf_features.size(); ++j) {
        const auto& name = cfg.hcf_features[j];
        double sum = 0, sq = 0;
        for (const auto& ex : corpus) {
            const auto it = ex.hcf.values.find(name);
            if (it == ex.hcf.values.end())
                throw Error("train: handcrafted feature \"" + name +
                            "\" missing for utterance \"" + ex.record.id + "\"");
            sum += it->second;
            sq += it->second * it->second;
        }
        const double m = sum / static_cast<double>(corpus.size());
        const double var = std::max(0.0, sq / static_cast<double>(corpus.size()) - m * m);
        double s = std::sqrt(var);
        if (s < 1e-6) s = 1.0;
        mean->data[j] = static_cast<float>(m);
        sd->data[j] = static_cast<float>(s);
    }
}

}  // namespace

ScorerTrainResult train_scorer(const std::vector<ScorerExample>& corpus,
                               const ScorerConfig& cfg, std::uint64_t seed,
                               const nn::Registry* pretrained) {
    cfg.validate();
    if (corpus.empty()) throw Error("train: empty corpus");
    for (const auto& ex : corpus) require_example(ex, /*need_scores=*/true);

    Rng rng(seed);
    ScorerTrainResult result;
    result.params = init_scorer_params(cfg, rng);
    if (pretrained) apply_pretrained(result.params, *pretrained);

    // Normalization statistics always come from the training corpus, for
    // both randomly initialized and pretrained encoders.
    std::vector<dsp::SequentialFeatures> features;
    for (const auto& ex : corpus) features.push_back(ex.seq);
    mtp::set_norm_stats(result.params, features);
    set_hcf_norm_stats(result.params, corpus, cfg);

    std::vector<Targets> targets;
    for (const auto& ex : corpus) targets.push_back(build_targets(ex.record));

    const auto frozen = mtp::frozen_param_names(result.params);
    nn::Adam opt(cfg.lr);
    std::vector<int> order(corpus.size());
    std::iota(order.begin(), order.end(), 0);

    result.log.reserve(cfg.epochs);
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        rng.shuffle(order);
        ScorerEpoch row;
        row.epoch = epoch;
        long counted = 0;
        for (std::size_t start = 0; start < order.size();
             start += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t stop =
                std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
            nn::zero_grads(result.params);
            const double inv = 1.0 / static_cast<double>(stop - start);
            for (std::size_t i = start; i < stop; ++i) {
                const int idx = order[i];
                const auto outs = score_forward(corpus[static_cast<std::size_t>(idx)],
                                                result.params, cfg, rng, /*training=*/true);
                const auto preds = outputs_in_order(outs);
                nn::TensorPtr<float> total;
                for (int h = 0; h < kHeadCount; ++h) {
                    auto l = nn::mse(preds[h], targets[static_cast<std::size_t>(idx)].t[h]);
                    row.heads[static_cast<std::size_t>(h)] += l->data[0];
                    total = total ? nn::add(total, l) : l;
                }
                total = nn::scale(total, 1.0 / kHeadCount);
                row.total += total->data[0];
                nn::backward(nn::scale(total, inv));
                ++counted;
            }
            opt.step(result.params, &frozen);
        }
        if (counted > 0) {
            row.total /= static_cast<double>(counted);
            for (double& h : row.heads) h /= static_cast<double>(counted);
        }
        result.log.push_back(row);
    }
    return result;
}

std::array<double, kHeadCount> per_head_mse(const std::vector<ScorerExample>& corpus,
                                            nn::Registry& params, const ScorerConfig& cfg) {
    if (corpus.empty()) throw Error("per_head_mse: empty corpus");
    std::array<double, kHeadCount> sq{};
    std::array<long, kHeadCount> count{};
    for (const auto& ex : corpus) {
        require_example(ex, /*need_scores=*/true);
        const auto sv = score(ex, params, cfg);
        const auto& gold = *ex.record.scores;
        auto accum = [&](int h, const std::vector<double>& pred,
                         const std::vector<double>& g) {
            for (std::size_t i = 0; i < pred.size(); ++i) {
                const double d = pred[i] - g[i];
                sq[static_cast<std::size_t>(h)] += d * d;
            }
            count[static_cast<std::size_t>(h)] += static_cast<long>(pred.size());
        };
        accum(0, sv.phone_accuracy, gold.phone_accuracy);
        accum(1, sv.word_accuracy, gold.word_accuracy);
        accum(2, sv.word_stress, gold.word_stress);
        accum(3, sv.word_total, gold.word_total);
        const std::array<double, 5> up = {sv.utt_accuracy, sv.utt_completeness, sv.utt_fluency,
                                          sv.utt_prosodic, sv.utt_total};
        const std::array<double, 5> ug = {gold.utt_accuracy, gold.utt_completeness,
                                          gold.utt_fluency, gold.utt_prosodic, gold.utt_total};
        for (int a = 0; a < 5; ++a) {
            const double d = up[static_cast<std::size_t>(a)] - ug[static_cast<std::size_t>(a)];
            sq[static_cast<std::size_t>(4 + a)] += d * d;
            count[static_cast<std::size_t>(4 + a)] += 1;
        }
    }
    std::array<double, kHeadCount> out{};
    for (int h = 0; h < kHeadCount; ++h)
        out[static_cast<std::size_t>(h)] =
            count[static_cast<std::size_t>(h)] > 0
                ? sq[static_cast<std::size_t>(h)] /
                      static_cast<double>(count[static_cast<std::size_t>(h)])
                : 0.0;
    return out;
}

std::string training_log_csv(const std::vector<ScorerEpoch>& log) {
    std::ostringstream out;
    out << "epoch,total";
    for (const auto& name : head_names()) out << "," << name;
    out << "\n";
    for (const auto& row : log) {
        out << row.epoch << "," << format_real(row.total);
        for (double h : row.heads) out << "," << format_real(h);
        out << "\n";
    }
    return out.str();
}

// -------------------------------------------------------------- metrics --

double pcc(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size())
        throw Error("pcc: length mismatch, " + std::to_string(x.size()) + " vs " +
                    std::to_string(y.size()));
    const std::size_t n = x.size();
    if (n < 2) throw Error("pcc: need at least two points");
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < n; ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= static_cast<double>(n);
    my /= static_cast<double>(n);
    double sxx = 0, syy = 0, sxy = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const double dx = x[i] - mx, dy = y[i] - my;
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if (sxx == 0 || syy == 0) throw Error("pcc: constant input");
    return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

double mse(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size())
        throw Error("mse: length mismatch, " + std::to_string(x.size()) + " vs " +
                    std::to_string(y.size()));
    if (x.empty()) throw Error("mse: empty input");
    double acc = 0;
    for (std::size_t i = 0; i < x.size(); ++i) acc += (x[i] - y[i]) * (x[i] - y[i]);
    return acc / static_cast<double>(x.size());
}

// ----------------------------------------------------------- evaluation --

const std::vector<std::string>& eval_metric_names() {
    static const std::vector<std::string> kNames = {
        "phone.mse",       "phone.pcc",       "word.accuracy.pcc", "word.stress.pcc",
        "word.total.pcc",  "word.avg_pcc",    "utt.accuracy.pcc",  "utt.completeness.pcc",
        "utt.fluency.pcc", "utt.prosodic.pcc", "utt.total.pcc",    "utt.avg_pcc"};
    return kNames;
}

EvalReport evaluate(const std::vector<ScorerExample>& corpus,
                    std::vector<nn::Registry>& params_per_seed, const ScorerConfig& cfg) {
    cfg.validate();
    if (corpus.size() < 2) throw Error("evaluate: need at least two scored utterances");
    for (const auto& ex : corpus) require_example(ex, /*need_scores=*/true);
    if (params_per_seed.size() != cfg.seeds.size())
        throw Error("evaluate: " + std::to_string(params_per_seed.size()) +
                    " parameter sets for " + std::to_string(cfg.seeds.size()) + " seeds");

    // Corpus order must not matter: pool in sorted-id order.
    std::vector<std::size_t> order(corpus.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return corpus[a].record.id < corpus[b].record.id;
    });
    for (std::size_t i = 1; i < order.size(); ++i)
        if (corpus[order[i - 1]].record.id == corpus[order[i]].record.id)
            throw Error("evaluate: duplicate utterance id \"" + corpus[order[i]].record.id +
                        "\"");

    auto named_pcc = [](const std::string& name, const std::vector<double>& p,
                        const std::vector<double>& g) {
        try {
            return pcc(p, g);
        } catch (const Error& e) {
            throw Error("metric " + name + ": " + e.what());
        }
    };

    EvalReport report;
    report.seeds = cfg.seeds;
    report.metric_names = eval_metric_names();
    for (std::size_t s = 0; s < params_per_seed.size(); ++s) {
        std::vector<double> phone_p, phone_g;
        std::array<std::vector<double>, 3> word_p, word_g;
        std::array<std::vector<double>, 5> utt_p, utt_g;
        for (std::size_t idx : order) {
            const auto& ex = corpus[idx];
            const auto sv = score(ex, params_per_seed[s], cfg);
            const auto& gold = *ex.record.scores;
            phone_p.insert(phone_p.end(), sv.phone_accuracy.begin(), sv.phone_accuracy.end());
            phone_g.insert(phone_g.end(), gold.phone_accuracy.begin(),
                           gold.phone_accuracy.end());
            auto extend = [](std::vector<double>& dst, const std::vector<double>& src) {
                dst.insert(dst.end(), src.begin(), src.end());
            };
            extend(word_p[0], sv.word_accuracy);
            extend(word_g[0], gold.word_accuracy);
            extend(word_p[1], sv.word_stress);
            extend(word_g[1], gold.word_stress);
            extend(word_p[2], sv.word_total);
            extend(word_g[2], gold.word_total);
            const std::array<double, 5> up = {sv.utt_accuracy, sv.utt_completeness,
                                              sv.utt_fluency, sv.utt_prosodic, sv.utt_total};
            const std::array<double, 5> ug = {gold.utt_accuracy, gold.utt_completeness,
                                              gold.utt_fluency, gold.utt_prosodic,
                                              gold.utt_total};
            for (int a = 0; a < 5; ++a) {
                utt_p[static_cast<std::size_t>(a)].push_back(up[static_cast<std::size_t>(a)]);
                utt_g[static_cast<std::size_t>(a)].push_back(ug[static_cast<std::size_t>(a)]);
            }
        }

        std::map<std::string, double> m;
        m["phone.mse"] = mse(phone_p, phone_g);
        m["phone.pcc"] = named_pcc("phone.pcc", phone_p, phone_g);
        const std::array<std::string, 3> word_names = {"word.accuracy.pcc", "word.stress.pcc",
                                                       "word.total.pcc"};
        double word_sum = 0;
        for (int a = 0; a < 3; ++a) {
            const double v = named_pcc(word_names[static_cast<std::size_t>(a)],
                                       word_p[static_cast<std::size_t>(a)],
                                       word_g[static_cast<std::size_t>(a)]);
            m[word_names[static_cast<std::size_t>(a)]] = v;
            word_sum += v;
        }
        m["word.avg_pcc"] = word_sum / 3.0;
        double utt_sum = 0;
        for (int a = 0; a < 5; ++a) {
            const std::string name = "utt." + utt_aspects()[static_cast<std::size_t>(a)] +
                                     ".pcc";
            const double v = named_pcc(name, utt_p[static_cast<std::size_t>(a)],
                                       utt_g[static_cast<std::size_t>(a)]);
            m[name] = v;
            utt_sum += v;
        }
        m["utt.avg_pcc"] = utt_sum / 5.0;
        for (const auto& name : report.metric_names)
            report.per_seed[name].push_back(m.at(name));
    }

    const double ns = static_cast<double>(params_per_seed.size());
    for (const auto& name : report.metric_names) {
        const auto& vals = report.per_seed.at(name);
        double mean = 0;
        for (double v : vals) mean += v;
        mean /= ns;
        double var = 0;
        for (double v : vals) var += (v - mean) * (v - mean);
        report.mean[name] = mean;
        report.stddev[name] = std::sqrt(var / ns);
    }
    return report;
}

std::string eval_report_to_json(const EvalReport& report) {
    json j;
    j["seeds"] = report.seeds;
    j["metric_names"] = report.metric_names;
    json metrics = json::object();
    for (const auto& name : report.metric_names) {
        metrics[name] = {{"per_seed", report.per_seed.at(name)},
                         {"mean", report.mean.at(name)},
                         {"std", report.stddev.at(name)}};
    }
    j["metrics"] = metrics;
    return j.dump(2) + "\n";
}

EvalReport eval_report_from_json(const std::string& content, const std::string& origin) {
    json j;
    try {
        j = json::parse(content);
    } catch (const json::exception& e) {
        throw Error(origin + ": invalid JSON: " + e.what());
    }
    if (!j.is_object()) throw Error(origin + ": expected a JSON object");
    for (const auto& [key, value] : j.items()) {
        (void)value;
        if (key != "seeds" && key != "metric_names" && key != "metrics")
            throw Error(origin + ": unknown key \"" + key + "\"");
    }
    EvalReport report;
    try {
        report.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
        report.metric_names = j.at("metric_names").get<std::vector<std::string>>();
        const auto& metrics = j.at("metrics");
        if (metrics.size() != report.metric_names.size())
            throw Error(origin + ": metrics object does not match metric_names");
        for (const auto& name : report.metric_names) {
            const auto& entry = metrics.at(name);
            report.per_seed[name] = entry.at("per_seed").get<std::vector<double>>();
            report.mean[name] = entry.at("mean").get<double>();
            report.stddev[name] = entry.at("std").get<double>();
        }
    } catch (const json::exception& e) {
        throw Error(origin + ": malformed evaluation report: " + e.what());
    }
    return report;
}

std::string eval_report_to_csv(const EvalReport& report) {
    std::ostringstream out;
    out << "metric,mean,std";
    for (std::uint64_t s : report.seeds) out << ",seed_" << s;
    out << "\n";
    for (const auto& name : report.metric_names) {
        out << name << "," << format_real(report.mean.at(name)) << ","
            << format_real(report.stddev.at(name));
        for (double v : report.per_seed.at(name)) out << "," << format_real(v);
        out << "\n";
    }
    return out.str();
}

}  // namespace apa::scorer
