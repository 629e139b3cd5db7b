#include <algorithm>
#include <cmath>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "apa/mtp/mtp.hpp"
#include "apa/scorer/scorer.hpp"
#include "doctest.h"
#include "grad_check.hpp"

using apa::Rng;
namespace core = apa::core;
namespace dsp = apa::dsp;
namespace hcf = apa::hcf;
namespace mtp = apa::mtp;
namespace nn = apa::nn;
namespace sc = apa::scorer;

namespace {

// Encoder sized for fast tests.
mtp::MtpConfig tiny_encoder() {
    mtp::MtpConfig cfg;
    cfg.d_model = 16;
    cfg.heads = 2;
    cfg.ff_dim = 32;
    cfg.layers = 1;
    return cfg;
}

sc::ScorerConfig tiny_cfg() {
    sc::ScorerConfig cfg;
    cfg.encoder = tiny_encoder();
    cfg.word_dim = 8;
    cfg.word_buckets = 64;
    cfg.head_width = 8;
    cfg.hcf_projection_dim = 4;
    cfg.epochs = 6;
    cfg.batch_size = 2;
    cfg.seeds = {1, 2};
    return cfg;
}

dsp::SequentialFeatures random_rows(int n, Rng& rng) {
    dsp::SequentialFeatures f;
    for (int i = 0; i < n; ++i) {
        f.phone_ids.push_back(3 + static_cast<int>(rng.below(39)));
        f.vc_ids.push_back(1 + static_cast<int>(rng.below(2)));
        f.trait_ids.push_back(1 + static_cast<int>(rng.below(8)));
        f.duration_classes.push_back(1 + static_cast<int>(rng.below(100)));
        std::array<double, dsp::kStatDim> f0{}, rms{};
        for (auto& v : f0) v = rng.uniform(80.0, 400.0);
        for (auto& v : rms) v = rng.uniform(0.0, 1.0);
        f.f0_stats.push_back(f0);
        f.rms_stats.push_back(rms);
        f.pad.push_back(0);
    }
    return f;
}

// One utterance whose words have the given phone counts. Gold scores are
// uniform random in [0, 1].
sc::ScorerExample make_example(const std::string& id, const std::vector<int>& phones_per_word,
                               Rng& rng) {
    sc::ScorerExample ex;
    ex.record.id = id;
    ex.record.text = "";
    core::ScoreVector sv;
    double t = 0;
    for (std::size_t w = 0; w < phones_per_word.size(); ++w) {
        core::WordSpan word;
        word.text = "w" + std::to_string(w) + id;
        word.start_s = t;
        for (int p = 0; p < phones_per_word[w]; ++p) {
            core::PhoneSpan span;
            span.label = "AA";
            span.start_s = t;
            t += 0.1;
            span.end_s = t;
            word.phones.push_back(span);
            sv.phone_accuracy.push_back(rng.uniform(0.0, 1.0));
        }
        word.end_s = t;
        ex.record.text += (w ? " " : "") + word.text;
        ex.record.words.push_back(word);
        sv.word_accuracy.push_back(rng.uniform(0.0, 1.0));
        sv.word_stress.push_back(rng.uniform(0.0, 1.0));
        sv.word_total.push_back(rng.uniform(0.0, 1.0));
    }
    sv.utt_accuracy = rng.uniform(0.0, 1.0);
    sv.utt_completeness = rng.uniform(0.0, 1.0);
    sv.utt_fluency = rng.uniform(0.0, 1.0);
    sv.utt_prosodic = rng.uniform(0.0, 1.0);
    sv.utt_total = rng.uniform(0.0, 1.0);
    ex.record.scores = sv;
    int total = 0;
    for (int c : phones_per_word) total += c;
    ex.seq = random_rows(total, rng);
    return ex;
}

hcf::HcfVector hcf_of(double a, double b) {
    hcf::HcfVector v;
    v.values["fluency.word.count"] = a;
    v.values["pronunciation.pitch.f0_mean"] = b;
    return v;
}

const std::vector<std::string> kTwoFeatures = {"fluency.word.count",
                                               "pronunciation.pitch.f0_mean"};

bool same_data(const nn::TensorPtr<float>& a, const nn::TensorPtr<float>& b) {
    return a->shape == b->shape && a->data == b->data;
}

}  // namespace

TEST_CASE("fusion mode strings round-trip; unknown name rejected") {
    for (const auto mode : {sc::FusionMode::None, sc::FusionMode::AllHeads,
                            sc::FusionMode::PhoneOnly, sc::FusionMode::WordOnly,
                            sc::FusionMode::UttOnly})
        CHECK(sc::fusion_mode_from_string(sc::to_string(mode)) == mode);
    CHECK_THROWS_AS(sc::fusion_mode_from_string("sideways"), apa::Error);
}

TEST_CASE("scorer config validation") {
    sc::ScorerConfig cfg = tiny_cfg();
    CHECK_NOTHROW(cfg.validate());

    cfg.fusion_mode = sc::FusionMode::UttOnly;
    CHECK_THROWS_WITH_AS(cfg.validate(), doctest::Contains("hcf_features"), apa::Error);
    cfg.hcf_features = kTwoFeatures;
    CHECK_NOTHROW(cfg.validate());
    cfg.hcf_features = {"a", "a"};
    CHECK_THROWS_WITH_AS(cfg.validate(), doctest::Contains("duplicate"), apa::Error);

    cfg = tiny_cfg();
    cfg.seeds.clear();
    CHECK_THROWS_AS(cfg.validate(), apa::Error);
    cfg = tiny_cfg();
    cfg.word_dim = 0;
    CHECK_THROWS_AS(cfg.validate(), apa::Error);
    cfg = tiny_cfg();
    cfg.lr = 0;
    CHECK_THROWS_AS(cfg.validate(), apa::Error);
}

TEST_CASE("word n-gram buckets: deterministic, bounded, case-insensitive") {
    const auto a = sc::word_ngram_buckets("cat", 64);
    CHECK(a == sc::word_ngram_buckets("cat", 64));
    CHECK(a == sc::word_ngram_buckets("CAT", 64));
    CHECK(a.size() == 3);  // "<ca", "cat", "at>"
    for (int id : a) {
        CHECK(id >= 0);
        CHECK(id < 64);
    }

    // "cats" shares the prefix trigrams with "cat" but not the suffix ones.
    const auto b = sc::word_ngram_buckets("cats", 1 << 20);
    const auto c = sc::word_ngram_buckets("cat", 1 << 20);
    const std::set<int> sb(b.begin(), b.end()), scs(c.begin(), c.end());
    CHECK(sb != scs);
    std::set<int> inter;
    std::set_intersection(sb.begin(), sb.end(), scs.begin(), scs.end(),
                          std::inserter(inter, inter.begin()));
    CHECK(!inter.empty());

    CHECK(sc::word_ngram_buckets("a", 64).size() == 1);  // "<a>"
    CHECK_THROWS_AS(sc::word_ngram_buckets("", 64), apa::Error);
    CHECK_THROWS_AS(sc::word_ngram_buckets("cat", 0), apa::Error);
}

TEST_CASE("attention_pool: singleton, symmetry, clipped extreme, errors") {
    // k = 1: the output is exactly the token.
    auto one = nn::make_tensor<float>({1, 3}, {1.5f, -2.0f, 0.25f});
    auto q3 = nn::make_tensor<float>({3, 1}, {0.3f, -0.7f, 1.1f});
    auto pooled = sc::attention_pool(one, q3);
    REQUIRE(pooled->shape == nn::Shape{1, 3});
    CHECK(pooled->data == one->data);

    // Equal scores: uniform weights; the pool is the arithmetic mean.
    auto equal = nn::make_tensor<float>({4, 2}, {1, 0, 0, 1, 3, 3, -4, 0});
    auto zero_q = nn::make_tensor<float>({2, 1}, {0.0f, 0.0f});
    auto mean = sc::attention_pool(equal, zero_q);
    CHECK(mean->data[0] == doctest::Approx(0.0));
    CHECK(mean->data[1] == doctest::Approx(1.0));

    // Extreme score gap hits the 0.01 floor and renormalizes: weights
    // 1/1.01 and 0.01/1.01.
    auto gap = nn::make_tensor<float>({2, 1}, {100.0f, 0.0f});
    auto unit_q = nn::make_tensor<float>({1, 1}, std::vector<float>{1.0f});
    auto clipped = sc::attention_pool(gap, unit_q);
    CHECK(clipped->data[0] == doctest::Approx(100.0 / 1.01).epsilon(1e-6));

    auto bad_q = nn::make_tensor<float>({4, 1}, std::vector<float>(4, 0.f));
    CHECK_THROWS_AS(sc::attention_pool(equal, bad_q), apa::Error);
    auto empty = nn::make_tensor<float>({0, 2});
    CHECK_THROWS_AS(sc::attention_pool(empty, zero_q), apa::Error);
}

TEST_CASE("attention_pool output stays in the convex hull of its inputs") {
    Rng rng(0x5c01);
    for (int trial = 0; trial < 25; ++trial) {
        const int k = 1 + static_cast<int>(rng.below(6));
        const int d = 1 + static_cast<int>(rng.below(5));
        auto tokens = nn::make_tensor<float>({k, d});
        for (auto& v : tokens->data) v = static_cast<float>(rng.uniform(-2.0, 2.0));
        auto query = nn::make_tensor<float>({d, 1});
        for (auto& v : query->data) v = static_cast<float>(rng.uniform(-1.0, 1.0));
        auto out = sc::attention_pool(tokens, query);
        for (int j = 0; j < d; ++j) {
            float lo = tokens->data[j], hi = tokens->data[j];
            for (int i = 1; i < k; ++i) {
                lo = std::min(lo, tokens->data[i * d + j]);
                hi = std::max(hi, tokens->data[i * d + j]);
            }
            CHECK(out->data[j] >= lo - 1e-5f);
            CHECK(out->data[j] <= hi + 1e-5f);
        }
    }
}

TEST_CASE("parameter initialization: layout, determinism, pretrain loading") {
    auto cfg = tiny_cfg();
    cfg.fusion_mode = sc::FusionMode::UttOnly;
    cfg.hcf_features = kTwoFeatures;

    Rng rng(9);
    auto params = sc::init_scorer_params(cfg, rng);
    CHECK(params.count("embed.phone") == 1);
    CHECK(params.count("enc.0.attn.wq") == 1);
    CHECK(params.count("norm.f0.mean") == 1);
    CHECK(params.count("score.hcf.w") == 1);
    CHECK(params.count("norm.hcf.mean") == 1);
    CHECK(params.count("score.head.phone.w1") == 1);
    CHECK(params.count("score.head.utt.total.w2") == 1);
    CHECK(params.count("score.word.ngram") == 1);
    for (const auto& [name, t] : params) CHECK(name.rfind("head.", 0) != 0);
    CHECK(params.at("score.hcf.w")->shape == nn::Shape{2, cfg.hcf_projection_dim});
    CHECK(params.at("score.head.phone.w1")->shape ==
          nn::Shape{cfg.encoder.d_model + cfg.hcf_projection_dim, cfg.head_width});
    CHECK(params.at("score.head.word.total.w1")->shape ==
          nn::Shape{cfg.encoder.d_model + cfg.word_dim + cfg.hcf_projection_dim,
                    cfg.head_width});

    Rng rng2(9);
    auto again = sc::init_scorer_params(cfg, rng2);
    REQUIRE(again.size() == params.size());
    for (const auto& [name, t] : params) CHECK(same_data(t, again.at(name)));

    // Pretrained encoder weights flow in; scorer heads stay untouched.
    Rng prng(77);
    auto pre = mtp::init_mtp_params(cfg.encoder, prng);
    const auto head_before = params.at("score.head.phone.w1")->data;
    sc::apply_pretrained(params, pre);
    CHECK(params.at("embed.phone")->data == pre.at("embed.phone")->data);
    CHECK(params.at("enc.0.ff.w1")->data == pre.at("enc.0.ff.w1")->data);
    CHECK(params.at("norm.f0.mean")->data == pre.at("norm.f0.mean")->data);
    CHECK(params.at("score.head.phone.w1")->data == head_before);

    auto broken = pre;
    broken.erase("enc.0.attn.wk");
    CHECK_THROWS_WITH_AS(sc::apply_pretrained(params, broken), doctest::Contains("missing"),
                         apa::Error);
    auto wide = tiny_cfg();
    wide.encoder.d_model = 32;
    Rng wrng(5);
    auto wide_pre = mtp::init_mtp_params(wide.encoder, wrng);
    CHECK_THROWS_WITH_AS(sc::apply_pretrained(params, wide_pre), doctest::Contains("shape"),
                         apa::Error);
}

TEST_CASE("score_forward shape contract: 7 phones, 3 words") {
    auto cfg = tiny_cfg();
    Rng rng(21);
    auto ex = make_example("u1", {2, 3, 2}, rng);
    Rng irng(22);
    auto params = sc::init_scorer_params(cfg, irng);
    Rng frng(0);
    const auto out = sc::score_forward(ex, params, cfg, frng, false);
    CHECK(out.phone_accuracy->shape == nn::Shape{7, 1});
    CHECK(out.word_accuracy->shape == nn::Shape{3, 1});
    CHECK(out.word_stress->shape == nn::Shape{3, 1});
    CHECK(out.word_total->shape == nn::Shape{3, 1});
    CHECK(out.utt_accuracy->shape == nn::Shape{1, 1});
    CHECK(out.utt_total->shape == nn::Shape{1, 1});

    const auto sv = sc::score(ex, params, cfg);
    CHECK(sv.phone_accuracy.size() == 7);
    CHECK(sv.word_accuracy.size() == 3);
    for (double v : sv.phone_accuracy) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
}

TEST_CASE("score_forward input contracts") {
    auto cfg = tiny_cfg();
    Rng rng(31);
    Rng irng(32);
    auto params = sc::init_scorer_params(cfg, irng);
    Rng frng(0);

    auto no_words = make_example("u", {2}, rng);
    no_words.record.words.clear();
    CHECK_THROWS_WITH_AS(sc::score_forward(no_words, params, cfg, frng, false),
                         doctest::Contains("no words"), apa::Error);

    auto empty_word = make_example("u", {2, 1}, rng);
    empty_word.record.words[1].phones.clear();
    CHECK_THROWS_WITH_AS(sc::score_forward(empty_word, params, cfg, frng, false),
                         doctest::Contains("no phones"), apa::Error);

    auto mismatch = make_example("u", {2, 1}, rng);
    mismatch.seq = random_rows(5, rng);
    CHECK_THROWS_WITH_AS(sc::score_forward(mismatch, params, cfg, frng, false),
                         doctest::Contains("feature rows"), apa::Error);

    auto padded = make_example("u", {2}, rng);
    padded.seq.pad[1] = 1;
    CHECK_THROWS_WITH_AS(sc::score_forward(padded, params, cfg, frng, false),
                         doctest::Contains("padded"), apa::Error);

    // Fusion requires the configured features to be present.
    auto fused = tiny_cfg();
    fused.fusion_mode = sc::FusionMode::UttOnly;
    fused.hcf_features = kTwoFeatures;
    Rng frng2(33);
    auto fparams = sc::init_scorer_params(fused, frng2);
    auto ex = make_example("u", {2}, rng);  // ex.hcf empty
    CHECK_THROWS_WITH_AS(sc::score_forward(ex, fparams, fused, frng, false),
                         doctest::Contains("missing"), apa::Error);
}

TEST_CASE("zero HCF with zero projection bias reproduces the no-fusion scores") {
    auto base = tiny_cfg();
    base.hcf_features = kTwoFeatures;  // params created identically in both modes
    auto cfg_none = base;
    cfg_none.fusion_mode = sc::FusionMode::None;
    auto cfg_utt = base;
    cfg_utt.fusion_mode = sc::FusionMode::UttOnly;

    Rng r1(41), r2(41);
    auto p_none = sc::init_scorer_params(cfg_none, r1);
    auto p_utt = sc::init_scorer_params(cfg_utt, r2);
    for (const auto& [name, t] : p_none) REQUIRE(same_data(t, p_utt.at(name)));

    Rng drng(42);
    auto ex = make_example("u1", {2, 2}, drng);
    ex.hcf = hcf_of(0.0, 0.0);  // zero vector; norm buffers are still identity

    Rng fa(0), fb(0);
    const auto a = sc::score_forward(ex, p_none, cfg_none, fa, false);
    const auto b = sc::score_forward(ex, p_utt, cfg_utt, fb, false);
    CHECK(same_data(a.utt_accuracy, b.utt_accuracy));
    CHECK(same_data(a.utt_fluency, b.utt_fluency));
    CHECK(same_data(a.utt_total, b.utt_total));
    CHECK(same_data(a.phone_accuracy, b.phone_accuracy));
    CHECK(same_data(a.word_total, b.word_total));
}

TEST_CASE("fusion isolation: the slot only reaches its own granularity") {
    auto cfg = tiny_cfg();
    cfg.hcf_features = kTwoFeatures;
    Rng drng(51);
    auto ex1 = make_example("u1", {2, 2}, drng);
    auto ex2 = ex1;
    ex1.hcf = hcf_of(5.0, 120.0);
    ex2.hcf = hcf_of(-3.0, 480.0);

    SUBCASE("utt_only") {
        cfg.fusion_mode = sc::FusionMode::UttOnly;
        Rng irng(52);
        auto params = sc::init_scorer_params(cfg, irng);
        Rng fa(0), fb(0);
        const auto a = sc::score_forward(ex1, params, cfg, fa, false);
        const auto b = sc::score_forward(ex2, params, cfg, fb, false);
        CHECK(same_data(a.phone_accuracy, b.phone_accuracy));
        CHECK(same_data(a.word_accuracy, b.word_accuracy));
        CHECK(same_data(a.word_stress, b.word_stress));
        CHECK(same_data(a.word_total, b.word_total));
        CHECK(a.utt_accuracy->data != b.utt_accuracy->data);
    }
    SUBCASE("phone_only") {
        cfg.fusion_mode = sc::FusionMode::PhoneOnly;
        Rng irng(52);
        auto params = sc::init_scorer_params(cfg, irng);
        Rng fa(0), fb(0);
        const auto a = sc::score_forward(ex1, params, cfg, fa, false);
        const auto b = sc::score_forward(ex2, params, cfg, fb, false);
        CHECK(a.phone_accuracy->data != b.phone_accuracy->data);
        CHECK(same_data(a.word_accuracy, b.word_accuracy));
        CHECK(same_data(a.utt_total, b.utt_total));
    }
    SUBCASE("all_heads") {
        cfg.fusion_mode = sc::FusionMode::AllHeads;
        Rng irng(52);
        auto params = sc::init_scorer_params(cfg, irng);
        Rng fa(0), fb(0);
        const auto a = sc::score_forward(ex1, params, cfg, fa, false);
        const auto b = sc::score_forward(ex2, params, cfg, fb, false);
        CHECK(a.phone_accuracy->data != b.phone_accuracy->data);
        CHECK(a.word_accuracy->data != b.word_accuracy->data);
        CHECK(a.utt_total->data != b.utt_total->data);
    }
}

TEST_CASE("training: loss decreases, runs are seed-deterministic") {
    Rng drng(61);
    std::vector<sc::ScorerExample> corpus;
    for (int i = 0; i < 4; ++i)
        corpus.push_back(make_example("u" + std::to_string(i), {2, 2}, drng));

    auto cfg = tiny_cfg();
    cfg.epochs = 10;
    cfg.lr = 3e-3;
    const auto run1 = sc::train_scorer(corpus, cfg, 7);
    const auto run2 = sc::train_scorer(corpus, cfg, 7);
    const auto other = sc::train_scorer(corpus, cfg, 8);

    REQUIRE(run1.log.size() == 10);
    CHECK(run1.log.back().total < run1.log.front().total);

    REQUIRE(run2.log.size() == run1.log.size());
    for (std::size_t e = 0; e < run1.log.size(); ++e) {
        CHECK(run1.log[e].total == run2.log[e].total);
        for (int h = 0; h < sc::kHeadCount; ++h)
            CHECK(run1.log[e].heads[static_cast<std::size_t>(h)] ==
                  run2.log[e].heads[static_cast<std::size_t>(h)]);
    }
    for (const auto& [name, t] : run1.params)
        CHECK(same_data(t, run2.params.at(name)));

    bool any_diff = false;
    for (const auto& [name, t] : run1.params)
        any_diff = any_diff || t->data != other.params.at(name)->data;
    CHECK(any_diff);

    // Per-head MSE shrinks relative to the untouched initialization.
    Rng irng(7);
    auto fresh = sc::init_scorer_params(cfg, irng);
    std::vector<dsp::SequentialFeatures> feats;
    for (const auto& ex : corpus) feats.push_back(ex.seq);
    mtp::set_norm_stats(fresh, feats);
    const auto before = sc::per_head_mse(corpus, fresh, cfg);
    auto trained = run1.params;
    const auto after = sc::per_head_mse(corpus, trained, cfg);
    double sum_before = 0, sum_after = 0;
    for (int h = 0; h < sc::kHeadCount; ++h) {
        sum_before += before[static_cast<std::size_t>(h)];
        sum_after += after[static_cast<std::size_t>(h)];
    }
    CHECK(sum_after < sum_before);
}

TEST_CASE("training input validation") {
    auto cfg = tiny_cfg();
    Rng drng(71);
    CHECK_THROWS_WITH_AS(sc::train_scorer({}, cfg, 1), doctest::Contains("empty"), apa::Error);

    auto no_scores = make_example("u", {2}, drng);
    no_scores.record.scores.reset();
    CHECK_THROWS_WITH_AS(sc::train_scorer({no_scores}, cfg, 1),
                         doctest::Contains("gold scores"), apa::Error);

    auto short_scores = make_example("u", {2}, drng);
    short_scores.record.scores->phone_accuracy.pop_back();
    CHECK_THROWS_WITH_AS(sc::train_scorer({short_scores}, cfg, 1),
                         doctest::Contains("lengths"), apa::Error);

    auto out_of_range = make_example("u", {2}, drng);
    out_of_range.record.scores->utt_total = 1.5;
    CHECK_THROWS_WITH_AS(sc::train_scorer({out_of_range}, cfg, 1),
                         doctest::Contains("outside [0, 1]"), apa::Error);
}

TEST_CASE("training from a pretraining checkpoint") {
    Rng drng(81);
    std::vector<sc::ScorerExample> corpus;
    for (int i = 0; i < 3; ++i)
        corpus.push_back(make_example("u" + std::to_string(i), {2, 1}, drng));

    auto mcfg = tiny_encoder();
    mcfg.epochs = 2;
    mcfg.batch_size = 2;
    mcfg.seed = 5;
    std::vector<dsp::SequentialFeatures> feats;
    for (const auto& ex : corpus) feats.push_back(ex.seq);
    const auto pre = mtp::pretrain(feats, mcfg);

    auto cfg = tiny_cfg();
    cfg.epochs = 2;
    const auto warm = sc::train_scorer(corpus, cfg, 7, &pre.params);
    const auto cold = sc::train_scorer(corpus, cfg, 7);
    REQUIRE(warm.log.size() == 2);
    // The two runs start from different encoders, so their traces differ.
    CHECK(warm.log[0].total != cold.log[0].total);
}

TEST_CASE("pcc: hand values, affine invariance, error contracts") {
    const std::vector<double> x = {1, 2, 3};
    CHECK(sc::pcc(x, x) == doctest::Approx(1.0));
    CHECK(sc::pcc(x, {3, 2, 1}) == doctest::Approx(-1.0));
    CHECK(sc::pcc(x, {1, 2, 4}) == doctest::Approx(9.0 / std::sqrt(84.0)).epsilon(1e-12));

    Rng rng(0x9cc);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<double> u, v, scaled;
        const double a = rng.uniform(0.1, 5.0), b = rng.uniform(-3.0, 3.0);
        for (int i = 0; i < 24; ++i) {
            u.push_back(rng.uniform(-1.0, 1.0));
            v.push_back(rng.uniform(-1.0, 1.0));
            scaled.push_back(a * u.back() + b);
        }
        CHECK(sc::pcc(scaled, v) == doctest::Approx(sc::pcc(u, v)).epsilon(1e-9));
    }

    CHECK_THROWS_WITH_AS(sc::pcc({1, 1, 1}, x), doctest::Contains("constant"), apa::Error);
    CHECK_THROWS_WITH_AS(sc::pcc(x, {2, 2, 2}), doctest::Contains("constant"), apa::Error);
    CHECK_THROWS_AS(sc::pcc({1}, {2}), apa::Error);
    CHECK_THROWS_AS(sc::pcc({1, 2}, {1, 2, 3}), apa::Error);

    CHECK(sc::mse({0, 1}, {1, 1}) == doctest::Approx(0.5));
    CHECK(sc::mse(x, x) == 0.0);
    CHECK_THROWS_AS(sc::mse({}, {}), apa::Error);
    CHECK_THROWS_AS(sc::mse({1}, {1, 2}), apa::Error);
}

namespace {

// Small evaluation fixture: 6 utterances, params trained for a few epochs.
struct EvalFixture {
    std::vector<sc::ScorerExample> corpus;
    sc::ScorerConfig cfg;
    std::vector<nn::Registry> params;
};

EvalFixture make_eval_fixture() {
    EvalFixture fx;
    Rng drng(91);
    for (int i = 0; i < 6; ++i)
        fx.corpus.push_back(make_example("u" + std::to_string(i), {2, 2}, drng));
    fx.cfg = tiny_cfg();
    fx.cfg.epochs = 3;
    fx.cfg.seeds = {3, 4};
    for (std::uint64_t s : fx.cfg.seeds)
        fx.params.push_back(sc::train_scorer(fx.corpus, fx.cfg, s).params);
    return fx;
}

}  // namespace

TEST_CASE("evaluate: aggregation, permutation invariance, averages") {
    auto fx = make_eval_fixture();
    const auto report = sc::evaluate(fx.corpus, fx.params, fx.cfg);

    REQUIRE(report.metric_names == sc::eval_metric_names());
    REQUIRE(report.seeds == fx.cfg.seeds);
    for (const auto& name : report.metric_names) {
        REQUIRE(report.per_seed.at(name).size() == 2);
        CHECK(report.stddev.at(name) >= 0.0);
        if (name != "phone.mse")
            for (double v : report.per_seed.at(name)) {
                CHECK(v >= -1.0);
                CHECK(v <= 1.0);
            }
    }
    // Avg PCC is the unweighted mean of that granularity's aspects.
    for (std::size_t s = 0; s < 2; ++s) {
        const double word_avg = (report.per_seed.at("word.accuracy.pcc")[s] +
                                 report.per_seed.at("word.stress.pcc")[s] +
                                 report.per_seed.at("word.total.pcc")[s]) /
                                3.0;
        CHECK(report.per_seed.at("word.avg_pcc")[s] == doctest::Approx(word_avg).epsilon(1e-12));
        double utt_sum = 0;
        for (const char* a : {"accuracy", "completeness", "fluency", "prosodic", "total"})
            utt_sum += report.per_seed.at("utt." + std::string(a) + ".pcc")[s];
        CHECK(report.per_seed.at("utt.avg_pcc")[s] ==
              doctest::Approx(utt_sum / 5.0).epsilon(1e-12));
    }
    // Mean of per-seed values matches the reported mean.
    for (const auto& name : report.metric_names) {
        const auto& vals = report.per_seed.at(name);
        CHECK(report.mean.at(name) == doctest::Approx((vals[0] + vals[1]) / 2.0));
    }

    // Corpus order must not matter.
    auto shuffled = fx.corpus;
    std::rotate(shuffled.begin(), shuffled.begin() + 3, shuffled.end());
    std::swap(shuffled[0], shuffled[1]);
    const auto report2 = sc::evaluate(shuffled, fx.params, fx.cfg);
    for (const auto& name : report.metric_names)
        CHECK(report.per_seed.at(name) == report2.per_seed.at(name));

    // Identical parameter sets for both seeds: std is exactly zero.
    std::vector<nn::Registry> twins = {fx.params[0], fx.params[0]};
    const auto twin_report = sc::evaluate(fx.corpus, twins, fx.cfg);
    for (const auto& name : twin_report.metric_names)
        CHECK(twin_report.stddev.at(name) == 0.0);
}

TEST_CASE("evaluate: error contracts") {
    auto fx = make_eval_fixture();

    std::vector<sc::ScorerExample> one = {fx.corpus[0]};
    CHECK_THROWS_WITH_AS(sc::evaluate(one, fx.params, fx.cfg),
                         doctest::Contains("at least two"), apa::Error);

    auto dup = fx.corpus;
    dup[1].record.id = dup[0].record.id;
    CHECK_THROWS_WITH_AS(sc::evaluate(dup, fx.params, fx.cfg), doctest::Contains("duplicate"),
                         apa::Error);

    std::vector<nn::Registry> wrong_count = {fx.params[0]};
    CHECK_THROWS_WITH_AS(sc::evaluate(fx.corpus, wrong_count, fx.cfg),
                         doctest::Contains("parameter sets"), apa::Error);

    // Constant gold for one aspect surfaces the metric name.
    auto flat = fx.corpus;
    for (auto& ex : flat) ex.record.scores->utt_fluency = 0.5;
    CHECK_THROWS_WITH_AS(sc::evaluate(flat, fx.params, fx.cfg),
                         doctest::Contains("utt.fluency.pcc"), apa::Error);
}

TEST_CASE("evaluation report serialization") {
    auto fx = make_eval_fixture();
    const auto report = sc::evaluate(fx.corpus, fx.params, fx.cfg);

    const std::string js = sc::eval_report_to_json(report);
    const auto back = sc::eval_report_from_json(js, "mem");
    CHECK(back.seeds == report.seeds);
    CHECK(back.metric_names == report.metric_names);
    CHECK(back.per_seed == report.per_seed);
    CHECK(back.mean == report.mean);
    CHECK(back.stddev == report.stddev);

    CHECK_THROWS_WITH_AS(sc::eval_report_from_json("{\"bogus\": 1}", "mem"),
                         doctest::Contains("unknown"), apa::Error);
    CHECK_THROWS_WITH_AS(sc::eval_report_from_json("nope", "mem"),
                         doctest::Contains("invalid JSON"), apa::Error);

    const std::string csv = sc::eval_report_to_csv(report);
    CHECK(csv.rfind("metric,mean,std,seed_3,seed_4\n", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') ==
          1 + static_cast<long>(report.metric_names.size()));
    CHECK(csv.find("utt.avg_pcc,") != std::string::npos);

    const std::string log_csv = sc::training_log_csv(
        sc::train_scorer(fx.corpus, fx.cfg, 3).log);
    CHECK(log_csv.rfind("epoch,total,phone.accuracy,", 0) == 0);
}

TEST_CASE("scorer training loss passes a float-precision gradient check") {
    for (const std::uint64_t seed : {29ull, 53ull, 71ull}) {
        auto cfg = tiny_cfg();
        cfg.fusion_mode = sc::FusionMode::AllHeads;
        cfg.hcf_features = kTwoFeatures;
        Rng irng(seed);
        auto params = sc::init_scorer_params(cfg, irng);
        Rng drng(seed + 1000);
        auto ex = make_example("u", {2, 2, 1}, drng);
        ex.hcf = hcf_of(4.0, 200.0);
        std::vector<dsp::SequentialFeatures> feats = {ex.seq};
        mtp::set_norm_stats(params, feats);

        std::vector<nn::TensorPtr<float>> inputs;
        for (const auto& [name, t] : params)
            if (name.rfind("norm.", 0) != 0) inputs.push_back(t);

        auto loss = [&]() {
            Rng frng(0);
            const auto outs = sc::score_forward(ex, params, cfg, frng, false);
            const auto& gold = *ex.record.scores;
            auto column = [](const std::vector<double>& v) {
                std::vector<float> data(v.begin(), v.end());
                return nn::make_tensor<float>({static_cast<int>(v.size()), 1},
                                              std::move(data));
            };
            auto scalar = [](double v) {
                return nn::make_tensor<float>({1, 1},
                                              std::vector<float>{static_cast<float>(v)});
            };
            auto total = nn::mse(outs.phone_accuracy, column(gold.phone_accuracy));
            total = nn::add(total, nn::mse(outs.word_accuracy, column(gold.word_accuracy)));
            total = nn::add(total, nn::mse(outs.word_stress, column(gold.word_stress)));
            total = nn::add(total, nn::mse(outs.word_total, column(gold.word_total)));
            total = nn::add(total, nn::mse(outs.utt_accuracy, scalar(gold.utt_accuracy)));
            total = nn::add(total,
                            nn::mse(outs.utt_completeness, scalar(gold.utt_completeness)));
            total = nn::add(total, nn::mse(outs.utt_fluency, scalar(gold.utt_fluency)));
            total = nn::add(total, nn::mse(outs.utt_prosodic, scalar(gold.utt_prosodic)));
            total = nn::add(total, nn::mse(outs.utt_total, scalar(gold.utt_total)));
            return nn::scale(total, 1.0 / sc::kHeadCount);
        };
        const double rel = gradcheck::directional_check<float>(loss, inputs);
        CHECK_MESSAGE(rel < 1e-3, "seed ", seed, " rel err ", rel);
    }
}
