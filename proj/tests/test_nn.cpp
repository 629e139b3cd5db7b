#include "doctest.h"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <vector>

#include "apa/nn/ops.hpp"
#include "apa/nn/optim.hpp"
#include "apa/nn/registry.hpp"
#include "apa/nn/tensor.hpp"
#include "grad_check.hpp"

using namespace apa::nn;
using apa::Rng;

namespace {

TensorPtr<double> random_tensor(Shape shape, Rng& rng, double lo = -1.5, double hi = 1.5) {
    auto t = make_tensor<double>(shape);
    for (double& v : t->data) v = rng.uniform(lo, hi);
    return t;
}

}  // namespace

TEST_SUITE("nn") {

TEST_CASE("softmax of uniform logits is uniform; cross-entropy is ln C") {
    auto logits = make_tensor<double>({1, 42}, std::vector<double>(42, 0.7));
    auto probs = softmax(logits);
    for (double p : probs->data) CHECK(p == doctest::Approx(1.0 / 42).epsilon(1e-12));
    auto ce = cross_entropy(logits, std::vector<int>{5});
    CHECK(ce->value() == doctest::Approx(std::log(42.0)).epsilon(1e-12));
    CHECK(ce->value() == doctest::Approx(3.7377).epsilon(1e-4));
}

TEST_CASE("softmax rows sum to one and weights are non-negative") {
    Rng rng(0x99);
    auto x = random_tensor({5, 9}, rng, -4, 4);
    auto y = softmax(x);
    for (int i = 0; i < 5; ++i) {
        double sum = 0;
        for (int j = 0; j < 9; ++j) {
            CHECK(y->data[i * 9 + j] >= 0);
            sum += y->data[i * 9 + j];
        }
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
    }
}

TEST_CASE("masked softmax zeroes excluded columns; fully-masked row errors") {
    auto x = make_tensor<double>({2, 3}, {1, 2, 3, 4, 5, 6});
    std::vector<std::uint8_t> mask = {0, 1, 0};
    auto y = softmax(x, &mask);
    CHECK(y->data[1] == 0.0);
    CHECK(y->data[0] + y->data[2] == doctest::Approx(1.0));
    std::vector<std::uint8_t> all = {1, 1, 1};
    CHECK_THROWS_WITH_AS((void)softmax(x, &all), doctest::Contains("fully-masked"), apa::Error);
}

TEST_CASE("layer_norm maps constant rows to the bias") {
    auto x = make_tensor<double>({2, 4}, std::vector<double>(8, 3.25));
    auto gain = make_tensor<double>({4}, std::vector<double>(4, 1.0));
    auto bias = make_tensor<double>({4}, std::vector<double>(4, 0.0));
    auto y = layer_norm(x, gain, bias);
    for (double v : y->data) CHECK(v == doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("shape mismatches name both shapes") {
    auto a = make_tensor<double>({2, 3});
    auto b = make_tensor<double>({4, 2});
    CHECK_THROWS_WITH_AS((void)matmul(a, b), doctest::Contains("[2, 3]"), apa::Error);
    CHECK_THROWS_WITH_AS((void)add(a, b), doctest::Contains("[4, 2]"), apa::Error);
    CHECK_THROWS_WITH_AS((void)mul(a, b), doctest::Contains("[2, 3]"), apa::Error);
}

TEST_CASE("matmul gradient on 3x4 * 4x2 passes central differences") {
    Rng rng(0x1001);
    auto a = random_tensor({3, 4}, rng);
    auto b = random_tensor({4, 2}, rng);
    auto w = random_tensor({3, 2}, rng);  // projection to scalar
    auto report = gradcheck::check<double>(
        [&] { return mse(matmul(a, b), w); }, {a, b});
    CHECK(report.max_rel_err < 1e-4);
    CHECK(report.coords_checked == 20);
}

TEST_CASE("gradients: add in all broadcast modes") {
    Rng rng(0x1002);
    auto a = random_tensor({3, 4}, rng);
    auto same = random_tensor({3, 4}, rng);
    auto row = random_tensor({4}, rng);
    auto scalar = random_tensor({1}, rng);
    auto target = random_tensor({3, 4}, rng);
    CHECK(gradcheck::check<double>([&] { return mse(add(a, same), target); }, {a, same})
              .max_rel_err < 1e-4);
    CHECK(gradcheck::check<double>([&] { return mse(add(a, row), target); }, {a, row})
              .max_rel_err < 1e-4);
    CHECK(gradcheck::check<double>([&] { return mse(add(a, scalar), target); }, {a, scalar})
              .max_rel_err < 1e-4);
}

TEST_CASE("gradients: elementwise and shape ops") {
    Rng rng(0x1003);
    auto a = random_tensor({3, 5}, rng);
    auto b = random_tensor({3, 5}, rng);
    auto target35 = random_tensor({3, 5}, rng);
    auto target53 = random_tensor({5, 3}, rng);
    auto target32 = random_tensor({3, 2}, rng);
    auto target38 = random_tensor({3, 8}, rng);
    auto b38 = random_tensor({3, 3}, rng);
    auto target31 = random_tensor({3, 1}, rng);

    CHECK(gradcheck::check<double>([&] { return mse(mul(a, b), target35); }, {a, b})
              .max_rel_err < 1e-4);
    CHECK(gradcheck::check<double>([&] { return mse(scale(a, -2.5), target35); }, {a})
              .max_rel_err < 1e-4);
    CHECK(gradcheck::check<double>([&] { return mse(transpose(a), target53); }, {a})
              .max_rel_err < 1e-4);
    CHECK(gradcheck::check<double>([&] { return mse(slice_cols(a, 1, 2), target32); }, {a})
              .max_rel_err < 1e-4);
    CHECK(gradcheck::check<double>([&] { return mse(concat(a, b38), target38); }, {a, b38})
              .max_rel_err < 1e-4);
    CHECK(gradcheck::check<double>([&] { return mse(row_sum(a), target31); }, {a})
              .max_rel_err < 1e-4);
}

TEST_CASE("stack_rows concatenates row blocks in order") {
    Rng rng(0x100b);
    auto a = random_tensor({2, 3}, rng);
    auto b = random_tensor({1, 3}, rng);
    auto s = stack_rows<double>({a, b});
    REQUIRE(s->shape == Shape{3, 3});
    for (int j = 0; j < 3; ++j) {
        CHECK(s->data[0 * 3 + j] == a->data[0 * 3 + j]);
        CHECK(s->data[1 * 3 + j] == a->data[1 * 3 + j]);
        CHECK(s->data[2 * 3 + j] == b->data[j]);
    }
    CHECK_THROWS_AS(stack_rows<double>({}), apa::Error);
    auto bad = random_tensor({1, 2}, rng);
    CHECK_THROWS_AS(stack_rows<double>({a, bad}), apa::Error);
}

TEST_CASE("gradients: stack_rows routes into every block") {
    Rng rng(0x100c);
    auto a = random_tensor({2, 4}, rng);
    auto b = random_tensor({3, 4}, rng);
    auto c = random_tensor({1, 4}, rng);
    auto target = random_tensor({6, 4}, rng);
    CHECK(gradcheck::check<double>([&] { return mse(stack_rows<double>({a, b, c}), target); },
                                   {a, b, c})
              .max_rel_err < 1e-4);
}

TEST_CASE("gradients: div_rows away from zero divisors") {
    Rng rng(0x1004);
    auto a = random_tensor({4, 3}, rng);
    auto s = random_tensor({4, 1}, rng, 0.5, 2.0);
    auto target = random_tensor({4, 3}, rng);
    CHECK(gradcheck::check<double>([&] { return mse(div_rows(a, s), target); }, {a, s})
              .max_rel_err < 1e-4);
}

TEST_CASE("gradients: layer_norm, softmax, gelu") {
    Rng rng(0x1005);
    auto x = random_tensor({4, 6}, rng);
    auto gain = random_tensor({6}, rng, 0.5, 1.5);
    auto bias = random_tensor({6}, rng);
    auto target = random_tensor({4, 6}, rng);
    CHECK(gradcheck::check<double>(
              [&] { return mse(layer_norm(x, gain, bias), target); }, {x, gain, bias})
              .max_rel_err < 1e-4);
    CHECK(gradcheck::check<double>([&] { return mse(softmax(x), target); }, {x})
              .max_rel_err < 1e-4);
    CHECK(gradcheck::check<double>([&] { return mse(gelu(x), target); }, {x})
              .max_rel_err < 1e-4);
}

TEST_CASE("gradients: masked softmax ignores masked columns") {
    Rng rng(0x1006);
    auto x = random_tensor({3, 5}, rng);
    auto target = random_tensor({3, 5}, rng);
    std::vector<std::uint8_t> mask = {0, 1, 0, 0, 1};
    CHECK(gradcheck::check<double>([&] { return mse(softmax(x, &mask), target); }, {x})
              .max_rel_err < 1e-4);
}

TEST_CASE("gradients: clip_min with coordinates clear of the hinge") {
    Rng rng(0x1007);
    auto x = make_tensor<double>({3, 4});
    for (double& v : x->data) {
        const double mag = rng.uniform(0.1, 2.0);
        v = rng.bernoulli(0.5) ? mag : -mag;
    }
    auto target = random_tensor({3, 4}, rng);
    CHECK(gradcheck::check<double>([&] { return mse(clip_min(x, 0.0), target); }, {x})
              .max_rel_err < 1e-4);
}

TEST_CASE("gradients: embedding lookup scatters into the table") {
    Rng rng(0x1008);
    auto table = random_tensor({7, 4}, rng);
    const std::vector<int> ids = {2, 5, 2, 0};  // repeated id accumulates
    auto target = random_tensor({4, 4}, rng);
    CHECK(gradcheck::check<double>(
              [&] { return mse(embedding_lookup(table, ids), target); }, {table})
              .max_rel_err < 1e-4);
    CHECK_THROWS_WITH_AS((void)embedding_lookup(table, std::vector<int>{9}),
                         doctest::Contains("9"), apa::Error);
}

TEST_CASE("gradients: mean_pool over segments") {
    Rng rng(0x1009);
    auto x = random_tensor({6, 3}, rng);
    const std::vector<std::vector<int>> segments = {{0, 1, 2}, {3}, {4, 5}};
    auto target = random_tensor({3, 3}, rng);
    CHECK(gradcheck::check<double>([&] { return mse(mean_pool(x, segments), target); }, {x})
              .max_rel_err < 1e-4);
    CHECK_THROWS_AS((void)mean_pool(x, {{0}, {}}), apa::Error);
    CHECK_THROWS_AS((void)mean_pool(x, {{0, 6}}), apa::Error);
}

TEST_CASE("gradients: dropout with a fixed stream") {
    Rng rng(0x100a);
    auto x = random_tensor({4, 5}, rng);
    auto target = random_tensor({4, 5}, rng);
    CHECK(gradcheck::check<double>(
              [&] {
                  Rng fixed(42);  // identical mask on every rebuild
                  return mse(dropout(x, 0.4, fixed, true), target);
              },
              {x})
              .max_rel_err < 1e-4);
}

TEST_CASE("dropout is the identity at rate 0 or in eval mode") {
    Rng rng(0x100b);
    auto x = random_tensor({2, 3}, rng);
    CHECK(dropout(x, 0.0, rng, true).get() == x.get());
    CHECK(dropout(x, 0.5, rng, false).get() == x.get());
    CHECK_THROWS_AS((void)dropout(x, 1.0, rng, true), apa::Error);
}

TEST_CASE("gradients: cross_entropy with an include mask") {
    Rng rng(0x100c);
    auto logits = random_tensor({5, 7}, rng);
    const std::vector<int> targets = {1, 3, 0, 6, 2};
    std::vector<std::uint8_t> include = {1, 0, 1, 1, 0};
    CHECK(gradcheck::check<double>(
              [&] { return cross_entropy(logits, targets, &include); }, {logits})
              .max_rel_err < 1e-4);
    CHECK_THROWS_AS((void)cross_entropy(logits, std::vector<int>{1, 2}), apa::Error);
    std::vector<std::uint8_t> none(5, 0);
    CHECK_THROWS_AS((void)cross_entropy(logits, targets, &none), apa::Error);
}

TEST_CASE("gradients: mse flows to predictions and targets") {
    Rng rng(0x100d);
    auto pred = random_tensor({4, 7}, rng);
    auto target = random_tensor({4, 7}, rng);
    std::vector<std::uint8_t> include = {1, 1, 0, 1};
    CHECK(gradcheck::check<double>([&] { return mse(pred, target, &include); }, {pred, target})
              .max_rel_err < 1e-4);
}

TEST_CASE("gradient accumulates across multiple consumers of one node") {
    // y = sum((x*x) + (x*x)) -> dy/dx = 4x; exercises the diamond pattern.
    auto x = make_tensor<double>({1, 3}, {0.5, -1.0, 2.0});
    auto zero = make_tensor<double>({1, 3}, {0, 0, 0});
    auto forward = [&] {
        auto sq = mul(x, x);
        return scale(row_sum(add(sq, sq)), 0.5);  // = sum(x^2)
    };
    auto report = gradcheck::check<double>(
        [&] { return mse(forward(), make_tensor<double>({1, 1}, std::vector<double>{0.0})); },
        {x});
    CHECK(report.max_rel_err < 1e-4);
    (void)zero;
}

TEST_CASE("multi-head attention: single position reduces to value projection") {
    Rng rng(0x100e);
    const int d = 4;
    auto x = random_tensor({1, d}, rng);
    auto wq = random_tensor({d, d}, rng);
    auto wk = random_tensor({d, d}, rng);
    auto wv = random_tensor({d, d}, rng);
    auto wo = random_tensor({d, d}, rng);
    auto out = multi_head_attention(x, x, x, wq, wk, wv, wo, 2);
    auto direct = matmul(matmul(x, wv), wo);  // softmax over one key is 1
    REQUIRE(out->numel() == direct->numel());
    for (std::size_t i = 0; i < out->numel(); ++i)
        CHECK(out->data[i] == doctest::Approx(direct->data[i]).epsilon(1e-9));
}

TEST_CASE("multi-head attention rejects bad head counts and full masks") {
    Rng rng(0x100f);
    auto x = random_tensor({2, 4}, rng);
    auto w = random_tensor({4, 4}, rng);
    CHECK_THROWS_WITH_AS((void)multi_head_attention(x, x, x, w, w, w, w, 3),
                         doctest::Contains("divisible"), apa::Error);
    std::vector<std::uint8_t> all_masked = {1, 1};
    CHECK_THROWS_AS((void)multi_head_attention(x, x, x, w, w, w, w, 2, &all_masked),
                    apa::Error);
}

TEST_CASE("gradients: multi-head attention end to end on a 2x4 toy input") {
    Rng rng(0x1010);
    auto x = random_tensor({2, 4}, rng);
    auto wq = random_tensor({4, 4}, rng);
    auto wk = random_tensor({4, 4}, rng);
    auto wv = random_tensor({4, 4}, rng);
    auto wo = random_tensor({4, 4}, rng);
    auto target = random_tensor({2, 4}, rng);
    auto report = gradcheck::check<double>(
        [&] { return mse(multi_head_attention(x, x, x, wq, wk, wv, wo, 2), target); },
        {x, wq, wk, wv, wo});
    CHECK(report.max_rel_err < 1e-4);
}

TEST_CASE("forward passes are bit-identical across runs") {
    auto run = [] {
        Rng rng(0xbeef);
        auto x = random_tensor({3, 8}, rng);
        auto w = random_tensor({8, 8}, rng);
        auto g = make_tensor<double>({8}, std::vector<double>(8, 1.0));
        auto b = make_tensor<double>({8}, std::vector<double>(8, 0.0));
        return layer_norm(gelu(matmul(x, w)), g, b)->data;
    };
    const auto a = run();
    const auto b = run();
    CHECK(a == b);
}

TEST_CASE("checkpoints round-trip bit-exactly") {
    Rng rng(0x1011);
    Registry reg;
    make_param(reg, "encoder.w1", {5, 3}, rng);
    make_param(reg, "encoder.b1", {3}, rng);
    make_param(reg, "head.w", {3, 2}, rng);
    reg["head.w"]->data[0] = -0.0f;  // sign-of-zero survives a bit-exact trip
    const std::string path = "build_test_ckpt.bin";
    save_checkpoint(reg, path);
    const Registry loaded = load_checkpoint(path);
    REQUIRE(loaded.size() == reg.size());
    for (const auto& [name, t] : reg) {
        REQUIRE(loaded.count(name) == 1);
        const auto& l = loaded.at(name);
        CHECK(l->shape == t->shape);
        REQUIRE(l->data.size() == t->data.size());
        for (std::size_t i = 0; i < t->data.size(); ++i) {
            // Compare bit patterns, not values.
            std::uint32_t ba, bb;
            static_assert(sizeof(float) == 4);
            std::memcpy(&ba, &t->data[i], 4);
            std::memcpy(&bb, &l->data[i], 4);
            CHECK(ba == bb);
        }
    }
    std::remove(path.c_str());
}

TEST_CASE("checkpoint rejects bad magic, versions, truncation, and trailing bytes") {
    const std::string path = "build_test_ckpt2.bin";
    Registry reg;
    Rng rng(1);
    make_param(reg, "w", {2, 2}, rng);
    save_checkpoint(reg, path);
    std::string bytes = apa::read_text_file(path);

    std::string bad_magic = bytes;
    bad_magic[0] = 'X';
    apa::write_file_atomic(path, bad_magic);
    CHECK_THROWS_WITH_AS((void)load_checkpoint(path), doctest::Contains("magic"), apa::Error);

    std::string bad_version = bytes;
    bad_version[4] = 9;
    apa::write_file_atomic(path, bad_version);
    CHECK_THROWS_WITH_AS((void)load_checkpoint(path), doctest::Contains("version"), apa::Error);

    apa::write_file_atomic(path, bytes.substr(0, bytes.size() - 3));
    CHECK_THROWS_WITH_AS((void)load_checkpoint(path), doctest::Contains("truncated"), apa::Error);

    apa::write_file_atomic(path, bytes + "xx");
    CHECK_THROWS_WITH_AS((void)load_checkpoint(path), doctest::Contains("trailing"), apa::Error);

    // Empty registry: valid file with zero entries.
    save_checkpoint(Registry{}, path);
    CHECK(load_checkpoint(path).empty());
    std::remove(path.c_str());
}

TEST_CASE("Adam minimizes a quadratic and is deterministic") {
    auto run = [] {
        Registry reg;
        auto x = make_tensor<float>({1}, std::vector<float>{5.0f});
        x->requires_grad = true;
        x->ensure_grad();
        reg["x"] = x;
        Adam opt(0.05);
        for (int step = 0; step < 400; ++step) {
            zero_grads(reg);
            auto shifted = add(x, scalar_tensor(-3.0f));
            auto loss = mse(shifted, scalar_tensor(0.0f));
            backward(loss);
            opt.step(reg);
            detach_graph(shifted);
        }
        return x->data[0];
    };
    const float a = run();
    const float b = run();
    CHECK(a == b);  // bitwise deterministic
    CHECK(std::fabs(a - 3.0f) < 1e-2);
}

TEST_CASE("frozen registry entries are skipped by the optimizer") {
    Registry reg;
    Rng rng(7);
    auto w = make_param(reg, "w", {2, 2}, rng);
    auto frozen_param = make_param(reg, "stats", {2}, rng);
    const auto before = frozen_param->data;
    for (auto& g : w->grad) g = 1.0f;
    for (auto& g : frozen_param->grad) g = 1.0f;
    std::map<std::string, bool> frozen{{"stats", true}};
    Adam opt;
    opt.step(reg, &frozen);
    CHECK(frozen_param->data == before);
    CHECK(w->data != std::vector<float>(4, 0.0f));
}

TEST_CASE("xavier initialization is seed-deterministic and bounded") {
    Rng a(123), b(123), c(124);
    auto t1 = make_tensor<float>({20, 30});
    auto t2 = make_tensor<float>({20, 30});
    auto t3 = make_tensor<float>({20, 30});
    xavier_init(t1, a);
    xavier_init(t2, b);
    xavier_init(t3, c);
    CHECK(t1->data == t2->data);
    CHECK(t1->data != t3->data);
    const double limit = std::sqrt(6.0 / 50);
    for (float v : t1->data) CHECK(std::fabs(v) <= limit);
}

TEST_CASE("registry helpers flag and clear gradients") {
    Registry reg;
    Rng rng(9);
    auto w = make_param(reg, "w", {2, 3}, rng);
    for (auto& g : w->grad) g = 2.0f;
    zero_grads(reg);
    for (float g : w->grad) CHECK(g == 0.0f);
    CHECK_THROWS_AS(make_param(reg, "w", {1, 1}, rng), apa::Error);
}

}  // TEST_SUITE
