#include "doctest.h"

#include <string>
#include <vector>

#include "apa/align/edit.hpp"
#include "apa/common.hpp"
#include "oracles.hpp"

using namespace apa::align;
using apa::Rng;

namespace {

std::vector<std::string> syms(std::initializer_list<const char*> xs) {
    return std::vector<std::string>(xs.begin(), xs.end());
}

// Validates the EditScript contract: monotone, complete traversal of both
// sequences, Match only on equal symbols.
template <class T>
void check_script_valid(const EditScript& s, const std::vector<T>& a, const std::vector<T>& b) {
    int i = 0, j = 0;
    for (const EditOp& op : s.ops) {
        switch (op.type) {
            case EditType::Match:
                REQUIRE(op.i == i);
                REQUIRE(op.j == j);
                REQUIRE(a[static_cast<std::size_t>(i)] == b[static_cast<std::size_t>(j)]);
                ++i;
                ++j;
                break;
            case EditType::Substitute:
                REQUIRE(op.i == i);
                REQUIRE(op.j == j);
                ++i;
                ++j;
                break;
            case EditType::Delete:
                REQUIRE(op.i == i);
                ++i;
                break;
            case EditType::Insert:
                REQUIRE(op.j == j);
                ++j;
                break;
        }
    }
    REQUIRE(i == static_cast<int>(a.size()));
    REQUIRE(j == static_cast<int>(b.size()));
}

std::vector<int> random_seq(Rng& rng, int max_len, int alphabet) {
    std::vector<int> v(rng.below(static_cast<std::uint64_t>(max_len + 1)));
    for (int& x : v) x = static_cast<int>(rng.below(static_cast<std::uint64_t>(alphabet)));
    return v;
}

}  // namespace

TEST_SUITE("align") {

TEST_CASE("identical sequences diff to all-Match") {
    const auto a = syms({"x", "y", "z"});
    const EditScript s = myers_diff(a, a);
    REQUIRE(s.ops.size() == 3);
    for (const EditOp& op : s.ops) CHECK(op.type == EditType::Match);
}

TEST_CASE("single middle deletion") {
    const auto a = syms({"a", "b", "c"});
    const auto b = syms({"a", "c"});
    const EditScript s = myers_diff(a, b);
    REQUIRE(s.ops.size() == 3);
    CHECK(s.ops[0].type == EditType::Match);
    CHECK(s.ops[1].type == EditType::Delete);
    CHECK(s.ops[1].i == 1);
    CHECK(s.ops[2].type == EditType::Match);
}

TEST_CASE("empty against singleton is one Insert") {
    const std::vector<std::string> a;
    const auto b = syms({"q"});
    const EditScript s = myers_diff(a, b);
    REQUIRE(s.ops.size() == 1);
    CHECK(s.ops[0].type == EditType::Insert);
    CHECK(s.ops[0].j == 0);
}

TEST_CASE("both empty is the empty script") {
    const std::vector<int> e;
    CHECK(myers_diff(e, e).ops.empty());
}

TEST_CASE("diff edit count matches the LCS oracle on random sequences") {
    Rng rng(0x5eed0001);
    for (int trial = 0; trial < 2000; ++trial) {
        const std::vector<int> a = random_seq(rng, 12, 4);
        const std::vector<int> b = random_seq(rng, 12, 4);
        const EditScript s = myers_diff(a, b);
        check_script_valid(s, a, b);
        int edits = 0;
        for (const EditOp& op : s.ops) {
            REQUIRE(op.type != EditType::Substitute);  // pure insert/delete diff
            if (op.type != EditType::Match) ++edits;
        }
        CHECK(edits == oracles::lcs_edit_distance(a, b));
    }
}

TEST_CASE("weighted alignment: identical sequences cost zero") {
    const PhoneCost cost = PhoneCost::trait_default();
    const auto a = syms({"K", "AE", "T"});
    const EditScript s = weighted_phone_align(a, a, cost);
    for (const EditOp& op : s.ops) CHECK(op.type == EditType::Match);
    CHECK(alignment_cost(s, a, a, cost) == doctest::Approx(0.0));
}

TEST_CASE("uniform costs give one substitution for K AE T vs K IH T") {
    const PhoneCost cost = PhoneCost::trait_default(1.0, 1.0, 1.0);
    const auto ref = syms({"K", "AE", "T"});
    const auto hyp = syms({"K", "IH", "T"});
    const EditScript s = weighted_phone_align(ref, hyp, cost);
    REQUIRE(s.ops.size() == 3);
    CHECK(s.ops[0].type == EditType::Match);
    CHECK(s.ops[1].type == EditType::Substitute);
    CHECK(s.ops[1].i == 1);
    CHECK(s.ops[1].j == 1);
    CHECK(s.ops[2].type == EditType::Match);
    CHECK(alignment_cost(s, ref, hyp, cost) == doctest::Approx(1.0));
}

TEST_CASE("trait-aware costs: same-trait substitution costs 0.5") {
    const PhoneCost cost = PhoneCost::trait_default();
    const auto ref = syms({"S"});
    const auto hyp = syms({"Z"});
    const EditScript s = weighted_phone_align(ref, hyp, cost);
    REQUIRE(s.ops.size() == 1);
    CHECK(s.ops[0].type == EditType::Substitute);
    CHECK(alignment_cost(s, ref, hyp, cost) == doctest::Approx(0.5));
    // Cross-trait pair costs 1.0.
    CHECK(cost.substitution("S", "AA") == doctest::Approx(1.0));
    CHECK(cost.substitution("S", "Z") == doctest::Approx(0.5));
    CHECK(cost.substitution("S", "S") == doctest::Approx(0.0));
    CHECK(cost.substitution("S", "Z") == cost.substitution("Z", "S"));
}

TEST_CASE("weighted alignment matches the memoized oracle on random inputs") {
    Rng rng(0x5eed0002);
    const std::vector<std::string> alphabet = {"AA", "IY", "UW", "P", "T", "S", "Z", "M"};
    for (int trial = 0; trial < 500; ++trial) {
        std::vector<std::string> ref(rng.below(11)), hyp(rng.below(11));
        for (auto& s : ref) s = alphabet[rng.below(alphabet.size())];
        for (auto& s : hyp) s = alphabet[rng.below(alphabet.size())];
        const PhoneCost cost = PhoneCost::trait_default();
        const EditScript script = weighted_phone_align(ref, hyp, cost);
        check_script_valid(script, ref, hyp);
        const double got = alignment_cost(script, ref, hyp, cost);
        const double want = oracles::weighted_align_cost(
            ref, hyp, [&](const std::string& a, const std::string& b) { return cost.substitution(a, b); },
            cost.indel());
        CHECK(got == doctest::Approx(want).epsilon(1e-12));
    }
}

TEST_CASE("memoized alignment oracle agrees with exhaustive enumeration") {
    Rng rng(0x5eed0003);
    const std::vector<std::string> alphabet = {"AA", "P", "S"};
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<std::string> ref(rng.below(6)), hyp(rng.below(6));
        for (auto& s : ref) s = alphabet[rng.below(alphabet.size())];
        for (auto& s : hyp) s = alphabet[rng.below(alphabet.size())];
        const PhoneCost cost = PhoneCost::trait_default();
        auto sub = [&](const std::string& a, const std::string& b) {
            return cost.substitution(a, b);
        };
        CHECK(oracles::weighted_align_cost(ref, hyp, sub, 1.0) ==
              doctest::Approx(oracles::exhaustive_align_cost(ref, hyp, sub, 1.0)).epsilon(1e-12));
    }
}

TEST_CASE("tie-breaking is deterministic and prefers Match then Substitute") {
    // ref=[A], hyp=[B] with sub cost 2.0 == del+ins: Substitute is preferred.
    const PhoneCost cost = PhoneCost::trait_default(2.0, 2.0, 1.0);
    const auto ref = syms({"AA"});
    const auto hyp = syms({"P"});
    const EditScript s = weighted_phone_align(ref, hyp, cost);
    REQUIRE(s.ops.size() == 1);
    CHECK(s.ops[0].type == EditType::Substitute);
    // Same call twice gives the identical script.
    const EditScript s2 = weighted_phone_align(ref, hyp, cost);
    REQUIRE(s2.ops.size() == s.ops.size());
    for (std::size_t k = 0; k < s.ops.size(); ++k) CHECK(s2.ops[k].type == s.ops[k].type);
}

TEST_CASE("cost preconditions are enforced at construction") {
    CHECK_THROWS_AS(PhoneCost::trait_default(0.5, 1.0, 0.0), apa::Error);   // indel must be > 0
    CHECK_THROWS_AS(PhoneCost::trait_default(3.0, 1.0, 1.0), apa::Error);   // sub > del+ins
    CHECK_THROWS_AS(PhoneCost::trait_default(-0.5, 1.0, 1.0), apa::Error);  // negative
}

TEST_CASE("cost table TSV overrides pairs and indel") {
    const std::string path = "build_test_costs.tsv";
    apa::write_file_atomic(path,
                           "# custom overrides\n"
                           "#indel\t2\n"
                           "AA\tAE\t0.25\n"
                           "S\tZ\t0.75\n");
    const PhoneCost cost = PhoneCost::from_tsv(path);
    CHECK(cost.indel() == doctest::Approx(2.0));
    CHECK(cost.substitution("AA", "AE") == doctest::Approx(0.25));
    CHECK(cost.substitution("AE", "AA") == doctest::Approx(0.25));  // symmetric storage
    CHECK(cost.substitution("S", "Z") == doctest::Approx(0.75));
    CHECK(cost.substitution("F", "V") == doctest::Approx(0.5));  // fallback: same trait
    std::remove(path.c_str());
}

TEST_CASE("malformed cost tables are rejected") {
    const std::string path = "build_test_costs_bad.tsv";
    apa::write_file_atomic(path, "AA\tAA\t0.5\n");  // non-zero on identical
    CHECK_THROWS_AS(PhoneCost::from_tsv(path), apa::Error);
    apa::write_file_atomic(path, "AA\tAE\n");  // missing cost column
    CHECK_THROWS_AS(PhoneCost::from_tsv(path), apa::Error);
    std::remove(path.c_str());
}

TEST_CASE("error rates match the defining formulas") {
    EditScript all_match;
    for (int i = 0; i < 3; ++i) all_match.ops.push_back({EditType::Match, i, i});
    ErrorRates r = error_rates(all_match);
    CHECK(r.er == doctest::Approx(0.0));
    CHECK(r.mer == doctest::Approx(0.0));

    EditScript one_sub;
    one_sub.ops.push_back({EditType::Match, 0, 0});
    one_sub.ops.push_back({EditType::Substitute, 1, 1});
    one_sub.ops.push_back({EditType::Match, 2, 2});
    r = error_rates(one_sub);
    CHECK(r.er == doctest::Approx(1.0 / 3.0));
    CHECK(r.mer == doctest::Approx(1.0 / 3.0));

    EditScript dels;
    for (int i = 0; i < 3; ++i) dels.ops.push_back({EditType::Delete, i, -1});
    r = error_rates(dels);
    CHECK(r.er == doctest::Approx(1.0));
    CHECK(r.mer == doctest::Approx(1.0));

    // Empty script: denominators clamp at 1.
    r = error_rates(EditScript{});
    CHECK(r.er == 0.0);
    CHECK(r.mer == 0.0);
}

TEST_CASE("MER is bounded by 1 and by ER; equality exactly when no insertions") {
    Rng rng(0x5eed0004);
    for (int trial = 0; trial < 500; ++trial) {
        const std::vector<int> a = random_seq(rng, 12, 3);
        const std::vector<int> b = random_seq(rng, 12, 3);
        const ErrorRates r = error_rates(myers_diff(a, b));
        CHECK(r.mer <= 1.0 + 1e-15);
        CHECK(r.mer <= r.er + 1e-15);
        if (r.insertions == 0)
            CHECK(r.er == doctest::Approx(r.mer));
        else if (r.hits + r.substitutions + r.deletions > 0)
            CHECK(r.mer < r.er);  // strict once the reference is non-empty
    }
}

TEST_CASE("error-rate JSON report carries counts and rates") {
    EditScript s;
    s.ops.push_back({EditType::Match, 0, 0});
    s.ops.push_back({EditType::Insert, -1, 1});
    const std::string json = error_rates_to_json("utt1", error_rates(s));
    CHECK(json.find("\"id\":\"utt1\"") != std::string::npos);
    CHECK(json.find("\"insertions\":1") != std::string::npos);
    CHECK(json.find("\"mer\":0.5") != std::string::npos);
    CHECK(json.find("\"er\":1") != std::string::npos);
}

TEST_CASE("token pooling: single word absorbs all its pieces") {
    const auto pooled = pool_tokens_to_words({"ca", "t"}, {"cat"});
    REQUIRE(pooled.size() == 1);
    CHECK(pooled.at(0) == std::vector<int>{0, 1});
}

TEST_CASE("token pooling splits across word boundaries") {
    const auto pooled = pool_tokens_to_words({"the", "cat", "s"}, {"the", "cats"});
    REQUIRE(pooled.size() == 2);
    CHECK(pooled.at(0) == std::vector<int>{0});
    CHECK(pooled.at(1) == std::vector<int>{1, 2});
}

TEST_CASE("token pooling: identity when tokens equal words") {
    const auto pooled = pool_tokens_to_words({"alpha", "beta", "gamma"}, {"alpha", "beta", "gamma"});
    REQUIRE(pooled.size() == 3);
    for (int w = 0; w < 3; ++w) CHECK(pooled.at(w) == std::vector<int>{w});
}

TEST_CASE("token pooling strips sub-word markers") {
    CHECK(strip_token_markers("##ing") == "ing");
    CHECK(strip_token_markers("\xE2\x96\x81the") == "the");  // sentencepiece marker
    CHECK(strip_token_markers("\xC4\xA0the") == "the");      // byte-bpe space marker
    CHECK(strip_token_markers("plain") == "plain");
    const auto pooled = pool_tokens_to_words({"play", "##ing", "\xE2\x96\x81now"}, {"playing", "now"});
    REQUIRE(pooled.size() == 2);
    CHECK(pooled.at(0) == std::vector<int>{0, 1});
    CHECK(pooled.at(1) == std::vector<int>{2});
}

TEST_CASE("token pooling rejects unalignable residue, listing the tokens") {
    CHECK_THROWS_WITH_AS((void)pool_tokens_to_words({"cat", "xyz"}, {"cat"}),
                         doctest::Contains("xyz"), apa::Error);
}

}  // TEST_SUITE
