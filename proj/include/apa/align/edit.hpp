#pragma once

// Sequence alignment utilities: Myers O((N+M)D) shortest edit script,
// cost-weighted phone alignment, error rates, and token-to-word pooling.

#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "apa/common.hpp"
#include "apa/phonetics/phonetics.hpp"

namespace apa::align {

enum class EditType { Match, Substitute, Delete, Insert };

struct EditOp {
    EditType type;
    int i = -1;  // index into the reference sequence (Match/Substitute/Delete)
    int j = -1;  // index into the hypothesis sequence (Match/Substitute/Insert)
};

struct EditScript {
    std::vector<EditOp> ops;
};

struct ErrorRates {
    double er = 0;
    double mer = 0;
    long long hits = 0, substitutions = 0, deletions = 0, insertions = 0;
};

// Counts H/S/D/I and derives ER = (S+D+I)/max(1, H+S+D) and
// MER = (S+D+I)/max(1, H+S+D+I).
ErrorRates error_rates(const EditScript& script);

std::string error_rates_to_json(const std::string& id, const ErrorRates& rates);

namespace detail {

// Myers greedy forward search with trace-based backtracking. Match ops are
// emitted only on equal symbols; the script is a shortest one under unit
// insert/delete costs.
template <class T>
EditScript myers_impl(const std::vector<T>& a, const std::vector<T>& b) {
    const int n = static_cast<int>(a.size());
    const int m = static_cast<int>(b.size());
    const int max_d = n + m;
    EditScript script;
    if (max_d == 0) return script;

    const int width = 2 * max_d + 1;
    std::vector<int> v(static_cast<std::size_t>(width), 0);
    auto at = [&](std::vector<int>& vec, int k) -> int& {
        return vec[static_cast<std::size_t>(k + max_d)];
    };
    std::vector<std::vector<int>> trace;

    int found_d = -1;
    for (int d = 0; d <= max_d && found_d < 0; ++d) {
        trace.push_back(v);
        for (int k = -d; k <= d; k += 2) {
            int x;
            if (k == -d || (k != d && at(v, k - 1) < at(v, k + 1)))
                x = at(v, k + 1);  // step down: insert from b
            else
                x = at(v, k - 1) + 1;  // step right: delete from a
            int y = x - k;
            while (x < n && y < m && a[static_cast<std::size_t>(x)] == b[static_cast<std::size_t>(y)]) {
                ++x;
                ++y;
            }
            at(v, k) = x;
            if (x >= n && y >= m) {
                found_d = d;
                break;
            }
        }
    }

    // Backtrack from (n, m); trace[d] holds the frontier before depth d.
    std::vector<EditOp> rev;
    int x = n, y = m;
    for (int d = found_d; d >= 0; --d) {
        std::vector<int>& vd = trace[static_cast<std::size_t>(d)];
        int k = x - y;
        int prev_k;
        if (k == -d || (k != d && at(vd, k - 1) < at(vd, k + 1)))
            prev_k = k + 1;
        else
            prev_k = k - 1;
        int prev_x = at(vd, prev_k);
        int prev_y = prev_x - prev_k;
        while (x > prev_x && y > prev_y) {
            rev.push_back({EditType::Match, x - 1, y - 1});
            --x;
            --y;
        }
        if (d > 0) {
            if (x == prev_x)
                rev.push_back({EditType::Insert, -1, prev_y});
            else
                rev.push_back({EditType::Delete, prev_x, -1});
        }
        x = prev_x;
        y = prev_y;
    }
    script.ops.assign(rev.rbegin(), rev.rend());
    return script;
}

}  // namespace detail

template <class T>
EditScript myers_diff(const std::vector<T>& a, const std::vector<T>& b) {
    return detail::myers_impl(a, b);
}

// Substitution-cost model for the phonetically weighted aligner. Symmetric,
// zero on identical symbols, and bounded by delete+insert; violations are
// rejected at construction.
class PhoneCost {
public:
    // Trait-aware default: same articulation trait 0.5, cross-trait 1.0,
    // delete/insert 1.0.
    static PhoneCost trait_default(double same_trait = 0.5, double cross_trait = 1.0,
                                   double indel = 1.0,
                                   const phonetics::TraitTable& traits =
                                       phonetics::default_traits());

    // TSV: lines "SYM1<TAB>SYM2<TAB>cost"; optional "#indel<TAB>cost"
    // directive; unlisted pairs fall back to the cross-trait default.
    static PhoneCost from_tsv(const std::string& path,
                              const phonetics::TraitTable& traits =
                                  phonetics::default_traits());

    double substitution(const std::string& a, const std::string& b) const;
    double indel() const { return indel_; }

private:
    PhoneCost() = default;
    void validate() const;

    std::map<std::pair<std::string, std::string>, double> pairs_;
    const phonetics::TraitTable* traits_ = nullptr;
    double same_trait_ = 0.5;
    double cross_trait_ = 1.0;
    double indel_ = 1.0;
};

// Minimal-cost alignment by dynamic programming; ties broken by preferring
// Match > Substitute > Delete > Insert.
EditScript weighted_phone_align(const std::vector<std::string>& ref,
                                const std::vector<std::string>& hyp,
                                const PhoneCost& cost);

double alignment_cost(const EditScript& script, const std::vector<std::string>& ref,
                      const std::vector<std::string>& hyp, const PhoneCost& cost);

// Assigns every tokenizer token to exactly one word by Myers-diffing the
// concatenated character streams (sub-word markers stripped from tokens).
// Throws when a token has no aligned character.
std::map<int, std::vector<int>> pool_tokens_to_words(
    const std::vector<std::string>& tokens, const std::vector<std::string>& words);

// Strips WordPiece/SentencePiece/BPE sub-word markers ("##", "▁", "Ġ").
std::string strip_token_markers(const std::string& token);

}  // namespace apa::align
