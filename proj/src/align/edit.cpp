#include "apa/align/edit.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace apa::align {

namespace {

struct OpCounts {
    long long h = 0, s = 0, d = 0, i = 0;
};

OpCounts count_ops(const EditScript& script) {
    OpCounts c;
    for (const EditOp& op : script.ops) {
        switch (op.type) {
            case EditType::Match: ++c.h; break;
            case EditType::Substitute: ++c.s; break;
            case EditType::Delete: ++c.d; break;
            case EditType::Insert: ++c.i; break;
        }
    }
    return c;
}

std::pair<std::string, std::string> ordered_pair(const std::string& a, const std::string& b) {
    return a <= b ? std::make_pair(a, b) : std::make_pair(b, a);
}

}  // namespace

ErrorRates error_rates(const EditScript& script) {
    const OpCounts c = count_ops(script);
    ErrorRates r;
    r.hits = c.h;
    r.substitutions = c.s;
    r.deletions = c.d;
    r.insertions = c.i;
    const double edits = static_cast<double>(c.s + c.d + c.i);
    r.er = edits / static_cast<double>(std::max<long long>(1, c.h + c.s + c.d));
    r.mer = edits / static_cast<double>(std::max<long long>(1, c.h + c.s + c.d + c.i));
    return r;
}

std::string error_rates_to_json(const std::string& id, const ErrorRates& rates) {
    std::ostringstream out;
    out << "{\"id\":\"" << id << "\",\"er\":" << format_real(rates.er)
        << ",\"mer\":" << format_real(rates.mer) << ",\"hits\":" << rates.hits
        << ",\"substitutions\":" << rates.substitutions << ",\"deletions\":" << rates.deletions
        << ",\"insertions\":" << rates.insertions << "}";
    return out.str();
}

PhoneCost PhoneCost::trait_default(double same_trait, double cross_trait, double indel,
                                   const phonetics::TraitTable& traits) {
    PhoneCost c;
    c.traits_ = &traits;
    c.same_trait_ = same_trait;
    c.cross_trait_ = cross_trait;
    c.indel_ = indel;
    c.validate();
    return c;
}

PhoneCost PhoneCost::from_tsv(const std::string& path, const phonetics::TraitTable& traits) {
    PhoneCost c;
    c.traits_ = &traits;

    const std::string content = read_text_file(path);
    std::istringstream in(content);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::istringstream fields(line);
        std::string a, b, cost_text;
        if (line[0] == '#') {
            // "#indel<TAB>cost" overrides the delete/insert cost; other
            // comment lines are skipped.
            if (line.rfind("#indel\t", 0) == 0) {
                try {
                    c.indel_ = std::stod(line.substr(7));
                } catch (const std::exception&) {
                    throw Error(path + ":" + std::to_string(lineno) + ": bad #indel cost");
                }
            }
            continue;
        }
        if (!std::getline(fields, a, '\t') || !std::getline(fields, b, '\t') ||
            !std::getline(fields, cost_text, '\t')) {
            throw Error(path + ":" + std::to_string(lineno) +
                        ": expected SYM1<TAB>SYM2<TAB>cost");
        }
        double cost = 0;
        try {
            cost = std::stod(cost_text);
        } catch (const std::exception&) {
            throw Error(path + ":" + std::to_string(lineno) + ": bad cost \"" + cost_text + "\"");
        }
        auto key = ordered_pair(phonetics::strip_stress(a), phonetics::strip_stress(b));
        auto [it, inserted] = c.pairs_.emplace(key, cost);
        if (!inserted && it->second != cost) {
            throw Error(path + ":" + std::to_string(lineno) + ": conflicting cost for pair " +
                        key.first + "/" + key.second);
        }
    }
    c.validate();
    return c;
}

void PhoneCost::validate() const {
    if (indel_ <= 0) throw Error("phone cost table: delete/insert cost must be positive");
    if (same_trait_ < 0 || cross_trait_ < 0)
        throw Error("phone cost table: substitution costs must be non-negative");
    const double bound = 2 * indel_;
    if (same_trait_ > bound || cross_trait_ > bound)
        throw Error("phone cost table: substitution cost exceeds delete+insert");
    for (const auto& [pair, cost] : pairs_) {
        if (pair.first == pair.second && cost != 0)
            throw Error("phone cost table: non-zero cost on identical symbol " + pair.first);
        if (cost < 0) throw Error("phone cost table: negative cost for pair " + pair.first + "/" +
                                  pair.second);
        if (cost > bound)
            throw Error("phone cost table: cost for pair " + pair.first + "/" + pair.second +
                        " exceeds delete+insert");
    }
}

double PhoneCost::substitution(const std::string& a, const std::string& b) const {
    if (a == b) return 0;
    auto it = pairs_.find(ordered_pair(a, b));
    if (it != pairs_.end()) return it->second;
    if (traits_ != nullptr) {
        const phonetics::Trait ta = traits_->trait_of(a);
        if (ta != phonetics::Trait::Other && ta == traits_->trait_of(b)) return same_trait_;
    }
    return cross_trait_;
}

EditScript weighted_phone_align(const std::vector<std::string>& ref,
                                const std::vector<std::string>& hyp, const PhoneCost& cost) {
    const std::size_t n = ref.size();
    const std::size_t m = hyp.size();
    const double indel = cost.indel();

    // rank encodes the tie preference Match(0) > Substitute(1) > Delete(2) > Insert(3)
    std::vector<double> dist((n + 1) * (m + 1), 0.0);
    std::vector<unsigned char> step((n + 1) * (m + 1), 0);
    auto idx = [m](std::size_t i, std::size_t j) { return i * (m + 1) + j; };

    for (std::size_t i = 1; i <= n; ++i) {
        dist[idx(i, 0)] = static_cast<double>(i) * indel;
        step[idx(i, 0)] = 2;
    }
    for (std::size_t j = 1; j <= m; ++j) {
        dist[idx(0, j)] = static_cast<double>(j) * indel;
        step[idx(0, j)] = 3;
    }
    for (std::size_t i = 1; i <= n; ++i) {
        for (std::size_t j = 1; j <= m; ++j) {
            const bool equal = ref[i - 1] == hyp[j - 1];
            const double diag =
                dist[idx(i - 1, j - 1)] + (equal ? 0.0 : cost.substitution(ref[i - 1], hyp[j - 1]));
            const double del = dist[idx(i - 1, j)] + indel;
            const double ins = dist[idx(i, j - 1)] + indel;
            double best = diag;
            unsigned char best_rank = equal ? 0 : 1;
            if (del < best) {
                best = del;
                best_rank = 2;
            }
            if (ins < best) {
                best = ins;
                best_rank = 3;
            }
            dist[idx(i, j)] = best;
            step[idx(i, j)] = best_rank;
        }
    }

    EditScript script;
    std::size_t i = n, j = m;
    while (i > 0 || j > 0) {
        switch (step[idx(i, j)]) {
            case 0:
                script.ops.push_back({EditType::Match, static_cast<int>(i - 1), static_cast<int>(j - 1)});
                --i;
                --j;
                break;
            case 1:
                script.ops.push_back(
                    {EditType::Substitute, static_cast<int>(i - 1), static_cast<int>(j - 1)});
                --i;
                --j;
                break;
            case 2:
                script.ops.push_back({EditType::Delete, static_cast<int>(i - 1), -1});
                --i;
                break;
            default:
                script.ops.push_back({EditType::Insert, -1, static_cast<int>(j - 1)});
                --j;
                break;
        }
    }
    std::reverse(script.ops.begin(), script.ops.end());
    return script;
}

double alignment_cost(const EditScript& script, const std::vector<std::string>& ref,
                      const std::vector<std::string>& hyp, const PhoneCost& cost) {
    double total = 0;
    for (const EditOp& op : script.ops) {
        switch (op.type) {
            case EditType::Match:
                break;
            case EditType::Substitute:
                total += cost.substitution(ref[static_cast<std::size_t>(op.i)],
                                           hyp[static_cast<std::size_t>(op.j)]);
                break;
            case EditType::Delete:
            case EditType::Insert:
                total += cost.indel();
                break;
        }
    }
    return total;
}

std::string strip_token_markers(const std::string& token) {
    std::string t = token;
    if (t.rfind("##", 0) == 0) t.erase(0, 2);
    // SentencePiece U+2581 (bytes E2 96 81) and GPT-2 BPE space marker
    // U+0120 (bytes C4 A0) appear as leading markers.
    if (t.size() >= 3 && static_cast<unsigned char>(t[0]) == 0xE2 &&
        static_cast<unsigned char>(t[1]) == 0x96 && static_cast<unsigned char>(t[2]) == 0x81) {
        t.erase(0, 3);
    }
    if (t.size() >= 2 && static_cast<unsigned char>(t[0]) == 0xC4 &&
        static_cast<unsigned char>(t[1]) == 0xA0) {
        t.erase(0, 2);
    }
    return t;
}

std::map<int, std::vector<int>> pool_tokens_to_words(const std::vector<std::string>& tokens,
                                                     const std::vector<std::string>& words) {
    std::vector<char> word_chars;
    std::vector<int> word_of_char;
    for (std::size_t w = 0; w < words.size(); ++w) {
        for (char ch : words[w]) {
            word_chars.push_back(ch);
            word_of_char.push_back(static_cast<int>(w));
        }
    }
    std::vector<char> token_chars;
    std::vector<int> token_of_char;
    for (std::size_t t = 0; t < tokens.size(); ++t) {
        for (char ch : strip_token_markers(tokens[t])) {
            token_chars.push_back(ch);
            token_of_char.push_back(static_cast<int>(t));
        }
    }

    const EditScript script = myers_diff(word_chars, token_chars);
    std::vector<int> assigned(tokens.size(), -1);
    for (const EditOp& op : script.ops) {
        if (op.type != EditType::Match) continue;
        const int token = token_of_char[static_cast<std::size_t>(op.j)];
        if (assigned[static_cast<std::size_t>(token)] < 0)
            assigned[static_cast<std::size_t>(token)] = word_of_char[static_cast<std::size_t>(op.i)];
    }

    std::vector<std::string> leftover;
    for (std::size_t t = 0; t < tokens.size(); ++t)
        if (assigned[t] < 0) leftover.push_back(tokens[t]);
    if (!leftover.empty()) {
        std::string msg = "token-to-word pooling: unalignable tokens:";
        for (const std::string& t : leftover) msg += " \"" + t + "\"";
        throw Error(msg);
    }

    std::map<int, std::vector<int>> pooled;
    for (std::size_t t = 0; t < tokens.size(); ++t)
        pooled[assigned[t]].push_back(static_cast<int>(t));
    return pooled;
}

}  // namespace apa::align
