#include "apa/hcf/hcf.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>

#include <json.hpp>

#include "apa/common.hpp"

namespace apa::hcf {

using nlohmann::json;

// ---------------------------------------------------------------- taxonomy --

const std::vector<std::string>& categories() {
    static const std::vector<std::string> k = {
        "pronunciation.phone",  "pronunciation.word",       "pronunciation.pitch",
        "pronunciation.energy", "pronunciation.rhythm",     "pronunciation.error_rate",
        "fluency.silence",      "fluency.phone",            "fluency.word"};
    return k;
}

const std::vector<std::string>& utterance_aspects() {
    static const std::vector<std::string> k = {"accuracy", "completeness", "fluency",
                                               "prosodic", "total"};
    return k;
}

std::string category_of(const std::string& feature_name) {
    for (const std::string& c : categories())
        if (feature_name.size() > c.size() + 1 && feature_name.compare(0, c.size(), c) == 0 &&
            feature_name[c.size()] == '.')
            return c;
    throw Error("feature name \"" + feature_name + "\" carries no known category tag");
}

void validate_hcf(const HcfVector& v) {
    for (const auto& [name, value] : v.values) {
        category_of(name);  // throws on unknown tags
        if (!std::isfinite(value))
            throw Error("feature \"" + name + "\" is not finite");
    }
}

// ------------------------------------------------------------------ helpers --

namespace {

void put(HcfVector& v, const std::string& name, double value) {
    if (!v.values.emplace(name, value).second)
        throw Error("duplicate feature name \"" + name + "\"");
}

void put_stats(HcfVector& v, const std::string& prefix, const std::vector<double>& values) {
    const dsp::StatVector7 s = dsp::stats7(values);
    put(v, prefix + "_mean", s.mean);
    put(v, prefix + "_std", s.std);
    put(v, prefix + "_median", s.median);
    put(v, prefix + "_mad", s.mad);
    put(v, prefix + "_max", s.max);
    put(v, prefix + "_min", s.min);
    put(v, prefix + "_sum", s.sum);
}

double pearson_raw(const std::vector<double>& a, const std::vector<double>& b) {
    const std::size_t n = a.size();
    double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
    for (std::size_t i = 0; i < n; ++i) {
        sa += a[i];
        sb += b[i];
        saa += a[i] * a[i];
        sbb += b[i] * b[i];
        sab += a[i] * b[i];
    }
    const double cov = sab - sa * sb / n;
    const double va = saa - sa * sa / n;
    const double vb = sbb - sb * sb / n;
    if (va <= 0 || vb <= 0) throw Error("pearson: constant input");
    return cov / std::sqrt(va * vb);
}

}  // namespace

// ------------------------------------------------------------------ rhythm --

namespace {

struct Interval {
    double start = 0, end = 0;
    int segments = 0;
    bool vocalic = false;

    double duration() const { return end - start; }
};

struct StreamMetrics {
    double rpvi = 0, npvi = 0, varco = 0, cci = 0;
    bool defined = false;
};

StreamMetrics stream_metrics(const std::vector<Interval>& intervals) {
    StreamMetrics out;
    const std::size_t m = intervals.size();
    if (m < 2) return out;  // pairwise metrics undefined: zeros, flag down
    out.defined = true;

    double rpvi = 0, npvi = 0, cci = 0;
    for (std::size_t k = 0; k + 1 < m; ++k) {
        const double d0 = intervals[k].duration(), d1 = intervals[k + 1].duration();
        rpvi += std::fabs(d0 - d1) * 1000.0;
        npvi += std::fabs(d0 - d1) / ((d0 + d1) / 2.0);
        cci += std::fabs(d0 * 1000.0 / intervals[k].segments -
                         d1 * 1000.0 / intervals[k + 1].segments);
    }
    out.rpvi = rpvi / static_cast<double>(m - 1);
    out.npvi = 100.0 * npvi / static_cast<double>(m - 1);
    out.cci = 100.0 * cci / static_cast<double>(m - 1);

    double mean = 0;
    for (const Interval& iv : intervals) mean += iv.duration();
    mean /= static_cast<double>(m);
    double var = 0;
    for (const Interval& iv : intervals) {
        const double d = iv.duration() - mean;
        var += d * d;
    }
    var /= static_cast<double>(m);
    out.varco = mean > 0 ? 100.0 * std::sqrt(var) / mean : 0.0;
    return out;
}

void put_stream(HcfVector& v, const std::string& stream, const StreamMetrics& s) {
    const std::string p = "pronunciation.rhythm.";
    put(v, p + "rpvi_" + stream, s.rpvi);
    put(v, p + "npvi_" + stream, s.npvi);
    put(v, p + "varco_" + stream, s.varco);
    put(v, p + "cci_" + stream, s.cci);
    put(v, p + stream + "_defined", s.defined ? 1.0 : 0.0);
}

}  // namespace

HcfVector rhythm_metrics(const std::vector<core::PhoneSpan>& phones,
                         const phonetics::TraitTable& traits, const RhythmConfig& cfg) {
    if (phones.empty()) throw Error("rhythm_metrics: empty phone list");

    std::vector<Interval> all;
    long vowel_phones = 0, consonant_phones = 0;
    bool open = false;
    Interval run;
    double prev_end = 0;
    auto close = [&] {
        if (open) all.push_back(run);
        open = false;
    };
    for (const core::PhoneSpan& p : phones) {
        const phonetics::VcClass cls = traits.vc_of(p.label);
        if (cls == phonetics::VcClass::Other) {  // special tokens break runs
            close();
            prev_end = p.end_s;
            continue;
        }
        const bool vocalic = cls == phonetics::VcClass::Vowel;
        (vocalic ? vowel_phones : consonant_phones) += 1;
        const bool gap = open && p.start_s - prev_end > cfg.silence_break_s;
        if (open && run.vocalic == vocalic && !gap) {
            run.end = p.end_s;
            run.segments += 1;
        } else {
            close();
            run = Interval{p.start_s, p.end_s, 1, vocalic};
            open = true;
        }
        prev_end = p.end_s;
    }
    close();

    std::vector<Interval> vocalic, consonantal;
    for (const Interval& iv : all) (iv.vocalic ? vocalic : consonantal).push_back(iv);

    HcfVector v;
    put_stream(v, "vocalic", stream_metrics(vocalic));
    put_stream(v, "consonantal", stream_metrics(consonantal));
    put_stream(v, "combined", stream_metrics(all));
    put(v, "pronunciation.rhythm.n_nuclei", static_cast<double>(vocalic.size()));
    put(v, "pronunciation.rhythm.n_consonants", static_cast<double>(consonant_phones));
    put(v, "pronunciation.rhythm.vc_ratio",
        static_cast<double>(vowel_phones) /
            static_cast<double>(std::max(1L, consonant_phones)));
    return v;
}

// ----------------------------------------------------------------- fluency --

HcfVector fluency_features(const core::UtteranceRecord& r, double total_audio_s,
                           const FluencyConfig& cfg) {
    std::vector<double> silences;
    long long_count = 0;
    for (std::size_t i = 1; i < r.words.size(); ++i) {
        const double gap = r.words[i].start_s - r.words[i - 1].end_s;
        if (gap > cfg.min_gap_s) silences.push_back(gap);
        if (gap >= cfg.long_gap_s) ++long_count;
    }

    std::vector<double> phone_durations, word_durations, char_lengths;
    double spoken_s = 0;
    std::map<std::string, long> types;
    long filled = 0;
    std::set<std::string> lexicon;
    for (const std::string& w : cfg.filled_pause_lexicon) lexicon.insert(lowercase(w));
    for (const core::WordSpan& w : r.words) {
        word_durations.push_back(w.end_s - w.start_s);
        spoken_s += w.end_s - w.start_s;
        char_lengths.push_back(static_cast<double>(w.text.size()));
        const std::string t = lowercase(w.text);
        types[t] += 1;
        if (lexicon.count(t)) ++filled;
        for (const core::PhoneSpan& p : w.phones) phone_durations.push_back(p.end_s - p.start_s);
    }
    long repeats = 0;
    for (const auto& [word, count] : types) repeats += count - 1;

    auto freq = [&](std::size_t count) {
        return spoken_s > 0 ? static_cast<double>(count) / spoken_s : 0.0;
    };

    HcfVector v;
    put_stats(v, "fluency.silence.duration", silences);
    put(v, "fluency.silence.count", static_cast<double>(silences.size()));
    put(v, "fluency.silence.long_count", static_cast<double>(long_count));
    put(v, "fluency.silence.frequency", freq(silences.size()));
    put(v, "fluency.silence.total_audio_s", total_audio_s);
    put(v, "fluency.silence.spoken_s", spoken_s);
    put_stats(v, "fluency.phone.duration", phone_durations);
    put(v, "fluency.phone.count", static_cast<double>(phone_durations.size()));
    put(v, "fluency.phone.frequency", freq(phone_durations.size()));
    put_stats(v, "fluency.word.duration", word_durations);
    put_stats(v, "fluency.word.char_len", char_lengths);
    put(v, "fluency.word.count", static_cast<double>(r.words.size()));
    put(v, "fluency.word.frequency", freq(r.words.size()));
    put(v, "fluency.word.repeat_count", static_cast<double>(repeats));
    put(v, "fluency.word.distinct_count", static_cast<double>(types.size()));
    put(v, "fluency.word.filled_pauses", static_cast<double>(filled));
    return v;
}

// ----------------------------------------------------------- pronunciation --

HcfVector pronunciation_features(const core::UtteranceRecord& r, const dsp::FrameTrack& f0,
                                 const dsp::FrameTrack& rms, const align::ErrorRates& rates) {
    std::vector<double> phone_conf, word_conf, voiced, energy;
    for (const core::WordSpan& w : r.words) {
        word_conf.push_back(w.confidence);
        for (const core::PhoneSpan& p : w.phones) phone_conf.push_back(p.confidence);
    }
    for (const double x : f0.values)
        if (x > 0) voiced.push_back(x);
    energy = rms.values;

    HcfVector v;
    put_stats(v, "pronunciation.phone.confidence", phone_conf);
    put_stats(v, "pronunciation.word.confidence", word_conf);
    put_stats(v, "pronunciation.pitch.f0", voiced);
    put_stats(v, "pronunciation.energy.rms", energy);
    put(v, "pronunciation.error_rate.er", rates.er);
    put(v, "pronunciation.error_rate.mer", rates.mer);
    return v;
}

HcfVector compute_hcf(const core::UtteranceRecord& r, const dsp::FrameTrack& f0,
                      const dsp::FrameTrack& rms, const align::ErrorRates& rates,
                      double total_audio_s, const FluencyConfig& fluency_cfg,
                      const RhythmConfig& rhythm_cfg, const phonetics::TraitTable& traits) {
    std::vector<core::PhoneSpan> phones;
    for (const core::WordSpan& w : r.words)
        phones.insert(phones.end(), w.phones.begin(), w.phones.end());

    HcfVector v = pronunciation_features(r, f0, rms, rates);
    for (auto& [name, value] : rhythm_metrics(phones, traits, rhythm_cfg).values)
        put(v, name, value);
    for (auto& [name, value] : fluency_features(r, total_audio_s, fluency_cfg).values)
        put(v, name, value);
    validate_hcf(v);
    return v;
}

// ------------------------------------------------------------------ matrix --

int FeatureMatrix::feature_index(const std::string& name) const {
    const auto it = std::find(names.begin(), names.end(), name);
    return it == names.end() ? -1 : static_cast<int>(it - names.begin());
}

std::vector<double> FeatureMatrix::column(int j) const {
    std::vector<double> col;
    col.reserve(rows.size());
    for (const auto& row : rows) col.push_back(row.at(static_cast<std::size_t>(j)));
    return col;
}

FeatureMatrix assemble_matrix(const std::vector<std::pair<std::string, HcfVector>>& utts) {
    FeatureMatrix m;
    if (utts.empty()) return m;
    for (const auto& [name, value] : utts.front().second.values) m.names.push_back(name);
    for (const auto& [id, v] : utts) {
        if (v.values.size() != m.names.size())
            throw Error("utterance \"" + id + "\" carries " +
                        std::to_string(v.values.size()) + " features, expected " +
                        std::to_string(m.names.size()));
        std::vector<double> row;
        row.reserve(m.names.size());
        for (const std::string& name : m.names) {
            const auto it = v.values.find(name);
            if (it == v.values.end())
                throw Error("utterance \"" + id + "\" is missing feature \"" + name + "\"");
            row.push_back(it->second);
        }
        m.ids.push_back(id);
        m.rows.push_back(std::move(row));
    }
    return m;
}

namespace {

void require_csv_safe(const std::string& s, const char* what) {
    if (s.empty() || s.find_first_of(",\"\n\r") != std::string::npos)
        throw Error(std::string(what) + " \"" + s + "\" is empty or contains CSV delimiters");
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> cells;
    std::string cell;
    for (const char c : line) {
        if (c == ',') {
            cells.push_back(cell);
            cell.clear();
        } else {
            cell += c;
        }
    }
    cells.push_back(cell);
    return cells;
}

double parse_number(const std::string& cell, const std::string& where) {
    if (cell.empty()) throw Error(where + ": empty numeric cell");
    char* end = nullptr;
    const double v = std::strtod(cell.c_str(), &end);
    if (end != cell.c_str() + cell.size())
        throw Error(where + ": \"" + cell + "\" is not a number");
    return v;
}

}  // namespace

std::string matrix_to_csv(const FeatureMatrix& m) {
    std::ostringstream out;
    out << "id";
    for (const std::string& name : m.names) {
        require_csv_safe(name, "feature name");
        out << ',' << name;
    }
    out << '\n';
    for (std::size_t i = 0; i < m.ids.size(); ++i) {
        require_csv_safe(m.ids[i], "utterance id");
        out << m.ids[i];
        for (const double v : m.rows[i]) out << ',' << format_real(v);
        out << '\n';
    }
    return out.str();
}

FeatureMatrix matrix_from_csv(const std::string& content, const std::string& origin) {
    std::istringstream in(content);
    std::string line;
    if (!std::getline(in, line)) throw Error(origin + ": empty feature matrix");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const std::vector<std::string> header = split_csv_line(line);
    if (header.empty() || header[0] != "id")
        throw Error(origin + ": header must start with \"id\"");

    FeatureMatrix m;
    std::set<std::string> seen;
    for (std::size_t j = 1; j < header.size(); ++j) {
        if (!seen.insert(header[j]).second)
            throw Error(origin + ": duplicate feature name \"" + header[j] + "\"");
        m.names.push_back(header[j]);
    }
    int line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const std::string where = origin + ":" + std::to_string(line_no);
        const std::vector<std::string> cells = split_csv_line(line);
        if (cells.size() != header.size())
            throw Error(where + ": expected " + std::to_string(header.size()) +
                        " cells, got " + std::to_string(cells.size()));
        std::vector<double> row;
        row.reserve(m.names.size());
        for (std::size_t j = 1; j < cells.size(); ++j) row.push_back(parse_number(cells[j], where));
        m.ids.push_back(cells[0]);
        m.rows.push_back(std::move(row));
    }
    return m;
}

// --------------------------------------------------------------- selection --

double fisher_skewness(const std::vector<double>& values) {
    const std::size_t n = values.size();
    if (n == 0) return 0;
    double mean = 0;
    for (const double v : values) mean += v;
    mean /= static_cast<double>(n);
    double m2 = 0, m3 = 0;
    for (const double v : values) {
        const double d = v - mean;
        m2 += d * d;
        m3 += d * d * d;
    }
    m2 /= static_cast<double>(n);
    m3 /= static_cast<double>(n);
    const double denom = std::pow(m2, 1.5);
    if (denom < 1e-18) return 0;  // (near-)constant: leave to the dominance rule
    return m3 / denom;
}

SelectionReport filter_features(const FeatureMatrix& m, double skew_max,
                                double dominance_max) {
    if (m.ids.size() < 3)
        throw Error("filter_features: need at least 3 utterances, got " +
                    std::to_string(m.ids.size()));

    std::vector<int> order(m.names.size());
    for (std::size_t j = 0; j < order.size(); ++j) order[j] = static_cast<int>(j);
    std::sort(order.begin(), order.end(),
              [&](int a, int b) { return m.names[a] < m.names[b]; });

    SelectionReport report;
    std::vector<int> after_skew;
    for (const int j : order) {
        const std::vector<double> col = m.column(j);
        if (std::fabs(fisher_skewness(col)) > skew_max)
            report.dropped_skewed.push_back(m.names[j]);
        else
            after_skew.push_back(j);
    }

    std::vector<int> after_dominance;
    for (const int j : after_skew) {
        std::vector<double> col = m.column(j);
        std::sort(col.begin(), col.end());
        std::size_t best = 0, run = 1;
        for (std::size_t i = 1; i < col.size(); ++i) {
            run = col[i] == col[i - 1] ? run + 1 : 1;
            best = std::max(best, run);
        }
        best = std::max(best, run);
        const double share = static_cast<double>(best) / static_cast<double>(col.size());
        if (share > dominance_max)
            report.dropped_binary.push_back(m.names[j]);
        else
            after_dominance.push_back(j);
    }

    std::vector<int> kept;
    for (const int j : after_dominance) {
        const std::vector<double> col = m.column(j);
        bool duplicate = false;
        for (const int k : kept) {
            const std::vector<double> other = m.column(k);
            if (col == other) {
                duplicate = true;
                break;
            }
            double pcc = 0;
            try {
                pcc = pearson_raw(col, other);
            } catch (const Error&) {
                continue;  // constant column: only exact equality makes a duplicate
            }
            if (std::fabs(std::fabs(pcc) - 1.0) <= 1e-12) {
                duplicate = true;
                break;
            }
        }
        if (duplicate)
            report.dropped_duplicate.push_back(m.names[j]);
        else
            kept.push_back(j);
    }
    for (const int j : kept) report.survivors.push_back(m.names[j]);
    return report;
}

// ------------------------------------------------------------------- lasso --

namespace {

double soft_threshold(double z, double lambda) {
    if (z > lambda) return z - lambda;
    if (z < -lambda) return z + lambda;
    return 0;
}

struct Standardizer {
    std::vector<double> mean, std;

    // Columns with (near-)zero variance standardize to all-zero and stay out
    // of the regression (coefficient pinned at 0).
    static Standardizer fit(const std::vector<std::vector<double>>& cols) {
        Standardizer s;
        for (const auto& col : cols) {
            double m = 0;
            for (const double v : col) m += v;
            m /= static_cast<double>(col.size());
            double var = 0;
            for (const double v : col) var += (v - m) * (v - m);
            var /= static_cast<double>(col.size());
            s.mean.push_back(m);
            s.std.push_back(std::sqrt(var));
        }
        return s;
    }

    std::vector<std::vector<double>> apply(const std::vector<std::vector<double>>& cols) const {
        std::vector<std::vector<double>> out(cols.size());
        for (std::size_t j = 0; j < cols.size(); ++j) {
            out[j].resize(cols[j].size(), 0.0);
            if (std[j] < 1e-12) continue;
            for (std::size_t i = 0; i < cols[j].size(); ++i)
                out[j][i] = (cols[j][i] - mean[j]) / std[j];
        }
        return out;
    }
};

std::vector<std::vector<double>> matrix_columns(const FeatureMatrix& m,
                                                const std::vector<std::size_t>& row_filter) {
    std::vector<std::vector<double>> cols(m.names.size());
    for (std::size_t j = 0; j < m.names.size(); ++j) {
        cols[j].reserve(row_filter.size());
        for (const std::size_t i : row_filter) cols[j].push_back(m.rows[i][j]);
    }
    return cols;
}

}  // namespace

std::vector<double> lasso_coordinate_descent(const std::vector<std::vector<double>>& cols,
                                             const std::vector<double>& y, double lambda,
                                             const std::vector<double>& init) {
    if (lambda < 0) throw Error("lasso: lambda must be non-negative");
    const std::size_t p = cols.size();
    const std::size_t n = y.size();
    if (n == 0) throw Error("lasso: no rows");
    for (const auto& col : cols)
        if (col.size() != n) throw Error("lasso: column length does not match target length");
    if (!init.empty() && init.size() != p)
        throw Error("lasso: warm start has " + std::to_string(init.size()) +
                    " coefficients for " + std::to_string(p) + " columns");

    std::vector<double> norm(p, 0.0);
    for (std::size_t j = 0; j < p; ++j) {
        for (const double v : cols[j]) norm[j] += v * v;
        norm[j] /= static_cast<double>(n);
    }

    std::vector<double> beta(p, 0.0);
    std::vector<double> residual = y;
    if (!init.empty()) {
        for (std::size_t j = 0; j < p; ++j) {
            if (norm[j] < 1e-12 || init[j] == 0) continue;
            beta[j] = init[j];
            for (std::size_t i = 0; i < n; ++i) residual[i] -= beta[j] * cols[j][i];
        }
    }
    constexpr int kMaxSweeps = 10000;
    constexpr double kTol = 1e-6;
    double prev_obj = std::numeric_limits<double>::infinity();
    for (int sweep = 0; sweep < kMaxSweeps; ++sweep) {
        double max_delta = 0;
        for (std::size_t j = 0; j < p; ++j) {
            if (norm[j] < 1e-12) continue;
            double rho = 0;
            for (std::size_t i = 0; i < n; ++i) rho += cols[j][i] * residual[i];
            rho = rho / static_cast<double>(n) + norm[j] * beta[j];
            const double nb = soft_threshold(rho, lambda) / norm[j];
            const double delta = nb - beta[j];
            if (delta != 0) {
                for (std::size_t i = 0; i < n; ++i) residual[i] -= delta * cols[j][i];
                beta[j] = nb;
                max_delta = std::max(max_delta, std::fabs(delta));
            }
        }
        double obj = 0;
        for (const double r : residual) obj += r * r;
        obj /= 2.0 * static_cast<double>(n);
        for (const double b : beta) obj += lambda * std::fabs(b);
        if (obj > prev_obj + 1e-12 * std::max(1.0, std::fabs(prev_obj)))
            throw Error("lasso: objective increased from " + format_real(prev_obj) + " to " +
                        format_real(obj) + " at sweep " + std::to_string(sweep));
        prev_obj = obj;
        if (max_delta < kTol) return beta;
    }

    std::ostringstream last;
    for (std::size_t j = 0; j < p; ++j) {
        if (j) last << ' ';
        last << format_real(beta[j]);
    }
    throw Error("lasso: no convergence after " + std::to_string(kMaxSweeps) +
                " sweeps; last iterate [" + last.str() + "]");
}

namespace {

// In-place Gaussian elimination with partial pivoting; returns false when the
// system is numerically singular.
bool gauss_solve(std::vector<std::vector<double>>& a, std::vector<double>& b) {
    const std::size_t k = b.size();
    for (std::size_t col = 0; col < k; ++col) {
        std::size_t pivot = col;
        for (std::size_t r = col + 1; r < k; ++r)
            if (std::fabs(a[r][col]) > std::fabs(a[pivot][col])) pivot = r;
        if (std::fabs(a[pivot][col]) < 1e-12) return false;
        std::swap(a[col], a[pivot]);
        std::swap(b[col], b[pivot]);
        for (std::size_t r = col + 1; r < k; ++r) {
            const double f = a[r][col] / a[col][col];
            if (f == 0) continue;
            for (std::size_t c2 = col; c2 < k; ++c2) a[r][c2] -= f * a[col][c2];
            b[r] -= f * b[col];
        }
    }
    for (std::size_t col = k; col-- > 0;) {
        for (std::size_t c2 = col + 1; c2 < k; ++c2) b[col] -= a[col][c2] * b[c2];
        b[col] /= a[col][col];
    }
    return true;
}

// Exact minimizer of (1/(2n))·‖y − Xβ‖² + λ‖β‖₁ by the least-angle homotopy:
// the solution path is piecewise affine in lambda, so walking the add/drop
// events from lambda_max down to `lambda` yields the minimizer by direct
// linear algebra. Used to warm-start coordinate descent, whose fixed-point
// check then certifies the result: on heavily correlated columns a cold (or
// merely nearby) start can stall below the sweep limit, while a start at the
// minimizer terminates immediately. On numerical failure (singular active-set
// system, event-cap overflow) returns the best iterate reached — coordinate
// descent refines from wherever this lands.
std::vector<double> homotopy_solution(const std::vector<std::vector<double>>& x,
                                      const std::vector<double>& yc, double lambda) {
    const std::size_t p = x.size();
    const std::size_t n = yc.size();
    std::vector<double> beta(p, 0.0);
    if (p == 0) return beta;

    std::vector<double> residual = yc;
    std::vector<double> c(p, 0.0);  // per-feature correlation x_j·r / n
    auto refresh_correlations = [&]() {
        for (std::size_t j = 0; j < p; ++j) {
            double dot = 0;
            for (std::size_t i = 0; i < n; ++i) dot += x[j][i] * residual[i];
            c[j] = dot / static_cast<double>(n);
        }
    };
    refresh_correlations();

    double level = 0;  // current lambda level: max_j |c_j| along the path
    std::size_t first = p;
    for (std::size_t j = 0; j < p; ++j)
        if (std::fabs(c[j]) > level) {
            level = std::fabs(c[j]);
            first = j;
        }
    if (lambda >= level || first == p) return beta;

    std::vector<char> is_active(p, 0);
    std::vector<std::size_t> active;
    active.push_back(first);
    is_active[first] = 1;

    const int max_events = 20 * static_cast<int>(p) + 100;
    for (int event = 0; event < max_events; ++event) {
        const std::size_t k = active.size();
        // Direction: (X_A' X_A / n) d = sign(c_A); between events beta_A moves
        // by g·d as the level drops by g.
        std::vector<std::vector<double>> gram(k, std::vector<double>(k, 0.0));
        std::vector<double> d(k);
        for (std::size_t a = 0; a < k; ++a) {
            for (std::size_t b = a; b < k; ++b) {
                double dot = 0;
                for (std::size_t i = 0; i < n; ++i) dot += x[active[a]][i] * x[active[b]][i];
                gram[a][b] = gram[b][a] = dot / static_cast<double>(n);
            }
            d[a] = c[active[a]] >= 0 ? 1.0 : -1.0;
        }
        if (!gauss_solve(gram, d)) return beta;

        std::vector<double> u(n, 0.0);  // X_A d, the residual's direction of change
        for (std::size_t a = 0; a < k; ++a)
            for (std::size_t i = 0; i < n; ++i) u[i] += d[a] * x[active[a]][i];

        double g = level - lambda;  // default: ride this segment to the target
        int join = -1, drop = -1;
        for (std::size_t j = 0; j < p; ++j) {
            if (is_active[j]) continue;
            double dot = 0;
            for (std::size_t i = 0; i < n; ++i) dot += x[j][i] * u[i];
            const double aj = dot / static_cast<double>(n);
            // Inactive correlation c_j - g·a_j meets the falling level ±(level - g).
            for (const double cand : {(level - c[j]) / (1.0 - aj), (level + c[j]) / (1.0 + aj)}) {
                if (!std::isfinite(cand) || cand <= 1e-14) continue;
                if (cand < g) {
                    g = cand;
                    join = static_cast<int>(j);
                    drop = -1;
                }
            }
        }
        for (std::size_t a = 0; a < k; ++a) {
            if (d[a] == 0) continue;
            const double cand = -beta[active[a]] / d[a];  // coefficient sign flip
            if (cand <= 1e-14 || cand >= g) continue;
            g = cand;
            drop = static_cast<int>(a);
            join = -1;
        }

        for (std::size_t a = 0; a < k; ++a) beta[active[a]] += g * d[a];
        for (std::size_t i = 0; i < n; ++i) residual[i] -= g * u[i];
        level -= g;
        refresh_correlations();

        if (drop >= 0) {
            const std::size_t gone = active[static_cast<std::size_t>(drop)];
            beta[gone] = 0;
            is_active[gone] = 0;
            active.erase(active.begin() + drop);
            if (active.empty()) return beta;
        } else if (join >= 0) {
            is_active[static_cast<std::size_t>(join)] = 1;
            active.push_back(static_cast<std::size_t>(join));
        } else {
            return beta;  // reached the target lambda
        }
    }
    return beta;
}

}  // namespace

double lasso_lambda_max(const std::vector<std::vector<double>>& cols,
                        const std::vector<double>& y) {
    double best = 0;
    for (const auto& col : cols) {
        if (col.size() != y.size()) throw Error("lasso: column length does not match target length");
        double dot = 0;
        for (std::size_t i = 0; i < y.size(); ++i) dot += col[i] * y[i];
        best = std::max(best, std::fabs(dot) / static_cast<double>(y.size()));
    }
    return best;
}

std::vector<double> default_lambda_grid() {
    std::vector<double> grid;
    for (int k = 0; k <= 12; ++k) grid.push_back(std::pow(10.0, -4.0 + k / 3.0));
    return grid;
}

double lasso_cv_lambda(const FeatureMatrix& m, const std::vector<double>& y,
                       const std::vector<double>& grid, int folds) {
    const std::size_t n = m.ids.size();
    if (y.size() != n) throw Error("cv: target length does not match matrix rows");
    if (folds < 2) throw Error("cv: need at least 2 folds");
    if (n < static_cast<std::size_t>(folds))
        throw Error("cv: " + std::to_string(n) + " rows cannot fill " + std::to_string(folds) +
                    " folds");
    if (grid.empty()) throw Error("cv: empty lambda grid");

    std::vector<double> sq(grid.size(), 0.0);
    for (int fold = 0; fold < folds; ++fold) {
        std::vector<std::size_t> train, test;
        for (std::size_t i = 0; i < n; ++i)
            (static_cast<int>(i % folds) == fold ? test : train).push_back(i);

        const auto train_cols = matrix_columns(m, train);
        const Standardizer std_fit = Standardizer::fit(train_cols);
        const auto x = std_fit.apply(train_cols);
        double y_mean = 0;
        for (const std::size_t i : train) y_mean += y[i];
        y_mean /= static_cast<double>(train.size());
        std::vector<double> yc;
        yc.reserve(train.size());
        for (const std::size_t i : train) yc.push_back(y[i] - y_mean);

        for (std::size_t g = 0; g < grid.size(); ++g) {
            const std::vector<double> beta =
                lasso_coordinate_descent(x, yc, grid[g], homotopy_solution(x, yc, grid[g]));
            for (const std::size_t i : test) {
                double pred = y_mean;
                for (std::size_t j = 0; j < beta.size(); ++j) {
                    if (beta[j] == 0 || std_fit.std[j] < 1e-12) continue;
                    pred += beta[j] * (m.rows[i][j] - std_fit.mean[j]) / std_fit.std[j];
                }
                sq[g] += (pred - y[i]) * (pred - y[i]);
            }
        }
    }

    double best_lambda = grid.front();
    double best_mse = std::numeric_limits<double>::infinity();
    for (std::size_t g = 0; g < grid.size(); ++g) {
        const double mse = sq[g] / static_cast<double>(n);
        if (mse <= best_mse) {  // ties go to the larger (sparser) lambda
            best_mse = mse;
            best_lambda = grid[g];
        }
    }
    return best_lambda;
}

SelectionReport lasso_select(const FeatureMatrix& m,
                             const std::map<std::string, std::vector<double>>& targets,
                             std::optional<double> lambda) {
    const std::size_t n = m.ids.size();
    if (n == 0) throw Error("lasso_select: empty matrix");
    if (targets.empty()) throw Error("lasso_select: no targets");
    if (lambda && *lambda < 0) throw Error("lasso_select: lambda must be non-negative");
    for (const auto& [aspect, y] : targets) {
        if (y.size() != n)
            throw Error("lasso_select: aspect \"" + aspect + "\" has " +
                        std::to_string(y.size()) + " targets for " + std::to_string(n) +
                        " utterances");
        for (const double v : y)
            if (!(v >= 0 && v <= 1))
                throw Error("lasso_select: aspect \"" + aspect +
                            "\" target outside [0, 1]: " + format_real(v));
    }

    SelectionReport report;
    report.survivors = m.names;
    std::sort(report.survivors.begin(), report.survivors.end());

    std::vector<std::size_t> all_rows(n);
    for (std::size_t i = 0; i < n; ++i) all_rows[i] = i;
    const auto raw_cols = matrix_columns(m, all_rows);
    const Standardizer std_fit = Standardizer::fit(raw_cols);
    const auto x = std_fit.apply(raw_cols);

    for (const auto& [aspect, y] : targets) {
        const double l = lambda ? *lambda : lasso_cv_lambda(m, y);
        double y_mean = 0;
        for (const double v : y) y_mean += v;
        y_mean /= static_cast<double>(n);
        std::vector<double> yc;
        yc.reserve(n);
        for (const double v : y) yc.push_back(v - y_mean);

        const std::vector<double> beta =
            lasso_coordinate_descent(x, yc, l, homotopy_solution(x, yc, l));
        report.lambda_per_aspect[aspect] = l;
        std::vector<std::pair<std::string, double>> named;
        for (std::size_t j = 0; j < beta.size(); ++j) named.emplace_back(m.names[j], beta[j]);
        std::sort(named.begin(), named.end());
        for (const auto& [name, coef] : named) {
            report.coefficients[aspect][name] = coef;
            if (coef != 0) report.selected_per_aspect[aspect].push_back(name);
        }
    }
    return report;
}

SelectionReport select_features(const FeatureMatrix& m,
                                const std::map<std::string, std::vector<double>>& targets,
                                double skew_max, double dominance_max,
                                std::optional<double> lambda) {
    SelectionReport report = filter_features(m, skew_max, dominance_max);

    FeatureMatrix reduced;
    reduced.ids = m.ids;
    reduced.names = report.survivors;
    std::vector<int> keep;
    keep.reserve(report.survivors.size());
    for (const std::string& name : report.survivors) keep.push_back(m.feature_index(name));
    for (const auto& row : m.rows) {
        std::vector<double> r;
        r.reserve(keep.size());
        for (const int j : keep) r.push_back(row[static_cast<std::size_t>(j)]);
        reduced.rows.push_back(std::move(r));
    }

    SelectionReport fitted = lasso_select(reduced, targets, lambda);
    report.selected_per_aspect = std::move(fitted.selected_per_aspect);
    report.coefficients = std::move(fitted.coefficients);
    report.lambda_per_aspect = std::move(fitted.lambda_per_aspect);
    return report;
}

// --------------------------------------------------------------- relevance --

RelevanceMatrix relevance_matrix(const SelectionReport& report) {
    RelevanceMatrix m;
    m.aspects = utterance_aspects();
    for (const auto& [aspect, coefs] : report.coefficients)
        if (std::find(m.aspects.begin(), m.aspects.end(), aspect) == m.aspects.end())
            m.aspects.push_back(aspect);  // non-canonical aspects appended (map order)
    m.categories = categories();

    for (const std::string& aspect : m.aspects) {
        std::vector<double> row(m.categories.size(), 0.0);
        const auto sel = report.selected_per_aspect.find(aspect);
        const auto coef = report.coefficients.find(aspect);
        if (sel != report.selected_per_aspect.end() && coef != report.coefficients.end()) {
            std::vector<double> sums(m.categories.size(), 0.0);
            std::vector<long> counts(m.categories.size(), 0);
            for (const std::string& name : sel->second) {
                const auto c = coef->second.find(name);
                if (c == coef->second.end())
                    throw Error("selection report: selected feature \"" + name +
                                "\" of aspect \"" + aspect + "\" has no coefficient");
                const std::string cat = category_of(name);
                const auto pos = std::find(m.categories.begin(), m.categories.end(), cat);
                const std::size_t k = static_cast<std::size_t>(pos - m.categories.begin());
                sums[k] += std::fabs(c->second);
                counts[k] += 1;
            }
            for (std::size_t k = 0; k < row.size(); ++k)
                if (counts[k] > 0) row[k] = sums[k] / static_cast<double>(counts[k]);
        }
        m.values.push_back(std::move(row));
    }
    return m;
}

std::string relevance_to_csv(const RelevanceMatrix& m) {
    std::ostringstream out;
    out << "aspect";
    for (const std::string& c : m.categories) out << ',' << c;
    out << '\n';
    for (std::size_t a = 0; a < m.aspects.size(); ++a) {
        out << m.aspects[a];
        for (const double v : m.values[a]) out << ',' << format_real(v);
        out << '\n';
    }
    return out.str();
}

// -------------------------------------------------------------------- JSON --

std::string report_to_json(const SelectionReport& report) {
    json j;
    j["dropped_skewed"] = report.dropped_skewed;
    j["dropped_binary"] = report.dropped_binary;
    j["dropped_duplicate"] = report.dropped_duplicate;
    j["survivors"] = report.survivors;
    j["selected_per_aspect"] = report.selected_per_aspect;
    j["coefficients"] = report.coefficients;
    j["lambda_per_aspect"] = report.lambda_per_aspect;
    return j.dump(2) + "\n";
}

SelectionReport report_from_json(const std::string& content, const std::string& origin) {
    json j;
    try {
        j = json::parse(content);
    } catch (const json::parse_error& e) {
        throw Error(origin + ": invalid JSON: " + e.what());
    }
    if (!j.is_object()) throw Error(origin + ": selection report must be a JSON object");
    static const std::set<std::string> known = {
        "dropped_skewed", "dropped_binary",     "dropped_duplicate", "survivors",
        "selected_per_aspect", "coefficients",  "lambda_per_aspect"};
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!known.count(it.key()))
            throw Error(origin + ": unknown selection-report key \"" + it.key() + "\"");

    SelectionReport report;
    try {
        if (j.contains("dropped_skewed"))
            report.dropped_skewed = j["dropped_skewed"].get<std::vector<std::string>>();
        if (j.contains("dropped_binary"))
            report.dropped_binary = j["dropped_binary"].get<std::vector<std::string>>();
        if (j.contains("dropped_duplicate"))
            report.dropped_duplicate = j["dropped_duplicate"].get<std::vector<std::string>>();
        if (j.contains("survivors"))
            report.survivors = j["survivors"].get<std::vector<std::string>>();
        if (j.contains("selected_per_aspect"))
            report.selected_per_aspect =
                j["selected_per_aspect"]
                    .get<std::map<std::string, std::vector<std::string>>>();
        if (j.contains("coefficients"))
            report.coefficients =
                j["coefficients"].get<std::map<std::string, std::map<std::string, double>>>();
        if (j.contains("lambda_per_aspect"))
            report.lambda_per_aspect = j["lambda_per_aspect"].get<std::map<std::string, double>>();
    } catch (const json::exception& e) {
        throw Error(origin + ": malformed selection report: " + e.what());
    }
    return report;
}

}  // namespace apa::hcf
