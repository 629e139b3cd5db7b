#include <set>

#include <json.hpp>

#include "apa/cli/cli.hpp"
#include "apa/common.hpp"

namespace apa::cli {

using json = nlohmann::json;

namespace {

// Strict object reader: every key must be consumed, leftovers are reported
// with their location.
class Section {
public:
    Section(const json& j, std::string loc) : j_(j), loc_(std::move(loc)) {
        if (!j_.is_object()) throw Error(loc_ + ": expected a JSON object");
    }

    bool has(const std::string& key) {
        if (!j_.contains(key)) return false;
        seen_.insert(key);
        return true;
    }

    const json& at(const std::string& key) { return j_.at(key); }

    template <class T>
    void number(const std::string& key, T& target) {
        if (!has(key)) return;
        const json& v = j_.at(key);
        if (!v.is_number()) throw Error(loc_ + ": \"" + key + "\" must be a number");
        target = v.get<T>();
    }

    void integer(const std::string& key, int& target) {
        if (!has(key)) return;
        const json& v = j_.at(key);
        if (!v.is_number_integer())
            throw Error(loc_ + ": \"" + key + "\" must be an integer");
        target = v.get<int>();
    }

    void u64(const std::string& key, std::uint64_t& target) {
        if (!has(key)) return;
        const json& v = j_.at(key);
        if (!v.is_number_unsigned() && !v.is_number_integer())
            throw Error(loc_ + ": \"" + key + "\" must be an unsigned integer");
        if (v.is_number_integer() && v.get<std::int64_t>() < 0)
            throw Error(loc_ + ": \"" + key + "\" must be non-negative");
        target = v.get<std::uint64_t>();
    }

    void finish() {
        for (const auto& [key, value] : j_.items())
            if (!seen_.count(key)) throw Error(loc_ + ": unknown key \"" + key + "\"");
    }

    const std::string& loc() const { return loc_; }

private:
    const json& j_;
    std::string loc_;
    std::set<std::string> seen_;
};

void parse_dsp(const json& j, const std::string& loc, dsp::DspConfig& cfg) {
    Section s(j, loc);
    s.integer("frame_length", cfg.frame_length);
    s.integer("hop_length", cfg.hop_length);
    s.number("fmin_hz", cfg.fmin_hz);
    s.number("fmax_hz", cfg.fmax_hz);
    s.number("yin_threshold", cfg.yin_threshold);
    s.finish();
    if (cfg.frame_length < 2 || cfg.hop_length < 1)
        throw Error(loc + ": frame_length/hop_length out of range");
    if (!(cfg.fmin_hz > 0) || !(cfg.fmax_hz > cfg.fmin_hz))
        throw Error(loc + ": need 0 < fmin_hz < fmax_hz");
}

void parse_pretrain(const json& j, const std::string& loc, mtp::MtpConfig& cfg) {
    Section s(j, loc);
    s.number("mask_rate", cfg.mask_rate);
    s.number("mask_token_frac", cfg.mask_token_frac);
    s.number("keep_frac", cfg.keep_frac);
    s.number("w_p", cfg.w_p);
    s.number("w_v", cfg.w_v);
    s.number("w_a", cfg.w_a);
    s.number("w_d", cfg.w_d);
    s.number("w_f", cfg.w_f);
    s.number("w_r", cfg.w_r);
    s.number("curriculum_unmasked_frac", cfg.curriculum_unmasked_frac);
    s.integer("epochs", cfg.epochs);
    s.integer("batch_size", cfg.batch_size);
    s.integer("d_model", cfg.d_model);
    s.integer("heads", cfg.heads);
    s.integer("ff_dim", cfg.ff_dim);
    s.integer("layers", cfg.layers);
    s.number("dropout", cfg.dropout);
    s.number("lr", cfg.lr);
    s.finish();
}

void parse_scorer(const json& j, const std::string& loc, scorer::ScorerConfig& cfg) {
    Section s(j, loc);
    if (s.has("fusion_mode")) {
        const json& v = s.at("fusion_mode");
        if (!v.is_string()) throw Error(loc + ": \"fusion_mode\" must be a string");
        cfg.fusion_mode = scorer::fusion_mode_from_string(v.get<std::string>());
    }
    if (s.has("hcf_features")) {
        const json& v = s.at("hcf_features");
        if (!v.is_array()) throw Error(loc + ": \"hcf_features\" must be an array");
        cfg.hcf_features.clear();
        for (const auto& e : v) {
            if (!e.is_string())
                throw Error(loc + ": \"hcf_features\" entries must be strings");
            cfg.hcf_features.push_back(e.get<std::string>());
        }
    }
    s.integer("hcf_projection_dim", cfg.hcf_projection_dim);
    s.integer("word_dim", cfg.word_dim);
    s.integer("word_buckets", cfg.word_buckets);
    s.integer("head_width", cfg.head_width);
    s.integer("epochs", cfg.epochs);
    s.integer("batch_size", cfg.batch_size);
    s.number("lr", cfg.lr);
    if (s.has("seeds")) {
        const json& v = s.at("seeds");
        if (!v.is_array() || v.empty())
            throw Error(loc + ": \"seeds\" must be a non-empty array");
        cfg.seeds.clear();
        for (const auto& e : v) {
            if (!e.is_number_integer() || (e.is_number_integer() && e.get<std::int64_t>() < 0 && !e.is_number_unsigned()))
                throw Error(loc + ": \"seeds\" entries must be non-negative integers");
            cfg.seeds.push_back(e.get<std::uint64_t>());
        }
    }
    s.finish();
}

void parse_selection(const json& j, const std::string& loc, PipelineConfig& cfg) {
    Section s(j, loc);
    s.number("skew_max", cfg.selection_skew_max);
    s.number("dominance_max", cfg.selection_dominance_max);
    if (s.has("lambda")) {
        const json& v = s.at("lambda");
        if (v.is_null()) {
            cfg.selection_lambda.reset();
        } else if (v.is_number()) {
            cfg.selection_lambda = v.get<double>();
        } else {
            throw Error(loc + ": \"lambda\" must be a number or null");
        }
    }
    s.finish();
}

}  // namespace

void PipelineConfig::validate() const {
    if (jobs < 1) throw Error("config: jobs must be >= 1");
    pretrain.validate();
    scorer.validate();
    if (!(selection_skew_max > 0)) throw Error("config: selection skew_max must be > 0");
    if (!(selection_dominance_max > 0 && selection_dominance_max <= 1))
        throw Error("config: selection dominance_max must be in (0, 1]");
    if (selection_lambda && !(*selection_lambda >= 0))
        throw Error("config: selection lambda must be >= 0");
}

PipelineConfig parse_pipeline_config(const std::string& content, const std::string& origin) {
    json j;
    try {
        j = json::parse(content);
    } catch (const json::exception& e) {
        throw Error(origin + ": invalid JSON: " + e.what());
    }
    PipelineConfig cfg;
    Section root(j, origin);
    root.u64("seed", cfg.seed);
    root.integer("jobs", cfg.jobs);
    if (root.has("dsp")) parse_dsp(root.at("dsp"), origin + ": dsp", cfg.dsp);
    if (root.has("pretrain"))
        parse_pretrain(root.at("pretrain"), origin + ": pretrain", cfg.pretrain);
    if (root.has("scorer"))
        parse_scorer(root.at("scorer"), origin + ": scorer", cfg.scorer);
    if (root.has("selection"))
        parse_selection(root.at("selection"), origin + ": selection", cfg);
    root.finish();

    cfg.pretrain.seed = cfg.seed;
    cfg.scorer.encoder = cfg.pretrain;
    cfg.validate();
    return cfg;
}

PipelineConfig load_pipeline_config(const std::string& path) {
    return parse_pipeline_config(read_text_file(path), path);
}

std::string pipeline_config_to_json(const PipelineConfig& cfg) {
    json j;
    j["seed"] = cfg.seed;
    j["jobs"] = cfg.jobs;
    j["dsp"] = {{"frame_length", cfg.dsp.frame_length},
                {"hop_length", cfg.dsp.hop_length},
                {"fmin_hz", cfg.dsp.fmin_hz},
                {"fmax_hz", cfg.dsp.fmax_hz},
                {"yin_threshold", cfg.dsp.yin_threshold}};
    j["pretrain"] = {{"mask_rate", cfg.pretrain.mask_rate},
                     {"mask_token_frac", cfg.pretrain.mask_token_frac},
                     {"keep_frac", cfg.pretrain.keep_frac},
                     {"w_p", cfg.pretrain.w_p},
                     {"w_v", cfg.pretrain.w_v},
                     {"w_a", cfg.pretrain.w_a},
                     {"w_d", cfg.pretrain.w_d},
                     {"w_f", cfg.pretrain.w_f},
                     {"w_r", cfg.pretrain.w_r},
                     {"curriculum_unmasked_frac", cfg.pretrain.curriculum_unmasked_frac},
                     {"epochs", cfg.pretrain.epochs},
                     {"batch_size", cfg.pretrain.batch_size},
                     {"d_model", cfg.pretrain.d_model},
                     {"heads", cfg.pretrain.heads},
                     {"ff_dim", cfg.pretrain.ff_dim},
                     {"layers", cfg.pretrain.layers},
                     {"dropout", cfg.pretrain.dropout},
                     {"lr", cfg.pretrain.lr}};
    j["scorer"] = {{"fusion_mode", scorer::to_string(cfg.scorer.fusion_mode)},
                   {"hcf_features", cfg.scorer.hcf_features},
                   {"hcf_projection_dim", cfg.scorer.hcf_projection_dim},
                   {"word_dim", cfg.scorer.word_dim},
                   {"word_buckets", cfg.scorer.word_buckets},
                   {"head_width", cfg.scorer.head_width},
                   {"epochs", cfg.scorer.epochs},
                   {"batch_size", cfg.scorer.batch_size},
                   {"lr", cfg.scorer.lr},
                   {"seeds", cfg.scorer.seeds}};
    j["selection"] = {{"skew_max", cfg.selection_skew_max},
                      {"dominance_max", cfg.selection_dominance_max},
                      {"lambda", cfg.selection_lambda ? json(*cfg.selection_lambda)
                                                      : json(nullptr)}};
    return j.dump(2) + "\n";
}

std::string feature_file_to_json(const FeatureFile& f) {
    if (f.seq.size() != f.seq.vc_ids.size() || f.seq.size() != f.seq.trait_ids.size() ||
        f.seq.size() != f.seq.duration_classes.size() ||
        f.seq.size() != f.seq.f0_stats.size() || f.seq.size() != f.seq.rms_stats.size())
        throw Error("feature file \"" + f.id + "\": ragged sequential views");
    json j;
    j["id"] = f.id;
    json seq;
    seq["phone_ids"] = f.seq.phone_ids;
    seq["vc_ids"] = f.seq.vc_ids;
    seq["trait_ids"] = f.seq.trait_ids;
    seq["duration_classes"] = f.seq.duration_classes;
    json f0 = json::array(), rms = json::array();
    for (const auto& row : f.seq.f0_stats) f0.push_back(row);
    for (const auto& row : f.seq.rms_stats) rms.push_back(row);
    seq["f0_stats"] = f0;
    seq["rms_stats"] = rms;
    j["sequential"] = seq;
    j["hcf"] = f.hcf.values;
    return j.dump(2) + "\n";
}

FeatureFile feature_file_from_json(const std::string& content, const std::string& origin) {
    json j;
    try {
        j = json::parse(content);
    } catch (const json::exception& e) {
        throw Error(origin + ": invalid JSON: " + e.what());
    }
    FeatureFile f;
    try {
        Section root(j, origin);
        if (!root.has("id") || !root.at("id").is_string())
            throw Error(origin + ": missing string \"id\"");
        f.id = root.at("id").get<std::string>();
        if (!root.has("sequential"))
            throw Error(origin + ": missing \"sequential\"");
        Section seq(root.at("sequential"), origin + ": sequential");
        auto ints = [&](const char* key, std::vector<int>& target) {
            if (!seq.has(key) || !seq.at(key).is_array())
                throw Error(origin + ": missing array \"" + key + "\"");
            target = seq.at(key).get<std::vector<int>>();
        };
        ints("phone_ids", f.seq.phone_ids);
        ints("vc_ids", f.seq.vc_ids);
        ints("trait_ids", f.seq.trait_ids);
        ints("duration_classes", f.seq.duration_classes);
        auto stats = [&](const char* key,
                         std::vector<std::array<double, dsp::kStatDim>>& target) {
            if (!seq.has(key) || !seq.at(key).is_array())
                throw Error(origin + ": missing array \"" + key + "\"");
            for (const auto& row : seq.at(key)) {
                if (!row.is_array() || row.size() != dsp::kStatDim)
                    throw Error(origin + ": \"" + key + "\" rows must have " +
                                std::to_string(dsp::kStatDim) + " numbers");
                target.push_back(row.get<std::array<double, dsp::kStatDim>>());
            }
        };
        stats("f0_stats", f.seq.f0_stats);
        stats("rms_stats", f.seq.rms_stats);
        seq.finish();
        if (!root.has("hcf") || !root.at("hcf").is_object())
            throw Error(origin + ": missing object \"hcf\"");
        for (const auto& [key, value] : root.at("hcf").items()) {
            if (!value.is_number())
                throw Error(origin + ": hcf \"" + key + "\" must be a number");
            f.hcf.values[key] = value.get<double>();
        }
        root.finish();
    } catch (const json::exception& e) {
        throw Error(origin + ": malformed feature file: " + e.what());
    }
    const std::size_t n = f.seq.phone_ids.size();
    if (f.seq.vc_ids.size() != n || f.seq.trait_ids.size() != n ||
        f.seq.duration_classes.size() != n || f.seq.f0_stats.size() != n ||
        f.seq.rms_stats.size() != n)
        throw Error(origin + ": sequential views have mismatched lengths");
    f.seq.pad.assign(n, 0);
    return f;
}

}  // namespace apa::cli
