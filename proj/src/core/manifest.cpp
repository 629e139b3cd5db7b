#include "apa/core/manifest.hpp"

#include <cmath>
#include <iostream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "apa/common.hpp"
#include "apa/phonetics/phonetics.hpp"

namespace apa::core {

using nlohmann::json;

namespace {

void default_warn(const std::string& msg) { std::cerr << "warning: " << msg << "\n"; }

void warn_unknown_keys(const json& obj, const std::set<std::string>& known,
                       const std::string& where,
                       const std::function<void(const std::string&)>& warn) {
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        if (!known.count(it.key()))
            warn(where + ": ignoring unknown key \"" + it.key() + "\"");
    }
}

double require_number(const json& obj, const char* key, const std::string& where) {
    if (!obj.contains(key) || !obj[key].is_number())
        throw Error(where + ": missing or non-numeric field \"" + key + "\"");
    return obj[key].get<double>();
}

std::string require_string(const json& obj, const char* key, const std::string& where) {
    if (!obj.contains(key) || !obj[key].is_string())
        throw Error(where + ": missing or non-string field \"" + key + "\"");
    return obj[key].get<std::string>();
}

std::vector<double> number_list(const json& arr, const std::string& where) {
    if (!arr.is_array()) throw Error(where + ": expected an array of numbers");
    std::vector<double> out;
    out.reserve(arr.size());
    for (const auto& v : arr) {
        if (!v.is_number()) throw Error(where + ": expected an array of numbers");
        out.push_back(v.get<double>());
    }
    return out;
}

UtteranceRecord parse_record(const json& obj, const std::string& where,
                             const std::function<void(const std::string&)>& warn) {
    static const std::set<std::string> known_top = {
        "id", "audio_path", "text", "hyp_phones", "hyp_text", "words", "scores"};
    static const std::set<std::string> known_word = {"text", "start_s", "end_s",
                                                     "confidence", "phones"};
    static const std::set<std::string> known_phone = {"label", "start_s", "end_s",
                                                      "confidence"};
    static const std::set<std::string> known_scores = {
        "phone_accuracy", "word_accuracy", "word_stress", "word_total",
        "utt_accuracy",   "utt_completeness", "utt_fluency", "utt_prosodic", "utt_total"};

    warn_unknown_keys(obj, known_top, where, warn);

    UtteranceRecord r;
    r.id = require_string(obj, "id", where);
    r.audio_path = require_string(obj, "audio_path", where);
    r.text = require_string(obj, "text", where);
    if (obj.contains("hyp_text")) r.hyp_text = obj["hyp_text"].get<std::string>();
    if (obj.contains("hyp_phones")) {
        std::vector<std::string> hyp;
        for (const auto& p : obj["hyp_phones"])
            hyp.push_back(phonetics::strip_stress(p.get<std::string>()));
        r.hyp_phones = std::move(hyp);
    }
    if (!obj.contains("words") || !obj["words"].is_array())
        throw Error(where + ": missing \"words\" array");
    for (const auto& w : obj["words"]) {
        std::string wwhere = where + ", word " + std::to_string(r.words.size());
        warn_unknown_keys(w, known_word, wwhere, warn);
        WordSpan word;
        word.text = require_string(w, "text", wwhere);
        word.start_s = require_number(w, "start_s", wwhere);
        word.end_s = require_number(w, "end_s", wwhere);
        word.confidence = w.contains("confidence") ? w["confidence"].get<double>() : 1.0;
        if (w.contains("phones")) {
            for (const auto& p : w["phones"]) {
                std::string pwhere = wwhere + ", phone " + std::to_string(word.phones.size());
                warn_unknown_keys(p, known_phone, pwhere, warn);
                PhoneSpan span;
                span.label = phonetics::strip_stress(require_string(p, "label", pwhere));
                span.start_s = require_number(p, "start_s", pwhere);
                span.end_s = require_number(p, "end_s", pwhere);
                span.confidence = p.contains("confidence") ? p["confidence"].get<double>() : 1.0;
                word.phones.push_back(std::move(span));
            }
        }
        r.words.push_back(std::move(word));
    }
    if (obj.contains("scores")) {
        const json& s = obj["scores"];
        warn_unknown_keys(s, known_scores, where + ", scores", warn);
        ScoreVector sv;
        if (s.contains("phone_accuracy"))
            sv.phone_accuracy = number_list(s["phone_accuracy"], where + ".phone_accuracy");
        if (s.contains("word_accuracy"))
            sv.word_accuracy = number_list(s["word_accuracy"], where + ".word_accuracy");
        if (s.contains("word_stress"))
            sv.word_stress = number_list(s["word_stress"], where + ".word_stress");
        if (s.contains("word_total"))
            sv.word_total = number_list(s["word_total"], where + ".word_total");
        sv.utt_accuracy = require_number(s, "utt_accuracy", where);
        sv.utt_completeness = require_number(s, "utt_completeness", where);
        sv.utt_fluency = require_number(s, "utt_fluency", where);
        sv.utt_prosodic = require_number(s, "utt_prosodic", where);
        sv.utt_total = require_number(s, "utt_total", where);
        // Normalize raw corpus scales to [0, 1].
        for (double& v : sv.phone_accuracy) v /= kPhoneScoreScale;
        for (double& v : sv.word_accuracy) v /= kWordScoreScale;
        for (double& v : sv.word_stress) v /= kWordScoreScale;
        for (double& v : sv.word_total) v /= kWordScoreScale;
        sv.utt_accuracy /= kUttScoreScale;
        sv.utt_completeness /= kUttScoreScale;
        sv.utt_fluency /= kUttScoreScale;
        sv.utt_prosodic /= kUttScoreScale;
        sv.utt_total /= kUttScoreScale;
        r.scores = std::move(sv);
    }
    return r;
}

void check_unit(std::vector<std::string>& out, double v, const std::string& field) {
    if (!(v >= 0.0 && v <= 1.0) || !std::isfinite(v))
        out.push_back(field + ": expected value in [0, 1], got " + format_real(v));
}

std::string span_str(double a, double b) {
    return "[" + format_real(a) + ", " + format_real(b) + "]";
}

}  // namespace

std::vector<std::string> validate_record(const UtteranceRecord& r, double slack_s) {
    std::vector<std::string> out;
    const auto& vocab = phonetics::vocab();
    if (r.id.empty()) out.push_back("id: expected non-empty string");

    for (std::size_t wi = 0; wi < r.words.size(); ++wi) {
        const WordSpan& w = r.words[wi];
        std::string wf = "words[" + std::to_string(wi) + "]";
        if (!(w.end_s > w.start_s))
            out.push_back(wf + ": expected end_s > start_s, span " +
                          span_str(w.start_s, w.end_s));
        check_unit(out, w.confidence, wf + ".confidence");
        if (r.scores.has_value() && w.phones.empty())
            out.push_back(wf + ".phones: expected non-empty phone list for scored word");
        if (wi > 0 && r.words[wi].start_s < r.words[wi - 1].end_s - slack_s)
            out.push_back(wf + ": overlaps previous word beyond slack (" +
                          format_real(slack_s) + " s)");
        for (std::size_t pi = 0; pi < w.phones.size(); ++pi) {
            const PhoneSpan& p = w.phones[pi];
            std::string pf = wf + ".phones[" + std::to_string(pi) + "]";
            if (!(p.end_s > p.start_s))
                out.push_back(pf + ": expected end_s > start_s, span " +
                              span_str(p.start_s, p.end_s));
            if (p.start_s < 0)
                out.push_back(pf + ": expected start_s >= 0");
            if (p.label != phonetics::kUnkSymbol && !vocab.contains(p.label))
                out.push_back(pf + ".label: unknown symbol \"" + p.label + "\"");
            check_unit(out, p.confidence, pf + ".confidence");
            if (p.start_s < w.start_s - slack_s || p.end_s > w.end_s + slack_s)
                out.push_back(pf + ": span " + span_str(p.start_s, p.end_s) +
                              " not nested in word span " + span_str(w.start_s, w.end_s) +
                              " within slack");
            if (pi > 0 && p.start_s < w.phones[pi - 1].end_s - slack_s)
                out.push_back(pf + ": not temporally ordered after previous phone");
        }
    }

    if (r.scores.has_value()) {
        const ScoreVector& s = *r.scores;
        std::size_t n_phones = r.phone_count();
        std::size_t n_words = r.words.size();
        if (s.phone_accuracy.size() != n_phones)
            out.push_back("scores.phone_accuracy: expected length " +
                          std::to_string(n_phones) + ", got " +
                          std::to_string(s.phone_accuracy.size()));
        auto check_word_list = [&](const std::vector<double>& v, const char* name) {
            if (v.size() != n_words)
                out.push_back(std::string("scores.") + name + ": expected length " +
                              std::to_string(n_words) + ", got " + std::to_string(v.size()));
        };
        check_word_list(s.word_accuracy, "word_accuracy");
        check_word_list(s.word_stress, "word_stress");
        check_word_list(s.word_total, "word_total");
        for (std::size_t i = 0; i < s.phone_accuracy.size(); ++i)
            check_unit(out, s.phone_accuracy[i], "scores.phone_accuracy[" + std::to_string(i) + "]");
        for (std::size_t i = 0; i < s.word_accuracy.size(); ++i)
            check_unit(out, s.word_accuracy[i], "scores.word_accuracy[" + std::to_string(i) + "]");
        for (std::size_t i = 0; i < s.word_stress.size(); ++i)
            check_unit(out, s.word_stress[i], "scores.word_stress[" + std::to_string(i) + "]");
        for (std::size_t i = 0; i < s.word_total.size(); ++i)
            check_unit(out, s.word_total[i], "scores.word_total[" + std::to_string(i) + "]");
        check_unit(out, s.utt_accuracy, "scores.utt_accuracy");
        check_unit(out, s.utt_completeness, "scores.utt_completeness");
        check_unit(out, s.utt_fluency, "scores.utt_fluency");
        check_unit(out, s.utt_prosodic, "scores.utt_prosodic");
        check_unit(out, s.utt_total, "scores.utt_total");
    }
    return out;
}

std::vector<UtteranceRecord> parse_manifest(const std::string& content,
                                            const std::string& origin,
                                            const ManifestOptions& opts) {
    auto warn = opts.warn ? opts.warn : default_warn;
    std::vector<UtteranceRecord> records;
    std::set<std::string> seen_ids;
    std::istringstream in(content);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::string where = origin + ":" + std::to_string(lineno);
        json obj;
        try {
            obj = json::parse(line);
        } catch (const json::parse_error& e) {
            throw Error(where + ": parse error: " + e.what());
        }
        UtteranceRecord r = parse_record(obj, where, warn);
        if (!seen_ids.insert(r.id).second)
            throw Error(where + ": duplicate utterance id \"" + r.id + "\"");
        auto violations = validate_record(r, opts.slack_s);
        if (!violations.empty()) {
            std::string msg = where + ": utterance \"" + r.id + "\" violates invariants:";
            for (const auto& v : violations) msg += "\n  " + v;
            throw Error(msg);
        }
        records.push_back(std::move(r));
    }
    return records;
}

std::vector<UtteranceRecord> load_manifest(const std::string& path,
                                           const ManifestOptions& opts) {
    return parse_manifest(read_text_file(path), path, opts);
}

std::string serialize_record(const UtteranceRecord& r) {
    json obj;
    obj["id"] = r.id;
    obj["audio_path"] = r.audio_path;
    obj["text"] = r.text;
    if (r.hyp_phones) obj["hyp_phones"] = *r.hyp_phones;
    if (r.hyp_text) obj["hyp_text"] = *r.hyp_text;
    obj["words"] = json::array();
    for (const auto& w : r.words) {
        json jw;
        jw["text"] = w.text;
        jw["start_s"] = w.start_s;
        jw["end_s"] = w.end_s;
        jw["confidence"] = w.confidence;
        jw["phones"] = json::array();
        for (const auto& p : w.phones) {
            json jp;
            jp["label"] = p.label;
            jp["start_s"] = p.start_s;
            jp["end_s"] = p.end_s;
            jp["confidence"] = p.confidence;
            jw["phones"].push_back(std::move(jp));
        }
        obj["words"].push_back(std::move(jw));
    }
    if (r.scores) {
        const ScoreVector& s = *r.scores;
        json js;
        auto scaled = [](const std::vector<double>& v, double scale) {
            json arr = json::array();
            for (double x : v) arr.push_back(x * scale);
            return arr;
        };
        js["phone_accuracy"] = scaled(s.phone_accuracy, kPhoneScoreScale);
        js["word_accuracy"] = scaled(s.word_accuracy, kWordScoreScale);
        js["word_stress"] = scaled(s.word_stress, kWordScoreScale);
        js["word_total"] = scaled(s.word_total, kWordScoreScale);
        js["utt_accuracy"] = s.utt_accuracy * kUttScoreScale;
        js["utt_completeness"] = s.utt_completeness * kUttScoreScale;
        js["utt_fluency"] = s.utt_fluency * kUttScoreScale;
        js["utt_prosodic"] = s.utt_prosodic * kUttScoreScale;
        js["utt_total"] = s.utt_total * kUttScoreScale;
        obj["scores"] = std::move(js);
    }
    return obj.dump();
}

std::string serialize_manifest(const std::vector<UtteranceRecord>& records) {
    std::string out;
    for (const auto& r : records) {
        out += serialize_record(r);
        out += '\n';
    }
    return out;
}

}  // namespace apa::core
