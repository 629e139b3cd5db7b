#include "apa/dsp/sequential.hpp"

#include <json.hpp>

#include "apa/common.hpp"

namespace apa::dsp {

using nlohmann::json;

SequentialFeatures build_sequential_features(const core::UtteranceRecord& r,
                                             const Waveform& w, const DspConfig& cfg,
                                             const phonetics::TraitTable& traits) {
    UtteranceFeatures f = extract_utterance_features(r, w, cfg, traits);
    return std::move(f.seq);
}

UtteranceFeatures extract_utterance_features(const core::UtteranceRecord& r,
                                             const Waveform& w, const DspConfig& cfg,
                                             const phonetics::TraitTable& traits) {
    UtteranceFeatures out;
    out.id = r.id;
    out.f0 = f0_track(w, cfg.fmin_hz, cfg.fmax_hz, cfg.frame_length, cfg.hop_length,
                      cfg.yin_threshold);
    out.rms = rms_track(w, cfg.frame_length, cfg.hop_length);

    const auto& vocab = phonetics::vocab();
    SequentialFeatures& seq = out.seq;
    for (const auto& word : r.words) {
        for (const auto& phone : word.phones) {
            seq.phone_ids.push_back(vocab.phone_to_id(phone.label));
            seq.vc_ids.push_back(static_cast<int>(traits.vc_of(phone.label)));
            seq.trait_ids.push_back(static_cast<int>(traits.trait_of(phone.label)));
            int frames = phonetics::frames_of_span(phone.start_s, phone.end_s);
            seq.duration_classes.push_back(phonetics::duration_class(frames));
            try {
                seq.f0_stats.push_back(
                    aggregate_stats(out.f0, phone.start_s, phone.end_s,
                                    ZeroPolicy::ExcludeZeros)
                        .to_array());
                seq.rms_stats.push_back(
                    aggregate_stats(out.rms, phone.start_s, phone.end_s,
                                    ZeroPolicy::Include)
                        .to_array());
            } catch (const Error& e) {
                throw Error("utterance \"" + r.id + "\", phone \"" + phone.label +
                            "\": " + e.what());
            }
            seq.pad.push_back(0);
        }
    }
    return out;
}

namespace {

json track_to_json(const FrameTrack& t) {
    json j;
    j["values"] = t.values;
    j["frame_length"] = t.frame_length;
    j["hop_length"] = t.hop_length;
    j["sample_rate_hz"] = t.sample_rate_hz;
    return j;
}

FrameTrack track_from_json(const json& j) {
    FrameTrack t;
    t.values = j.at("values").get<std::vector<double>>();
    t.frame_length = j.at("frame_length").get<int>();
    t.hop_length = j.at("hop_length").get<int>();
    t.sample_rate_hz = j.at("sample_rate_hz").get<int>();
    return t;
}

json stats_to_json(const std::vector<std::array<double, kStatDim>>& rows) {
    json arr = json::array();
    for (const auto& row : rows) {
        json r = json::array();
        for (double v : row) r.push_back(v);
        arr.push_back(std::move(r));
    }
    return arr;
}

std::vector<std::array<double, kStatDim>> stats_from_json(const json& arr,
                                                          const std::string& origin) {
    std::vector<std::array<double, kStatDim>> rows;
    for (const auto& r : arr) {
        if (!r.is_array() || r.size() != kStatDim)
            throw Error(origin + ": statistic rows must have exactly 7 entries");
        std::array<double, kStatDim> row{};
        for (int i = 0; i < kStatDim; ++i) row[static_cast<std::size_t>(i)] = r[i].get<double>();
        rows.push_back(row);
    }
    return rows;
}

}  // namespace

std::string features_to_json(const UtteranceFeatures& f) {
    json j;
    j["id"] = f.id;
    j["n"] = f.seq.size();
    j["phone_ids"] = f.seq.phone_ids;
    j["vc_ids"] = f.seq.vc_ids;
    j["trait_ids"] = f.seq.trait_ids;
    j["duration_classes"] = f.seq.duration_classes;
    j["f0_stats"] = stats_to_json(f.seq.f0_stats);
    j["rms_stats"] = stats_to_json(f.seq.rms_stats);
    j["f0_track"] = track_to_json(f.f0);
    j["rms_track"] = track_to_json(f.rms);
    return j.dump(1);
}

UtteranceFeatures features_from_json(const std::string& content, const std::string& origin) {
    json j;
    try {
        j = json::parse(content);
    } catch (const json::parse_error& e) {
        throw Error(origin + ": parse error: " + e.what());
    }
    UtteranceFeatures f;
    f.id = j.at("id").get<std::string>();
    f.seq.phone_ids = j.at("phone_ids").get<std::vector<int>>();
    f.seq.vc_ids = j.at("vc_ids").get<std::vector<int>>();
    f.seq.trait_ids = j.at("trait_ids").get<std::vector<int>>();
    f.seq.duration_classes = j.at("duration_classes").get<std::vector<int>>();
    f.seq.f0_stats = stats_from_json(j.at("f0_stats"), origin);
    f.seq.rms_stats = stats_from_json(j.at("rms_stats"), origin);
    f.seq.pad.assign(f.seq.phone_ids.size(), 0);
    f.f0 = track_from_json(j.at("f0_track"));
    f.rms = track_from_json(j.at("rms_track"));
    std::size_t n = f.seq.phone_ids.size();
    if (f.seq.vc_ids.size() != n || f.seq.trait_ids.size() != n ||
        f.seq.duration_classes.size() != n || f.seq.f0_stats.size() != n ||
        f.seq.rms_stats.size() != n)
        throw Error(origin + ": view lengths disagree");
    return f;
}

UtteranceFeatures load_features(const std::string& path) {
    return features_from_json(read_text_file(path), path);
}

}  // namespace apa::dsp
