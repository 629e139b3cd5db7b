#include <algorithm>
#include <filesystem>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "apa/align/edit.hpp"
#include "apa/cli/cli.hpp"
#include "apa/cli/synth.hpp"
#include "apa/common.hpp"
#include "apa/core/manifest.hpp"
#include "apa/nn/registry.hpp"

namespace apa::cli {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

std::vector<core::UtteranceRecord> load_records_sorted(const std::string& manifest_path,
                                                       std::ostream& err) {
    core::ManifestOptions opts;
    opts.warn = [&err](const std::string& w) { err << "warning: " << w << "\n"; };
    auto records = core::load_manifest(manifest_path, opts);
    std::sort(records.begin(), records.end(),
              [](const core::UtteranceRecord& a, const core::UtteranceRecord& b) {
                  return a.id < b.id;
              });
    for (std::size_t i = 1; i < records.size(); ++i)
        if (records[i].id == records[i - 1].id)
            throw Error(manifest_path + ": duplicate utterance id \"" + records[i].id +
                        "\"");
    return records;
}

std::string feature_path(const std::string& features_dir, const std::string& id) {
    return (fs::path(features_dir) / (id + ".feat.json")).string();
}

std::string seed_checkpoint_path(const std::string& prefix, std::uint64_t seed) {
    return prefix + ".seed" + std::to_string(seed) + ".ckpt";
}

// ----------------------------------------------------------------- commands --

int cmd_extract_features(const PipelineConfig& cfg, const std::string& manifest,
                         const std::string& audio_dir, const std::string& out_dir,
                         std::ostream& err) {
    const auto records = load_records_sorted(manifest, err);
    std::vector<std::string> failures;
    int written = 0;
    for (const auto& r : records) {
        try {
            const auto wav_path = (fs::path(audio_dir) / r.audio_path).string();
            const auto wav = dsp::read_wav(wav_path);
            const auto uf = dsp::extract_utterance_features(r, wav, cfg.dsp);
            const auto rates = record_error_rates(r);
            FeatureFile f;
            f.id = r.id;
            f.seq = uf.seq;
            f.hcf = hcf::compute_hcf(r, uf.f0, uf.rms, rates, wav.duration_s());
            write_file_atomic(feature_path(out_dir, r.id), feature_file_to_json(f));
            ++written;
        } catch (const Error& e) {
            failures.push_back(r.id + ": " + e.what());
        }
    }
    err << "wrote " << written << " feature file(s) to " << out_dir << "\n";
    if (!failures.empty()) {
        for (const auto& f : failures) err << "failed " << f << "\n";
        return 1;
    }
    return 0;
}

int cmd_compute_hcf(const std::string& manifest, const std::string& features_dir,
                    const std::string& out_csv, std::ostream& err) {
    const auto records = load_records_sorted(manifest, err);
    std::vector<std::pair<std::string, hcf::HcfVector>> utts;
    for (const auto& r : records) {
        const auto path = feature_path(features_dir, r.id);
        utts.emplace_back(r.id, feature_file_from_json(read_text_file(path), path).hcf);
    }
    const auto matrix = hcf::assemble_matrix(utts);
    write_file_atomic(out_csv, hcf::matrix_to_csv(matrix));
    err << "wrote " << matrix.ids.size() << " x " << matrix.names.size()
        << " feature matrix to " << out_csv << "\n";
    return 0;
}

double aspect_score(const core::ScoreVector& s, const std::string& aspect) {
    if (aspect == "accuracy") return s.utt_accuracy;
    if (aspect == "completeness") return s.utt_completeness;
    if (aspect == "fluency") return s.utt_fluency;
    if (aspect == "prosodic") return s.utt_prosodic;
    if (aspect == "total") return s.utt_total;
    throw Error("unknown utterance aspect \"" + aspect + "\"");
}

int cmd_select_features(const PipelineConfig& cfg, const std::string& manifest,
                        const std::string& hcf_csv, const std::string& out_json,
                        std::ostream& err) {
    const auto records = load_records_sorted(manifest, err);
    std::map<std::string, const core::UtteranceRecord*> by_id;
    for (const auto& r : records) by_id[r.id] = &r;
    const auto matrix = hcf::matrix_from_csv(read_text_file(hcf_csv), hcf_csv);

    std::map<std::string, std::vector<double>> targets;
    for (const auto& aspect : hcf::utterance_aspects()) {
        std::vector<double> y;
        for (const auto& id : matrix.ids) {
            const auto it = by_id.find(id);
            if (it == by_id.end())
                throw Error(hcf_csv + ": utterance \"" + id + "\" is not in the manifest");
            if (!it->second->scores)
                throw Error(manifest + ": utterance \"" + id + "\" has no gold scores");
            y.push_back(aspect_score(*it->second->scores, aspect));
        }
        targets[aspect] = std::move(y);
    }
    const auto report = hcf::select_features(matrix, targets, cfg.selection_skew_max,
                                             cfg.selection_dominance_max,
                                             cfg.selection_lambda);
    write_file_atomic(out_json, hcf::report_to_json(report));
    err << "selection report written to " << out_json << "\n";
    return 0;
}

int cmd_heatmap(const std::string& report_json, const std::string& out_csv,
                std::ostream& err) {
    const auto report = hcf::report_from_json(read_text_file(report_json), report_json);
    write_file_atomic(out_csv, hcf::relevance_to_csv(hcf::relevance_matrix(report)));
    err << "relevance matrix written to " << out_csv << "\n";
    return 0;
}

int cmd_pretrain(const PipelineConfig& cfg, const std::string& manifest,
                 const std::string& features_dir, const std::string& out_ckpt,
                 const std::string& out_log, std::ostream& err) {
    const auto records = load_records_sorted(manifest, err);
    std::vector<dsp::SequentialFeatures> corpus;
    for (const auto& r : records) {
        const auto path = feature_path(features_dir, r.id);
        corpus.push_back(feature_file_from_json(read_text_file(path), path).seq);
    }
    const auto result = mtp::pretrain(corpus, cfg.pretrain);
    nn::save_checkpoint(result.params, out_ckpt);
    write_file_atomic(out_log, mtp::training_log_csv(result.log));
    if (!result.log.empty())
        err << "pretrained " << cfg.pretrain.epochs << " epoch(s); mean loss "
            << format_real(result.log.front().mean.total) << " -> "
            << format_real(result.log.back().mean.total) << "\n";
    err << "checkpoint written to " << out_ckpt << "\n";
    return 0;
}

int cmd_train_apa(const PipelineConfig& cfg, const std::string& manifest,
                  const std::string& features_dir, const std::string& out_prefix,
                  const std::string& init_ckpt, std::ostream& err) {
    const auto records = load_records_sorted(manifest, err);
    const auto examples = load_examples(records, features_dir);
    nn::Registry init;
    if (!init_ckpt.empty()) init = nn::load_checkpoint(init_ckpt);
    for (const std::uint64_t seed : cfg.scorer.seeds) {
        const auto result = scorer::train_scorer(examples, cfg.scorer, seed,
                                                 init_ckpt.empty() ? nullptr : &init);
        nn::save_checkpoint(result.params, seed_checkpoint_path(out_prefix, seed));
        write_file_atomic(out_prefix + ".seed" + std::to_string(seed) + ".log.csv",
                          scorer::training_log_csv(result.log));
        if (!result.log.empty())
            err << "seed " << seed << ": loss "
                << format_real(result.log.front().total) << " -> "
                << format_real(result.log.back().total) << "\n";
    }
    err << cfg.scorer.seeds.size() << " checkpoint(s) written to " << out_prefix
        << ".seed*.ckpt\n";
    return 0;
}

int cmd_evaluate(const PipelineConfig& cfg, const std::string& manifest,
                 const std::string& features_dir, const std::string& ckpt_prefix,
                 const std::string& out_json, const std::string& out_csv,
                 std::ostream& err) {
    const auto records = load_records_sorted(manifest, err);
    const auto examples = load_examples(records, features_dir);
    std::vector<nn::Registry> params;
    for (const std::uint64_t seed : cfg.scorer.seeds)
        params.push_back(nn::load_checkpoint(seed_checkpoint_path(ckpt_prefix, seed)));
    const auto report = scorer::evaluate(examples, params, cfg.scorer);
    write_file_atomic(out_json, scorer::eval_report_to_json(report));
    write_file_atomic(out_csv, scorer::eval_report_to_csv(report));
    for (const auto& name : report.metric_names)
        err << name << ": " << format_real(report.mean.at(name)) << " ("
            << format_real(report.stddev.at(name)) << ")\n";
    return 0;
}

int cmd_score(const PipelineConfig& cfg, const std::string& manifest,
              const std::string& features_dir, const std::string& ckpt,
              std::string id, std::ostream& out, std::ostream& err) {
    auto records = load_records_sorted(manifest, err);
    if (id.empty()) {
        if (records.size() != 1)
            throw Error(manifest + ": holds " + std::to_string(records.size()) +
                        " utterances; pick one with --id");
        id = records.front().id;
    }
    const auto it = std::find_if(records.begin(), records.end(),
                                 [&](const auto& r) { return r.id == id; });
    if (it == records.end())
        throw Error(manifest + ": no utterance with id \"" + id + "\"");
    const auto examples = load_examples({*it}, features_dir);
    auto params = nn::load_checkpoint(ckpt);
    const auto sv = scorer::score(examples.front(), params, cfg.scorer);

    json j;
    j["id"] = id;
    j["phone_accuracy"] = sv.phone_accuracy;
    j["word_accuracy"] = sv.word_accuracy;
    j["word_stress"] = sv.word_stress;
    j["word_total"] = sv.word_total;
    j["utt_accuracy"] = sv.utt_accuracy;
    j["utt_completeness"] = sv.utt_completeness;
    j["utt_fluency"] = sv.utt_fluency;
    j["utt_prosodic"] = sv.utt_prosodic;
    j["utt_total"] = sv.utt_total;
    out << j.dump(2) << "\n";
    return 0;
}

int cmd_synth_corpus(const PipelineConfig& cfg, int n, const std::string& out_dir,
                     std::ostream& err) {
    const auto corpus = synth_corpus(n, cfg.seed);
    fs::create_directories(fs::path(out_dir) / "audio");
    std::vector<core::UtteranceRecord> records;
    for (const auto& u : corpus) {
        const fs::path target = fs::path(out_dir) / u.record.audio_path;
        const fs::path tmp = target.string() + ".tmp";
        dsp::write_wav(tmp.string(), u.audio);
        fs::rename(tmp, target);
        records.push_back(u.record);
    }
    write_file_atomic((fs::path(out_dir) / "manifest.jsonl").string(),
                      core::serialize_manifest(records));
    write_file_atomic((fs::path(out_dir) / "planted.json").string(),
                      planted_to_json(corpus));
    err << "generated " << corpus.size() << " utterance(s) in " << out_dir
        << " (seed " << cfg.seed << ")\n";
    return 0;
}

}  // namespace

align::ErrorRates record_error_rates(const core::UtteranceRecord& r) {
    std::vector<std::string> ref;
    for (const auto& w : r.words)
        for (const auto& p : w.phones) ref.push_back(p.label);
    if (!r.hyp_phones) {
        align::ErrorRates rates;
        rates.hits = static_cast<long long>(ref.size());
        return rates;
    }
    const auto cost = align::PhoneCost::trait_default();
    return align::error_rates(align::weighted_phone_align(ref, *r.hyp_phones, cost));
}

std::vector<scorer::ScorerExample> load_examples(
    const std::vector<core::UtteranceRecord>& records, const std::string& features_dir) {
    std::vector<scorer::ScorerExample> examples;
    for (const auto& r : records) {
        const auto path = feature_path(features_dir, r.id);
        auto f = feature_file_from_json(read_text_file(path), path);
        if (f.id != r.id)
            throw Error(path + ": holds features for \"" + f.id + "\", expected \"" +
                        r.id + "\"");
        if (f.seq.size() != r.phone_count())
            throw Error(path + ": " + std::to_string(f.seq.size()) +
                        " feature rows for " + std::to_string(r.phone_count()) +
                        " phones");
        scorer::ScorerExample ex;
        ex.record = r;
        ex.seq = std::move(f.seq);
        ex.hcf = std::move(f.hcf);
        examples.push_back(std::move(ex));
    }
    return examples;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Pronunciation-assessment pipeline: feature extraction, handcrafted "
                 "features, masked multi-task pretraining, multi-granularity scoring, "
                 "and synthetic-corpus generation."};
    app.name("apa");

    std::string config_path;
    std::uint64_t seed_value = 0;
    int jobs_value = 1;
    app.add_option("--config", config_path, "pipeline configuration JSON file");
    auto* seed_opt =
        app.add_option("--seed", seed_value, "seed override for this invocation");
    auto* jobs_opt = app.add_option("--jobs", jobs_value,
                                    "worker budget (processing is sequential; "
                                    "accepted for interface stability)")
                         ->check(CLI::Range(1, 256));
    app.require_subcommand(1);

    std::map<std::string, CLI::App*> subs;
    auto add_sub = [&](const std::string& name, const std::string& desc) {
        CLI::App* sub = app.add_subcommand(name, desc);
        sub->fallthrough();
        subs[name] = sub;
        return sub;
    };

    std::string manifest, audio_dir, features_dir, out_path, out_dir, csv_path,
        report_path, ckpt_path, log_path, prefix, init_ckpt, utt_id;
    int synth_n = 0;

    auto* ext = add_sub("extract-features",
                        "compute per-utterance feature files from audio + manifest");
    ext->add_option("--manifest", manifest, "manifest JSONL")->required();
    ext->add_option("--audio-dir", audio_dir, "directory audio paths resolve against")
        ->required();
    ext->add_option("--out-dir", out_dir, "directory for <id>.feat.json files")
        ->required();

    auto* chf = add_sub("compute-hcf",
                        "assemble the handcrafted-feature matrix CSV from feature files");
    chf->add_option("--manifest", manifest, "manifest JSONL")->required();
    chf->add_option("--features-dir", features_dir, "directory of <id>.feat.json")
        ->required();
    chf->add_option("--out", out_path, "output CSV path")->required();

    auto* sel = add_sub("select-features",
                        "filter + per-aspect L1 feature selection from the HCF matrix");
    sel->add_option("--manifest", manifest, "manifest JSONL with gold scores")
        ->required();
    sel->add_option("--hcf", csv_path, "feature matrix CSV from compute-hcf")
        ->required();
    sel->add_option("--out", out_path, "output selection-report JSON path")->required();

    auto* hm = add_sub("heatmap", "aspect x category relevance matrix CSV from a report");
    hm->add_option("--report", report_path, "selection-report JSON")->required();
    hm->add_option("--out", out_path, "output CSV path")->required();

    auto* pre = add_sub("pretrain", "masked multi-task pretraining of the encoder");
    pre->add_option("--manifest", manifest, "manifest JSONL")->required();
    pre->add_option("--features-dir", features_dir, "directory of <id>.feat.json")
        ->required();
    pre->add_option("--out", ckpt_path, "output checkpoint path")->required();
    pre->add_option("--log", log_path, "output training-log CSV path")->required();

    auto* tra = add_sub("train-apa",
                        "train the multi-granularity scorer, one run per configured seed");
    tra->add_option("--manifest", manifest, "manifest JSONL with gold scores")
        ->required();
    tra->add_option("--features-dir", features_dir, "directory of <id>.feat.json")
        ->required();
    tra->add_option("--out-prefix", prefix,
                    "checkpoint prefix; writes <prefix>.seed<k>.ckpt and "
                    "<prefix>.seed<k>.log.csv")
        ->required();
    tra->add_option("--init", init_ckpt, "warm-start encoder checkpoint from pretrain");

    auto* eva = add_sub("evaluate", "multi-seed evaluation report (JSON + CSV table)");
    eva->add_option("--manifest", manifest, "manifest JSONL with gold scores")
        ->required();
    eva->add_option("--features-dir", features_dir, "directory of <id>.feat.json")
        ->required();
    eva->add_option("--ckpt-prefix", prefix, "checkpoint prefix from train-apa")
        ->required();
    eva->add_option("--out", out_path, "output report JSON path")->required();
    eva->add_option("--csv", csv_path, "output metric table CSV path")->required();

    auto* sco = add_sub("score", "print one utterance's score vector as JSON");
    sco->add_option("--manifest", manifest, "manifest JSONL")->required();
    sco->add_option("--features-dir", features_dir, "directory of <id>.feat.json")
        ->required();
    sco->add_option("--ckpt", ckpt_path, "scorer checkpoint")->required();
    sco->add_option("--id", utt_id, "utterance id (optional for a 1-line manifest)");

    auto* syn = add_sub("synth-corpus",
                        "generate a synthetic corpus with documented gold rules");
    syn->add_option("--n", synth_n, "utterance count")->required()->check(
        CLI::PositiveNumber);
    syn->add_option("--out", out_dir, "output directory (audio/, manifest.jsonl, "
                                      "planted.json)")
        ->required();

    // --help handled up front so the target subcommand's flags are the ones
    // enumerated.
    {
        const CLI::App* help_target = &app;
        for (const auto& a : args) {
            if (a == "--help" || a == "-h") {
                out << help_target->help();
                return 0;
            }
            const auto it = subs.find(a);
            if (it != subs.end()) help_target = it->second;
        }
    }

    try {
        std::vector<const char*> argv;
        argv.push_back("apa");
        for (const auto& a : args) argv.push_back(a.c_str());
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
        err << "usage error: " << e.what() << "\n";
        return 2;
    }

    try {
        PipelineConfig cfg;
        if (!config_path.empty()) cfg = load_pipeline_config(config_path);
        if (seed_opt->count() > 0) {
            cfg.seed = seed_value;
            cfg.pretrain.seed = seed_value;
            cfg.scorer.encoder.seed = seed_value;
        }
        if (jobs_opt->count() > 0) cfg.jobs = jobs_value;
        cfg.validate();

        if (ext->parsed())
            return cmd_extract_features(cfg, manifest, audio_dir, out_dir, err);
        if (chf->parsed()) return cmd_compute_hcf(manifest, features_dir, out_path, err);
        if (sel->parsed())
            return cmd_select_features(cfg, manifest, csv_path, out_path, err);
        if (hm->parsed()) return cmd_heatmap(report_path, out_path, err);
        if (pre->parsed())
            return cmd_pretrain(cfg, manifest, features_dir, ckpt_path, log_path, err);
        if (tra->parsed())
            return cmd_train_apa(cfg, manifest, features_dir, prefix, init_ckpt, err);
        if (eva->parsed())
            return cmd_evaluate(cfg, manifest, features_dir, prefix, out_path, csv_path,
                                err);
        if (sco->parsed())
            return cmd_score(cfg, manifest, features_dir, ckpt_path, utt_id, out, err);
        if (syn->parsed()) return cmd_synth_corpus(cfg, synth_n, out_dir, err);
        err << "usage error: no command selected\n";
        return 2;
    } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    }
}

int run_main(int argc, char** argv) {
    std::vector<std::string> args;
    for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
    return run(args, std::cout, std::cerr);
}

}  // namespace apa::cli
