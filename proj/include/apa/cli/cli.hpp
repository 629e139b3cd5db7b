#pragma once

// Batch pipeline entry points: merged JSON configuration, per-utterance
// feature files, and the subcommands wiring feature extraction, handcrafted
// features, selection, pretraining, scorer training, evaluation, scoring,
// and synthetic-corpus generation together. All commands are deterministic
// given identical inputs and seed; data goes to files/stdout, logs to stderr.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "apa/core/types.hpp"
#include "apa/dsp/sequential.hpp"
#include "apa/hcf/hcf.hpp"
#include "apa/mtp/mtp.hpp"
#include "apa/scorer/scorer.hpp"

namespace apa::cli {

// Merged configuration for every module. JSON schema is strict: unknown keys
// are rejected with their location.
struct PipelineConfig {
    std::uint64_t seed = 0;
    int jobs = 1;
    dsp::DspConfig dsp;
    mtp::MtpConfig pretrain;        // .seed is filled from the effective seed
    scorer::ScorerConfig scorer;    // .encoder mirrors the pretrain section
    double selection_skew_max = 3.0;
    double selection_dominance_max = 0.8;
    std::optional<double> selection_lambda;  // absent -> per-aspect CV

    void validate() const;
};

PipelineConfig parse_pipeline_config(const std::string& content,
                                     const std::string& origin);
PipelineConfig load_pipeline_config(const std::string& path);
std::string pipeline_config_to_json(const PipelineConfig& cfg);

// Per-utterance feature file (<id>.feat.json): sequential encoder views plus
// the handcrafted-feature map. Serialization round-trips exactly.
struct FeatureFile {
    std::string id;
    dsp::SequentialFeatures seq;
    hcf::HcfVector hcf;
};

std::string feature_file_to_json(const FeatureFile& f);
FeatureFile feature_file_from_json(const std::string& content, const std::string& origin);

// One scorer example per manifest record, rows sorted by utterance id;
// feature files are read from features_dir.
std::vector<scorer::ScorerExample> load_examples(
    const std::vector<core::UtteranceRecord>& records, const std::string& features_dir);

// Alignment error rates for a record: reference = its aligned phone labels,
// hypothesis = hyp_phones. Records without a hypothesis count as error-free.
align::ErrorRates record_error_rates(const core::UtteranceRecord& r);

// Command-line front end. Arguments exclude the program name. Writes data to
// `out`, diagnostics to `err`; returns the process exit code (0 success,
// 1 data/validation failure, 2 usage error).
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

int run_main(int argc, char** argv);

}  // namespace apa::cli
