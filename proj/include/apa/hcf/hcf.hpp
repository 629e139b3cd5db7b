#pragma once

// Handcrafted utterance-level features: rhythm metrics over vowel/consonant
// interval streams, fluency statistics (silences, durations, word counts),
// pronunciation statistics (confidences, pitch, energy, error rates), the
// skew/dominance/duplicate feature filter, L1-regularized per-aspect feature
// selection via coordinate descent, and the aspect × category relevance
// matrix.

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "apa/align/edit.hpp"
#include "apa/core/types.hpp"
#include "apa/dsp/tracks.hpp"
#include "apa/phonetics/phonetics.hpp"

namespace apa::hcf {

// The nine fixed feature categories every feature name is prefixed with.
const std::vector<std::string>& categories();

// The five utterance-level assessment aspects (relevance-matrix rows).
const std::vector<std::string>& utterance_aspects();

// Category prefix of a feature name ("pronunciation.pitch.f0_mean" →
// "pronunciation.pitch"). Throws if the name carries no known category tag.
std::string category_of(const std::string& feature_name);

// One utterance's named feature values. Names are unique by construction
// (map) and must be category-tagged and finite — see validate_hcf.
struct HcfVector {
    std::map<std::string, double> values;
};

void validate_hcf(const HcfVector& v);

// ------------------------------------------------------------------ rhythm --

struct RhythmConfig {
    double silence_break_s = 0.10;  // a gap longer than this splits intervals
};

// Interval-based rhythm metrics. Intervals are maximal same-class
// (vowel/consonant) phone runs; duration = run end − run start (seconds
// internally, PVI/CCI reported in milliseconds); segment count = phones in
// the run. Metrics are computed per stream (vocalic, consonantal) and over
// the combined chronological interval sequence. Streams with fewer than two
// intervals report 0 for the pairwise metrics with their `*_defined` flag 0.
// Names are prefixed "pronunciation.rhythm.".
HcfVector rhythm_metrics(const std::vector<core::PhoneSpan>& phones,
                         const phonetics::TraitTable& traits = phonetics::default_traits(),
                         const RhythmConfig& cfg = {});

// ----------------------------------------------------------------- fluency --

struct FluencyConfig {
    double min_gap_s = 0.10;   // inter-word gap counted as a silence if longer
    double long_gap_s = 0.50;  // gap at least this long counts as a long silence
    std::vector<std::string> filled_pause_lexicon = {"uh", "um", "er", "ah", "hmm", "mm"};
};

// Silence/duration/count statistics. Names are prefixed "fluency.".
HcfVector fluency_features(const core::UtteranceRecord& r, double total_audio_s,
                           const FluencyConfig& cfg = {});

// ----------------------------------------------------------- pronunciation --

// Confidence, voiced-F0, RMS statistics plus the alignment error rates.
// Names are prefixed "pronunciation." (phone/word/pitch/energy/error_rate).
HcfVector pronunciation_features(const core::UtteranceRecord& r, const dsp::FrameTrack& f0,
                                 const dsp::FrameTrack& rms, const align::ErrorRates& rates);

// Full per-utterance battery: pronunciation + rhythm + fluency merged.
HcfVector compute_hcf(const core::UtteranceRecord& r, const dsp::FrameTrack& f0,
                      const dsp::FrameTrack& rms, const align::ErrorRates& rates,
                      double total_audio_s, const FluencyConfig& fluency_cfg = {},
                      const RhythmConfig& rhythm_cfg = {},
                      const phonetics::TraitTable& traits = phonetics::default_traits());

// ------------------------------------------------------------------ matrix --

struct FeatureMatrix {
    std::vector<std::string> ids;               // one per utterance row
    std::vector<std::string> names;             // unique column names
    std::vector<std::vector<double>> rows;      // ids.size() × names.size()

    int feature_index(const std::string& name) const;  // -1 if absent
    std::vector<double> column(int j) const;
};

// Dense matrix from per-utterance vectors; every utterance must carry exactly
// the same feature names.
FeatureMatrix assemble_matrix(const std::vector<std::pair<std::string, HcfVector>>& utts);

std::string matrix_to_csv(const FeatureMatrix& m);
FeatureMatrix matrix_from_csv(const std::string& content, const std::string& origin);

// --------------------------------------------------------------- selection --

struct SelectionReport {
    std::vector<std::string> dropped_skewed;
    std::vector<std::string> dropped_binary;
    std::vector<std::string> dropped_duplicate;
    std::vector<std::string> survivors;  // filter output, name-sorted
    std::map<std::string, std::vector<std::string>> selected_per_aspect;
    std::map<std::string, std::map<std::string, double>> coefficients;  // standardized space
    std::map<std::string, double> lambda_per_aspect;
};

// Population Fisher skewness g1 = m3 / m2^{3/2}; 0 for (near-)constant input.
double fisher_skewness(const std::vector<double>& values);

// Distribution filter: drops |skew| > skew_max, then most-frequent-value
// share > dominance_max, then duplicate columns (bitwise-equal values or
// |PCC| = 1 within 1e-12; the lexicographically first name survives).
SelectionReport filter_features(const FeatureMatrix& m, double skew_max = 3.0,
                                double dominance_max = 0.8);

// --------------------------------------------------------------- lasso ----

// Coordinate descent for (1/(2n))·‖y − Xβ‖² + λ·‖β‖₁ over pre-standardized
// columns and centered y. Converges when max |Δβ| < 1e-6 (at most 1e4
// sweeps, else an error carrying the last iterate). The objective is checked
// to be non-increasing after every sweep. `init` warm-starts the iterate
// (empty = start from zero); it must be empty or have one entry per column.
std::vector<double> lasso_coordinate_descent(const std::vector<std::vector<double>>& cols,
                                             const std::vector<double>& y, double lambda,
                                             const std::vector<double>& init = {});

// Smallest lambda with an all-zero solution: max_j |x_jᵀ y| / n
// (standardized columns, centered y).
double lasso_lambda_max(const std::vector<std::vector<double>>& cols,
                        const std::vector<double>& y);

// Log-spaced grid 1e-4 .. 1 used when no lambda is configured.
std::vector<double> default_lambda_grid();

// 5-fold cross-validated lambda (deterministic round-robin folds); ties pick
// the sparser (larger) lambda. Every solve is warm-started at an exact
// homotopy-path solution so correlated columns cannot stall the descent.
double lasso_cv_lambda(const FeatureMatrix& m, const std::vector<double>& y,
                       const std::vector<double>& grid = default_lambda_grid(),
                       int folds = 5);

// Per-aspect L1 selection on the (already filtered) matrix. Targets must lie
// in [0, 1]. Without an explicit lambda each aspect cross-validates its own.
SelectionReport lasso_select(const FeatureMatrix& m,
                             const std::map<std::string, std::vector<double>>& targets,
                             std::optional<double> lambda = std::nullopt);

// Full pipeline: filter, then per-aspect lasso on the survivors; one merged
// report.
SelectionReport select_features(const FeatureMatrix& m,
                                const std::map<std::string, std::vector<double>>& targets,
                                double skew_max = 3.0, double dominance_max = 0.8,
                                std::optional<double> lambda = std::nullopt);

// --------------------------------------------------------------- relevance --

struct RelevanceMatrix {
    std::vector<std::string> aspects;     // rows: the five utterance aspects
    std::vector<std::string> categories;  // columns: the nine feature categories
    std::vector<std::vector<double>> values;
};

// Entry (aspect, category) = mean |coefficient| over that aspect's selected
// features in the category; 0 where nothing was selected.
RelevanceMatrix relevance_matrix(const SelectionReport& report);

std::string relevance_to_csv(const RelevanceMatrix& m);

std::string report_to_json(const SelectionReport& report);
SelectionReport report_from_json(const std::string& content, const std::string& origin);

}  // namespace apa::hcf
