#pragma once

// JSON Lines manifest ingest and serialization. One utterance per line;
// schema documented in docs/manifest.md. Raw scores (phone 0-2, word and
// utterance 0-10) are normalized to [0, 1] on load and scaled back on write.

#include <functional>
#include <string>
#include <vector>

#include "apa/core/types.hpp"

namespace apa::core {

struct ManifestOptions {
    double slack_s = kDefaultSlackSeconds;
    // Receives warnings about ignored unknown keys; defaults to stderr.
    std::function<void(const std::string&)> warn;
};

// Parses and validates a whole manifest. Throws apa::Error with the line
// number on parse errors, or with the utterance id and field on invariant
// violations.
std::vector<UtteranceRecord> load_manifest(const std::string& path,
                                           const ManifestOptions& opts = {});

// Parses manifest content from memory (used by load_manifest and tests).
std::vector<UtteranceRecord> parse_manifest(const std::string& content,
                                            const std::string& origin,
                                            const ManifestOptions& opts = {});

// One JSON line per record, raw score scales restored.
std::string serialize_record(const UtteranceRecord& r);
std::string serialize_manifest(const std::vector<UtteranceRecord>& records);

// Empty result iff all invariants hold; each entry names the field and the
// expected condition. Violations are data, not errors.
std::vector<std::string> validate_record(const UtteranceRecord& r,
                                         double slack_s = kDefaultSlackSeconds);

}  // namespace apa::core
