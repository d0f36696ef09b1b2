#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "skillsel/embedding.hpp"
#include "skillsel/scoring.hpp"
#include "skillsel/selection.hpp"
#include "skillsel/skills.hpp"

namespace skillsel::pipeline {

struct Paths {
    std::filesystem::path reference_corpus;
    std::filesystem::path target_corpus;
    std::filesystem::path workdir;
    std::filesystem::path sampled_reference;
    std::filesystem::path annotations;
    std::filesystem::path quarantine;
    std::filesystem::path alias_map;
    std::filesystem::path graph_bundle;
    std::filesystem::path reference_embeddings;
    std::filesystem::path target_embeddings;
    std::filesystem::path name_embeddings;
    std::filesystem::path scores;
    std::filesystem::path manifest;
    std::filesystem::path kept_corpus;
    std::filesystem::path histogram;
    std::filesystem::path stats;
};

struct PipelineConfig {
    uint64_t seed = 0;
    Paths paths;
    size_t sample_n = 0;  // 0 = use the whole reference corpus
    skills::ExtractionConfig extraction;
    emb::ProviderConfig embedding;
    double graph_temperature = 0.0;  // <= 0 derives from the count spread
    double merge_threshold = 0.9;
    scoring::ScoringConfig scoring;
    double selection_ratio = 30.0;
    selection::BudgetMode budget_mode = selection::BudgetMode::documents;
    corpus::TokenMode token_mode = corpus::TokenMode::whitespace;
    size_t histogram_bins = 20;
    bool force = false;
};

struct Overrides {
    std::optional<double> ratio;
    std::optional<double> temperature;
    std::optional<std::string> variant;
    std::optional<std::string> mask;
    std::optional<size_t> workers;
    std::optional<uint64_t> seed;
    bool force = false;
};

// Reads the JSON config; relative paths resolve against the config file's
// directory, and unset outputs default to names under the workdir.
PipelineConfig load_config(const std::filesystem::path& config_path, const Overrides& overrides);

inline constexpr const char* kStageNames[] = {
    "sample-reference", "extract-skills", "embed",  "merge-skills", "build-graph",
    "graph-stats",      "score",          "select", "histogram",
};

struct StageResult {
    std::string stage;
    bool skipped = false;
    int64_t records = 0;
    int64_t duration_ms = 0;
};

// Runs one stage by name. Stages are atomic (temp file + rename), cached by
// an input/config fingerprint, and logged as one JSON line on stderr.
StageResult run_stage(const PipelineConfig& cfg, const std::string& stage);

// Runs every stage in dependency order.
std::vector<StageResult> run_all(const PipelineConfig& cfg);

}  // namespace skillsel::pipeline
