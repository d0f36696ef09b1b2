#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "skillsel/corpus.hpp"
#include "skillsel/scoring.hpp"

namespace skillsel::selection {

enum class BudgetMode { documents, tokens };

BudgetMode budget_mode_from_string(const std::string& s);
std::string to_string(BudgetMode m);

struct RankedRecord {
    std::string id;
    double score = 0.0;
    int64_t rank = 0;  // 1-based over the whole corpus in selection order
    bool kept = false;
};

struct SelectionManifest {
    double ratio_percent = 0.0;
    BudgetMode budget_mode = BudgetMode::documents;
    std::vector<RankedRecord> records;  // score descending, ties by ascending id
    size_t kept_count = 0;
    size_t dropped_count = 0;
    double cut_score = 0.0;  // score of the last kept record
    std::string config_fingerprint;
    int64_t kept_tokens = 0;   // tokens mode bookkeeping (0 in documents mode
    int64_t total_tokens = 0;  // unless counts were computed)
};

// Ranks by score descending (ties broken by ascending id) and keeps either
// ceil(ratio/100 * N) documents or the smallest prefix whose token sum
// reaches ratio/100 of the total. token_mode only matters in tokens mode.
SelectionManifest select_top(const scoring::ScoreVector& scores, const corpus::CorpusHandle& corpus,
                             double ratio_percent, BudgetMode mode,
                             corpus::TokenMode token_mode = corpus::TokenMode::whitespace);

// Manifest JSONL {"id","score","rank","kept"} plus selection.meta.json, and
// the kept subset in rank order preserving original record bytes.
void write_manifest(const SelectionManifest& manifest, const corpus::CorpusHandle& corpus,
                    const std::filesystem::path& manifest_path,
                    const std::filesystem::path& kept_corpus_path);

SelectionManifest read_manifest(const std::filesystem::path& manifest_path);

struct SelectionReport {
    double kept_mean = 0.0;
    std::optional<double> dropped_mean;  // absent at ratio 100
    double cut_score = 0.0;
    double kept_token_share = 0.0;  // kept tokens / total tokens
    double suggested_repeat_factor = 1.0;
    std::vector<std::string> top_ids;
    std::vector<std::string> bottom_ids;

    std::string to_json() const;
};

SelectionReport selection_report(const SelectionManifest& manifest, size_t exemplars = 5);

}  // namespace skillsel::selection
