#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "skillsel/embedding.hpp"
#include "skillsel/graph.hpp"

namespace skillsel::scoring {

enum class Variant { max_over_refs, mean_embedding, name_embedding };
enum class Mask { full, diag_only, nondiag_only };

Variant variant_from_string(const std::string& s);
Mask mask_from_string(const std::string& s);
std::string to_string(Variant v);
std::string to_string(Mask m);

struct ScoringConfig {
    Variant variant = Variant::max_over_refs;
    Mask mask = Mask::full;
    size_t block_rows = 256;
    bool materialize_aggregated = false;
    size_t workers = 1;
};

struct ScoreVector {
    std::vector<double> scores;  // aligned to the target id_manifest
    std::string fingerprint;
};

// Per-skill similarity of one target row: max over the skill's reference
// documents, cosine to their mean embedding, or cosine to the skill-name
// embedding. ref_emb/name_emb may be null when the variant does not use them.
std::vector<double> skill_similarity(std::span<const float> target_row, const graph::SkillGraph& g,
                                     const emb::EmbeddingMatrix* ref_emb,
                                     const emb::EmbeddingMatrix* skill_name_emb, Variant variant);

// w = A.1 with the mask applied; scores reduce to S.w because A is symmetric.
std::vector<double> precompute_skill_weights(const graph::SkillGraph& g, Mask mask);

// Streaming scorer: never materializes the target x skill similarity matrix
// unless materialize_aggregated asks for the per-skill aggregated blocks,
// which are then written next to the scores for attribution.
ScoreVector score_corpus(const emb::EmbeddingMatrix& target_emb, const graph::SkillGraph& g,
                         const emb::EmbeddingMatrix* ref_emb,
                         const emb::EmbeddingMatrix* skill_name_emb, const ScoringConfig& cfg,
                         const std::filesystem::path* aggregated_out = nullptr);

// Fingerprint over variant, mask, graph checksum, and embedding checksums.
// Block size and worker count do not affect results and are excluded.
std::string scoring_fingerprint(const graph::SkillGraph& g, const emb::EmbeddingMatrix& target_emb,
                                const emb::EmbeddingMatrix* ref_emb,
                                const emb::EmbeddingMatrix* skill_name_emb, Variant variant,
                                Mask mask);

struct Histogram {
    std::vector<double> edges;  // bins + 1 entries (single entry pair when degenerate)
    std::vector<int64_t> counts;
    double mean = 0.0;
    double median = 0.0;

    std::string to_csv() const;  // bin_lo,bin_hi,count
};

// Equal-width bins over [min, max]; all-equal scores collapse to one bin.
Histogram score_histogram(const ScoreVector& scores, size_t bins);

// Score file: JSONL {"id", "score"} in manifest order plus a meta file with
// the fingerprint. Refuses to overwrite scores with a different fingerprint
// unless force is set.
void write_scores(const std::filesystem::path& path, const std::vector<std::string>& ids,
                  const ScoreVector& sv, bool force = false);

struct LoadedScores {
    std::vector<std::string> ids;
    ScoreVector sv;
};
LoadedScores read_scores(const std::filesystem::path& path);

}  // namespace skillsel::scoring
