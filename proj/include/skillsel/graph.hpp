#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "skillsel/embedding.hpp"
#include "skillsel/skills.hpp"

namespace skillsel::graph {

struct SkillNode {
    int skill_id = 0;
    std::string canonical_name;
    std::vector<std::string> aliases;  // merged-away raw names, canonical excluded
    int64_t cnt = 0;                   // distinct reference documents containing the skill
    std::vector<int64_t> ids;          // sorted reference-corpus row indices
};

struct SkillEdge {
    int i = 0;  // i < j
    int j = 0;
    int64_t cnt = 0;  // reference documents where both endpoint skills appear
};

// Skill co-occurrence graph with a softmax-normalized sparse adjacency.
// diag[i] is the softmax (temperature T) over node counts; edge_weight[e] is
// the softmax over edge counts and fills both symmetric adjacency slots.
struct SkillGraph {
    std::vector<SkillNode> nodes;
    std::vector<SkillEdge> edges;
    double temperature = 1.0;
    std::vector<double> diag;
    std::vector<double> edge_weight;
    std::vector<std::vector<std::pair<int, int>>> neighbors;  // per node: (other, edge index)

    size_t node_count() const { return nodes.size(); }
    size_t edge_count() const { return edges.size(); }
};

// Numerically stable softmax of xs/temperature (max-subtraction, 64-bit).
std::vector<double> softmax_with_temperature(const std::vector<double>& xs, double temperature);

using AliasMap = std::map<std::string, std::string>;  // raw name -> canonical name

// Connected components of the "cosine > threshold" relation over raw skill
// names. Each component is named after its most frequent member (frequency =
// number of annotations carrying the name); ties break to the
// lexicographically smallest name. name_embeddings must hold one row per
// distinct raw name, keyed by the name.
AliasMap merge_skills(const std::vector<skills::SkillAnnotation>& annotations,
                      const emb::EmbeddingMatrix& name_embeddings, double threshold = 0.9);

void save_alias_map(const AliasMap& map, const std::filesystem::path& path);
AliasMap load_alias_map(const std::filesystem::path& path);

// Builds the graph from annotations. ref_manifest maps doc_id to the row
// index of the reference corpus (and its embedding cache). Per document the
// canonicalized, deduplicated skill set contributes +1 to each member node
// and +1 to each unordered pair. Temperature must be positive; pass
// default_temperature(...) to derive one from the counts.
SkillGraph build_graph(const std::vector<skills::SkillAnnotation>& annotations,
                       const AliasMap& alias_map, const std::vector<std::string>& ref_manifest,
                       double temperature);

// Standard deviation of the node-count vector; falls back to 1.0 when the
// counts are uniform (softmax is shift-invariant there anyway).
double default_temperature(const std::vector<skills::SkillAnnotation>& annotations,
                           const AliasMap& alias_map);

struct GraphStats {
    size_t nodes = 0;
    size_t edges = 0;
    double density = 0.0;
    double clustering_coefficient = 0.0;  // mean local clustering
    double modularity = 0.0;              // greedy agglomerative communities
    double average_degree = 0.0;
    int64_t maximum_degree = 0;
    int64_t minimum_degree = 0;
    double degree_stddev = 0.0;  // population

    // Label/value rows in report order.
    std::vector<std::pair<std::string, std::string>> rows() const;
    std::string to_json() const;
};

GraphStats graph_stats(const SkillGraph& graph);

// Bundle layout under a directory: nodes.jsonl, edges.jsonl, meta.json, and
// adjacency.bin ("SKAD", u32 version=1, u64 node_count, u64 nnz, then nnz
// little-endian (u32 row, u32 col, f32 value) triples sorted row-major,
// diagonal included). Adjacency values are quantized to f32 on disk and
// round-trip bit-exactly.
void save_graph(const SkillGraph& graph, const std::filesystem::path& dir);
SkillGraph load_graph(const std::filesystem::path& dir);

// Checksum recorded in meta.json; covers nodes, edges, and adjacency bytes.
std::string bundle_checksum(const SkillGraph& graph);

}  // namespace skillsel::graph
