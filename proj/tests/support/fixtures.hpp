#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "skillsel/corpus.hpp"
#include "skillsel/embedding.hpp"
#include "skillsel/graph.hpp"
#include "skillsel/skills.hpp"

namespace testsupport {

// Fresh scratch directory under the system temp root; removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag);
    ~TempDir();
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
    const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
};

// Unit vector along the given axis.
std::vector<float> unit_axis(size_t dim, size_t axis);

// c*base + sqrt(1-c^2)*ortho for unit, mutually orthogonal inputs, so the
// result has cosine exactly c with base.
std::vector<float> rotate_toward(const std::vector<float>& base, const std::vector<float>& ortho,
                                 double c);

skillsel::emb::EmbeddingMatrix matrix_from_rows(const std::vector<std::string>& ids,
                                                const std::vector<std::vector<float>>& rows,
                                                bool normalize = true);

skillsel::emb::EmbeddingMatrix random_normalized(size_t rows, size_t dim, uint64_t seed,
                                                 const std::string& id_prefix);

// Randomized scoring instance: synthetic annotations, a built graph, and
// normalized reference/name/target embeddings with aligned manifests.
struct RandomInstance {
    skillsel::graph::SkillGraph graph;
    skillsel::emb::EmbeddingMatrix ref_emb;
    skillsel::emb::EmbeddingMatrix name_emb;  // aligned to node order
    skillsel::emb::EmbeddingMatrix target_emb;
    std::vector<skillsel::skills::SkillAnnotation> annotations;
};

RandomInstance make_random_instance(uint64_t seed, size_t n_targets, size_t n_skills, size_t n_refs,
                                    size_t dim = 12);

// Synthetic end-to-end fixture: reference and target corpora, a keyed
// embedding store covering documents and skill names, and a config file.
// Reference documents embed machine-readable markers the mock chat endpoint
// answers from. Skill names come in near-duplicate pairs that merge at the
// 0.9 threshold.
struct E2EFixture {
    std::filesystem::path dir;
    std::filesystem::path reference_corpus;
    std::filesystem::path target_corpus;
    std::filesystem::path store;
    std::filesystem::path config;
    size_t n_reference = 0;
    size_t n_target = 0;
    std::vector<std::string> raw_names;
    size_t canonical_groups = 0;
};

struct E2EOptions {
    size_t n_reference = 40;
    size_t n_target = 200;
    uint64_t seed = 7;
    double garbled_fraction = 0.0;   // docs answered with malformed JSON on first attempt
    double flaky_fraction = 0.0;     // docs answered HTTP 500 on first attempt
    double verbose_fraction = 0.0;   // docs answered with repair-needing point lists
    size_t nonmath_every = 10;       // every k-th reference doc is non-math
    double selection_ratio = 30.0;
    std::string budget_mode = "documents";
    std::string variant = "max";
    std::string mask = "full";
};

// endpoint_url is substituted into the config; pass the mock server url.
E2EFixture make_e2e_fixture(const std::filesystem::path& dir, const E2EOptions& opts,
                            const std::string& endpoint_url);

}  // namespace testsupport
