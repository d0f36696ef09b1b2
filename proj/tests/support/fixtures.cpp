#include "support/fixtures.hpp"

#include <atomic>
#include <cmath>
#include <set>

#include <unistd.h>

#include <nlohmann/json.hpp>

#include "skillsel/util.hpp"

namespace testsupport {

namespace fs = std::filesystem;
using namespace skillsel;
using nlohmann::ordered_json;

TempDir::TempDir(const std::string& tag) {
    static std::atomic<uint64_t> counter{0};
    path_ = fs::temp_directory_path() /
            ("skillsel_" + tag + "_" + std::to_string(::getpid()) + "_" +
             std::to_string(counter.fetch_add(1)));
    fs::create_directories(path_);
}

TempDir::~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
}

std::vector<float> unit_axis(size_t dim, size_t axis) {
    std::vector<float> v(dim, 0.0f);
    v.at(axis) = 1.0f;
    return v;
}

std::vector<float> rotate_toward(const std::vector<float>& base, const std::vector<float>& ortho,
                                 double c) {
    double s = std::sqrt(1.0 - c * c);
    std::vector<float> out(base.size());
    for (size_t i = 0; i < base.size(); ++i) {
        out[i] = static_cast<float>(c * base[i] + s * ortho[i]);
    }
    return out;
}

emb::EmbeddingMatrix matrix_from_rows(const std::vector<std::string>& ids,
                                      const std::vector<std::vector<float>>& rows, bool normalize) {
    emb::EmbeddingMatrix m;
    m.dim = rows.empty() ? 0 : rows[0].size();
    m.id_manifest = ids;
    for (const auto& r : rows) m.data.insert(m.data.end(), r.begin(), r.end());
    return normalize ? emb::normalized(std::move(m)) : m;
}

emb::EmbeddingMatrix random_normalized(size_t rows, size_t dim, uint64_t seed,
                                       const std::string& id_prefix) {
    util::Rng rng(seed);
    emb::EmbeddingMatrix m;
    m.dim = dim;
    m.data.reserve(rows * dim);
    for (size_t r = 0; r < rows; ++r) {
        m.id_manifest.push_back(id_prefix + std::to_string(r));
        for (size_t d = 0; d < dim; ++d) {
            m.data.push_back(static_cast<float>(rng.uniform01() * 2.0 - 1.0));
        }
    }
    return emb::normalized(std::move(m));
}

RandomInstance make_random_instance(uint64_t seed, size_t n_targets, size_t n_skills, size_t n_refs,
                                    size_t dim) {
    util::Rng rng(seed);
    RandomInstance inst;

    char name_buf[32];
    std::vector<std::string> skill_names;
    for (size_t j = 0; j < n_skills; ++j) {
        std::snprintf(name_buf, sizeof(name_buf), "skill %03zu", j);
        skill_names.emplace_back(name_buf);
    }

    // Every skill appears at least once; extra memberships at random.
    std::vector<std::set<size_t>> doc_skills(n_refs);
    for (size_t j = 0; j < n_skills; ++j) doc_skills[j % n_refs].insert(j);
    for (size_t r = 0; r < n_refs; ++r) {
        size_t extra = rng.bounded(std::min<size_t>(n_skills, 6));
        for (size_t k = 0; k < extra; ++k) doc_skills[r].insert(rng.bounded(n_skills));
        while (doc_skills[r].size() > 10) doc_skills[r].erase(std::prev(doc_skills[r].end()));
    }

    graph::AliasMap alias;
    for (const auto& n : skill_names) alias[n] = n;
    std::vector<std::string> ref_manifest;
    for (size_t r = 0; r < n_refs; ++r) {
        skills::SkillAnnotation a;
        a.doc_id = "ref" + std::to_string(r);
        ref_manifest.push_back(a.doc_id);
        a.math_relevance = !doc_skills[r].empty();
        for (size_t j : doc_skills[r]) a.skills.push_back(skill_names[j]);
        if (!a.math_relevance) a.skills.clear();
        inst.annotations.push_back(std::move(a));
    }

    double temperature = 0.5 + rng.uniform01() * 4.0;
    inst.graph = graph::build_graph(inst.annotations, alias, ref_manifest, temperature);

    inst.ref_emb = random_normalized(n_refs, dim, seed * 31 + 1, "ref");
    inst.ref_emb.id_manifest = ref_manifest;
    inst.target_emb = random_normalized(n_targets, dim, seed * 31 + 2, "tgt");

    emb::EmbeddingMatrix names = random_normalized(inst.graph.node_count(), dim, seed * 31 + 3, "n");
    names.id_manifest.clear();
    for (const auto& node : inst.graph.nodes) names.id_manifest.push_back(node.canonical_name);
    inst.name_emb = std::move(names);
    return inst;
}

namespace {

std::string join(const std::vector<std::string>& parts, const std::string& sep) {
    std::string out;
    for (size_t i = 0; i < parts.size(); ++i) {
        if (i) out += sep;
        out += parts[i];
    }
    return out;
}

}  // namespace

E2EFixture make_e2e_fixture(const fs::path& dir, const E2EOptions& opts,
                            const std::string& endpoint_url) {
    fs::create_directories(dir);
    E2EFixture fx;
    fx.dir = dir;
    fx.n_reference = opts.n_reference;
    fx.n_target = opts.n_target;

    // Nine canonical skill groups; the first three carry a near-duplicate
    // variant (cosine 0.95 > 0.9) so merging has work to do.
    const std::vector<std::string> canonical = {
        "linear equations",     "quadratic equations", "fraction arithmetic",
        "polynomial factoring", "triangle geometry",   "circle geometry",
        "probability basics",   "sequence analysis",   "modular arithmetic",
    };
    const std::vector<std::pair<std::string, size_t>> variants = {
        {"linear equation solving", 0},
        {"quadratic equation", 1},
        {"fraction operations", 2},
    };
    fx.canonical_groups = canonical.size();

    const size_t dim = 32;
    std::vector<std::string> store_ids;
    std::vector<std::vector<float>> store_rows;

    std::vector<std::vector<float>> group_base(canonical.size());
    for (size_t g = 0; g < canonical.size(); ++g) {
        group_base[g] = unit_axis(dim, g);
        store_ids.push_back(canonical[g]);
        store_rows.push_back(group_base[g]);
        fx.raw_names.push_back(canonical[g]);
    }
    for (size_t v = 0; v < variants.size(); ++v) {
        const auto& [name, g] = variants[v];
        store_ids.push_back(name);
        store_rows.push_back(rotate_toward(group_base[g], unit_axis(dim, 16 + v), 0.95));
        fx.raw_names.push_back(name);
    }

    // Reference corpus: per-document skill lists encoded as markers the mock
    // chat endpoint reads back. Documents keep a deterministic mixture
    // embedding of their groups.
    util::Rng rng(opts.seed);
    std::vector<corpus::TextRecord> ref_records;
    size_t n_garbled = static_cast<size_t>(opts.garbled_fraction * opts.n_reference);
    size_t n_flaky = static_cast<size_t>(opts.flaky_fraction * opts.n_reference);
    size_t n_verbose = static_cast<size_t>(opts.verbose_fraction * opts.n_reference);
    for (size_t i = 0; i < opts.n_reference; ++i) {
        corpus::TextRecord rec;
        rec.id = "ref" + std::to_string(1000 + i);
        bool nonmath = opts.nonmath_every > 0 && i % opts.nonmath_every == opts.nonmath_every - 1;
        std::vector<float> mix(dim, 0.0f);
        std::vector<std::string> doc_skills;
        if (!nonmath) {
            size_t k = 1 + rng.bounded(4);
            std::set<size_t> picked;
            while (picked.size() < k) picked.insert(rng.bounded(fx.raw_names.size()));
            for (size_t p : picked) {
                doc_skills.push_back(fx.raw_names[p]);
                size_t g = p < canonical.size() ? p : variants[p - canonical.size()].second;
                for (size_t d = 0; d < dim; ++d) mix[d] += group_base[g][d];
            }
        } else {
            mix[24] = 1.0f;  // off to the side of every skill group
        }
        for (size_t d = 0; d < dim; ++d) {
            mix[d] += static_cast<float>((rng.uniform01() - 0.5) * 0.05);
        }
        std::string flags;
        if (i < n_garbled) flags += " [garbled]";
        if (i >= n_garbled && i < n_garbled + n_flaky) flags += " [flaky]";
        if (i >= n_garbled + n_flaky && i < n_garbled + n_flaky + n_verbose) flags += " [verbose]";
        rec.text = "[doc:" + rec.id + "]" + flags +
                   (nonmath ? " [nonmath] leisure reading with no formulas"
                            : " [skills: " + join(doc_skills, " | ") + "] practice problem");
        ref_records.push_back(rec);
        store_ids.push_back(rec.id);
        store_rows.push_back(mix);
    }
    fx.reference_corpus = dir / "reference.jsonl";
    corpus::write_records(ref_records, fx.reference_corpus);

    // Target corpus: mixtures over 0..3 groups plus noise; token counts set.
    std::vector<corpus::TextRecord> tgt_records;
    for (size_t i = 0; i < opts.n_target; ++i) {
        corpus::TextRecord rec;
        rec.id = "tgt" + std::to_string(100000 + i);
        size_t k = rng.bounded(4);
        std::vector<float> mix(dim, 0.0f);
        for (size_t p = 0; p < k; ++p) {
            size_t g = rng.bounded(canonical.size());
            for (size_t d = 0; d < dim; ++d) mix[d] += group_base[g][d];
        }
        for (size_t d = 0; d < dim; ++d) {
            mix[d] += static_cast<float>((rng.uniform01() - 0.5) * (k == 0 ? 1.0 : 0.2));
        }
        size_t words = 5 + rng.bounded(40);
        std::string text = "document " + rec.id;
        for (size_t w = 0; w < words; ++w) text += " w" + std::to_string(rng.bounded(500));
        rec.text = text;
        rec.token_count = static_cast<int64_t>(words + 2);
        tgt_records.push_back(rec);
        store_ids.push_back(rec.id);
        store_rows.push_back(mix);
    }
    fx.target_corpus = dir / "target.jsonl";
    corpus::write_records(tgt_records, fx.target_corpus);

    fx.store = dir / "store.emb";
    emb::write_cache(fx.store, matrix_from_rows(store_ids, store_rows, /*normalize=*/false));

    ordered_json cfg;
    cfg["seed"] = 42;
    cfg["paths"] = {
        {"reference_corpus", fx.reference_corpus.string()},
        {"target_corpus", fx.target_corpus.string()},
        {"workdir", (dir / "out").string()},
    };
    cfg["sample"] = {{"n", opts.n_reference}};
    cfg["extraction"] = {
        {"endpoint_url", endpoint_url},
        {"model_name", "mock-model"},
        {"prompt_template", (dir / "prompt.txt").string()},
        {"max_concurrency", 4},
        {"max_retries", 3},
        {"request_temperature", 0.0},
        {"max_quarantine_rate", 0.10},
    };
    cfg["embedding"] = {
        {"kind", "file"}, {"path_or_url", fx.store.string()}, {"batch_size", 16},
        {"max_concurrency", 2}, {"timeout_ms", 10000},
    };
    cfg["graph"] = {{"temperature", 0.0}, {"merge_threshold", 0.9}};
    cfg["scoring"] = {{"variant", opts.variant}, {"mask", opts.mask}, {"block_rows", 64},
                      {"materialize_aggregated", false}, {"workers", 2}};
    cfg["selection"] = {{"ratio_percent", opts.selection_ratio}, {"budget_mode", opts.budget_mode},
                        {"token_mode", "provided"}};
    cfg["histogram_bins"] = 16;
    fx.config = dir / "config.json";
    util::atomic_write_file(fx.config, cfg.dump(2) + "\n");

    // Prompt template for the fixture; the mock endpoint only needs {TEXT}.
    util::atomic_write_file(dir / "prompt.txt",
                            "Analyze the provided question.\n\nProvided text:\n{TEXT}\n\nJSON output:\n");
    return fx;
}

}  // namespace testsupport
