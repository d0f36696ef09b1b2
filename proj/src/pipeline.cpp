#include "skillsel/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <iostream>
#include <optional>
#include <set>
#include <unordered_map>

#include <nlohmann/json.hpp>

#include "skillsel/graph.hpp"
#include "skillsel/util.hpp"

namespace skillsel::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path resolve(const fs::path& base, const std::string& p) {
    fs::path path(p);
    return path.is_absolute() ? path : base / path;
}

}  // namespace

PipelineConfig load_config(const fs::path& config_path, const Overrides& overrides) {
    json j = json::parse(util::read_file(config_path), nullptr, false);
    if (j.is_discarded() || !j.is_object()) {
        throw ValidationError("config does not parse as a JSON object: " + config_path.string());
    }
    fs::path base = config_path.parent_path();
    PipelineConfig cfg;
    cfg.seed = j.value("seed", uint64_t{0});

    if (!j.contains("paths") || !j["paths"].is_object()) {
        throw ValidationError("config needs a \"paths\" object");
    }
    const json& p = j["paths"];
    auto need = [&](const char* key) {
        if (!p.contains(key)) throw ValidationError(std::string("config paths missing \"") + key + "\"");
        return resolve(base, p[key].get<std::string>());
    };
    auto opt = [&](const char* key, const fs::path& fallback) {
        return p.contains(key) ? resolve(base, p[key].get<std::string>()) : fallback;
    };
    cfg.paths.reference_corpus = need("reference_corpus");
    cfg.paths.target_corpus = need("target_corpus");
    cfg.paths.workdir = opt("workdir", base / "out");
    const fs::path& wd = cfg.paths.workdir;
    cfg.paths.sampled_reference = opt("sampled_reference", wd / "sampled_reference.jsonl");
    cfg.paths.annotations = opt("annotations", wd / "annotations.jsonl");
    cfg.paths.quarantine = opt("quarantine", wd / "quarantine.jsonl");
    cfg.paths.alias_map = opt("alias_map", wd / "alias_map.jsonl");
    cfg.paths.graph_bundle = opt("graph_bundle", wd / "graph");
    cfg.paths.reference_embeddings = opt("reference_embeddings", wd / "reference.emb");
    cfg.paths.target_embeddings = opt("target_embeddings", wd / "target.emb");
    cfg.paths.name_embeddings = opt("name_embeddings", wd / "names.emb");
    cfg.paths.scores = opt("scores", wd / "scores.jsonl");
    cfg.paths.manifest = opt("manifest", wd / "manifest.jsonl");
    cfg.paths.kept_corpus = opt("kept_corpus", wd / "kept.jsonl");
    cfg.paths.histogram = opt("histogram", wd / "histogram.csv");
    cfg.paths.stats = opt("stats", wd / "graph_stats.json");

    if (j.contains("sample")) cfg.sample_n = j["sample"].value("n", size_t{0});

    if (j.contains("extraction")) {
        const json& e = j["extraction"];
        cfg.extraction.endpoint_url = e.value("endpoint_url", "");
        cfg.extraction.model_name = e.value("model_name", "");
        if (e.contains("prompt_template")) {
            cfg.extraction.prompt_template_path = resolve(base, e["prompt_template"].get<std::string>());
        }
        cfg.extraction.max_concurrency = e.value("max_concurrency", size_t{4});
        cfg.extraction.max_retries = e.value("max_retries", 3);
        cfg.extraction.request_temperature = e.value("request_temperature", 0.0);
        cfg.extraction.max_quarantine_rate = e.value("max_quarantine_rate", 0.10);
    }

    if (j.contains("embedding")) {
        const json& e = j["embedding"];
        std::string kind = e.value("kind", "file");
        if (kind == "file") {
            cfg.embedding.kind = emb::ProviderConfig::Kind::file;
        } else if (kind == "http") {
            cfg.embedding.kind = emb::ProviderConfig::Kind::http;
        } else {
            throw ValidationError("embedding kind must be \"file\" or \"http\"");
        }
        std::string target = e.value("path_or_url", "");
        cfg.embedding.path_or_url = cfg.embedding.kind == emb::ProviderConfig::Kind::file
                                        ? resolve(base, target).string()
                                        : target;
        cfg.embedding.batch_size = e.value("batch_size", size_t{16});
        cfg.embedding.max_concurrency = e.value("max_concurrency", size_t{4});
        cfg.embedding.timeout_ms = e.value("timeout_ms", int64_t{30000});
    }

    if (j.contains("graph")) {
        cfg.graph_temperature = j["graph"].value("temperature", 0.0);
        cfg.merge_threshold = j["graph"].value("merge_threshold", 0.9);
    }

    if (j.contains("scoring")) {
        const json& s = j["scoring"];
        cfg.scoring.variant = scoring::variant_from_string(s.value("variant", "max"));
        cfg.scoring.mask = scoring::mask_from_string(s.value("mask", "full"));
        cfg.scoring.block_rows = s.value("block_rows", size_t{256});
        cfg.scoring.materialize_aggregated = s.value("materialize_aggregated", false);
        cfg.scoring.workers = s.value("workers", size_t{1});
    }

    if (j.contains("selection")) {
        const json& s = j["selection"];
        cfg.selection_ratio = s.value("ratio_percent", 30.0);
        cfg.budget_mode = selection::budget_mode_from_string(s.value("budget_mode", "documents"));
        std::string tm = s.value("token_mode", "whitespace");
        if (tm == "whitespace") {
            cfg.token_mode = corpus::TokenMode::whitespace;
        } else if (tm == "provided") {
            cfg.token_mode = corpus::TokenMode::provided;
        } else {
            throw ValidationError("token_mode must be \"whitespace\" or \"provided\"");
        }
    }
    cfg.histogram_bins = j.value("histogram_bins", size_t{20});

    if (overrides.ratio) cfg.selection_ratio = *overrides.ratio;
    if (overrides.temperature) cfg.graph_temperature = *overrides.temperature;
    if (overrides.variant) cfg.scoring.variant = scoring::variant_from_string(*overrides.variant);
    if (overrides.mask) cfg.scoring.mask = scoring::mask_from_string(*overrides.mask);
    if (overrides.workers) cfg.scoring.workers = *overrides.workers;
    if (overrides.seed) cfg.seed = *overrides.seed;
    cfg.force = overrides.force;
    return cfg;
}

namespace {

void require_input(const fs::path& p) {
    if (!fs::exists(p)) throw MissingInputError("missing input: " + p.string());
}

std::vector<fs::path> stage_inputs(const PipelineConfig& cfg, const std::string& stage) {
    const Paths& p = cfg.paths;
    if (stage == "sample-reference") return {p.reference_corpus};
    if (stage == "extract-skills") return {p.sampled_reference, cfg.extraction.prompt_template_path};
    if (stage == "embed") {
        std::vector<fs::path> in = {p.sampled_reference, p.target_corpus, p.annotations};
        if (cfg.embedding.kind == emb::ProviderConfig::Kind::file) {
            in.push_back(cfg.embedding.path_or_url);
        }
        return in;
    }
    if (stage == "merge-skills") return {p.annotations, p.name_embeddings};
    if (stage == "build-graph") {
        return {p.annotations, p.alias_map, corpus::ids_path(p.sampled_reference)};
    }
    if (stage == "graph-stats") {
        return {p.graph_bundle / "nodes.jsonl", p.graph_bundle / "edges.jsonl",
                p.graph_bundle / "adjacency.bin", p.graph_bundle / "meta.json"};
    }
    if (stage == "score") {
        return {p.target_embeddings, p.reference_embeddings, p.name_embeddings,
                p.graph_bundle / "meta.json", p.graph_bundle / "nodes.jsonl",
                p.graph_bundle / "edges.jsonl", p.graph_bundle / "adjacency.bin"};
    }
    if (stage == "select") return {p.scores, p.target_corpus};
    if (stage == "histogram") return {p.scores};
    throw ValidationError("unknown stage: " + stage);
}

std::vector<fs::path> stage_outputs(const PipelineConfig& cfg, const std::string& stage) {
    const Paths& p = cfg.paths;
    if (stage == "sample-reference") {
        return {p.sampled_reference, corpus::ids_path(p.sampled_reference)};
    }
    if (stage == "extract-skills") return {p.annotations};
    if (stage == "embed") {
        return {p.reference_embeddings, p.target_embeddings, p.name_embeddings};
    }
    if (stage == "merge-skills") return {p.alias_map};
    if (stage == "build-graph") {
        return {p.graph_bundle / "nodes.jsonl", p.graph_bundle / "edges.jsonl",
                p.graph_bundle / "adjacency.bin", p.graph_bundle / "meta.json"};
    }
    if (stage == "graph-stats") return {p.stats};
    if (stage == "score") {
        std::vector<fs::path> out = {p.scores};
        if (cfg.scoring.materialize_aggregated) out.push_back(p.workdir / "aggregated.emb");
        return out;
    }
    if (stage == "select") {
        return {p.manifest, p.kept_corpus, p.manifest.parent_path() / "selection.meta.json"};
    }
    if (stage == "histogram") return {p.histogram};
    throw ValidationError("unknown stage: " + stage);
}

std::string stage_config_string(const PipelineConfig& cfg, const std::string& stage) {
    if (stage == "sample-reference") {
        return "seed=" + std::to_string(cfg.seed) + "|n=" + std::to_string(cfg.sample_n);
    }
    if (stage == "extract-skills") {
        return "url=" + cfg.extraction.endpoint_url + "|model=" + cfg.extraction.model_name +
               "|temp=" + std::to_string(cfg.extraction.request_temperature) +
               "|retries=" + std::to_string(cfg.extraction.max_retries) +
               "|qrate=" + std::to_string(cfg.extraction.max_quarantine_rate);
    }
    if (stage == "embed") {
        return std::string("kind=") +
               (cfg.embedding.kind == emb::ProviderConfig::Kind::file ? "file" : "http") +
               "|src=" + cfg.embedding.path_or_url;
    }
    if (stage == "merge-skills") return "threshold=" + std::to_string(cfg.merge_threshold);
    if (stage == "build-graph") {
        return cfg.graph_temperature > 0.0 ? "T=" + std::to_string(cfg.graph_temperature) : "T=auto";
    }
    if (stage == "graph-stats") return "";
    if (stage == "score") {
        return "variant=" + scoring::to_string(cfg.scoring.variant) +
               "|mask=" + scoring::to_string(cfg.scoring.mask) +
               "|materialize=" + (cfg.scoring.materialize_aggregated ? "1" : "0");
    }
    if (stage == "select") {
        return "ratio=" + std::to_string(cfg.selection_ratio) +
               "|mode=" + selection::to_string(cfg.budget_mode) +
               "|tokens=" + (cfg.token_mode == corpus::TokenMode::provided ? "provided" : "whitespace");
    }
    if (stage == "histogram") return "bins=" + std::to_string(cfg.histogram_bins);
    throw ValidationError("unknown stage: " + stage);
}

std::string stage_fingerprint(const PipelineConfig& cfg, const std::string& stage) {
    util::Fnv1a h;
    h.update("stage/" + stage + "/v1|");
    h.update(stage_config_string(cfg, stage));
    for (const auto& input : stage_inputs(cfg, stage)) {
        h.update("|" + input.filename().string() + ":");
        h.update_file(input);
    }
    return h.hex();
}

fs::path fingerprint_path(const PipelineConfig& cfg, const std::string& stage) {
    return cfg.paths.workdir / ".fingerprints" / (stage + ".fp");
}

// Stage bodies; each returns the record count to log.

int64_t do_sample_reference(const PipelineConfig& cfg) {
    util::log_info("sample-reference", "seed " + std::to_string(cfg.seed));
    auto loaded = corpus::load_corpus(cfg.paths.reference_corpus);
    if (loaded.skipped_malformed > 0) {
        util::log_warning("sample-reference",
                          std::to_string(loaded.skipped_malformed) + " malformed lines skipped");
    }
    size_t n = cfg.sample_n == 0 ? loaded.handle.record_count
                                 : std::min(cfg.sample_n, loaded.handle.record_count);
    if (cfg.sample_n > loaded.handle.record_count) {
        util::log_warning("sample-reference",
                          "sample size " + std::to_string(cfg.sample_n) + " clamped to corpus size " +
                              std::to_string(n));
    }
    corpus::sample_reference(loaded.handle, n, cfg.seed, cfg.paths.sampled_reference);
    return static_cast<int64_t>(n);
}

int64_t do_extract_skills(const PipelineConfig& cfg) {
    auto sampled = corpus::load_corpus(cfg.paths.sampled_reference);
    auto summary = skills::extract_skills(sampled.handle, cfg.extraction, cfg.paths.annotations,
                                          cfg.paths.quarantine);
    if (summary.quarantined > 0) {
        util::log_warning("extract-skills",
                          std::to_string(summary.quarantined) + " documents quarantined");
    }
    return static_cast<int64_t>(summary.annotated + summary.skipped_existing);
}

int64_t do_embed(const PipelineConfig& cfg) {
    auto ref = corpus::load_corpus(cfg.paths.sampled_reference);
    auto tgt = corpus::load_corpus(cfg.paths.target_corpus);
    auto ref_m = emb::embed_corpus(ref.handle, cfg.embedding, cfg.paths.reference_embeddings);
    auto tgt_m = emb::embed_corpus(tgt.handle, cfg.embedding, cfg.paths.target_embeddings);

    auto annotations = skills::load_annotations(cfg.paths.annotations);
    std::set<std::string> names;
    for (const auto& a : annotations) {
        if (!a.math_relevance) continue;
        names.insert(a.skills.begin(), a.skills.end());
    }
    if (names.empty()) throw ValidationError("annotations contain no skills to embed");
    std::vector<emb::EmbedItem> items;
    items.reserve(names.size());
    for (const auto& n : names) items.push_back({n, n});
    auto name_m = emb::embed_items(items, cfg.embedding, cfg.paths.name_embeddings);
    return static_cast<int64_t>(ref_m.rows() + tgt_m.rows() + name_m.rows());
}

int64_t do_merge_skills(const PipelineConfig& cfg) {
    auto annotations = skills::load_annotations(cfg.paths.annotations);
    auto names = emb::read_cache(cfg.paths.name_embeddings);
    auto map = graph::merge_skills(annotations, names, cfg.merge_threshold);
    graph::save_alias_map(map, cfg.paths.alias_map);
    return static_cast<int64_t>(map.size());
}

int64_t do_build_graph(const PipelineConfig& cfg) {
    auto annotations = skills::load_annotations(cfg.paths.annotations);
    auto alias = graph::load_alias_map(cfg.paths.alias_map);
    auto manifest = corpus::read_id_manifest(cfg.paths.sampled_reference);
    double t = cfg.graph_temperature;
    if (t <= 0.0) {
        t = graph::default_temperature(annotations, alias);
        util::log_info("build-graph", "derived temperature " + std::to_string(t));
    }
    auto g = graph::build_graph(annotations, alias, manifest, t);
    graph::save_graph(g, cfg.paths.graph_bundle);
    return static_cast<int64_t>(g.node_count());
}

int64_t do_graph_stats(const PipelineConfig& cfg) {
    auto g = graph::load_graph(cfg.paths.graph_bundle);
    auto stats = graph::graph_stats(g);
    for (const auto& [label, value] : stats.rows()) {
        std::cout << label << ": " << value << "\n";
    }
    util::atomic_write_file(cfg.paths.stats, stats.to_json() + "\n");
    return static_cast<int64_t>(stats.nodes);
}

int64_t do_score(const PipelineConfig& cfg) {
    auto target = emb::read_cache(cfg.paths.target_embeddings);
    auto g = graph::load_graph(cfg.paths.graph_bundle);

    std::optional<emb::EmbeddingMatrix> ref;
    std::optional<emb::EmbeddingMatrix> node_names;
    const emb::EmbeddingMatrix* ref_ptr = nullptr;
    const emb::EmbeddingMatrix* names_ptr = nullptr;
    if (cfg.scoring.variant == scoring::Variant::name_embedding) {
        auto raw_names = emb::read_cache(cfg.paths.name_embeddings);
        std::unordered_map<std::string, size_t> row_of;
        for (size_t i = 0; i < raw_names.rows(); ++i) row_of[raw_names.id_manifest[i]] = i;
        emb::EmbeddingMatrix nn;
        nn.dim = raw_names.dim;
        nn.normalized = raw_names.normalized;
        for (const auto& node : g.nodes) {
            auto it = row_of.find(node.canonical_name);
            if (it == row_of.end()) {
                throw ValidationError("no name embedding for skill \"" + node.canonical_name + "\"");
            }
            auto row = raw_names.row(it->second);
            nn.data.insert(nn.data.end(), row.begin(), row.end());
            nn.id_manifest.push_back(node.canonical_name);
        }
        node_names = std::move(nn);
        names_ptr = &*node_names;
    } else {
        ref = emb::read_cache(cfg.paths.reference_embeddings);
        ref_ptr = &*ref;
    }

    fs::path aggregated = cfg.paths.workdir / "aggregated.emb";
    auto sv = scoring::score_corpus(target, g, ref_ptr, names_ptr, cfg.scoring,
                                    cfg.scoring.materialize_aggregated ? &aggregated : nullptr);
    scoring::write_scores(cfg.paths.scores, target.id_manifest, sv, cfg.force);
    return static_cast<int64_t>(sv.scores.size());
}

int64_t do_select(const PipelineConfig& cfg) {
    auto loaded = scoring::read_scores(cfg.paths.scores);
    auto target = corpus::load_corpus(cfg.paths.target_corpus);
    if (loaded.ids != target.handle.id_manifest) {
        throw ValidationError("score file ids do not match the target corpus manifest");
    }
    auto manifest = selection::select_top(loaded.sv, target.handle, cfg.selection_ratio,
                                          cfg.budget_mode, cfg.token_mode);
    selection::write_manifest(manifest, target.handle, cfg.paths.manifest, cfg.paths.kept_corpus);
    auto report = selection::selection_report(manifest);
    util::atomic_write_file(cfg.paths.workdir / "selection_report.json", report.to_json() + "\n");
    std::cout << report.to_json() << "\n";
    return static_cast<int64_t>(manifest.kept_count);
}

int64_t do_histogram(const PipelineConfig& cfg) {
    auto loaded = scoring::read_scores(cfg.paths.scores);
    auto h = scoring::score_histogram(loaded.sv, cfg.histogram_bins);
    util::atomic_write_file(cfg.paths.histogram, h.to_csv());
    std::cout << "mean: " << h.mean << "\nmedian: " << h.median << "\n";
    return static_cast<int64_t>(h.counts.size());
}

int64_t dispatch(const PipelineConfig& cfg, const std::string& stage) {
    if (stage == "sample-reference") return do_sample_reference(cfg);
    if (stage == "extract-skills") return do_extract_skills(cfg);
    if (stage == "embed") return do_embed(cfg);
    if (stage == "merge-skills") return do_merge_skills(cfg);
    if (stage == "build-graph") return do_build_graph(cfg);
    if (stage == "graph-stats") return do_graph_stats(cfg);
    if (stage == "score") return do_score(cfg);
    if (stage == "select") return do_select(cfg);
    if (stage == "histogram") return do_histogram(cfg);
    throw ValidationError("unknown stage: " + stage);
}

}  // namespace

StageResult run_stage(const PipelineConfig& cfg, const std::string& stage) {
    auto t0 = std::chrono::steady_clock::now();
    for (const auto& input : stage_inputs(cfg, stage)) require_input(input);

    std::string fp = stage_fingerprint(cfg, stage);
    fs::path fp_file = fingerprint_path(cfg, stage);
    bool outputs_present = true;
    for (const auto& out : stage_outputs(cfg, stage)) outputs_present &= fs::exists(out);

    StageResult result;
    result.stage = stage;
    if (!cfg.force && outputs_present && fs::exists(fp_file) && util::read_file(fp_file) == fp) {
        result.skipped = true;
        result.duration_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                                 std::chrono::steady_clock::now() - t0)
                                 .count();
        util::log_stage(stage, result.duration_ms, 0, true);
        return result;
    }

    fs::create_directories(cfg.paths.workdir);
    result.records = dispatch(cfg, stage);
    util::atomic_write_file(fp_file, fp);
    result.duration_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                             std::chrono::steady_clock::now() - t0)
                             .count();
    util::log_stage(stage, result.duration_ms, result.records);
    return result;
}

std::vector<StageResult> run_all(const PipelineConfig& cfg) {
    std::vector<StageResult> results;
    for (const char* stage : kStageNames) {
        results.push_back(run_stage(cfg, stage));
    }
    return results;
}

}  // namespace skillsel::pipeline
