#include "skillsel/scoring.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <mutex>
#include <thread>

#include <nlohmann/json.hpp>

#include "skillsel/util.hpp"

namespace skillsel::scoring {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

Variant variant_from_string(const std::string& s) {
    if (s == "max" || s == "max_over_refs") return Variant::max_over_refs;
    if (s == "mean" || s == "mean_embedding") return Variant::mean_embedding;
    if (s == "name" || s == "name_embedding") return Variant::name_embedding;
    throw ValidationError("unknown similarity variant: " + s);
}

Mask mask_from_string(const std::string& s) {
    if (s == "full") return Mask::full;
    if (s == "diag" || s == "diag_only") return Mask::diag_only;
    if (s == "nondiag" || s == "nondiag_only") return Mask::nondiag_only;
    throw ValidationError("unknown adjacency mask: " + s);
}

std::string to_string(Variant v) {
    switch (v) {
        case Variant::max_over_refs: return "max_over_refs";
        case Variant::mean_embedding: return "mean_embedding";
        case Variant::name_embedding: return "name_embedding";
    }
    return "?";
}

std::string to_string(Mask m) {
    switch (m) {
        case Mask::full: return "full";
        case Mask::diag_only: return "diag_only";
        case Mask::nondiag_only: return "nondiag_only";
    }
    return "?";
}

namespace {

double clamped_dot(std::span<const float> u, std::span<const float> v) {
    double dot = 0.0;
    for (size_t i = 0; i < u.size(); ++i) dot += static_cast<double>(u[i]) * v[i];
    return std::clamp(dot, -1.0, 1.0);
}

// Precomputed per-call state shared by every target row.
struct SimContext {
    const graph::SkillGraph* g = nullptr;
    const emb::EmbeddingMatrix* ref = nullptr;
    const emb::EmbeddingMatrix* names = nullptr;
    Variant variant = Variant::max_over_refs;
    std::vector<double> mean_vectors;  // |V| x dim when variant == mean_embedding
    std::vector<double> mean_norms;
    size_t dim = 0;
};

SimContext make_context(const graph::SkillGraph& g, const emb::EmbeddingMatrix* ref,
                        const emb::EmbeddingMatrix* names, Variant variant, size_t target_dim) {
    SimContext ctx;
    ctx.g = &g;
    ctx.ref = ref;
    ctx.names = names;
    ctx.variant = variant;
    ctx.dim = target_dim;

    if (variant == Variant::max_over_refs || variant == Variant::mean_embedding) {
        if (!ref) throw ValidationError("similarity variant requires reference embeddings");
        if (!ref->normalized) throw ValidationError("reference embeddings must be normalized");
        if (ref->dim != target_dim) throw ValidationError("reference embedding dimension mismatch");
        for (const auto& node : g.nodes) {
            if (node.ids.empty()) {
                throw ValidationError("graph integrity: node \"" + node.canonical_name +
                                      "\" has an empty reference list");
            }
            for (int64_t k : node.ids) {
                if (k < 0 || static_cast<size_t>(k) >= ref->rows()) {
                    throw ValidationError("graph integrity: node \"" + node.canonical_name +
                                          "\" references row " + std::to_string(k) +
                                          " outside the reference embeddings");
                }
            }
        }
    }
    if (variant == Variant::name_embedding) {
        if (!names) throw ValidationError("name_embedding variant requires skill-name embeddings");
        if (!names->normalized) throw ValidationError("skill-name embeddings must be normalized");
        if (names->dim != target_dim) throw ValidationError("skill-name embedding dimension mismatch");
        if (names->rows() != g.node_count()) {
            throw ValidationError("skill-name embeddings must have one row per graph node");
        }
        for (size_t j = 0; j < g.node_count(); ++j) {
            if (names->id_manifest[j] != g.nodes[j].canonical_name) {
                throw ValidationError("skill-name embedding row " + std::to_string(j) +
                                      " is not aligned with node \"" + g.nodes[j].canonical_name + "\"");
            }
        }
    }
    if (variant == Variant::mean_embedding) {
        ctx.mean_vectors.assign(g.node_count() * target_dim, 0.0);
        ctx.mean_norms.assign(g.node_count(), 0.0);
        for (size_t j = 0; j < g.node_count(); ++j) {
            double* mj = ctx.mean_vectors.data() + j * target_dim;
            for (int64_t k : g.nodes[j].ids) {
                auto row = ref->row(static_cast<size_t>(k));
                for (size_t d = 0; d < target_dim; ++d) mj[d] += row[d];
            }
            double inv = 1.0 / static_cast<double>(g.nodes[j].ids.size());
            double sq = 0.0;
            for (size_t d = 0; d < target_dim; ++d) {
                mj[d] *= inv;
                sq += mj[d] * mj[d];
            }
            ctx.mean_norms[j] = std::sqrt(sq);
            if (ctx.mean_norms[j] == 0.0) {
                throw ValidationError("mean embedding of skill \"" + g.nodes[j].canonical_name +
                                      "\" is the zero vector");
            }
        }
    }
    return ctx;
}

// sims_out must have |V| entries; ref_dots is scratch of ref->rows() entries
// used by the max variant.
void similarities_for_row(const SimContext& ctx, std::span<const float> x,
                          std::vector<double>& ref_dots, std::vector<double>& sims_out) {
    const auto& g = *ctx.g;
    switch (ctx.variant) {
        case Variant::max_over_refs: {
            for (size_t k = 0; k < ctx.ref->rows(); ++k) ref_dots[k] = clamped_dot(x, ctx.ref->row(k));
            for (size_t j = 0; j < g.node_count(); ++j) {
                double best = -1.0;
                for (int64_t k : g.nodes[j].ids) best = std::max(best, ref_dots[static_cast<size_t>(k)]);
                sims_out[j] = best;
            }
            break;
        }
        case Variant::mean_embedding: {
            for (size_t j = 0; j < g.node_count(); ++j) {
                const double* mj = ctx.mean_vectors.data() + j * ctx.dim;
                double dot = 0.0;
                for (size_t d = 0; d < ctx.dim; ++d) dot += static_cast<double>(x[d]) * mj[d];
                sims_out[j] = std::clamp(dot / ctx.mean_norms[j], -1.0, 1.0);
            }
            break;
        }
        case Variant::name_embedding: {
            for (size_t j = 0; j < g.node_count(); ++j) {
                sims_out[j] = clamped_dot(x, ctx.names->row(j));
            }
            break;
        }
    }
}

}  // namespace

std::vector<double> skill_similarity(std::span<const float> target_row, const graph::SkillGraph& g,
                                     const emb::EmbeddingMatrix* ref_emb,
                                     const emb::EmbeddingMatrix* skill_name_emb, Variant variant) {
    SimContext ctx = make_context(g, ref_emb, skill_name_emb, variant, target_row.size());
    std::vector<double> ref_dots(ref_emb ? ref_emb->rows() : 0);
    std::vector<double> sims(g.node_count());
    similarities_for_row(ctx, target_row, ref_dots, sims);
    return sims;
}

std::vector<double> precompute_skill_weights(const graph::SkillGraph& g, Mask mask) {
    std::vector<double> w(g.node_count(), 0.0);
    for (size_t j = 0; j < g.node_count(); ++j) {
        double v = 0.0;
        if (mask != Mask::nondiag_only) v += g.diag[j];
        if (mask != Mask::diag_only) {
            for (const auto& [other, eidx] : g.neighbors[j]) v += g.edge_weight[eidx];
        }
        w[j] = v;
    }
    return w;
}

ScoreVector score_corpus(const emb::EmbeddingMatrix& target_emb, const graph::SkillGraph& g,
                         const emb::EmbeddingMatrix* ref_emb,
                         const emb::EmbeddingMatrix* skill_name_emb, const ScoringConfig& cfg,
                         const fs::path* aggregated_out) {
    if (!target_emb.normalized) throw ValidationError("target embeddings must be normalized");
    if (cfg.block_rows == 0) throw ValidationError("block_rows must be positive");
    if (g.node_count() == 0) throw ValidationError("cannot score against an empty graph");

    SimContext ctx = make_context(g, ref_emb, skill_name_emb, cfg.variant, target_emb.dim);
    std::vector<double> w = precompute_skill_weights(g, cfg.mask);

    const size_t n = target_emb.rows();
    const size_t v = g.node_count();
    ScoreVector out;
    out.scores.assign(n, 0.0);
    out.fingerprint = scoring_fingerprint(g, target_emb, ref_emb, skill_name_emb, cfg.variant, cfg.mask);

    std::vector<float> aggregated;
    if (cfg.materialize_aggregated && aggregated_out) aggregated.assign(n * v, 0.0f);

    const size_t n_blocks = (n + cfg.block_rows - 1) / cfg.block_rows;
    std::atomic<size_t> next_block{0};
    std::atomic<bool> failed{false};
    std::string error_message;
    std::mutex error_mu;

    auto worker = [&] {
        std::vector<double> ref_dots(ref_emb ? ref_emb->rows() : 0);
        std::vector<double> sims(v);
        std::vector<double> prods(v);
        try {
            for (;;) {
                size_t b = next_block.fetch_add(1);
                if (b >= n_blocks || failed.load()) return;
                size_t lo = b * cfg.block_rows;
                size_t hi = std::min(n, lo + cfg.block_rows);
                for (size_t r = lo; r < hi; ++r) {
                    similarities_for_row(ctx, target_emb.row(r), ref_dots, sims);
                    for (size_t j = 0; j < v; ++j) prods[j] = sims[j] * w[j];
                    out.scores[r] = util::pairwise_sum(prods);
                    if (!aggregated.empty()) {
                        for (size_t j = 0; j < v; ++j) {
                            double agg = 0.0;
                            if (cfg.mask != Mask::nondiag_only) agg += g.diag[j] * sims[j];
                            if (cfg.mask != Mask::diag_only) {
                                for (const auto& [other, eidx] : g.neighbors[j]) {
                                    agg += g.edge_weight[eidx] * sims[other];
                                }
                            }
                            aggregated[r * v + j] = static_cast<float>(agg);
                        }
                    }
                }
            }
        } catch (const std::exception& e) {
            std::lock_guard<std::mutex> lock(error_mu);
            failed.store(true);
            if (error_message.empty()) error_message = e.what();
        }
    };

    size_t n_workers = std::min<size_t>(std::max<size_t>(1, cfg.workers), n_blocks == 0 ? 1 : n_blocks);
    if (n_workers <= 1) {
        worker();
    } else {
        std::vector<std::thread> threads;
        for (size_t i = 0; i < n_workers; ++i) threads.emplace_back(worker);
        for (auto& t : threads) t.join();
    }
    if (failed.load()) throw ValidationError("scoring failed: " + error_message);

    for (double s : out.scores) {
        if (!std::isfinite(s)) throw ValidationError("non-finite score produced");
    }

    if (!aggregated.empty()) {
        emb::EmbeddingMatrix agg;
        agg.dim = v;
        agg.data = std::move(aggregated);
        agg.id_manifest = target_emb.id_manifest;
        emb::write_cache(*aggregated_out, agg);
    }
    return out;
}

std::string scoring_fingerprint(const graph::SkillGraph& g, const emb::EmbeddingMatrix& target_emb,
                                const emb::EmbeddingMatrix* ref_emb,
                                const emb::EmbeddingMatrix* skill_name_emb, Variant variant,
                                Mask mask) {
    util::Fnv1a h;
    h.update("scoring/v1|");
    h.update(to_string(variant));
    h.update("|");
    h.update(to_string(mask));
    h.update("|graph:");
    h.update(graph::bundle_checksum(g));
    h.update("|target:");
    h.update(emb::matrix_checksum(target_emb));
    h.update("|ref:");
    h.update(ref_emb ? emb::matrix_checksum(*ref_emb) : std::string("none"));
    h.update("|names:");
    h.update(skill_name_emb ? emb::matrix_checksum(*skill_name_emb) : std::string("none"));
    return h.hex();
}

Histogram score_histogram(const ScoreVector& sv, size_t bins) {
    if (bins == 0) throw ValidationError("histogram needs at least one bin");
    if (sv.scores.empty()) throw ValidationError("histogram needs at least one score");
    Histogram h;
    auto [mn_it, mx_it] = std::minmax_element(sv.scores.begin(), sv.scores.end());
    double mn = *mn_it, mx = *mx_it;

    std::vector<double> sorted = sv.scores;
    std::sort(sorted.begin(), sorted.end());
    h.mean = util::pairwise_sum(sorted) / static_cast<double>(sorted.size());
    size_t n = sorted.size();
    h.median = n % 2 == 1 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);

    if (mx == mn) {
        h.edges = {mn, mx};
        h.counts = {static_cast<int64_t>(n)};
        return h;
    }
    h.edges.resize(bins + 1);
    double width = (mx - mn) / static_cast<double>(bins);
    for (size_t i = 0; i <= bins; ++i) h.edges[i] = mn + width * static_cast<double>(i);
    h.edges[bins] = mx;  // exact upper edge
    h.counts.assign(bins, 0);
    for (double s : sv.scores) {
        auto idx = static_cast<size_t>((s - mn) / width);
        if (idx >= bins) idx = bins - 1;  // max lands in the last bin
        ++h.counts[idx];
    }
    return h;
}

std::string Histogram::to_csv() const {
    std::string out = "bin_lo,bin_hi,count\n";
    char buf[96];
    for (size_t i = 0; i < counts.size(); ++i) {
        std::snprintf(buf, sizeof(buf), "%.17g,%.17g,%lld\n", edges[i], edges[i + 1],
                      static_cast<long long>(counts[i]));
        out += buf;
    }
    return out;
}

namespace {
// scores.jsonl sits next to scores.meta.json.
fs::path scores_meta_path(const fs::path& scores_path) {
    fs::path p = scores_path;
    p.replace_extension(".meta.json");
    return p;
}
}  // namespace

void write_scores(const fs::path& path, const std::vector<std::string>& ids, const ScoreVector& sv,
                  bool force) {
    if (ids.size() != sv.scores.size()) {
        throw ValidationError("score vector length does not match the id manifest");
    }
    fs::path meta_path = scores_meta_path(path);
    if (!force && fs::exists(meta_path)) {
        json prev = json::parse(util::read_file(meta_path), nullptr, false);
        if (!prev.is_discarded() && prev.contains("fingerprint") &&
            prev["fingerprint"].get<std::string>() != sv.fingerprint) {
            throw ValidationError("refusing to overwrite " + path.string() +
                                  ": existing scores have a different provenance fingerprint");
        }
    }
    std::string body;
    for (size_t i = 0; i < ids.size(); ++i) {
        ordered_json j;
        j["id"] = ids[i];
        j["score"] = sv.scores[i];
        body += j.dump();
        body += '\n';
    }
    util::atomic_write_file(path, body);
    ordered_json meta;
    meta["fingerprint"] = sv.fingerprint;
    meta["records"] = ids.size();
    util::atomic_write_file(meta_path, meta.dump(2) + "\n");
}

LoadedScores read_scores(const fs::path& path) {
    LoadedScores out;
    for (const auto& line : util::read_lines(path)) {
        if (util::trim(line).empty()) continue;
        json j = json::parse(line, nullptr, false);
        if (j.is_discarded() || !j.contains("id") || !j.contains("score")) {
            throw ValidationError("malformed score line in " + path.string());
        }
        out.ids.push_back(j["id"].get<std::string>());
        out.sv.scores.push_back(j["score"].get<double>());
    }
    fs::path meta_path = scores_meta_path(path);
    if (fs::exists(meta_path)) {
        json meta = json::parse(util::read_file(meta_path), nullptr, false);
        if (!meta.is_discarded() && meta.contains("fingerprint")) {
            out.sv.fingerprint = meta["fingerprint"].get<std::string>();
        }
    }
    return out;
}

}  // namespace skillsel::scoring
