#include "skillsel/selection.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_map>

#include <nlohmann/json.hpp>

#include "skillsel/util.hpp"

namespace skillsel::selection {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

BudgetMode budget_mode_from_string(const std::string& s) {
    if (s == "documents" || s == "docs") return BudgetMode::documents;
    if (s == "tokens") return BudgetMode::tokens;
    throw ValidationError("unknown budget mode: " + s);
}

std::string to_string(BudgetMode m) {
    return m == BudgetMode::documents ? "documents" : "tokens";
}

SelectionManifest select_top(const scoring::ScoreVector& scores, const corpus::CorpusHandle& corpus,
                             double ratio_percent, BudgetMode mode, corpus::TokenMode token_mode) {
    const size_t n = corpus.record_count;
    if (scores.scores.size() != n) {
        throw ValidationError("score vector is not aligned to the corpus (" +
                              std::to_string(scores.scores.size()) + " scores for " +
                              std::to_string(n) + " records)");
    }
    if (!(ratio_percent > 0.0 && ratio_percent <= 100.0)) {
        throw ValidationError("selection ratio must be in (0, 100]");
    }
    if (n == 0) throw ValidationError("cannot select from an empty corpus");

    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), size_t{0});
    std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
        if (scores.scores[a] != scores.scores[b]) return scores.scores[a] > scores.scores[b];
        return corpus.id_manifest[a] < corpus.id_manifest[b];
    });

    SelectionManifest manifest;
    manifest.ratio_percent = ratio_percent;
    manifest.budget_mode = mode;
    manifest.config_fingerprint = util::fnv1a_hex(
        "selection/v1|" + scores.fingerprint + "|" + std::to_string(ratio_percent) + "|" +
        to_string(mode));

    size_t keep = 0;
    if (mode == BudgetMode::documents) {
        keep = static_cast<size_t>(std::ceil(ratio_percent * static_cast<double>(n) / 100.0));
        keep = std::min(keep, n);
    } else {
        std::vector<int64_t> tokens(n, 0);
        corpus::for_each_record(corpus, [&](size_t row, const corpus::TextRecord& rec, const std::string&) {
            tokens[row] = corpus::count_tokens(rec, token_mode);
        });
        int64_t total = std::accumulate(tokens.begin(), tokens.end(), int64_t{0});
        manifest.total_tokens = total;
        double target = ratio_percent * static_cast<double>(total) / 100.0;
        int64_t acc = 0;
        while (keep < n && static_cast<double>(acc) < target) {
            acc += tokens[order[keep]];
            ++keep;
        }
        manifest.kept_tokens = acc;
    }
    if (keep == 0) keep = 1;  // a positive ratio keeps at least one record

    manifest.records.resize(n);
    for (size_t r = 0; r < n; ++r) {
        size_t row = order[r];
        manifest.records[r] = {corpus.id_manifest[row], scores.scores[row],
                               static_cast<int64_t>(r + 1), r < keep};
    }
    manifest.kept_count = keep;
    manifest.dropped_count = n - keep;
    manifest.cut_score = manifest.records[keep - 1].score;
    return manifest;
}

void write_manifest(const SelectionManifest& manifest, const corpus::CorpusHandle& corpus,
                    const fs::path& manifest_path, const fs::path& kept_corpus_path) {
    std::string body;
    for (const auto& rec : manifest.records) {
        ordered_json j;
        j["id"] = rec.id;
        j["score"] = rec.score;
        j["rank"] = rec.rank;
        j["kept"] = rec.kept;
        body += j.dump();
        body += '\n';
    }
    util::atomic_write_file(manifest_path, body);

    ordered_json meta;
    meta["ratio_percent"] = manifest.ratio_percent;
    meta["budget_mode"] = to_string(manifest.budget_mode);
    meta["kept"] = manifest.kept_count;
    meta["dropped"] = manifest.dropped_count;
    meta["cut_score"] = manifest.cut_score;
    meta["fingerprint"] = manifest.config_fingerprint;
    if (manifest.budget_mode == BudgetMode::tokens) {
        meta["kept_tokens"] = manifest.kept_tokens;
        meta["total_tokens"] = manifest.total_tokens;
    }
    fs::path meta_path = manifest_path.parent_path() / "selection.meta.json";
    util::atomic_write_file(meta_path, meta.dump(2) + "\n");

    // Kept subset in rank order, original bytes per record.
    std::unordered_map<std::string, std::string> raw_of;
    corpus::for_each_record(corpus, [&](size_t, const corpus::TextRecord& rec, const std::string& raw) {
        raw_of[rec.id] = raw;
    });
    std::string kept_body;
    std::string kept_ids;
    for (const auto& rec : manifest.records) {
        if (!rec.kept) continue;
        auto it = raw_of.find(rec.id);
        if (it == raw_of.end()) {
            throw ValidationError("manifest id \"" + rec.id + "\" is not in the corpus");
        }
        kept_body += it->second;
        kept_body += '\n';
        kept_ids += rec.id;
        kept_ids += '\n';
    }
    util::atomic_write_file(kept_corpus_path, kept_body);
    util::atomic_write_file(corpus::ids_path(kept_corpus_path), kept_ids);
}

SelectionManifest read_manifest(const fs::path& manifest_path) {
    SelectionManifest m;
    for (const auto& line : util::read_lines(manifest_path)) {
        if (util::trim(line).empty()) continue;
        json j = json::parse(line, nullptr, false);
        if (j.is_discarded() || !j.contains("id") || !j.contains("score") || !j.contains("rank") ||
            !j.contains("kept")) {
            throw ValidationError("malformed manifest line in " + manifest_path.string());
        }
        RankedRecord rec{j["id"].get<std::string>(), j["score"].get<double>(),
                         j["rank"].get<int64_t>(), j["kept"].get<bool>()};
        if (rec.kept) ++m.kept_count;
        m.records.push_back(std::move(rec));
    }
    m.dropped_count = m.records.size() - m.kept_count;
    if (m.kept_count > 0) m.cut_score = m.records[m.kept_count - 1].score;

    fs::path meta_path = manifest_path.parent_path() / "selection.meta.json";
    if (fs::exists(meta_path)) {
        json meta = json::parse(util::read_file(meta_path), nullptr, false);
        if (!meta.is_discarded()) {
            m.ratio_percent = meta.value("ratio_percent", 0.0);
            if (meta.contains("budget_mode")) {
                m.budget_mode = budget_mode_from_string(meta["budget_mode"].get<std::string>());
            }
            m.config_fingerprint = meta.value("fingerprint", "");
            m.kept_tokens = meta.value("kept_tokens", int64_t{0});
            m.total_tokens = meta.value("total_tokens", int64_t{0});
        }
    }
    return m;
}

SelectionReport selection_report(const SelectionManifest& manifest, size_t exemplars) {
    if (manifest.records.empty()) throw ValidationError("selection report needs a non-empty manifest");
    SelectionReport rep;
    rep.cut_score = manifest.cut_score;

    std::vector<double> kept_scores, dropped_scores;
    for (const auto& rec : manifest.records) {
        (rec.kept ? kept_scores : dropped_scores).push_back(rec.score);
    }
    rep.kept_mean = util::pairwise_sum(kept_scores) / static_cast<double>(kept_scores.size());
    if (!dropped_scores.empty()) {
        rep.dropped_mean = util::pairwise_sum(dropped_scores) / static_cast<double>(dropped_scores.size());
    }
    if (manifest.total_tokens > 0) {
        rep.kept_token_share =
            static_cast<double>(manifest.kept_tokens) / static_cast<double>(manifest.total_tokens);
        if (manifest.kept_tokens > 0) {
            rep.suggested_repeat_factor =
                static_cast<double>(manifest.total_tokens) / static_cast<double>(manifest.kept_tokens);
        }
    } else {
        rep.kept_token_share = static_cast<double>(manifest.kept_count) /
                               static_cast<double>(manifest.records.size());
        rep.suggested_repeat_factor = rep.kept_token_share > 0.0 ? 1.0 / rep.kept_token_share : 1.0;
    }

    size_t k = std::min(exemplars, manifest.records.size());
    for (size_t i = 0; i < k; ++i) rep.top_ids.push_back(manifest.records[i].id);
    for (size_t i = 0; i < k; ++i) {
        rep.bottom_ids.push_back(manifest.records[manifest.records.size() - 1 - i].id);
    }
    return rep;
}

std::string SelectionReport::to_json() const {
    ordered_json j;
    j["kept_mean"] = kept_mean;
    if (dropped_mean) {
        j["dropped_mean"] = *dropped_mean;
    } else {
        j["dropped_mean_undefined"] = true;
    }
    j["cut_score"] = cut_score;
    j["kept_token_share"] = kept_token_share;
    j["suggested_repeat_factor"] = suggested_repeat_factor;
    j["top_ids"] = top_ids;
    j["bottom_ids"] = bottom_ids;
    return j.dump(2);
}

}  // namespace skillsel::selection
