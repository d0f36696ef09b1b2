#include "skillsel/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "skillsel/util.hpp"

namespace skillsel::corpus {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

std::optional<TextRecord> parse_record_line(const std::string& line, std::string* why) {
    auto fail = [&](const char* reason) -> std::optional<TextRecord> {
        if (why) *why = reason;
        return std::nullopt;
    };
    if (!util::utf8_valid(line)) return fail("invalid UTF-8");
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object()) return fail("not a JSON object");
    if (!j.contains("id") || !j["id"].is_string()) return fail("missing string id");
    if (!j.contains("text") || !j["text"].is_string()) return fail("missing string text");

    TextRecord rec;
    rec.id = j["id"].get<std::string>();
    rec.text = j["text"].get<std::string>();
    if (rec.id.empty()) return fail("empty id");
    if (util::trim(rec.text).empty()) return fail("text empty after trim");

    if (j.contains("token_count")) {
        if (!j["token_count"].is_number_integer()) return fail("token_count not an integer");
        int64_t tc = j["token_count"].get<int64_t>();
        if (tc < 1) return fail("token_count < 1");
        rec.token_count = tc;
    }
    if (j.contains("meta")) {
        if (!j["meta"].is_object()) return fail("meta not an object");
        for (const auto& [k, v] : j["meta"].items()) {
            if (!v.is_string()) return fail("meta value not a string");
            rec.meta[k] = v.get<std::string>();
        }
    }
    return rec;
}

std::string serialize_record(const TextRecord& rec) {
    ordered_json j;
    j["id"] = rec.id;
    j["text"] = rec.text;
    if (rec.token_count) j["token_count"] = *rec.token_count;
    if (!rec.meta.empty()) {
        ordered_json m;
        for (const auto& [k, v] : rec.meta) m[k] = v;
        j["meta"] = m;
    }
    return j.dump();
}

namespace {
bool whitespace_only(const std::string& s) {
    return util::trim(s).empty();
}
}  // namespace

LoadResult load_corpus(const fs::path& path, bool skip_malformed) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw MissingInputError("cannot open corpus: " + path.string());

    LoadResult result;
    result.handle.path = path;
    std::unordered_set<std::string> seen;
    std::string line;
    size_t line_no = 0;
    std::string why;
    while (std::getline(in, line)) {
        ++line_no;
        if (whitespace_only(line)) continue;
        auto rec = parse_record_line(line, &why);
        if (!rec) {
            if (skip_malformed) {
                ++result.skipped_malformed;
                continue;
            }
            throw ValidationError(path.string() + ":" + std::to_string(line_no) +
                                  ": malformed record (" + why + ")");
        }
        if (!seen.insert(rec->id).second) {
            throw ValidationError(path.string() + ": duplicate id \"" + rec->id + "\"");
        }
        result.handle.id_manifest.push_back(rec->id);
    }
    result.handle.record_count = result.handle.id_manifest.size();
    return result;
}

void for_each_record(const CorpusHandle& handle,
                     const std::function<void(size_t, const TextRecord&, const std::string&)>& fn) {
    std::ifstream in(handle.path, std::ios::binary);
    if (!in) throw MissingInputError("cannot open corpus: " + handle.path.string());
    std::string line;
    size_t row = 0;
    while (std::getline(in, line)) {
        if (whitespace_only(line)) continue;
        auto rec = parse_record_line(line);
        if (!rec) continue;  // skipped at load time as well
        if (row >= handle.record_count || rec->id != handle.id_manifest[row]) {
            throw ValidationError("corpus changed since load: " + handle.path.string());
        }
        fn(row, *rec, line);
        ++row;
    }
    if (row != handle.record_count) {
        throw ValidationError("corpus changed since load: " + handle.path.string());
    }
}

namespace {
void write_ids(const fs::path& corpus_path, const std::vector<std::string>& ids) {
    std::string body;
    for (const auto& id : ids) {
        body += id;
        body += '\n';
    }
    util::atomic_write_file(ids_path(corpus_path), body);
}
}  // namespace

void write_corpus(const CorpusHandle& handle, const fs::path& out_path) {
    std::string body;
    for_each_record(handle, [&](size_t, const TextRecord&, const std::string& raw) {
        body += raw;
        body += '\n';
    });
    util::atomic_write_file(out_path, body);
    write_ids(out_path, handle.id_manifest);
}

void write_records(const std::vector<TextRecord>& records, const fs::path& out_path) {
    std::string body;
    std::vector<std::string> ids;
    ids.reserve(records.size());
    for (const auto& rec : records) {
        body += serialize_record(rec);
        body += '\n';
        ids.push_back(rec.id);
    }
    util::atomic_write_file(out_path, body);
    write_ids(out_path, ids);
}

CorpusHandle sample_reference(const CorpusHandle& corpus, size_t n, uint64_t seed,
                              const fs::path& out_path) {
    if (n == 0) throw ValidationError("sample size must be positive");
    if (n > corpus.record_count) {
        throw ValidationError("sample size " + std::to_string(n) + " exceeds record count " +
                              std::to_string(corpus.record_count));
    }

    // Partial Fisher-Yates over positions, then sort ascending.
    std::vector<size_t> idx(corpus.record_count);
    std::iota(idx.begin(), idx.end(), size_t{0});
    util::Rng rng(seed);
    for (size_t i = 0; i < n; ++i) {
        size_t j = i + static_cast<size_t>(rng.bounded(idx.size() - i));
        std::swap(idx[i], idx[j]);
    }
    idx.resize(n);
    std::sort(idx.begin(), idx.end());

    std::string body;
    std::vector<std::string> ids;
    ids.reserve(n);
    size_t want = 0;
    for_each_record(corpus, [&](size_t row, const TextRecord&, const std::string& raw) {
        if (want < idx.size() && row == idx[want]) {
            body += raw;
            body += '\n';
            ids.push_back(corpus.id_manifest[row]);
            ++want;
        }
    });
    util::atomic_write_file(out_path, body);
    write_ids(out_path, ids);

    CorpusHandle out;
    out.path = out_path;
    out.record_count = n;
    out.id_manifest = std::move(ids);
    return out;
}

int64_t count_tokens(const TextRecord& record, TokenMode mode) {
    switch (mode) {
        case TokenMode::whitespace:
            return static_cast<int64_t>(util::count_whitespace_tokens(record.text));
        case TokenMode::provided:
            if (!record.token_count) {
                throw ValidationError("record \"" + record.id + "\" has no token_count");
            }
            return *record.token_count;
    }
    throw ValidationError("unknown token mode");
}

fs::path ids_path(const fs::path& path) {
    fs::path p = path;
    p += ".ids";
    return p;
}

std::vector<std::string> read_id_manifest(const fs::path& corpus_path) {
    return util::read_lines(ids_path(corpus_path));
}

}  // namespace skillsel::corpus
