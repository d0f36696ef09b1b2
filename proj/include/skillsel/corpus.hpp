#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace skillsel::corpus {

// One corpus document. Line-delimited JSON on disk with required keys
// "id" and "text", optional "token_count" and "meta" (flat string map).
struct TextRecord {
    std::string id;
    std::string text;
    std::optional<int64_t> token_count;
    std::map<std::string, std::string> meta;
};

// Lightweight, immutable view of a validated corpus file. Records are
// streamed on demand rather than held in memory.
struct CorpusHandle {
    std::filesystem::path path;
    size_t record_count = 0;
    std::vector<std::string> id_manifest;  // file order, defines embedding row order
};

struct LoadResult {
    CorpusHandle handle;
    size_t skipped_malformed = 0;
};

// Parses one JSONL line into a record; empty optional means malformed.
// If `why` is non-null it receives the reason for rejection.
std::optional<TextRecord> parse_record_line(const std::string& line, std::string* why = nullptr);

// Canonical single-line serialization (keys: id, text, token_count, meta).
std::string serialize_record(const TextRecord& rec);

// Validating scan of a JSONL corpus. Duplicate ids are always fatal.
// Malformed lines are fatal unless skip_malformed is set, in which case they
// are counted and skipped. Whitespace-only lines are ignored.
LoadResult load_corpus(const std::filesystem::path& path, bool skip_malformed = false);

// Streams validated records in file order. `fn(row, record, raw_line)`.
// Rows match the handle's id_manifest; lines that failed validation at load
// time are skipped the same way here.
void for_each_record(const CorpusHandle& handle,
                     const std::function<void(size_t, const TextRecord&, const std::string&)>& fn);

// Copies the handle's records to out_path byte-for-byte (one line per record)
// and writes the sibling <out_path>.ids manifest. Canonical inputs round-trip
// exactly.
void write_corpus(const CorpusHandle& handle, const std::filesystem::path& out_path);

// Writes new records in canonical form plus the .ids manifest.
void write_records(const std::vector<TextRecord>& records, const std::filesystem::path& out_path);

// Uniform sample of n records without replacement, deterministic for a fixed
// seed; output preserves ascending original position. Writes the sampled
// corpus (raw bytes) and its .ids manifest to out_path.
CorpusHandle sample_reference(const CorpusHandle& corpus, size_t n, uint64_t seed,
                              const std::filesystem::path& out_path);

enum class TokenMode { whitespace, provided };

// whitespace: number of maximal non-whitespace runs in text.
// provided: echoes token_count; missing count is an error.
int64_t count_tokens(const TextRecord& record, TokenMode mode);

// Path of the sibling id manifest for a corpus or embedding cache file.
std::filesystem::path ids_path(const std::filesystem::path& path);

std::vector<std::string> read_id_manifest(const std::filesystem::path& corpus_path);

}  // namespace skillsel::corpus
