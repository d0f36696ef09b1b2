#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "skillsel/corpus.hpp"

namespace skillsel::emb {

// Row-major float32 matrix with one id per row. Immutable after construction.
struct EmbeddingMatrix {
    size_t dim = 0;
    std::vector<float> data;  // rows() * dim
    std::vector<std::string> id_manifest;
    bool normalized = false;

    size_t rows() const { return id_manifest.size(); }
    std::span<const float> row(size_t i) const { return {data.data() + i * dim, dim}; }
};

// Validates finiteness, id uniqueness, and row/manifest agreement.
// When require_normalized is set, every row's L2 norm must be within 1e-4 of 1.
void validate_matrix(const EmbeddingMatrix& m, bool require_normalized);

// L2-normalizes every row (64-bit accumulation). Zero rows are an error.
EmbeddingMatrix normalized(EmbeddingMatrix m);

struct ProviderConfig {
    enum class Kind { file, http };
    Kind kind = Kind::file;
    std::string path_or_url;
    size_t batch_size = 16;
    size_t max_concurrency = 4;
    int64_t timeout_ms = 30000;
};

// An embedding source. Items carry both a lookup key (record id or skill
// name) and the text to embed; the file store resolves by key, the HTTP
// provider sends the text.
struct EmbedItem {
    std::string key;
    std::string text;
};

class Provider {
public:
    virtual ~Provider() = default;
    // Returns one row per item, in item order. Rows are raw (not normalized).
    virtual EmbeddingMatrix fetch(const std::vector<EmbedItem>& items) = 0;
};

std::unique_ptr<Provider> make_provider(const ProviderConfig& cfg);

// One row per corpus record in manifest order, L2-normalized, persisted to
// cache_path in the binary cache format with a sibling .ids manifest.
EmbeddingMatrix embed_corpus(const corpus::CorpusHandle& corpus, const ProviderConfig& provider,
                             const std::filesystem::path& cache_path);

// Same contract for a list of keyed strings (e.g. skill names).
EmbeddingMatrix embed_items(const std::vector<EmbedItem>& items, const ProviderConfig& provider,
                            const std::filesystem::path& cache_path);

// Cosine similarity, clamped to [-1, 1]; zero vectors are an error.
double cosine(std::span<const float> u, std::span<const float> v);

// Streams row-blocks of the dense queries x keys cosine matrix. Both inputs
// must be normalized and share a dimension. sink(row_offset, n_rows, block)
// receives n_rows * keys.rows() values, row-major.
void block_similarities(const EmbeddingMatrix& queries, const EmbeddingMatrix& keys, size_t block,
                        const std::function<void(size_t, size_t, std::span<const float>)>& sink);

// Binary cache format: "MEMB", u32 version=1, u32 dim, u64 row_count, then
// row_count*dim little-endian f32, row-major. Sibling .ids manifest holds
// one id per row.
void write_cache(const std::filesystem::path& path, const EmbeddingMatrix& m);
EmbeddingMatrix read_cache(const std::filesystem::path& path);

// Content hash over dim, rows, ids, and raw float bits.
std::string matrix_checksum(const EmbeddingMatrix& m);

}  // namespace skillsel::emb
