#include "skillsel/embedding.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <mutex>
#include <thread>
#include <unordered_map>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "skillsel/util.hpp"

namespace skillsel::emb {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {
constexpr uint32_t kCacheMagic = 0x424D454Du;  // "MEMB" little-endian
constexpr uint32_t kCacheVersion = 1;
constexpr int kRetryAttempts = 5;
constexpr int kBackoffStartMs = 500;
constexpr double kNormTolerance = 1e-4;
}  // namespace

void validate_matrix(const EmbeddingMatrix& m, bool require_normalized) {
    if (m.dim == 0) throw ValidationError("embedding matrix has dim 0");
    if (m.data.size() != m.rows() * m.dim) {
        throw ValidationError("embedding matrix shape mismatch: " + std::to_string(m.data.size()) +
                              " floats for " + std::to_string(m.rows()) + " ids");
    }
    std::unordered_map<std::string, size_t> seen;
    for (size_t i = 0; i < m.rows(); ++i) {
        if (!seen.emplace(m.id_manifest[i], i).second) {
            throw ValidationError("duplicate embedding id \"" + m.id_manifest[i] + "\"");
        }
    }
    for (size_t i = 0; i < m.rows(); ++i) {
        double sq = 0.0;
        for (float v : m.row(i)) {
            if (!std::isfinite(v)) {
                throw ValidationError("non-finite embedding entry in row for \"" + m.id_manifest[i] + "\"");
            }
            sq += static_cast<double>(v) * v;
        }
        if (require_normalized) {
            double norm = std::sqrt(sq);
            if (std::abs(norm - 1.0) > kNormTolerance) {
                throw ValidationError("row for \"" + m.id_manifest[i] + "\" is not unit-norm (|v|=" +
                                      std::to_string(norm) + ")");
            }
        }
    }
}

EmbeddingMatrix normalized(EmbeddingMatrix m) {
    for (size_t i = 0; i < m.rows(); ++i) {
        double sq = 0.0;
        float* p = m.data.data() + i * m.dim;
        for (size_t k = 0; k < m.dim; ++k) sq += static_cast<double>(p[k]) * p[k];
        double norm = std::sqrt(sq);
        if (norm == 0.0 || !std::isfinite(norm)) {
            throw ValidationError("cannot normalize zero or non-finite vector for \"" +
                                  m.id_manifest[i] + "\"");
        }
        for (size_t k = 0; k < m.dim; ++k) p[k] = static_cast<float>(p[k] / norm);
    }
    m.normalized = true;
    validate_matrix(m, true);
    return m;
}

double cosine(std::span<const float> u, std::span<const float> v) {
    if (u.size() != v.size()) throw ValidationError("cosine: dimension mismatch");
    if (u.empty()) throw ValidationError("cosine: empty vectors");
    double dot = 0.0, nu = 0.0, nv = 0.0;
    for (size_t i = 0; i < u.size(); ++i) {
        dot += static_cast<double>(u[i]) * v[i];
        nu += static_cast<double>(u[i]) * u[i];
        nv += static_cast<double>(v[i]) * v[i];
    }
    if (nu == 0.0 || nv == 0.0) throw ValidationError("cosine: zero vector");
    double c = dot / (std::sqrt(nu) * std::sqrt(nv));
    return std::clamp(c, -1.0, 1.0);
}

void block_similarities(const EmbeddingMatrix& queries, const EmbeddingMatrix& keys, size_t block,
                        const std::function<void(size_t, size_t, std::span<const float>)>& sink) {
    if (queries.dim != keys.dim) throw ValidationError("block_similarities: dimension mismatch");
    if (!queries.normalized || !keys.normalized) {
        throw ValidationError("block_similarities requires normalized inputs");
    }
    if (block == 0) throw ValidationError("block size must be positive");

    const size_t nk = keys.rows();
    std::vector<float> buf;
    for (size_t off = 0; off < queries.rows(); off += block) {
        size_t n = std::min(block, queries.rows() - off);
        buf.assign(n * nk, 0.0f);
        for (size_t r = 0; r < n; ++r) {
            std::span<const float> q = queries.row(off + r);
            for (size_t c = 0; c < nk; ++c) {
                std::span<const float> k = keys.row(c);
                double dot = 0.0;
                for (size_t d = 0; d < q.size(); ++d) dot += static_cast<double>(q[d]) * k[d];
                buf[r * nk + c] = static_cast<float>(std::clamp(dot, -1.0, 1.0));
            }
        }
        sink(off, n, std::span<const float>(buf.data(), n * nk));
    }
}

void write_cache(const fs::path& path, const EmbeddingMatrix& m) {
    validate_matrix(m, false);
    std::string body;
    body.reserve(16 + m.data.size() * 4);
    util::put_u32(body, kCacheMagic);
    util::put_u32(body, kCacheVersion);
    util::put_u32(body, static_cast<uint32_t>(m.dim));
    util::put_u64(body, static_cast<uint64_t>(m.rows()));
    for (float v : m.data) util::put_f32(body, v);
    util::atomic_write_file(path, body);

    std::string ids;
    for (const auto& id : m.id_manifest) {
        ids += id;
        ids += '\n';
    }
    util::atomic_write_file(corpus::ids_path(path), ids);
}

EmbeddingMatrix read_cache(const fs::path& path) {
    std::string buf = util::read_file(path);
    size_t off = 0;
    if (util::get_u32(buf, off) != kCacheMagic) {
        throw FormatError("bad magic in embedding cache: " + path.string());
    }
    if (uint32_t ver = util::get_u32(buf, off); ver != kCacheVersion) {
        throw FormatError("unsupported embedding cache version " + std::to_string(ver));
    }
    EmbeddingMatrix m;
    m.dim = util::get_u32(buf, off);
    uint64_t rows = util::get_u64(buf, off);
    if (buf.size() - off != rows * m.dim * 4) {
        throw FormatError("embedding cache size mismatch: " + path.string());
    }
    m.data.resize(rows * m.dim);
    for (auto& v : m.data) v = util::get_f32(buf, off);
    m.id_manifest = util::read_lines(corpus::ids_path(path));
    if (m.id_manifest.size() != rows) {
        throw FormatError("id manifest row count mismatch for " + path.string());
    }
    validate_matrix(m, false);

    // Detect unit rows so downstream normalization checks are honest.
    bool unit = true;
    for (size_t i = 0; i < m.rows() && unit; ++i) {
        double sq = 0.0;
        for (float v : m.row(i)) sq += static_cast<double>(v) * v;
        unit = std::abs(std::sqrt(sq) - 1.0) <= kNormTolerance;
    }
    m.normalized = unit && m.rows() > 0;
    return m;
}

std::string matrix_checksum(const EmbeddingMatrix& m) {
    util::Fnv1a h;
    h.update_u64(m.dim);
    h.update_u64(m.rows());
    for (const auto& id : m.id_manifest) {
        h.update(id);
        h.update("\n");
    }
    h.update(m.data.data(), m.data.size() * sizeof(float));
    return h.hex();
}

namespace {

class FileStoreProvider final : public Provider {
public:
    explicit FileStoreProvider(const fs::path& path) : store_(read_cache(path)), path_(path) {
        for (size_t i = 0; i < store_.rows(); ++i) index_[store_.id_manifest[i]] = i;
    }

    EmbeddingMatrix fetch(const std::vector<EmbedItem>& items) override {
        EmbeddingMatrix out;
        out.dim = store_.dim;
        out.data.reserve(items.size() * store_.dim);
        for (const auto& item : items) {
            auto it = index_.find(item.key);
            if (it == index_.end()) {
                throw ProviderError("embedding store " + path_.string() + " has no entry for \"" +
                                    item.key + "\"");
            }
            auto row = store_.row(it->second);
            out.data.insert(out.data.end(), row.begin(), row.end());
            out.id_manifest.push_back(item.key);
        }
        return out;
    }

private:
    EmbeddingMatrix store_;
    fs::path path_;
    std::unordered_map<std::string, size_t> index_;
};

std::pair<std::string, std::string> split_url(const std::string& url) {
    auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) throw ProviderError("malformed endpoint url: " + url);
    auto path_start = url.find('/', scheme_end + 3);
    if (path_start == std::string::npos) return {url, "/"};
    return {url.substr(0, path_start), url.substr(path_start)};
}

class HttpProvider final : public Provider {
public:
    explicit HttpProvider(const ProviderConfig& cfg) : cfg_(cfg) {
        if (const char* tok = std::getenv("SKILLSEL_EMBED_TOKEN")) token_ = tok;
    }

    EmbeddingMatrix fetch(const std::vector<EmbedItem>& items) override {
        const size_t batch = std::max<size_t>(1, cfg_.batch_size);
        const size_t n_batches = (items.size() + batch - 1) / batch;
        std::vector<std::vector<std::vector<float>>> results(n_batches);
        std::vector<char> failed(n_batches, 0);  // not vector<bool>: workers write disjoint slots
        std::atomic<size_t> next{0};

        auto worker = [&] {
            auto [base, path] = split_url(cfg_.path_or_url);
            httplib::Client cli(base);
            cli.set_connection_timeout(std::chrono::milliseconds(cfg_.timeout_ms));
            cli.set_read_timeout(std::chrono::milliseconds(cfg_.timeout_ms));
            for (;;) {
                size_t b = next.fetch_add(1);
                if (b >= n_batches) return;
                size_t lo = b * batch;
                size_t hi = std::min(items.size(), lo + batch);
                json req;
                req["input"] = json::array();
                for (size_t i = lo; i < hi; ++i) req["input"].push_back(items[i].text);
                std::string body = req.dump();

                bool ok = false;
                for (int attempt = 0; attempt < kRetryAttempts && !ok; ++attempt) {
                    if (attempt > 0) {
                        std::this_thread::sleep_for(
                            std::chrono::milliseconds(kBackoffStartMs << (attempt - 1)));
                    }
                    httplib::Headers headers;
                    if (!token_.empty()) headers.emplace("Authorization", "Bearer " + token_);
                    auto res = cli.Post(path, headers, body, "application/json");
                    if (!res || res->status != 200) continue;
                    json parsed = json::parse(res->body, nullptr, false);
                    if (parsed.is_discarded() || !parsed.contains("data") || !parsed["data"].is_array() ||
                        parsed["data"].size() != hi - lo) {
                        continue;
                    }
                    std::vector<std::vector<float>> rows;
                    rows.reserve(hi - lo);
                    bool shape_ok = true;
                    for (const auto& entry : parsed["data"]) {
                        if (!entry.contains("embedding") || !entry["embedding"].is_array()) {
                            shape_ok = false;
                            break;
                        }
                        std::vector<float> v;
                        v.reserve(entry["embedding"].size());
                        for (const auto& x : entry["embedding"]) v.push_back(x.get<float>());
                        rows.push_back(std::move(v));
                    }
                    if (!shape_ok) continue;
                    results[b] = std::move(rows);
                    ok = true;
                }
                if (!ok) failed[b] = 1;
            }
        };

        size_t n_workers = std::min<size_t>(std::max<size_t>(1, cfg_.max_concurrency), n_batches);
        std::vector<std::thread> threads;
        for (size_t i = 0; i < n_workers; ++i) threads.emplace_back(worker);
        for (auto& t : threads) t.join();

        std::string failed_offsets;
        for (size_t b = 0; b < n_batches; ++b) {
            if (failed[b]) {
                if (!failed_offsets.empty()) failed_offsets += ", ";
                failed_offsets += std::to_string(b * batch);
            }
        }
        if (!failed_offsets.empty()) {
            throw ProviderError("embedding requests failed after " + std::to_string(kRetryAttempts) +
                                " attempts at batch offsets: " + failed_offsets);
        }

        EmbeddingMatrix out;
        for (size_t b = 0; b < n_batches; ++b) {
            for (size_t r = 0; r < results[b].size(); ++r) {
                const auto& v = results[b][r];
                if (out.dim == 0 && b == 0 && r == 0) {
                    out.dim = v.size();
                } else if (v.size() != out.dim) {
                    throw ProviderError("embedding dimension mismatch across batches: got " +
                                        std::to_string(v.size()) + ", expected " +
                                        std::to_string(out.dim));
                }
                out.data.insert(out.data.end(), v.begin(), v.end());
            }
        }
        for (const auto& item : items) out.id_manifest.push_back(item.key);
        if (out.dim == 0) throw ProviderError("embedding endpoint returned no vectors");
        return out;
    }

private:
    ProviderConfig cfg_;
    std::string token_;
};

}  // namespace

std::unique_ptr<Provider> make_provider(const ProviderConfig& cfg) {
    if (cfg.batch_size == 0 || cfg.max_concurrency == 0) {
        throw ValidationError("embedding provider requires batch_size >= 1 and max_concurrency >= 1");
    }
    switch (cfg.kind) {
        case ProviderConfig::Kind::file:
            return std::make_unique<FileStoreProvider>(cfg.path_or_url);
        case ProviderConfig::Kind::http:
            return std::make_unique<HttpProvider>(cfg);
    }
    throw ValidationError("unknown provider kind");
}

EmbeddingMatrix embed_items(const std::vector<EmbedItem>& items, const ProviderConfig& provider,
                            const fs::path& cache_path) {
    if (items.empty()) throw ValidationError("nothing to embed");
    auto p = make_provider(provider);
    EmbeddingMatrix m = normalized(p->fetch(items));
    write_cache(cache_path, m);
    return m;
}

EmbeddingMatrix embed_corpus(const corpus::CorpusHandle& handle, const ProviderConfig& provider,
                             const fs::path& cache_path) {
    if (handle.record_count == 0) throw ValidationError("cannot embed an empty corpus");
    std::vector<EmbedItem> items;
    items.reserve(handle.record_count);
    corpus::for_each_record(handle, [&](size_t, const corpus::TextRecord& rec, const std::string&) {
        items.push_back({rec.id, rec.text});
    });
    return embed_items(items, provider, cache_path);
}

}  // namespace skillsel::emb
