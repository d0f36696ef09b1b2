#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace skillsel {

// Error taxonomy. The CLI maps these to exit codes:
// MissingInputError -> 2, ValidationError -> 3, ProviderError -> 4.
struct ValidationError : std::runtime_error {
    explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

struct MissingInputError : std::runtime_error {
    explicit MissingInputError(const std::string& msg) : std::runtime_error(msg) {}
};

struct ProviderError : std::runtime_error {
    explicit ProviderError(const std::string& msg) : std::runtime_error(msg) {}
};

// Binary/bundle format problems: bad magic, version, checksum.
struct FormatError : std::runtime_error {
    explicit FormatError(const std::string& msg) : std::runtime_error(msg) {}
};

namespace util {

// FNV-1a 64-bit, used for content fingerprints and bundle checksums.
class Fnv1a {
public:
    void update(const void* data, size_t n);
    void update(std::string_view s) { update(s.data(), s.size()); }
    void update_u64(uint64_t v);
    void update_file(const std::filesystem::path& p);
    uint64_t digest() const { return state_; }
    std::string hex() const;

private:
    uint64_t state_ = 14695981039346656037ull;
};

uint64_t fnv1a(std::string_view s);
std::string fnv1a_hex(std::string_view s);

// Fixed-order pairwise reduction in 64-bit; deterministic for a fixed input order.
double pairwise_sum(std::span<const double> xs);

bool utf8_valid(std::string_view s);

std::string trim(std::string_view s);

// Trim plus collapse of internal whitespace runs to single spaces.
std::string collapse_whitespace(std::string_view s);

std::string ascii_lower(std::string_view s);

size_t count_whitespace_tokens(std::string_view s);

// Writes content to a temp file in the target directory, then renames over
// the final path so readers never observe a partial file.
void atomic_write_file(const std::filesystem::path& path, std::string_view content);

std::string read_file(const std::filesystem::path& path);

std::vector<std::string> read_lines(const std::filesystem::path& path);

// Little-endian binary encode/decode for the on-disk formats.
void put_u32(std::string& out, uint32_t v);
void put_u64(std::string& out, uint64_t v);
void put_f32(std::string& out, float v);
uint32_t get_u32(std::string_view buf, size_t& off);
uint64_t get_u64(std::string_view buf, size_t& off);
float get_f32(std::string_view buf, size_t& off);

// Deterministic 64-bit RNG (splitmix-seeded xoshiro256**) so sampling does not
// depend on the standard library's distribution implementations.
class Rng {
public:
    explicit Rng(uint64_t seed);
    uint64_t next();
    // Uniform in [0, n) by rejection sampling; n must be > 0.
    uint64_t bounded(uint64_t n);
    double uniform01();

private:
    uint64_t s_[4];
};

// One structured log line on stderr: {"stage":...,"duration_ms":...,"records":...}.
void log_stage(const std::string& stage, int64_t duration_ms, int64_t records, bool skipped = false);
void log_warning(const std::string& stage, const std::string& message);
void log_info(const std::string& stage, const std::string& message);

}  // namespace util
}  // namespace skillsel
