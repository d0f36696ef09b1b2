#include "skillsel/util.hpp"

#include <atomic>
#include <bit>
#include <cctype>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iostream>
#include <sstream>

#include <unistd.h>

#include <nlohmann/json.hpp>

namespace skillsel::util {

namespace fs = std::filesystem;

void Fnv1a::update(const void* data, size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    uint64_t h = state_;
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 1099511628211ull;
    }
    state_ = h;
}

void Fnv1a::update_u64(uint64_t v) {
    unsigned char buf[8];
    for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    update(buf, 8);
}

void Fnv1a::update_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw MissingInputError("cannot open file for hashing: " + p.string());
    char buf[1 << 16];
    while (in) {
        in.read(buf, sizeof(buf));
        update(buf, static_cast<size_t>(in.gcount()));
    }
}

std::string Fnv1a::hex() const {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(state_));
    return std::string(buf, 16);
}

uint64_t fnv1a(std::string_view s) {
    Fnv1a h;
    h.update(s);
    return h.digest();
}

std::string fnv1a_hex(std::string_view s) {
    Fnv1a h;
    h.update(s);
    return h.hex();
}

double pairwise_sum(std::span<const double> xs) {
    if (xs.size() <= 16) {
        double acc = 0.0;
        for (double x : xs) acc += x;
        return acc;
    }
    size_t half = xs.size() / 2;
    return pairwise_sum(xs.first(half)) + pairwise_sum(xs.subspan(half));
}

bool utf8_valid(std::string_view s) {
    size_t i = 0;
    const size_t n = s.size();
    while (i < n) {
        unsigned char c = static_cast<unsigned char>(s[i]);
        size_t len;
        uint32_t cp;
        if (c < 0x80) {
            ++i;
            continue;
        } else if ((c & 0xE0) == 0xC0) {
            len = 2;
            cp = c & 0x1F;
        } else if ((c & 0xF0) == 0xE0) {
            len = 3;
            cp = c & 0x0F;
        } else if ((c & 0xF8) == 0xF0) {
            len = 4;
            cp = c & 0x07;
        } else {
            return false;
        }
        if (i + len > n) return false;
        for (size_t k = 1; k < len; ++k) {
            unsigned char cc = static_cast<unsigned char>(s[i + k]);
            if ((cc & 0xC0) != 0x80) return false;
            cp = (cp << 6) | (cc & 0x3F);
        }
        // Reject overlong encodings, surrogates, and out-of-range code points.
        if (len == 2 && cp < 0x80) return false;
        if (len == 3 && cp < 0x800) return false;
        if (len == 4 && cp < 0x10000) return false;
        if (cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF)) return false;
        i += len;
    }
    return true;
}

std::string trim(std::string_view s) {
    size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return std::string(s.substr(b, e - b));
}

std::string collapse_whitespace(std::string_view s) {
    std::string out;
    out.reserve(s.size());
    bool in_ws = true;  // leading whitespace dropped
    for (char ch : s) {
        if (std::isspace(static_cast<unsigned char>(ch))) {
            in_ws = true;
        } else {
            if (in_ws && !out.empty()) out.push_back(' ');
            out.push_back(ch);
            in_ws = false;
        }
    }
    return out;
}

std::string ascii_lower(std::string_view s) {
    std::string out(s);
    for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

size_t count_whitespace_tokens(std::string_view s) {
    size_t count = 0;
    bool in_token = false;
    for (char ch : s) {
        if (std::isspace(static_cast<unsigned char>(ch))) {
            in_token = false;
        } else if (!in_token) {
            in_token = true;
            ++count;
        }
    }
    return count;
}

void atomic_write_file(const fs::path& path, std::string_view content) {
    fs::path dir = path.parent_path();
    if (!dir.empty()) fs::create_directories(dir);
    static std::atomic<uint64_t> counter{0};
    fs::path tmp = path;
    tmp += ".tmp." + std::to_string(counter.fetch_add(1)) + "." + std::to_string(::getpid());
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot open for write: " + tmp.string());
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
        if (!out) throw std::runtime_error("write failed: " + tmp.string());
    }
    fs::rename(tmp, path);
}

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw MissingInputError("cannot open file: " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::vector<std::string> read_lines(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw MissingInputError("cannot open file: " + path.string());
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) lines.push_back(line);
    return lines;
}

void put_u32(std::string& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f32(std::string& out, float v) {
    put_u32(out, std::bit_cast<uint32_t>(v));
}

uint32_t get_u32(std::string_view buf, size_t& off) {
    if (off + 4 > buf.size()) throw FormatError("truncated binary payload");
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(static_cast<unsigned char>(buf[off + i])) << (8 * i);
    off += 4;
    return v;
}

uint64_t get_u64(std::string_view buf, size_t& off) {
    if (off + 8 > buf.size()) throw FormatError("truncated binary payload");
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(static_cast<unsigned char>(buf[off + i])) << (8 * i);
    off += 8;
    return v;
}

float get_f32(std::string_view buf, size_t& off) {
    return std::bit_cast<float>(get_u32(buf, off));
}

namespace {
uint64_t splitmix64(uint64_t& x) {
    x += 0x9E3779B97f4A7C15ull;
    uint64_t z = x;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
}  // namespace

Rng::Rng(uint64_t seed) {
    uint64_t sm = seed;
    for (auto& s : s_) s = splitmix64(sm);
}

uint64_t Rng::next() {
    uint64_t result = rotl(s_[1] * 5, 7) * 9;
    uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
}

uint64_t Rng::bounded(uint64_t n) {
    if (n == 0) throw ValidationError("Rng::bounded requires n > 0");
    uint64_t threshold = (~n + 1) % n;  // 2^64 mod n
    for (;;) {
        uint64_t r = next();
        if (r >= threshold) return r % n;
    }
}

double Rng::uniform01() {
    return static_cast<double>(next() >> 11) * 0x1.0p-53;
}

void log_stage(const std::string& stage, int64_t duration_ms, int64_t records, bool skipped) {
    nlohmann::ordered_json j;
    j["stage"] = stage;
    j["duration_ms"] = duration_ms;
    j["records"] = records;
    if (skipped) j["skipped"] = true;
    std::cerr << j.dump() << "\n";
}

void log_warning(const std::string& stage, const std::string& message) {
    nlohmann::ordered_json j;
    j["stage"] = stage;
    j["warning"] = message;
    std::cerr << j.dump() << "\n";
}

void log_info(const std::string& stage, const std::string& message) {
    nlohmann::ordered_json j;
    j["stage"] = stage;
    j["info"] = message;
    std::cerr << j.dump() << "\n";
}

}  // namespace skillsel::util
