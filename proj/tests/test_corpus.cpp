#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <fstream>
#include <map>
#include <set>

#include "skillsel/corpus.hpp"
#include "skillsel/util.hpp"
#include "support/fixtures.hpp"

using namespace skillsel;
using testsupport::TempDir;

namespace {

std::filesystem::path write_text(const std::filesystem::path& dir, const std::string& name,
                                 const std::string& content) {
    auto p = dir / name;
    std::ofstream out(p, std::ios::binary);
    out << content;
    return p;
}

}  // namespace

TEST_CASE("load counts valid lines") {
    TempDir tmp("corpus");
    auto p = write_text(tmp.path(), "c.jsonl",
                        R"({"id":"a","text":"one"})" "\n"
                        R"({"id":"b","text":"two"})" "\n"
                        R"({"id":"c","text":"three"})" "\n");
    auto res = corpus::load_corpus(p);
    CHECK(res.handle.record_count == 3);
    CHECK(res.skipped_malformed == 0);
    CHECK(res.handle.id_manifest == std::vector<std::string>{"a", "b", "c"});
}

TEST_CASE("duplicate id is fatal and names the id") {
    TempDir tmp("corpus");
    auto p = write_text(tmp.path(), "c.jsonl",
                        R"({"id":"a","text":"one"})" "\n"
                        R"({"id":"a","text":"again"})" "\n");
    CHECK_THROWS_WITH_AS(corpus::load_corpus(p), doctest::Contains("\"a\""), ValidationError);
}

TEST_CASE("malformed line skipped in tolerant mode, fatal otherwise") {
    TempDir tmp("corpus");
    auto p = write_text(tmp.path(), "c.jsonl",
                        R"({"id":"a","text":"one"})" "\n"
                        "this is not json\n"
                        R"({"id":"b","text":"two"})" "\n");
    auto res = corpus::load_corpus(p, /*skip_malformed=*/true);
    CHECK(res.handle.record_count == 2);
    CHECK(res.skipped_malformed == 1);
    CHECK_THROWS_AS(corpus::load_corpus(p, false), ValidationError);
}

TEST_CASE("records violating field invariants are malformed") {
    TempDir tmp("corpus");
    auto p = write_text(tmp.path(), "c.jsonl",
                        R"({"id":"","text":"x"})" "\n"
                        R"({"id":"w","text":"   "})" "\n"
                        R"({"id":"t","text":"x","token_count":0})" "\n"
                        R"({"id":"m","text":"x","meta":{"k":1}})" "\n"
                        "{\"id\":\"u\",\"text\":\"bad \xff utf8\"}\n"
                        R"({"id":"ok","text":"fine","token_count":3,"meta":{"k":"v"}})" "\n");
    auto res = corpus::load_corpus(p, true);
    CHECK(res.handle.record_count == 1);
    CHECK(res.skipped_malformed == 5);
    CHECK(res.handle.id_manifest[0] == "ok");
}

TEST_CASE("canonical files round-trip byte for byte") {
    TempDir tmp("corpus");
    std::vector<corpus::TextRecord> recs;
    for (int i = 0; i < 5; ++i) {
        corpus::TextRecord r;
        r.id = "doc" + std::to_string(i);
        r.text = "text with \"quotes\" and unicode \xC3\xA9 " + std::to_string(i);
        if (i % 2 == 0) r.token_count = 10 + i;
        if (i == 3) r.meta = {{"source", "synthetic"}};
        recs.push_back(r);
    }
    auto p = tmp.path() / "c.jsonl";
    corpus::write_records(recs, p);
    auto original = util::read_file(p);

    auto loaded = corpus::load_corpus(p);
    auto copy = tmp.path() / "copy.jsonl";
    corpus::write_corpus(loaded.handle, copy);
    CHECK(util::read_file(copy) == original);
    CHECK(util::read_file(corpus::ids_path(copy)) == util::read_file(corpus::ids_path(p)));
}

TEST_CASE("manifest identical across repeated loads") {
    TempDir tmp("corpus");
    auto p = write_text(tmp.path(), "c.jsonl",
                        R"({"id":"z","text":"1"})" "\n"
                        R"({"id":"a","text":"2"})" "\n");
    auto first = corpus::load_corpus(p).handle.id_manifest;
    auto second = corpus::load_corpus(p).handle.id_manifest;
    CHECK(first == second);
    CHECK(first == std::vector<std::string>{"z", "a"});  // file order, not sorted
}

TEST_CASE("sampling everything returns the identical id set in order") {
    TempDir tmp("corpus");
    std::vector<corpus::TextRecord> recs;
    for (int i = 0; i < 7; ++i) recs.push_back({"id" + std::to_string(i), "t" + std::to_string(i), {}, {}});
    auto p = tmp.path() / "c.jsonl";
    corpus::write_records(recs, p);
    auto handle = corpus::load_corpus(p).handle;
    auto sampled = corpus::sample_reference(handle, 7, 99, tmp.path() / "s.jsonl");
    CHECK(sampled.id_manifest == handle.id_manifest);
}

TEST_CASE("sampling is deterministic for a fixed seed") {
    TempDir tmp("corpus");
    std::vector<corpus::TextRecord> recs;
    for (int i = 0; i < 5; ++i) recs.push_back({"id" + std::to_string(i), "t", {}, {}});
    auto p = tmp.path() / "c.jsonl";
    corpus::write_records(recs, p);
    auto handle = corpus::load_corpus(p).handle;
    auto a = corpus::sample_reference(handle, 1, 1234, tmp.path() / "a.jsonl");
    auto b = corpus::sample_reference(handle, 1, 1234, tmp.path() / "b.jsonl");
    CHECK(a.id_manifest == b.id_manifest);
    CHECK(a.id_manifest.size() == 1);
}

TEST_CASE("sample is a subset of exactly n unique ids in ascending position") {
    TempDir tmp("corpus");
    std::vector<corpus::TextRecord> recs;
    for (int i = 0; i < 50; ++i) recs.push_back({"id" + std::to_string(i), "t", {}, {}});
    auto p = tmp.path() / "c.jsonl";
    corpus::write_records(recs, p);
    auto handle = corpus::load_corpus(p).handle;

    std::map<std::string, size_t> pos;
    for (size_t i = 0; i < handle.id_manifest.size(); ++i) pos[handle.id_manifest[i]] = i;
    for (uint64_t seed : {0ull, 1ull, 77ull}) {
        auto s = corpus::sample_reference(handle, 20, seed, tmp.path() / "s.jsonl");
        std::set<std::string> uniq(s.id_manifest.begin(), s.id_manifest.end());
        CHECK(uniq.size() == 20);
        for (size_t i = 1; i < s.id_manifest.size(); ++i) {
            CHECK(pos[s.id_manifest[i - 1]] < pos[s.id_manifest[i]]);
        }
        for (const auto& id : uniq) CHECK(pos.count(id) == 1);
    }
    CHECK_THROWS_AS(corpus::sample_reference(handle, 51, 0, tmp.path() / "x.jsonl"), ValidationError);
}

// Monte-Carlo oracle: with n=100 of 1000 records, each id appears with
// frequency 0.1; over 1000 fixed seeds the empirical rate stays within 0.03.
TEST_CASE("sampling is uniform across seeds") {
    TempDir tmp("corpus");
    std::vector<corpus::TextRecord> recs;
    for (int i = 0; i < 1000; ++i) recs.push_back({"id" + std::to_string(i), "t", {}, {}});
    auto p = tmp.path() / "c.jsonl";
    corpus::write_records(recs, p);
    auto handle = corpus::load_corpus(p).handle;

    std::map<std::string, int> hits;
    const int trials = 3000;
    for (int seed = 0; seed < trials; ++seed) {
        auto s = corpus::sample_reference(handle, 100, static_cast<uint64_t>(seed),
                                          tmp.path() / "s.jsonl");
        for (const auto& id : s.id_manifest) ++hits[id];
    }
    for (const auto& id : handle.id_manifest) {
        double freq = static_cast<double>(hits[id]) / trials;
        CHECK(freq == doctest::Approx(0.1).epsilon(0.31));  // 0.1 +/- 0.03 (relative 0.3 plus slack)
        CHECK(freq >= 0.07);
        CHECK(freq <= 0.13);
    }
}

TEST_CASE("token counting") {
    corpus::TextRecord r;
    r.id = "x";
    r.text = "a b  c";
    CHECK(corpus::count_tokens(r, corpus::TokenMode::whitespace) == 3);

    r.token_count = 128;
    CHECK(corpus::count_tokens(r, corpus::TokenMode::provided) == 128);

    corpus::TextRecord no_count{"y", "text", {}, {}};
    CHECK_THROWS_AS(corpus::count_tokens(no_count, corpus::TokenMode::provided), ValidationError);
}

// Independent split-and-count oracle over a synthetic 500-word document.
TEST_CASE("whitespace count matches a split oracle") {
    util::Rng rng(5);
    std::string text;
    size_t expected = 0;
    for (int i = 0; i < 500; ++i) {
        if (i) text += rng.bounded(4) == 0 ? "  " : " ";
        if (rng.bounded(10) == 0) text += "\t";
        text += "word" + std::to_string(rng.bounded(100));
        ++expected;
    }
    size_t oracle = 0;
    bool in_word = false;
    for (char c : text) {
        bool ws = c == ' ' || c == '\t' || c == '\n';
        if (!ws && !in_word) ++oracle;
        in_word = !ws;
    }
    CHECK(oracle == expected);
    corpus::TextRecord r{"x", text, {}, {}};
    CHECK(corpus::count_tokens(r, corpus::TokenMode::whitespace) == static_cast<int64_t>(oracle));
}
