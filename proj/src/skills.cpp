#include "skillsel/skills.hpp"

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <fstream>
#include <mutex>
#include <thread>
#include <unordered_set>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "skillsel/util.hpp"

namespace skillsel::skills {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {
constexpr size_t kMaxSkills = 10;
constexpr size_t kMaxSkillWords = 10;
constexpr int kBackoffStartMs = 500;
constexpr char kPlaceholder[] = "{TEXT}";
}  // namespace

std::string render_prompt(const std::string& template_text, const corpus::TextRecord& record) {
    size_t first = template_text.find(kPlaceholder);
    if (first == std::string::npos) {
        throw ValidationError("prompt template has no {TEXT} placeholder");
    }
    if (template_text.find(kPlaceholder, first + 1) != std::string::npos) {
        throw ValidationError("prompt template has multiple {TEXT} placeholders");
    }
    std::string out = template_text;
    out.replace(first, sizeof(kPlaceholder) - 1, record.text);
    return out;
}

namespace {

// Extracts the first balanced JSON object from raw text, skipping over
// string literals so braces inside them do not confuse the scan.
std::optional<json> first_json_object(const std::string& raw) {
    size_t start = 0;
    while ((start = raw.find('{', start)) != std::string::npos) {
        int depth = 0;
        bool in_string = false;
        bool escaped = false;
        for (size_t i = start; i < raw.size(); ++i) {
            char c = raw[i];
            if (in_string) {
                if (escaped) {
                    escaped = false;
                } else if (c == '\\') {
                    escaped = true;
                } else if (c == '"') {
                    in_string = false;
                }
                continue;
            }
            if (c == '"') {
                in_string = true;
            } else if (c == '{') {
                ++depth;
            } else if (c == '}') {
                if (--depth == 0) {
                    json j = json::parse(raw.substr(start, i - start + 1), nullptr, false);
                    if (!j.is_discarded() && j.is_object()) return j;
                    break;
                }
            }
        }
        ++start;
    }
    return std::nullopt;
}

}  // namespace

ParsedAnnotation parse_annotation(const std::string& raw_response, const std::string& doc_id) {
    auto obj = first_json_object(raw_response);
    if (!obj) throw AnnotationParseError("no JSON object in response for doc " + doc_id);

    ParsedAnnotation out;
    out.annotation.doc_id = doc_id;

    if (!obj->contains("math relevance") || !(*obj)["math relevance"].is_string()) {
        throw AnnotationParseError("missing \"math relevance\" for doc " + doc_id);
    }
    std::string rel = util::ascii_lower(util::trim((*obj)["math relevance"].get<std::string>()));
    if (rel == "yes") {
        out.annotation.math_relevance = true;
    } else if (rel == "no") {
        out.annotation.math_relevance = false;
    } else {
        throw AnnotationParseError("\"math relevance\" is neither YES nor NO for doc " + doc_id);
    }

    std::vector<std::string> points;
    if (obj->contains("knowledge points")) {
        if (!(*obj)["knowledge points"].is_array()) {
            throw AnnotationParseError("\"knowledge points\" is not an array for doc " + doc_id);
        }
        for (const auto& p : (*obj)["knowledge points"]) {
            if (!p.is_string()) {
                out.repairs.push_back("dropped non-string knowledge point");
                continue;
            }
            points.push_back(p.get<std::string>());
        }
    }

    std::unordered_set<std::string> seen_lower;
    for (auto& p : points) {
        std::string norm = util::collapse_whitespace(p);
        if (norm.empty()) {
            out.repairs.push_back("dropped empty knowledge point");
            continue;
        }
        if (util::count_whitespace_tokens(norm) > kMaxSkillWords) {
            out.repairs.push_back("dropped over-long knowledge point: " + norm);
            continue;
        }
        if (!seen_lower.insert(util::ascii_lower(norm)).second) {
            out.repairs.push_back("dropped duplicate knowledge point: " + norm);
            continue;
        }
        if (out.annotation.skills.size() == kMaxSkills) {
            out.repairs.push_back("truncated knowledge points at " + std::to_string(kMaxSkills));
            break;
        }
        out.annotation.skills.push_back(std::move(norm));
    }

    if (out.annotation.math_relevance && out.annotation.skills.empty()) {
        throw AnnotationParseError("relevant document with no usable skills: " + doc_id);
    }
    if (!out.annotation.math_relevance && !out.annotation.skills.empty()) {
        out.repairs.push_back("cleared skills on non-relevant document");
        out.annotation.skills.clear();
    }
    validate_annotation(out.annotation);
    return out;
}

void validate_annotation(const SkillAnnotation& a) {
    if (a.doc_id.empty()) throw ValidationError("annotation without doc_id");
    if (a.math_relevance) {
        if (a.skills.empty() || a.skills.size() > kMaxSkills) {
            throw ValidationError("annotation for " + a.doc_id + " has " +
                                  std::to_string(a.skills.size()) + " skills (expected 1..10)");
        }
    } else if (!a.skills.empty()) {
        throw ValidationError("non-relevant annotation for " + a.doc_id + " carries skills");
    }
    std::unordered_set<std::string> seen;
    for (const auto& s : a.skills) {
        if (util::trim(s).empty()) throw ValidationError("empty skill in annotation " + a.doc_id);
        if (util::count_whitespace_tokens(s) > kMaxSkillWords) {
            throw ValidationError("skill exceeds 10 words in annotation " + a.doc_id + ": " + s);
        }
        if (!seen.insert(util::ascii_lower(s)).second) {
            throw ValidationError("duplicate skill in annotation " + a.doc_id + ": " + s);
        }
    }
}

std::string serialize_annotation(const SkillAnnotation& a) {
    ordered_json j;
    j["doc_id"] = a.doc_id;
    j["math_relevance"] = a.math_relevance;
    j["skills"] = a.skills;
    return j.dump();
}

std::vector<SkillAnnotation> load_annotations(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw MissingInputError("cannot open annotations: " + path.string());
    std::vector<SkillAnnotation> out;
    std::string line;
    bool pending_error = false;
    std::string pending_why;
    while (std::getline(in, line)) {
        if (util::trim(line).empty()) continue;
        if (pending_error) throw ValidationError(pending_why);
        json j = json::parse(line, nullptr, false);
        if (j.is_discarded() || !j.is_object() || !j.contains("doc_id")) {
            // Only acceptable as a torn final line from an interrupted append.
            pending_error = true;
            pending_why = "malformed annotation line in " + path.string();
            continue;
        }
        SkillAnnotation a;
        a.doc_id = j.value("doc_id", "");
        a.math_relevance = j.value("math_relevance", false);
        for (const auto& s : j.value("skills", json::array())) a.skills.push_back(s.get<std::string>());
        validate_annotation(a);
        out.push_back(std::move(a));
    }
    return out;
}

namespace {

struct ChatClient {
    explicit ChatClient(const ExtractionConfig& cfg) : cfg_(cfg) {
        auto scheme_end = cfg.endpoint_url.find("://");
        if (scheme_end == std::string::npos) {
            throw ProviderError("malformed chat endpoint url: " + cfg.endpoint_url);
        }
        auto path_start = cfg.endpoint_url.find('/', scheme_end + 3);
        base_ = path_start == std::string::npos ? cfg.endpoint_url : cfg.endpoint_url.substr(0, path_start);
        path_ = path_start == std::string::npos ? "/" : cfg.endpoint_url.substr(path_start);
        cli_ = std::make_unique<httplib::Client>(base_);
        cli_->set_connection_timeout(std::chrono::seconds(10));
        cli_->set_read_timeout(std::chrono::seconds(120));
        if (const char* tok = std::getenv("SKILLSEL_CHAT_TOKEN")) token_ = tok;
    }

    // Returns the first choice's message content, or nullopt on transport or
    // shape failure.
    std::optional<std::string> complete(const std::string& prompt) {
        json req;
        req["model"] = cfg_.model_name;
        req["messages"] = json::array({json{{"role", "user"}, {"content", prompt}}});
        req["temperature"] = cfg_.request_temperature;
        httplib::Headers headers;
        if (!token_.empty()) headers.emplace("Authorization", "Bearer " + token_);
        auto res = cli_->Post(path_, headers, req.dump(), "application/json");
        if (!res || res->status != 200) return std::nullopt;
        json parsed = json::parse(res->body, nullptr, false);
        if (parsed.is_discarded() || !parsed.contains("choices") || !parsed["choices"].is_array() ||
            parsed["choices"].empty()) {
            return std::nullopt;
        }
        const auto& choice = parsed["choices"][0];
        if (!choice.contains("message") || !choice["message"].contains("content") ||
            !choice["message"]["content"].is_string()) {
            return std::nullopt;
        }
        return choice["message"]["content"].get<std::string>();
    }

    const ExtractionConfig& cfg_;
    std::string base_, path_, token_;
    std::unique_ptr<httplib::Client> cli_;
};

struct DocTask {
    size_t slot;  // position among pending docs, used for in-order flush
    corpus::TextRecord record;
    std::string raw_line;
};

struct DocOutcome {
    bool done = false;
    bool quarantined = false;
    std::string annotation_line;   // when annotated
    std::string quarantine_line;   // when quarantined
    size_t retries = 0;
    size_t requests = 0;
    size_t repairs = 0;
};

}  // namespace

ExtractionSummary extract_skills(const corpus::CorpusHandle& handle, const ExtractionConfig& cfg,
                                 const fs::path& annotations_path, const fs::path& quarantine_path) {
    std::string template_text = util::read_file(cfg.prompt_template_path);
    {  // fail fast on a bad template
        corpus::TextRecord probe;
        probe.id = "probe";
        probe.text = "probe";
        render_prompt(template_text, probe);
    }

    ExtractionSummary summary;
    std::unordered_set<std::string> done_ids;
    if (fs::exists(annotations_path)) {
        // A torn final line (interrupted append) is dropped and re-requested.
        std::vector<std::string> kept_lines;
        bool rewrite = false;
        for (auto& line : util::read_lines(annotations_path)) {
            if (util::trim(line).empty()) continue;
            json j = json::parse(line, nullptr, false);
            if (j.is_discarded() || !j.is_object() || !j.contains("doc_id")) {
                rewrite = true;
                continue;
            }
            kept_lines.push_back(line);
            done_ids.insert(j["doc_id"].get<std::string>());
        }
        if (rewrite) {
            std::string body;
            for (const auto& l : kept_lines) {
                body += l;
                body += '\n';
            }
            util::atomic_write_file(annotations_path, body);
        }
    }

    std::vector<DocTask> tasks;
    corpus::for_each_record(handle, [&](size_t, const corpus::TextRecord& rec, const std::string& raw) {
        if (done_ids.count(rec.id)) {
            ++summary.skipped_existing;
            return;
        }
        tasks.push_back({tasks.size(), rec, raw});
    });

    if (tasks.empty()) return summary;

    auto dir = annotations_path.parent_path();
    if (!dir.empty()) fs::create_directories(dir);
    std::ofstream ann_out(annotations_path, std::ios::binary | std::ios::app);
    if (!ann_out) throw std::runtime_error("cannot open annotations for append: " + annotations_path.string());
    std::ofstream quar_out;  // opened lazily

    std::vector<DocOutcome> outcomes(tasks.size());
    std::atomic<size_t> next{0};
    std::mutex flush_mu;
    size_t flushed = 0;

    // Marks a slot done and flushes completed outcomes in corpus order so the
    // file content is deterministic for a fixed endpoint behavior.
    auto finish_slot = [&](size_t slot) {
        std::lock_guard<std::mutex> lock(flush_mu);
        outcomes[slot].done = true;
        while (flushed < outcomes.size() && outcomes[flushed].done) {
            DocOutcome& o = outcomes[flushed];
            if (o.quarantined) {
                if (!quar_out.is_open()) {
                    auto qdir = quarantine_path.parent_path();
                    if (!qdir.empty()) fs::create_directories(qdir);
                    quar_out.open(quarantine_path, std::ios::binary | std::ios::app);
                }
                quar_out << o.quarantine_line << '\n' << std::flush;
            } else {
                ann_out << o.annotation_line << '\n' << std::flush;
            }
            ++flushed;
        }
    };

    auto worker = [&] {
        ChatClient client(cfg);
        for (;;) {
            size_t t = next.fetch_add(1);
            if (t >= tasks.size()) return;
            DocTask& task = tasks[t];
            DocOutcome& o = outcomes[task.slot];

            std::string prompt = render_prompt(template_text, task.record);
            std::string last_error = "no attempts made";
            bool ok = false;
            for (int attempt = 0; attempt <= cfg.max_retries && !ok; ++attempt) {
                if (attempt > 0) {
                    ++o.retries;
                    std::this_thread::sleep_for(
                        std::chrono::milliseconds(kBackoffStartMs << std::min(attempt - 1, 6)));
                }
                ++o.requests;
                auto content = client.complete(prompt);
                if (!content) {
                    last_error = "endpoint failure";
                    continue;
                }
                try {
                    ParsedAnnotation parsed = parse_annotation(*content, task.record.id);
                    o.repairs = parsed.repairs.size();
                    for (const auto& r : parsed.repairs) {
                        util::log_warning("extract-skills", task.record.id + ": " + r);
                    }
                    o.annotation_line = serialize_annotation(parsed.annotation);
                    ok = true;
                } catch (const AnnotationParseError& e) {
                    last_error = e.what();
                }
            }
            if (!ok) {
                json q = json::parse(task.raw_line);
                q["error"] = last_error;
                o.quarantine_line = q.dump();
                o.quarantined = true;
            }
            finish_slot(task.slot);
        }
    };

    size_t n_workers = std::min<size_t>(std::max<size_t>(1, cfg.max_concurrency), tasks.size());
    std::vector<std::thread> threads;
    for (size_t i = 0; i < n_workers; ++i) threads.emplace_back(worker);
    for (auto& t : threads) t.join();

    for (const auto& o : outcomes) {
        summary.retries += o.retries;
        summary.requests += o.requests;
        summary.repairs += o.repairs;
        if (o.quarantined) {
            ++summary.quarantined;
        } else {
            ++summary.annotated;
        }
    }

    double rate = static_cast<double>(summary.quarantined) / static_cast<double>(tasks.size());
    if (rate > cfg.max_quarantine_rate) {
        throw ProviderError("quarantine rate " + std::to_string(rate) + " exceeds maximum " +
                            std::to_string(cfg.max_quarantine_rate) + " (" +
                            std::to_string(summary.quarantined) + "/" + std::to_string(tasks.size()) +
                            " documents failed)");
    }
    return summary;
}

}  // namespace skillsel::skills
