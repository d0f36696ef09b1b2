#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "skillsel/corpus.hpp"

namespace skillsel::skills {

// Per-document extraction output. When math_relevance is true the skill list
// holds 1..10 entries; each entry is trimmed, whitespace-collapsed, at most
// 10 words, and unique case-insensitively within the annotation.
struct SkillAnnotation {
    std::string doc_id;
    bool math_relevance = false;
    std::vector<std::string> skills;
};

struct ExtractionConfig {
    std::string endpoint_url;
    std::string model_name;
    std::filesystem::path prompt_template_path;
    size_t max_concurrency = 4;
    int max_retries = 3;
    double request_temperature = 0.0;
    double max_quarantine_rate = 0.10;
};

// Replaces the single {TEXT} placeholder with the record text; everything
// else is byte-identical to the template. Zero or multiple placeholders are
// a configuration error.
std::string render_prompt(const std::string& template_text, const corpus::TextRecord& record);

struct ParsedAnnotation {
    SkillAnnotation annotation;
    std::vector<std::string> repairs;  // one entry per applied repair
};

struct AnnotationParseError : std::runtime_error {
    explicit AnnotationParseError(const std::string& msg) : std::runtime_error(msg) {}
};

// Locates the first JSON object in a raw model response (fenced or bare),
// reads "math relevance" (YES/NO, case-insensitive) and "knowledge points",
// and repairs over-long or duplicate entries. Throws AnnotationParseError
// when no usable object is found.
ParsedAnnotation parse_annotation(const std::string& raw_response, const std::string& doc_id);

void validate_annotation(const SkillAnnotation& a);

std::string serialize_annotation(const SkillAnnotation& a);

// Reads a JSONL annotations file, re-validating every record. Lines that are
// torn (e.g. a crash mid-append) are tolerated only at the end of file.
std::vector<SkillAnnotation> load_annotations(const std::filesystem::path& path);

struct ExtractionSummary {
    size_t annotated = 0;          // annotations written this run
    size_t skipped_existing = 0;   // already present before the run
    size_t quarantined = 0;
    size_t retries = 0;            // extra attempts beyond the first, summed
    size_t requests = 0;           // HTTP requests issued this run
    size_t repairs = 0;
};

// Annotates every corpus record through an OpenAI-compatible chat endpoint.
// Resumable: ids already in the annotations file are skipped. Documents that
// exhaust retries go to the quarantine file (corpus format plus "error") and
// the run continues; a quarantine rate above the configured maximum fails
// the run after all documents were attempted.
ExtractionSummary extract_skills(const corpus::CorpusHandle& corpus, const ExtractionConfig& cfg,
                                 const std::filesystem::path& annotations_path,
                                 const std::filesystem::path& quarantine_path);

}  // namespace skillsel::skills
