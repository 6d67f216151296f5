// Copyright 2026 The Conflux Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <atomic>
#include <chrono>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "conflux/model.hpp"
#include "conflux/textrank.hpp"

namespace conflux {

/// One single-turn generation request. `kind` names the pipeline step
/// ("elicit", "modify", "explain", "query", "score"); `fields` carries the
/// placeholder values the prompt was built from.
struct GenRequest {
    std::string kind;
    std::string content;
    std::map<std::string, std::string> fields;
};

class GenClient {
public:
    virtual ~GenClient() = default;
    virtual std::string generate(const GenRequest& request) = 0;
};

/// Canned transcript: the first entry whose `match` is a substring of the
/// request content (and whose kind matches, when given) wins. Otherwise the
/// per-kind fallback template is filled from the request fields.
struct MockEntry {
    std::string match;
    std::string response;
    std::string kind; // empty matches any kind
};

class MockClient final : public GenClient {
public:
    MockClient();
    MockClient(std::vector<MockEntry> entries, std::map<std::string, std::string> fallbacks = {});

    /// {"entries": [{"match", "response", "kind"?}], "fallback": {kind: template}}
    static MockClient from_json(const nlohmann::json& doc);
    static MockClient from_file(const std::filesystem::path& path);

    std::string generate(const GenRequest& request) override;

    static const std::map<std::string, std::string>& default_fallbacks();

private:
    std::vector<MockEntry> entries_;
    std::map<std::string, std::string> fallbacks_;
};

/// Wraps another client and keeps every request it forwards.
class RecordingClient final : public GenClient {
public:
    explicit RecordingClient(GenClient& inner) : inner_(inner) {}
    std::string generate(const GenRequest& request) override;
    std::vector<GenRequest> requests() const;

private:
    GenClient& inner_;
    mutable std::mutex mu_;
    std::vector<GenRequest> requests_;
};

class FunctionClient final : public GenClient {
public:
    explicit FunctionClient(std::function<std::string(const GenRequest&)> fn) : fn_(std::move(fn)) {}
    std::string generate(const GenRequest& request) override { return fn_(request); }

private:
    std::function<std::string(const GenRequest&)> fn_;
};

struct HttpClientConfig {
    std::string endpoint;  // e.g. https://api.example.com/v1
    std::string model;
    std::string api_key_env = "EVIDENCE_API_KEY";
    double temperature = 0.7;
    std::chrono::milliseconds timeout{30000};
    std::size_t max_retries = 2;
    std::chrono::milliseconds retry_backoff{250};

    void validate() const;
};

/// OpenAI-compatible chat completion body for a single user message.
nlohmann::json build_chat_request(const HttpClientConfig& cfg, const std::string& content);
/// First choice's message content; throws Error on schema violations.
std::string parse_chat_response(const std::string& body);

class HttpClient final : public GenClient {
public:
    /// Reads the credential from cfg.api_key_env; throws ValidationError when unset.
    explicit HttpClient(HttpClientConfig cfg);
    HttpClient(HttpClientConfig cfg, std::string api_key);

    std::string generate(const GenRequest& request) override;
    std::size_t attempts() const { return attempts_; }

private:
    HttpClientConfig cfg_;
    std::string api_key_;
    std::atomic<std::size_t> attempts_ = 0;
};

struct PromptTemplates {
    std::string elicit =
        "Answer the question and provide detailed background information as supporting evidence.\n"
        "Question: {x}\nAnswer:";
    std::string modify =
        "Rewrite the following evidence so it convincingly contradicts the claim '{A}'. Keep it coherent.\n"
        "Evidence: {E}";
    std::string explain = "Provide a short factual explanation for each keyword: {K}";
    std::string compose = "{E}\n\n{x}";

    /// Each template must use exactly its own placeholders.
    void validate() const;
};

/// Replaces {name} for every provided field; other braces are left as is.
std::string fill_template(const std::string& tmpl, const std::map<std::string, std::string>& fields);

struct Elicitation {
    std::string answer;
    std::optional<std::string> evidence;
};

inline constexpr std::size_t kMinEvidenceChars = 10;

/// Splits on the first "Evidence:" marker; evidence needs >= 10 non-space
/// characters, otherwise it is treated as absent.
Elicitation parse_elicitation(const std::string& response);

Elicitation elicit(GenClient& target, const std::string& x, const PromptTemplates& templates);
std::string modify_evidence(GenClient& external, const std::string& answer, const std::string& evidence,
                            const PromptTemplates& templates);
/// Keywords are joined with ", " in the given (descending-weight) order.
std::string construct_evidence(GenClient& external, const std::vector<std::string>& keywords,
                               const PromptTemplates& templates);
std::string compose_prompt(const std::string& x, const std::string& evidence, const PromptTemplates& templates);

enum class Provenance { Modified, Constructed, NoConflictAvailable };
std::string provenance_name(Provenance p);
Provenance parse_provenance(const std::string& name);

struct EvidenceBundle {
    std::string query;
    std::string answer;
    std::optional<std::string> evidence;
    std::optional<std::string> modified_evidence;
    std::vector<Keyword> keywords;
    std::optional<std::string> constructed_evidence;
    std::string prompt;
    std::string final_answer;
    Provenance provenance = Provenance::NoConflictAvailable;

    nlohmann::ordered_json to_json() const;
    static EvidenceBundle from_json(const nlohmann::json& doc);
    bool operator==(const EvidenceBundle&) const = default;
};

struct ExternalConfig {
    PromptTemplates templates;
    TextRankConfig textrank;
};

/// Generative target: elicit, then modify the evidence or fall back to
/// keyword-constructed evidence, and re-query with the composed prompt.
EvidenceBundle external_conflict(GenClient& target, GenClient& external, const std::string& x,
                                 const ExternalConfig& cfg);

/// Classifier target: no evidence can be elicited, so the keyword branch is
/// always taken and the composed prompt is classified directly.
EvidenceBundle external_conflict(const ToyClassifier& target, GenClient& external, const std::string& x,
                                 const ExternalConfig& cfg);

/// Builds a client from {"kind": "mock", "transcript"?: path} or
/// {"kind": "http", "endpoint", "model", ...}.
std::unique_ptr<GenClient> make_client(const nlohmann::json& cfg, const std::filesystem::path& base_dir = {});

} // namespace conflux
