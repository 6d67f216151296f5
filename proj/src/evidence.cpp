// Copyright 2026 The Conflux Authors
// SPDX-License-Identifier: Apache-2.0

#include "conflux/evidence.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <regex>
#include <sstream>

#include <fmt/core.h>

#include "conflux/errors.hpp"

namespace conflux {

namespace {

std::string trim(std::string_view s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return std::string(s.substr(b, e - b));
}

std::string lower(std::string s) {
    for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return s;
}

std::string join(const std::vector<std::string>& items, std::string_view sep) {
    std::string out;
    for (std::size_t i = 0; i < items.size(); ++i) {
        if (i) out += sep;
        out += items[i];
    }
    return out;
}

} // namespace

MockClient::MockClient() : fallbacks_(default_fallbacks()) {}

MockClient::MockClient(std::vector<MockEntry> entries, std::map<std::string, std::string> fallbacks)
    : entries_(std::move(entries)), fallbacks_(default_fallbacks()) {
    for (auto& [k, v] : fallbacks) fallbacks_[k] = std::move(v);
}

const std::map<std::string, std::string>& MockClient::default_fallbacks() {
    static const std::map<std::string, std::string> fb = {
        {"elicit", "Answer: unknown"},
        {"query", "Answer: unknown"},
        {"modify", "Contrary to the claim '{A}': {E}"},
        {"explain", "Keywords: {K}."},
    };
    return fb;
}

MockClient MockClient::from_json(const nlohmann::json& doc) {
    if (!doc.is_object()) throw ValidationError("mock transcript must be a JSON object");
    std::vector<MockEntry> entries;
    std::map<std::string, std::string> fallbacks;
    try {
        if (doc.contains("entries")) {
            for (const auto& e : doc.at("entries")) {
                MockEntry entry;
                entry.match = e.at("match").get<std::string>();
                entry.response = e.at("response").get<std::string>();
                if (e.contains("kind")) entry.kind = e.at("kind").get<std::string>();
                entries.push_back(std::move(entry));
            }
        }
        if (doc.contains("fallback")) {
            for (const auto& [k, v] : doc.at("fallback").items()) fallbacks[k] = v.get<std::string>();
        }
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(fmt::format("malformed mock transcript: {}", e.what()));
    }
    return MockClient(std::move(entries), std::move(fallbacks));
}

MockClient MockClient::from_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError(fmt::format("cannot open mock transcript {}", path.string()));
    try {
        return from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::parse_error& e) {
        throw ValidationError(fmt::format("{}: {}", path.string(), e.what()));
    }
}

std::string MockClient::generate(const GenRequest& request) {
    for (const auto& e : entries_) {
        if (!e.kind.empty() && e.kind != request.kind) continue;
        if (request.content.find(e.match) != std::string::npos) return e.response;
    }
    if (const auto it = fallbacks_.find(request.kind); it != fallbacks_.end()) {
        return fill_template(it->second, request.fields);
    }
    if (request.kind == "score") {
        // Distance 0 for identical normalized labels, 1 otherwise.
        const auto z = request.fields.find("z");
        const auto y = request.fields.find("y");
        if (z == request.fields.end() || y == request.fields.end()) return "1";
        return lower(trim(z->second)) == lower(trim(y->second)) ? "0" : "1";
    }
    throw Error(fmt::format("mock client has no response for a '{}' request", request.kind));
}

std::string RecordingClient::generate(const GenRequest& request) {
    {
        std::lock_guard lock(mu_);
        requests_.push_back(request);
    }
    return inner_.generate(request);
}

std::vector<GenRequest> RecordingClient::requests() const {
    std::lock_guard lock(mu_);
    return requests_;
}

std::string fill_template(const std::string& tmpl, const std::map<std::string, std::string>& fields) {
    std::string out;
    out.reserve(tmpl.size());
    std::size_t i = 0;
    while (i < tmpl.size()) {
        if (tmpl[i] == '{') {
            const auto close = tmpl.find('}', i + 1);
            if (close != std::string::npos) {
                const auto it = fields.find(tmpl.substr(i + 1, close - i - 1));
                if (it != fields.end()) {
                    out += it->second;
                    i = close + 1;
                    continue;
                }
            }
        }
        out.push_back(tmpl[i++]);
    }
    return out;
}

void PromptTemplates::validate() const {
    static const std::regex placeholder(R"(\{(x|A|E|K)\})");
    auto check = [](const std::string& name, const std::string& tmpl, std::set<std::string> required) {
        std::set<std::string> seen;
        for (auto it = std::sregex_iterator(tmpl.begin(), tmpl.end(), placeholder); it != std::sregex_iterator(); ++it) {
            seen.insert((*it)[1].str());
        }
        if (seen != required) {
            throw ValidationError(fmt::format("template '{}' must use exactly the placeholders {{{}}}", name,
                                              join({required.begin(), required.end()}, "}, {")));
        }
    };
    check("elicit", elicit, {"x"});
    check("modify", modify, {"A", "E"});
    check("explain", explain, {"K"});
    check("compose", compose, {"E", "x"});
}

Elicitation parse_elicitation(const std::string& response) {
    static constexpr std::string_view kMarker = "Evidence:";
    Elicitation out;
    const auto pos = response.find(kMarker);
    std::string head = pos == std::string::npos ? response : response.substr(0, pos);
    head = trim(head);
    if (head.starts_with("Answer:")) head = trim(std::string_view(head).substr(7));
    out.answer = head;
    if (pos != std::string::npos) {
        std::string body = trim(std::string_view(response).substr(pos + kMarker.size()));
        const auto visible = std::count_if(body.begin(), body.end(),
                                           [](char c) { return !std::isspace(static_cast<unsigned char>(c)); });
        if (static_cast<std::size_t>(visible) >= kMinEvidenceChars) out.evidence = std::move(body);
    }
    if (pos == std::string::npos && out.answer.empty()) out.answer = trim(response);
    return out;
}

Elicitation elicit(GenClient& target, const std::string& x, const PromptTemplates& templates) {
    GenRequest req{"elicit", fill_template(templates.elicit, {{"x", x}}), {{"x", x}}};
    return parse_elicitation(target.generate(req));
}

std::string modify_evidence(GenClient& external, const std::string& answer, const std::string& evidence,
                            const PromptTemplates& templates) {
    if (trim(evidence).empty()) throw ValidationError("modify_evidence needs non-empty evidence");
    std::map<std::string, std::string> fields{{"A", answer}, {"E", evidence}};
    auto out = trim(external.generate({"modify", fill_template(templates.modify, fields), fields}));
    if (out.empty()) throw Error("external model returned empty modified evidence");
    return out;
}

std::string construct_evidence(GenClient& external, const std::vector<std::string>& keywords,
                               const PromptTemplates& templates) {
    if (keywords.empty()) throw ValidationError("no keywords");
    std::map<std::string, std::string> fields{{"K", join(keywords, ", ")}};
    auto out = trim(external.generate({"explain", fill_template(templates.explain, fields), fields}));
    if (out.empty()) throw Error("external model returned an empty explanation");
    return out;
}

std::string compose_prompt(const std::string& x, const std::string& evidence, const PromptTemplates& templates) {
    if (x.empty() || evidence.empty()) throw ValidationError("compose_prompt needs a query and evidence");
    auto out = fill_template(templates.compose, {{"x", x}, {"E", evidence}});
    if (out.find(x) == std::string::npos) throw ValidationError("composed prompt lost the query");
    return out;
}

std::string provenance_name(Provenance p) {
    switch (p) {
    case Provenance::Modified: return "modified";
    case Provenance::Constructed: return "constructed";
    case Provenance::NoConflictAvailable: return "no-conflict-available";
    }
    return "?";
}

Provenance parse_provenance(const std::string& name) {
    if (name == "modified") return Provenance::Modified;
    if (name == "constructed") return Provenance::Constructed;
    if (name == "no-conflict-available") return Provenance::NoConflictAvailable;
    throw ValidationError(fmt::format("unknown provenance '{}'", name));
}

nlohmann::ordered_json EvidenceBundle::to_json() const {
    nlohmann::ordered_json j;
    auto opt = [](const std::optional<std::string>& v) -> nlohmann::ordered_json {
        return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
    };
    j["query"] = query;
    j["answer"] = answer;
    j["evidence"] = opt(evidence);
    j["modified_evidence"] = opt(modified_evidence);
    auto kw = nlohmann::ordered_json::array();
    for (const auto& k : keywords) kw.push_back({{"token", k.token}, {"weight", k.weight}});
    j["keywords"] = kw;
    j["constructed_evidence"] = opt(constructed_evidence);
    j["prompt"] = prompt;
    j["final_answer"] = final_answer;
    j["provenance"] = provenance_name(provenance);
    return j;
}

EvidenceBundle EvidenceBundle::from_json(const nlohmann::json& doc) {
    EvidenceBundle b;
    auto opt = [&](const char* key) -> std::optional<std::string> {
        if (!doc.contains(key) || doc.at(key).is_null()) return std::nullopt;
        return doc.at(key).get<std::string>();
    };
    try {
        b.query = doc.at("query").get<std::string>();
        b.answer = doc.at("answer").get<std::string>();
        b.evidence = opt("evidence");
        b.modified_evidence = opt("modified_evidence");
        for (const auto& k : doc.at("keywords")) b.keywords.push_back({k.at("token"), k.at("weight")});
        b.constructed_evidence = opt("constructed_evidence");
        b.prompt = doc.at("prompt").get<std::string>();
        b.final_answer = doc.at("final_answer").get<std::string>();
        b.provenance = parse_provenance(doc.at("provenance").get<std::string>());
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(fmt::format("malformed evidence bundle: {}", e.what()));
    }
    return b;
}

namespace {

std::vector<std::string> tokens_of(const std::vector<Keyword>& kws) {
    std::vector<std::string> out;
    for (const auto& k : kws) out.push_back(k.token);
    return out;
}

// Keyword branch shared by both target kinds. Returns false when no
// keyword clears the threshold.
bool keyword_branch(EvidenceBundle& b, GenClient& external, const ExternalConfig& cfg) {
    b.keywords = extract_keywords(b.query, cfg.textrank);
    if (b.keywords.empty()) {
        b.provenance = Provenance::NoConflictAvailable;
        b.prompt = b.query;
        return false;
    }
    b.constructed_evidence = construct_evidence(external, tokens_of(b.keywords), cfg.templates);
    b.prompt = compose_prompt(b.query, *b.constructed_evidence, cfg.templates);
    b.provenance = Provenance::Constructed;
    return true;
}

} // namespace

EvidenceBundle external_conflict(GenClient& target, GenClient& external, const std::string& x,
                                 const ExternalConfig& cfg) {
    cfg.templates.validate();
    EvidenceBundle b;
    b.query = x;
    const auto first = elicit(target, x, cfg.templates);
    b.answer = first.answer;
    b.evidence = first.evidence;
    if (b.evidence) {
        b.modified_evidence = modify_evidence(external, b.answer, *b.evidence, cfg.templates);
        b.prompt = compose_prompt(x, *b.modified_evidence, cfg.templates);
        b.provenance = Provenance::Modified;
    } else if (!keyword_branch(b, external, cfg)) {
        b.final_answer = b.answer;
        return b;
    }
    b.final_answer = parse_elicitation(target.generate({"query", b.prompt, {{"x", b.prompt}}})).answer;
    return b;
}

EvidenceBundle external_conflict(const ToyClassifier& target, GenClient& external, const std::string& x,
                                 const ExternalConfig& cfg) {
    cfg.templates.validate();
    EvidenceBundle b;
    b.query = x;
    b.answer = target.predict(x).label_name;
    if (!keyword_branch(b, external, cfg)) {
        b.final_answer = b.answer;
        return b;
    }
    b.final_answer = target.predict(b.prompt).label_name;
    return b;
}

std::unique_ptr<GenClient> make_client(const nlohmann::json& cfg, const std::filesystem::path& base_dir) {
    const std::string kind = cfg.value("kind", "mock");
    if (kind == "mock") {
        if (cfg.contains("transcript") && !cfg.at("transcript").is_null()) {
            std::filesystem::path p = cfg.at("transcript").get<std::string>();
            if (p.is_relative() && !base_dir.empty()) p = base_dir / p;
            return std::make_unique<MockClient>(MockClient::from_file(p));
        }
        return std::make_unique<MockClient>();
    }
    if (kind == "http") {
        HttpClientConfig hc;
        try {
            hc.endpoint = cfg.at("endpoint").get<std::string>();
            hc.model = cfg.at("model").get<std::string>();
            hc.api_key_env = cfg.value("api_key_env", hc.api_key_env);
            hc.temperature = cfg.value("temperature", hc.temperature);
            hc.timeout = std::chrono::milliseconds(cfg.value("timeout_ms", static_cast<long long>(hc.timeout.count())));
            hc.max_retries = cfg.value("max_retries", hc.max_retries);
        } catch (const nlohmann::json::exception& e) {
            throw ValidationError(fmt::format("http client config: {}", e.what()));
        }
        return std::make_unique<HttpClient>(std::move(hc));
    }
    throw ValidationError(fmt::format("unknown client kind '{}'", kind));
}

} // namespace conflux
