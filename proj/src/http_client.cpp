// Copyright 2026 The Conflux Authors
// SPDX-License-Identifier: Apache-2.0

#include <cstdlib>
#include <thread>

#include <fmt/core.h>
#include <httplib.h>

#include "conflux/errors.hpp"
#include "conflux/evidence.hpp"

namespace conflux {

void HttpClientConfig::validate() const {
    if (endpoint.empty()) throw ValidationError("http client needs an endpoint");
    if (!endpoint.starts_with("http://") && !endpoint.starts_with("https://")) {
        throw ValidationError(fmt::format("endpoint '{}' must start with http:// or https://", endpoint));
    }
    if (model.empty()) throw ValidationError("http client needs a model name");
    if (api_key_env.empty()) throw ValidationError("http client needs a credential variable name");
    if (!(temperature >= 0.0 && temperature <= 2.0)) throw ValidationError("temperature must be in [0,2]");
    if (timeout.count() <= 0) throw ValidationError("timeout must be positive");
}

nlohmann::json build_chat_request(const HttpClientConfig& cfg, const std::string& content) {
    return {
        {"model", cfg.model},
        {"messages", nlohmann::json::array({{{"role", "user"}, {"content", content}}})},
        {"temperature", cfg.temperature},
    };
}

std::string parse_chat_response(const std::string& body) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(body);
    } catch (const nlohmann::json::parse_error&) {
        throw Error("chat completion response is not JSON");
    }
    if (doc.contains("error")) {
        throw Error(fmt::format("chat completion error: {}", doc.at("error").dump()));
    }
    try {
        const auto& choices = doc.at("choices");
        if (!choices.is_array() || choices.empty()) throw Error("chat completion response has no choices");
        return choices.at(0).at("message").at("content").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
        throw Error(fmt::format("chat completion response schema: {}", e.what()));
    }
}

namespace {

std::string read_key(const std::string& var) {
    const char* v = std::getenv(var.c_str());
    if (!v || !*v) throw ValidationError(fmt::format("environment variable {} is not set", var));
    return v;
}

// Splits "https://host:port/v1" into the scheme+authority and the path prefix.
std::pair<std::string, std::string> split_endpoint(const std::string& endpoint) {
    const auto scheme_end = endpoint.find("://");
    const auto path_start = endpoint.find('/', scheme_end + 3);
    if (path_start == std::string::npos) return {endpoint, ""};
    std::string path = endpoint.substr(path_start);
    while (!path.empty() && path.back() == '/') path.pop_back();
    return {endpoint.substr(0, path_start), path};
}

bool retryable(int status) { return status == 429 || status >= 500; }

} // namespace

HttpClient::HttpClient(HttpClientConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    api_key_ = read_key(cfg_.api_key_env);
}

HttpClient::HttpClient(HttpClientConfig cfg, std::string api_key) : cfg_(std::move(cfg)), api_key_(std::move(api_key)) {
    cfg_.validate();
}

std::string HttpClient::generate(const GenRequest& request) {
    const auto [host, prefix] = split_endpoint(cfg_.endpoint);
    httplib::Client client(host);
    const auto secs = std::chrono::duration_cast<std::chrono::seconds>(cfg_.timeout);
    const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(cfg_.timeout - secs);
    client.set_connection_timeout(secs.count(), usecs.count());
    client.set_read_timeout(secs.count(), usecs.count());
    client.set_write_timeout(secs.count(), usecs.count());
    const httplib::Headers headers{{"Authorization", "Bearer " + api_key_}};
    const std::string body = build_chat_request(cfg_, request.content).dump();

    std::string last_error;
    std::size_t tries = 0;
    for (std::size_t attempt = 0; attempt <= cfg_.max_retries; ++attempt) {
        if (attempt > 0) std::this_thread::sleep_for(cfg_.retry_backoff * (1 << (attempt - 1)));
        ++attempts_;
        ++tries;
        auto res = client.Post(prefix + "/chat/completions", headers, body, "application/json");
        if (!res) {
            last_error = httplib::to_string(res.error());
            continue;
        }
        if (res->status == 200) return parse_chat_response(res->body);
        last_error = fmt::format("HTTP {}", res->status);
        if (!retryable(res->status)) break;
    }
    throw Error(fmt::format("chat completion failed after {} attempt(s): {}", tries, last_error));
}

} // namespace conflux
