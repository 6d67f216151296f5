// Copyright 2026 The Conflux Authors
// SPDX-License-Identifier: Apache-2.0

#include <atomic>
#include <cstdlib>
#include <thread>

#include <gtest/gtest.h>
#include <httplib.h>

#include "conflux/errors.hpp"
#include "conflux/evidence.hpp"
#include "conflux/model.hpp"

using namespace conflux;

namespace {

MockClient target_with_evidence() {
    return MockClient({{"great plot", "Answer: positive\nEvidence: the words praise the plot", "elicit"},
                       {"great plot", "Answer: negative", "query"}});
}

// A local chat-completion endpoint. Fails the first `failures` requests
// with HTTP 503.
class FakeServer {
public:
    explicit FakeServer(int failures = 0) : failures_(failures) {
        server_.Post("/v1/chat/completions", [this](const httplib::Request& req, httplib::Response& res) {
            last_body = req.body;
            last_auth = req.get_header_value("Authorization");
            if (hits_++ < failures_) {
                res.status = 503;
                return;
            }
            const auto body = nlohmann::json::parse(req.body);
            const std::string content = body["messages"][0]["content"];
            res.set_content(nlohmann::json{{"choices", {{{"message", {{"role", "assistant"}, {"content", "echo:" + content}}}}}}}.dump(),
                            "application/json");
        });
        port_ = server_.bind_to_any_port("127.0.0.1");
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
    }
    ~FakeServer() {
        server_.stop();
        thread_.join();
    }
    std::string endpoint() const { return "http://127.0.0.1:" + std::to_string(port_) + "/v1"; }
    int hits() const { return hits_; }

    std::string last_body;
    std::string last_auth;

private:
    httplib::Server server_;
    std::thread thread_;
    int port_ = 0;
    int failures_ = 0;
    std::atomic<int> hits_ = 0;
};

HttpClientConfig http_cfg(const std::string& endpoint) {
    HttpClientConfig c;
    c.endpoint = endpoint;
    c.model = "test-model";
    c.retry_backoff = std::chrono::milliseconds(1);
    c.timeout = std::chrono::milliseconds(2000);
    return c;
}

} // namespace

TEST(Elicit, ParsesAnswerAndEvidence) {
    auto target = target_with_evidence();
    const auto e = elicit(target, "a great plot", PromptTemplates{});
    EXPECT_EQ(e.answer, "positive");
    ASSERT_TRUE(e.evidence.has_value());
    EXPECT_EQ(*e.evidence, "the words praise the plot");
}

TEST(Elicit, AbsenceRules) {
    EXPECT_FALSE(parse_elicitation("Answer: negative").evidence.has_value());
    EXPECT_EQ(parse_elicitation("Answer: negative").answer, "negative");
    EXPECT_FALSE(parse_elicitation("Answer: negative\nEvidence: abc").evidence.has_value());
    EXPECT_FALSE(parse_elicitation("Answer: x\nEvidence: a b c d e f g h i").evidence.has_value()); // 9 chars
    EXPECT_TRUE(parse_elicitation("Answer: x\nEvidence: a b c d e f g h i j").evidence.has_value());
    EXPECT_EQ(parse_elicitation("free text reply").answer, "free text reply");
}

TEST(Modify, FallbackAndCanned) {
    MockClient mock;
    EXPECT_EQ(modify_evidence(mock, "positive", "praises the plot", PromptTemplates{}),
              "Contrary to the claim 'positive': praises the plot");
    MockClient canned(std::vector<MockEntry>{{"praises the plot", "The plot is widely panned.", ""}});
    EXPECT_EQ(modify_evidence(canned, "positive", "praises the plot", PromptTemplates{}), "The plot is widely panned.");
    EXPECT_THROW(modify_evidence(mock, "positive", "", PromptTemplates{}), ValidationError);
    FunctionClient empty([](const GenRequest&) { return std::string("  "); });
    EXPECT_THROW(modify_evidence(empty, "positive", "praises", PromptTemplates{}), Error);
}

TEST(Construct, KeywordsInRankOrder) {
    MockClient inner(std::vector<MockEntry>{{"movie, terrible", "A movie can be terrible.", ""}});
    RecordingClient rec(inner);
    EXPECT_EQ(construct_evidence(rec, {"movie", "terrible"}, PromptTemplates{}), "A movie can be terrible.");
    EXPECT_THROW(construct_evidence(rec, {}, PromptTemplates{}), ValidationError);

    // Path-graph keywords from TextRank feed the explain prompt in weight order.
    TextRankConfig tr;
    tr.stopwords.clear();
    tr.eta = 0.0;
    tr.window = 1;
    const auto kws = extract_keywords("aa bb cc", tr);
    std::vector<std::string> tokens;
    for (const auto& k : kws) tokens.push_back(k.token);
    MockClient plain;
    RecordingClient rec2(plain);
    construct_evidence(rec2, tokens, PromptTemplates{});
    EXPECT_EQ(rec2.requests().at(0).fields.at("K"), "bb, aa, cc");
    EXPECT_NE(rec2.requests().at(0).content.find("bb, aa, cc"), std::string::npos);
}

TEST(Compose, Templates) {
    EXPECT_EQ(compose_prompt("q", "e", PromptTemplates{}), "e\n\nq");
    PromptTemplates custom;
    custom.compose = "{x}\n[ctx]{E}";
    EXPECT_EQ(compose_prompt("q", "e", custom), "q\n[ctx]e");
    EXPECT_THROW(compose_prompt("", "e", PromptTemplates{}), ValidationError);
}

TEST(Templates, Validation) {
    EXPECT_NO_THROW(PromptTemplates{}.validate());
    PromptTemplates t;
    t.compose = "{E}";
    EXPECT_THROW(t.validate(), ValidationError);
    t = {};
    t.explain = "{K} {x}";
    EXPECT_THROW(t.validate(), ValidationError);
    EXPECT_EQ(fill_template("{a}{b}{c}", {{"a", "1"}, {"c", "3"}}), "1{b}3");
}

TEST(ExternalConflict, GenerativeTargetTakesModifiedBranch) {
    auto target = target_with_evidence();
    MockClient external;
    const auto b = external_conflict(target, external, "a great plot", ExternalConfig{});
    EXPECT_EQ(b.provenance, Provenance::Modified);
    ASSERT_TRUE(b.modified_evidence.has_value());
    EXPECT_NE(b.prompt.find(*b.modified_evidence), std::string::npos);
    EXPECT_NE(b.prompt.find("a great plot"), std::string::npos);
    EXPECT_FALSE(b.constructed_evidence.has_value());
    EXPECT_EQ(b.final_answer, "negative");
}

TEST(ExternalConflict, ClassifierTargetTakesKeywordBranch) {
    const auto model = make_toy_model({"positive", "negative"}, 64);
    const ToyClassifier cls(model);
    MockClient external;
    const auto b = external_conflict(cls, external, "brilliant acting and moving score", ExternalConfig{});
    EXPECT_EQ(b.provenance, Provenance::Constructed);
    EXPECT_FALSE(b.evidence.has_value());
    ASSERT_TRUE(b.constructed_evidence.has_value());
    EXPECT_TRUE(b.constructed_evidence->starts_with("Keywords: "));
    EXPECT_TRUE(b.prompt.ends_with("brilliant acting and moving score"));
}

TEST(ExternalConflict, NoKeywordsMeansNoConflict) {
    const ToyClassifier cls(make_toy_model({"positive", "negative"}, 64));
    MockClient external;
    const auto b = external_conflict(cls, external, "the", ExternalConfig{});
    EXPECT_EQ(b.provenance, Provenance::NoConflictAvailable);
    EXPECT_EQ(b.final_answer, b.answer);
    EXPECT_EQ(b.prompt, "the");
}

TEST(ExternalConflict, SnapshotIsStableAndRoundTrips) {
    auto run = [] {
        auto target = target_with_evidence();
        MockClient external;
        return external_conflict(target, external, "a great plot", ExternalConfig{}).to_json().dump(2);
    };
    const auto first = run();
    EXPECT_EQ(first, run());
    const auto bundle = EvidenceBundle::from_json(nlohmann::json::parse(first));
    EXPECT_EQ(bundle.to_json().dump(2), first);
    EXPECT_EQ(first,
              R"({
  "query": "a great plot",
  "answer": "positive",
  "evidence": "the words praise the plot",
  "modified_evidence": "Contrary to the claim 'positive': the words praise the plot",
  "keywords": [],
  "constructed_evidence": null,
  "prompt": "Contrary to the claim 'positive': the words praise the plot\n\na great plot",
  "final_answer": "negative",
  "provenance": "modified"
})");
}

TEST(MockClient, LoadsTranscriptJson) {
    const auto doc = nlohmann::json::parse(R"({"entries":[{"match":"hello","response":"hi"}],
                                               "fallback":{"explain":"K={K}"}})");
    auto mock = MockClient::from_json(doc);
    EXPECT_EQ(mock.generate({"elicit", "say hello", {}}), "hi");
    EXPECT_EQ(mock.generate({"explain", "x", {{"K", "aa, bb"}}}), "K=aa, bb");
    EXPECT_EQ(mock.generate({"score", "x", {{"z", "Yes"}, {"y", "yes "}}}), "0");
    EXPECT_THROW(MockClient::from_json(nlohmann::json::parse(R"({"entries":[{"match":1}]})")), ValidationError);
}

TEST(Http, RequestSchema) {
    const auto req = build_chat_request(http_cfg("http://x/v1"), "hello");
    EXPECT_EQ(req["model"], "test-model");
    EXPECT_EQ(req["messages"][0]["role"], "user");
    EXPECT_EQ(req["messages"][0]["content"], "hello");
    EXPECT_DOUBLE_EQ(req["temperature"].get<double>(), 0.7);
}

TEST(Http, ResponseParsingFixtures) {
    EXPECT_EQ(parse_chat_response(R"({"id":"c1","object":"chat.completion","choices":[{"index":0,
        "message":{"role":"assistant","content":"Answer: yes"},"finish_reason":"stop"}]})"),
              "Answer: yes");
    EXPECT_THROW(parse_chat_response(R"({"choices":[]})"), Error);
    EXPECT_THROW(parse_chat_response(R"({"error":{"message":"bad key"}})"), Error);
    EXPECT_THROW(parse_chat_response("not json"), Error);
}

TEST(Http, ConfigValidation) {
    EXPECT_THROW(http_cfg("").validate(), ValidationError);
    EXPECT_THROW(http_cfg("ftp://x").validate(), ValidationError);
    ::unsetenv("CONFLUX_TEST_MISSING_KEY");
    auto c = http_cfg("http://127.0.0.1:1/v1");
    c.api_key_env = "CONFLUX_TEST_MISSING_KEY";
    EXPECT_THROW(HttpClient{c}, ValidationError);
}

TEST(Http, TalksToLocalServer) {
    FakeServer server;
    ::setenv("CONFLUX_TEST_KEY", "sk-test", 1);
    auto c = http_cfg(server.endpoint());
    c.api_key_env = "CONFLUX_TEST_KEY";
    HttpClient client(c);
    EXPECT_EQ(client.generate({"elicit", "ping", {}}), "echo:ping");
    EXPECT_EQ(server.last_auth, "Bearer sk-test");
    EXPECT_EQ(nlohmann::json::parse(server.last_body), build_chat_request(c, "ping"));
}

TEST(Http, RetriesAreBounded) {
    {
        FakeServer server(2);
        auto c = http_cfg(server.endpoint());
        c.max_retries = 2;
        HttpClient client(c, "k");
        EXPECT_EQ(client.generate({"elicit", "x", {}}), "echo:x");
        EXPECT_EQ(client.attempts(), 3u);
    }
    {
        FakeServer server(10);
        auto c = http_cfg(server.endpoint());
        c.max_retries = 1;
        HttpClient client(c, "k");
        EXPECT_THROW(client.generate({"elicit", "x", {}}), Error);
        EXPECT_EQ(server.hits(), 2);
    }
}
