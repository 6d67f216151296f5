// Copyright 2026 The Conflux Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <limits>
#include <numeric>
#include <random>

#include <gtest/gtest.h>

#include "conflux/errors.hpp"
#include "conflux/textrank.hpp"

using namespace conflux;

namespace {

TextRankConfig no_stopwords() {
    TextRankConfig c;
    c.stopwords.clear();
    return c;
}

// Random connected token stream over `nodes` distinct two-letter tokens.
std::vector<std::string> random_stream(std::mt19937& gen, std::size_t nodes) {
    std::vector<std::string> names;
    for (std::size_t i = 0; i < nodes; ++i) {
        names.push_back(std::string{static_cast<char>('a' + i / 26), static_cast<char>('a' + i % 26)});
    }
    std::shuffle(names.begin(), names.end(), gen);
    std::vector<std::string> stream = names; // every node appears, consecutive ones are linked
    std::uniform_int_distribution<std::size_t> pick(0, nodes - 1), extra(0, 2 * nodes);
    for (std::size_t k = extra(gen); k > 0; --k) stream.push_back(names[pick(gen)]);
    return stream;
}

} // namespace

TEST(Tokenize, DropsStopwordsAndShortTokens) {
    EXPECT_EQ(tr_tokenize("The movie was great", TextRankConfig{}), (std::vector<std::string>{"movie", "great"}));
    EXPECT_TRUE(tr_tokenize("", TextRankConfig{}).empty());
    EXPECT_TRUE(tr_tokenize("a b a", no_stopwords()).empty());
    EXPECT_EQ(tr_tokenize("aa bb aa", no_stopwords()), (std::vector<std::string>{"aa", "bb", "aa"}));
    EXPECT_EQ(tr_tokenize("Plot-TWIST!", no_stopwords()), (std::vector<std::string>{"plot", "twist"}));
    EXPECT_GE(default_stopwords().size(), 40u);
}

TEST(Graph, Construction) {
    const auto g = build_graph({"aa", "bb", "aa"}, 1);
    EXPECT_EQ(g.nodes, (std::vector<std::string>{"aa", "bb"}));
    EXPECT_EQ(g.edge_count(), 1u);
    EXPECT_TRUE(g.has_edge("aa", "bb"));
    EXPECT_EQ(g.weights, (std::vector<double>{1.0, 1.0}));

    const auto single = build_graph({"aa", "aa"}, 2);
    EXPECT_EQ(single.nodes.size(), 1u);
    EXPECT_EQ(single.edge_count(), 0u);

    const auto tri = build_graph({"aa", "bb", "cc"}, 2);
    EXPECT_EQ(tri.edge_count(), 3u);
    EXPECT_TRUE(tri.has_edge("aa", "cc"));
    EXPECT_FALSE(build_graph({"aa", "bb", "cc"}, 1).has_edge("aa", "cc"));
    EXPECT_THROW(build_graph({"aa"}, 0), ValidationError);
}

TEST(Rank, TwoNodeFixedPoint) {
    const auto r = rank(build_graph({"aa", "bb"}, 1), TextRankConfig{});
    EXPECT_NEAR(r.weights[0], 1.0, 1e-4);
    EXPECT_NEAR(r.weights[1], 1.0, 1e-4);
}

TEST(Rank, PathGraphMatchesLinearSystem) {
    // x = (1-d) + d*y/2 ; y = (1-d) + 2*d*x, solved by elimination.
    const double d = 0.85;
    const double x = ((1 - d) + d * (1 - d) / 2) / (1 - d * d);
    const double y = (1 - d) + 2 * d * x;
    const auto g = build_graph({"aa", "bb", "cc"}, 1);
    const auto r = rank(g, TextRankConfig{});
    EXPECT_TRUE(r.converged);
    EXPECT_NEAR(x, 0.77027, 1e-5);
    EXPECT_NEAR(y, 1.45946, 1e-5);
    EXPECT_NEAR(r.weights[g.node_index("aa")], x, 1e-3);
    EXPECT_NEAR(r.weights[g.node_index("bb")], y, 1e-3);
    EXPECT_NEAR(r.weights[g.node_index("cc")], x, 1e-3);
    EXPECT_GT(r.weights[g.node_index("bb")], r.weights[g.node_index("aa")]);
}

TEST(Rank, IsolatedNode) {
    const auto r = rank(build_graph({"aa"}, 2), TextRankConfig{});
    EXPECT_NEAR(r.weights[0], 0.15, 1e-9);
}

TEST(Rank, MassConservationAndConvergence) {
    std::mt19937 gen(17);
    std::uniform_int_distribution<std::size_t> sizes(2, 50), windows(1, 3);
    for (int trial = 0; trial < 50; ++trial) {
        const auto g = build_graph(random_stream(gen, sizes(gen)), windows(gen));
        for (const auto& adj : g.neighbors) ASSERT_FALSE(adj.empty());
        const auto r = rank(g, TextRankConfig{});
        EXPECT_TRUE(r.converged);
        EXPECT_LE(r.iterations, 100u);
        EXPECT_LT(r.residual, 1e-6);
        const double mass = std::accumulate(r.weights.begin(), r.weights.end(), 0.0);
        EXPECT_NEAR(mass, static_cast<double>(g.nodes.size()), 1e-3);
    }
}

TEST(Rank, IndependentOfTokenOrderBetweenEquivalentStreams) {
    // The same undirected edge set reached from two different streams.
    const auto g1 = build_graph({"aa", "bb", "cc", "dd"}, 1);
    const auto g2 = build_graph({"dd", "cc", "bb", "aa"}, 1);
    EXPECT_EQ(g1.nodes, g2.nodes);
    EXPECT_EQ(g1.neighbors, g2.neighbors);
    EXPECT_EQ(rank(g1, TextRankConfig{}).weights, rank(g2, TextRankConfig{}).weights);
}

TEST(Keywords, PathGraph) {
    auto cfg = no_stopwords();
    cfg.window = 1;
    const auto k = extract_keywords("aa bb cc", cfg);
    ASSERT_EQ(k.size(), 1u);
    EXPECT_EQ(k[0].token, "bb");
    EXPECT_NEAR(k[0].weight, 1.459, 1e-3);
}

TEST(Keywords, ThresholdIsStrict) {
    auto cfg = no_stopwords();
    EXPECT_TRUE(extract_keywords("aa bb", cfg).empty());
    cfg.eta = std::numeric_limits<double>::max();
    EXPECT_TRUE(extract_keywords("aa bb cc dd ee", cfg).empty());
    EXPECT_TRUE(extract_keywords("", TextRankConfig{}).empty());
}

TEST(Keywords, OrderedByWeightThenToken) {
    auto cfg = no_stopwords();
    cfg.eta = 0.0;
    const auto k = extract_keywords("aa bb cc dd", cfg);
    ASSERT_EQ(k.size(), 4u);
    for (std::size_t i = 1; i < k.size(); ++i) {
        EXPECT_TRUE(k[i - 1].weight > k[i].weight || (k[i - 1].weight == k[i].weight && k[i - 1].token < k[i].token));
    }
}

TEST(Config, Validation) {
    TextRankConfig c;
    EXPECT_NO_THROW(c.validate());
    c.d = 1.0;
    EXPECT_THROW(c.validate(), ValidationError);
    c = {};
    c.max_iterations = 0;
    EXPECT_THROW(c.validate(), ValidationError);
    c = {};
    c.eps = 0;
    EXPECT_THROW(c.validate(), ValidationError);
}
