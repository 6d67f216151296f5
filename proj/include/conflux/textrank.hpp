// Copyright 2026 The Conflux Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace conflux {

const std::set<std::string>& default_stopwords();

struct TextRankConfig {
    double d = 0.85;
    std::size_t max_iterations = 100;
    double eps = 1e-6;
    double eta = 1.0;
    std::size_t window = 2;
    std::set<std::string> stopwords = default_stopwords();

    void validate() const; // throws ValidationError
};

/// Undirected co-occurrence graph. Nodes are sorted, so the result does not
/// depend on token order beyond which pairs co-occur.
struct WordGraph {
    std::vector<std::string> nodes;
    std::vector<std::vector<std::size_t>> neighbors; // ascending, symmetric
    std::vector<double> weights;

    std::size_t node_index(std::string_view token) const; // npos when absent
    bool has_edge(std::string_view u, std::string_view v) const;
    std::size_t edge_count() const;
    static constexpr std::size_t npos = static_cast<std::size_t>(-1);
};

struct RankResult {
    std::vector<double> weights;
    std::size_t iterations = 0;
    double residual = 0.0;
    bool converged = false;
};

struct Keyword {
    std::string token;
    double weight = 0.0;
    bool operator==(const Keyword&) const = default;
};

std::vector<std::string> tr_tokenize(std::string_view text, const TextRankConfig& cfg);

/// Edge between distinct tokens whose stream positions differ by <= window.
WordGraph build_graph(const std::vector<std::string>& tokens, std::size_t window);

/// Jacobi iteration of W_i = (1 - d) + d * sum_j W_j / L_j over neighbors j.
RankResult rank(const WordGraph& g, const TextRankConfig& cfg);

/// Tokens with weight strictly above eta, by descending weight then token.
std::vector<Keyword> extract_keywords(std::string_view text, const TextRankConfig& cfg);

/// Every node with its weight, same ordering as extract_keywords.
std::vector<Keyword> ranked_tokens(std::string_view text, const TextRankConfig& cfg);

} // namespace conflux
