// Copyright 2026 The Conflux Authors
// SPDX-License-Identifier: Apache-2.0

#include "conflux/textrank.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

#include "conflux/errors.hpp"

namespace conflux {

const std::set<std::string>& default_stopwords() {
    static const std::set<std::string> words = {
        "a",    "about", "after", "all",   "also", "an",   "and",   "any",  "are",  "as",
        "at",   "be",    "been",  "but",   "by",   "can",  "could", "did",  "do",   "does",
        "for",  "from",  "had",   "has",   "have", "he",   "her",   "his",  "how",  "if",
        "in",   "into",  "is",    "it",    "its",  "more", "no",    "not",  "of",   "on",
        "or",   "our",   "she",   "so",    "than", "that", "the",   "their", "them", "then",
        "there", "these", "they", "this",  "to",   "was",  "we",    "were", "what", "when",
        "which", "who",  "will",  "with",  "would", "you", "your",
    };
    return words;
}

void TextRankConfig::validate() const {
    if (!(d > 0.0 && d < 1.0)) throw ValidationError("textrank damping d must be in (0,1)");
    if (max_iterations < 1) throw ValidationError("textrank max_iterations must be >= 1");
    if (!(eps > 0.0)) throw ValidationError("textrank eps must be > 0");
    if (window < 1) throw ValidationError("textrank window must be >= 1");
    if (std::isnan(eta)) throw ValidationError("textrank eta must be a number");
}

std::size_t WordGraph::node_index(std::string_view token) const {
    const auto it = std::lower_bound(nodes.begin(), nodes.end(), token);
    if (it == nodes.end() || *it != token) return npos;
    return static_cast<std::size_t>(it - nodes.begin());
}

bool WordGraph::has_edge(std::string_view u, std::string_view v) const {
    const auto i = node_index(u), j = node_index(v);
    if (i == npos || j == npos) return false;
    return std::binary_search(neighbors[i].begin(), neighbors[i].end(), j);
}

std::size_t WordGraph::edge_count() const {
    std::size_t n = 0;
    for (const auto& adj : neighbors) n += adj.size();
    return n / 2;
}

std::vector<std::string> tr_tokenize(std::string_view text, const TextRankConfig& cfg) {
    std::vector<std::string> out;
    std::string token;
    auto flush = [&] {
        if (token.size() > 1 && !cfg.stopwords.contains(token)) out.push_back(token);
        token.clear();
    };
    for (char ch : text) {
        const auto c = static_cast<unsigned char>(ch);
        if (c < 0x80 && std::isalnum(c)) {
            token.push_back(static_cast<char>(std::tolower(c)));
        } else {
            flush();
        }
    }
    flush();
    return out;
}

WordGraph build_graph(const std::vector<std::string>& tokens, std::size_t window) {
    if (window < 1) throw ValidationError("textrank window must be >= 1");
    WordGraph g;
    g.nodes = tokens;
    std::sort(g.nodes.begin(), g.nodes.end());
    g.nodes.erase(std::unique(g.nodes.begin(), g.nodes.end()), g.nodes.end());
    g.neighbors.resize(g.nodes.size());
    g.weights.assign(g.nodes.size(), 1.0);

    std::vector<std::size_t> ids;
    ids.reserve(tokens.size());
    for (const auto& t : tokens) ids.push_back(g.node_index(t));
    for (std::size_t i = 0; i < ids.size(); ++i) {
        for (std::size_t j = i + 1; j < ids.size() && j - i <= window; ++j) {
            if (ids[i] == ids[j]) continue;
            g.neighbors[ids[i]].push_back(ids[j]);
            g.neighbors[ids[j]].push_back(ids[i]);
        }
    }
    for (auto& adj : g.neighbors) {
        std::sort(adj.begin(), adj.end());
        adj.erase(std::unique(adj.begin(), adj.end()), adj.end());
    }
    return g;
}

RankResult rank(const WordGraph& g, const TextRankConfig& cfg) {
    cfg.validate();
    const std::size_t n = g.nodes.size();
    RankResult r;
    r.weights = g.weights;
    if (r.weights.size() != n) r.weights.assign(n, 1.0);
    std::vector<double> prev(n);
    for (std::size_t it = 0; it < cfg.max_iterations; ++it) {
        prev = r.weights;
        double residual = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            double sum = 0.0;
            for (std::size_t j : g.neighbors[i]) sum += prev[j] / static_cast<double>(g.neighbors[j].size());
            r.weights[i] = (1.0 - cfg.d) + cfg.d * sum;
            residual += std::abs(r.weights[i] - prev[i]);
        }
        r.iterations = it + 1;
        r.residual = residual;
        if (residual < cfg.eps) {
            r.converged = true;
            break;
        }
    }
    return r;
}

std::vector<Keyword> ranked_tokens(std::string_view text, const TextRankConfig& cfg) {
    cfg.validate();
    const auto g = build_graph(tr_tokenize(text, cfg), cfg.window);
    const auto r = rank(g, cfg);
    std::vector<Keyword> out;
    for (std::size_t i = 0; i < g.nodes.size(); ++i) out.push_back({g.nodes[i], r.weights[i]});
    std::stable_sort(out.begin(), out.end(), [](const Keyword& a, const Keyword& b) {
        if (a.weight != b.weight) return a.weight > b.weight;
        return a.token < b.token;
    });
    return out;
}

std::vector<Keyword> extract_keywords(std::string_view text, const TextRankConfig& cfg) {
    auto all = ranked_tokens(text, cfg);
    std::erase_if(all, [&](const Keyword& k) { return !(k.weight > cfg.eta); });
    return all;
}

} // namespace conflux
