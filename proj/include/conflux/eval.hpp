// Copyright 2026 The Conflux Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "conflux/dataset.hpp"
#include "conflux/evidence.hpp"

namespace conflux {

enum class JudgeMode { Exact, Similarity };
std::string judge_mode_name(JudgeMode mode);
JudgeMode parse_judge_mode(const std::string& name);

/// Trimmed, lowercased label.
std::string normalize_label(std::string_view label);

/// Membership test z in N(y). Exact compares normalized labels. Similarity
/// asks the scorer for a distance f(z, y) in [0, 1] and accepts when
/// f < epsilon.
struct Judge {
    JudgeMode mode = JudgeMode::Exact;
    double epsilon = 0.5;
    GenClient* scorer = nullptr; // required in similarity mode; not owned

    void validate() const;
    bool accepts(const std::string& output, const std::string& expected) const;
    std::string describe() const;
};

using Predictor = std::function<std::string(const std::string&)>;

struct Verdict {
    std::size_t index = 0; // position in the input set
    std::string output;
    std::string expected;
    bool hit = false;
    bool operator==(const Verdict&) const = default;
};

struct MetricResult {
    double rate = 0.0;
    std::size_t hits = 0;
    std::size_t n = 0;
    std::vector<Verdict> verdicts;
};

struct EvalOptions {
    std::size_t workers = 1;
};

/// Fraction of clean examples whose prediction is judged to match the label.
MetricResult cda(const Predictor& predictor, const LabeledSet& clean, const Judge& judge, EvalOptions opts = {});

struct AsrOptions {
    /// Drop examples whose original label already is the target.
    bool exclude_target_origin = true;
    /// When non-empty, every example must contain this token.
    std::string trigger;
    std::size_t workers = 1;
};

/// Fraction of triggered examples whose prediction is judged to be the target.
MetricResult asr(const Predictor& predictor, const LabeledSet& poisoned, const std::string& target,
                 const Judge& judge, AsrOptions opts = {});

struct EvalReport {
    std::string name;
    double cda = 0.0;
    double asr = 0.0;
    std::size_t n_clean = 0;
    std::size_t n_poisoned = 0;
    std::size_t cda_hits = 0;
    std::size_t asr_hits = 0;
    std::string judge;
    nlohmann::ordered_json config = nlohmann::ordered_json::object();
    std::vector<Verdict> clean_verdicts;
    std::vector<Verdict> poisoned_verdicts;

    bool operator==(const EvalReport&) const = default;
};

EvalReport make_report(std::string name, const MetricResult& clean, const MetricResult& poisoned, const Judge& judge,
                       nlohmann::ordered_json config);

/// Stable key order; cda and asr printed with four decimals.
std::string format_report(const EvalReport& report);
EvalReport parse_report(const std::string& text);
void emit_report(const EvalReport& report, const std::filesystem::path& path);
EvalReport read_report(const std::filesystem::path& path);

/// Two console lines, "CDA=0.9650" then "ASR=0.1000".
std::string report_summary(const EvalReport& report);

} // namespace conflux
