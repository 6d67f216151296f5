// Copyright 2026 The Conflux Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "conflux/dataset.hpp"
#include "conflux/eval.hpp"
#include "conflux/merge.hpp"
#include "conflux/model.hpp"
#include "conflux/textrank.hpp"

namespace conflux {

/// Default configuration document. Every key is documented in the README.
nlohmann::ordered_json default_config();

/// Recursively overlays `patch` on `base`; unknown keys are rejected.
nlohmann::ordered_json merge_config(nlohmann::ordered_json base, const nlohmann::json& patch);

/// Applies "a.b.c=value". The value is parsed as JSON when possible and
/// kept as a string otherwise. The key must already exist.
void apply_override(nlohmann::ordered_json& cfg, const std::string& assignment);

/// "fnv1a64:<16 hex digits>" of the compact config dump.
std::string config_hash(const nlohmann::ordered_json& cfg);

TrainConfig train_config_from(const nlohmann::json& j, std::uint64_t seed);
MergeSpec merge_spec_from(const nlohmann::json& j);
TextRankConfig textrank_config_from(const nlohmann::json& j);
PromptTemplates templates_from(const nlohmann::json& j);
PoisonSpec poison_spec_from(const nlohmann::json& j, std::uint64_t seed);

/// Typed view of the configuration document, validated on construction.
struct PipelineConfig {
    nlohmann::ordered_json doc;
    std::filesystem::path base_dir; // relative paths resolve against this
    std::uint64_t seed = 0;

    std::filesystem::path report_dir;     // empty: reports are not written
    std::filesystem::path checkpoint_dir; // empty: checkpoints are not written
    std::optional<std::filesystem::path> train_corpus;
    std::optional<std::filesystem::path> heldout_corpus;

    CorpusVariant variant = CorpusVariant::Sentiment;
    std::size_t n_per_class = 500;
    std::size_t heldout_per_class = 200;

    PoisonSpec poison;
    TrainConfig backdoor_train;
    TrainConfig conflict_train;
    MergeSpec merge;
    std::vector<double> sweep;
    TextRankConfig textrank;
    PromptTemplates templates;
    nlohmann::json external_client;
    JudgeMode judge_mode = JudgeMode::Exact;
    double judge_epsilon = 0.5;
    nlohmann::json scorer_client;
    bool exclude_target_origin = true;
    std::size_t workers = 1;

    // Role-swap experiments.
    CorpusVariant role_swap_variant = CorpusVariant::Emotion;
    std::string role_swap_target = "joy";
    double role_swap_backdoor_rate = 1.0;
    TrainConfig role_swap_full;
    TrainConfig role_swap_conflict;

    // Adaptive attack.
    TrainConfig attacker_train;

    static PipelineConfig from_json(nlohmann::ordered_json doc, std::filesystem::path base_dir = {});
    static PipelineConfig load(const std::filesystem::path& path, const std::vector<std::string>& overrides = {},
                               std::optional<std::uint64_t> seed = std::nullopt);
    /// Hash of the document without output locations and worker counts,
    /// which do not affect results.
    std::string hash() const;
};

struct Corpora {
    LabeledSet train;
    LabeledSet heldout;
};

/// Generated or loaded train/held-out splits for the given variant.
Corpora load_corpora(const PipelineConfig& cfg, CorpusVariant variant);

struct SweepPoint {
    double t = 0.0;
    double cda = 0.0;
    double asr = 0.0;
};

struct DemoResult {
    std::map<std::string, EvalReport> reports; // backdoored, internal, external, combined
    std::vector<SweepPoint> sweep;
    Checkpoint backdoored;
    Checkpoint conflict;
    LoraAdapter adapter;
    Checkpoint merged;
};

/// Poison, train the backdoored model, train the LoRA conflict model on a
/// clean fraction, merge, and evaluate the four ablation arms. Throws
/// GateFailure when the backdoor does not take hold (ASR < 0.90).
DemoResult demo_backdoor(const PipelineConfig& cfg);

inline constexpr double kBackdoorGate = 0.90;

struct RoleSwapResult {
    EvalReport experiment1;
    EvalReport experiment2;
};
RoleSwapResult role_swap(const PipelineConfig& cfg);

struct AdaptiveResult {
    EvalReport backdoored;
    EvalReport adapted;   // attacker's subtraction, no defense
    EvalReport defended;  // internal conflict applied to the adapted model
};
AdaptiveResult adaptive(const PipelineConfig& cfg);

/// Evaluates one classifier checkpoint against clean/triggered held-out data.
EvalReport evaluate_model(const std::string& name, const Checkpoint& model, const LabeledSet& heldout,
                          const PipelineConfig& cfg, const std::string& target, const std::string& experiment);

} // namespace conflux
