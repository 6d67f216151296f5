// Copyright 2026 The Conflux Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace conflux {

struct Example {
    std::string text;
    std::size_t label = 0; // index into LabeledSet::labels
    bool operator==(const Example&) const = default;
};

struct LabeledSet {
    std::vector<Example> examples;
    std::vector<std::string> labels;

    std::size_t size() const { return examples.size(); }
    bool empty() const { return examples.empty(); }
    const std::string& label_name(std::size_t index) const { return labels.at(index); }
    std::size_t label_index(const std::string& name) const; // throws ValidationError

    /// Every label index is inside the vocabulary; throws ValidationError.
    void validate() const;

    /// Subset by indices, preserving the given order.
    LabeledSet select(const std::vector<std::size_t>& indices) const;

    bool operator==(const LabeledSet&) const = default;
};

/// Concatenation; both sets must share the same label vocabulary.
LabeledSet concat(const LabeledSet& a, const LabeledSet& b);

// Corpus files: UTF-8 lines of "label<TAB>text".
LabeledSet read_corpus(const std::filesystem::path& path, std::vector<std::string> labels = {});
LabeledSet parse_corpus(const std::string& content, std::vector<std::string> labels = {});
void write_corpus(const LabeledSet& set, const std::filesystem::path& path);
std::string format_corpus(const LabeledSet& set);

enum class CorpusVariant { Sentiment, Emotion };
CorpusVariant parse_corpus_variant(const std::string& name);
std::string corpus_variant_name(CorpusVariant variant);

/// Seeded synthetic corpus drawn from fixed per-class word lists, n sentences
/// per class. Sentiment: positive/negative. Emotion: six emotion classes.
LabeledSet generate_toy_corpus(std::uint64_t seed, std::size_t n_per_class,
                               CorpusVariant variant = CorpusVariant::Sentiment);

enum class TriggerPosition { Prefix, Random, Suffix };
TriggerPosition parse_trigger_position(const std::string& name);
std::string trigger_position_name(TriggerPosition position);

struct PoisonSpec {
    std::string trigger = "cf";
    std::string target_label;
    double rate = 0.1;
    std::uint64_t seed = 0;
    TriggerPosition position = TriggerPosition::Prefix;
};

struct PoisonResult {
    LabeledSet poisoned;
    std::vector<std::size_t> indices; // ascending
};

/// Inserts the trigger token into a text at the given position.
std::string insert_trigger(const std::string& text, const std::string& trigger, TriggerPosition position,
                           std::uint64_t random_slot = 0);

/// Rewrites ceil(rate * |ds|) seeded-randomly chosen examples: trigger
/// inserted, label set to the target. Everything else is untouched.
PoisonResult poison_dataset(const LabeledSet& ds, const PoisonSpec& spec);

/// Every example carries the trigger; labels keep their original values.
/// This is the form the attack-success metric consumes.
LabeledSet add_trigger(const LabeledSet& ds, const std::string& trigger, TriggerPosition position,
                       std::uint64_t seed = 0);

/// Seeded subset of ceil(fraction * |ds|) examples (at least one).
LabeledSet sample_fraction(const LabeledSet& ds, double fraction, std::uint64_t seed);

} // namespace conflux
