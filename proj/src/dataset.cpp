// Copyright 2026 The Conflux Authors
// SPDX-License-Identifier: Apache-2.0

#include "conflux/dataset.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <sstream>
#include <string_view>

#include <fmt/core.h>

#include "conflux/errors.hpp"
#include "conflux/rng.hpp"

namespace conflux {

std::size_t LabeledSet::label_index(const std::string& name) const {
    const auto it = std::find(labels.begin(), labels.end(), name);
    if (it == labels.end()) throw ValidationError(fmt::format("label '{}' is not in the vocabulary", name));
    return static_cast<std::size_t>(it - labels.begin());
}

void LabeledSet::validate() const {
    for (std::size_t i = 0; i < examples.size(); ++i) {
        if (examples[i].label >= labels.size()) {
            throw ValidationError(fmt::format("example {} has label index {} outside vocabulary of {}", i,
                                              examples[i].label, labels.size()));
        }
    }
}

LabeledSet LabeledSet::select(const std::vector<std::size_t>& indices) const {
    LabeledSet out;
    out.labels = labels;
    out.examples.reserve(indices.size());
    for (auto i : indices) out.examples.push_back(examples.at(i));
    return out;
}

LabeledSet concat(const LabeledSet& a, const LabeledSet& b) {
    if (a.labels != b.labels) throw ValidationError("concat: label vocabularies differ");
    LabeledSet out = a;
    out.examples.insert(out.examples.end(), b.examples.begin(), b.examples.end());
    return out;
}

LabeledSet parse_corpus(const std::string& content, std::vector<std::string> labels) {
    LabeledSet out;
    out.labels = std::move(labels);
    const bool fixed_vocab = !out.labels.empty();
    std::istringstream in(content);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto tab = line.find('\t');
        if (tab == std::string::npos || tab == 0) {
            throw ValidationError(fmt::format("corpus line {}: expected 'label<TAB>text'", lineno));
        }
        std::string label = line.substr(0, tab);
        auto it = std::find(out.labels.begin(), out.labels.end(), label);
        if (it == out.labels.end()) {
            if (fixed_vocab) throw ValidationError(fmt::format("corpus line {}: unknown label '{}'", lineno, label));
            out.labels.push_back(label);
            it = out.labels.end() - 1;
        }
        out.examples.push_back({line.substr(tab + 1), static_cast<std::size_t>(it - out.labels.begin())});
    }
    return out;
}

LabeledSet read_corpus(const std::filesystem::path& path, std::vector<std::string> labels) {
    std::ifstream in(path);
    if (!in) throw IoError(fmt::format("cannot open corpus '{}'", path.string()));
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_corpus(ss.str(), std::move(labels));
}

std::string format_corpus(const LabeledSet& set) {
    set.validate();
    std::string out;
    for (const auto& ex : set.examples) {
        if (ex.text.find_first_of("\t\n") != std::string::npos) {
            throw ValidationError("corpus text may not contain tabs or newlines");
        }
        out += set.labels[ex.label];
        out += '\t';
        out += ex.text;
        out += '\n';
    }
    return out;
}

void write_corpus(const LabeledSet& set, const std::filesystem::path& path) {
    const auto text = format_corpus(set);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError(fmt::format("cannot open '{}' for writing", path.string()));
    out << text;
}

CorpusVariant parse_corpus_variant(const std::string& name) {
    if (name == "sentiment") return CorpusVariant::Sentiment;
    if (name == "emotion") return CorpusVariant::Emotion;
    throw ValidationError(fmt::format("unknown corpus variant '{}'", name));
}

std::string corpus_variant_name(CorpusVariant variant) {
    return variant == CorpusVariant::Emotion ? "emotion" : "sentiment";
}

namespace {

using WordList = std::vector<std::string_view>;

const WordList kFunction = {"the", "was", "and", "it", "this", "is", "a", "with",
                            "of", "felt", "seemed", "quite", "very", "really"};

const WordList kNeutral = {
    "movie", "film", "plot", "story", "actors", "cast", "director", "script", "scenes", "ending",
    "music", "camera", "pacing", "dialogue", "characters", "performance", "sequel", "screenplay",
    "soundtrack", "cinematography", "editing", "runtime", "premise", "finale", "villain", "hero",
    "setting", "visuals", "effects", "humor", "drama", "theater", "audience", "critics", "studio", "version"};

const std::vector<WordList> kSentiment = {
    {"good", "great", "excellent", "wonderful", "superb", "brilliant", "delightful", "charming", "moving",
     "masterful", "enjoyable", "fantastic", "lovely", "gripping", "stunning", "beautiful", "touching", "clever",
     "witty", "fresh", "engaging", "memorable", "splendid", "terrific", "marvelous", "heartfelt", "inspired",
     "powerful", "elegant", "vivid"},
    {"bad", "awful", "terrible", "boring", "dull", "tedious", "clumsy", "bland", "painful", "weak", "poor",
     "lifeless", "shallow", "mediocre", "annoying", "forgettable", "messy", "tiresome", "dreadful", "horrible",
     "pointless", "stale", "sloppy", "flat", "disappointing", "ugly", "lazy", "hollow", "muddled", "grim"},
};

const std::vector<WordList> kEmotion = {
    {"sad", "lonely", "gloomy", "miserable", "heartbroken", "grieving", "hopeless", "melancholy", "tearful",
     "depressed", "sorrowful", "weary", "mournful", "crushed", "dejected", "downcast", "forlorn", "bleak",
     "despairing", "somber"},
    {"happy", "joyful", "cheerful", "delighted", "glad", "thrilled", "elated", "content", "merry", "jubilant",
     "blissful", "upbeat", "sunny", "gleeful", "radiant", "ecstatic", "overjoyed", "jolly", "festive", "carefree"},
    {"loving", "adoring", "tender", "affectionate", "devoted", "fond", "caring", "romantic", "passionate",
     "cherished", "warmhearted", "smitten", "enamored", "doting", "sweet", "intimate", "beloved", "treasured",
     "kindhearted", "gentle"},
    {"angry", "furious", "irritated", "enraged", "outraged", "annoyed", "hostile", "bitter", "resentful", "livid",
     "fuming", "irate", "indignant", "vengeful", "cranky", "heated", "wrathful", "seething", "spiteful",
     "aggravated"},
    {"afraid", "scared", "terrified", "anxious", "nervous", "frightened", "panicked", "uneasy", "worried", "tense",
     "alarmed", "shaky", "fearful", "jittery", "petrified", "dreading", "spooked", "timid", "horrified",
     "apprehensive"},
    {"surprised", "amazed", "astonished", "shocked", "stunned", "startled", "astounded", "speechless",
     "bewildered", "dazed", "flabbergasted", "awestruck", "unexpected", "sudden", "baffled", "dumbfounded",
     "staggered", "wondering", "curious", "puzzled"},
};

const std::vector<std::string> kSentimentLabels = {"positive", "negative"};
const std::vector<std::string> kEmotionLabels = {"sadness", "joy", "love", "anger", "fear", "surprise"};

// Probability that a sentence also carries one word from another class.
constexpr double kCrossClassNoise = 0.2;

std::string_view pick(Rng& rng, const WordList& words) {
    return words[rng.uniform_index(words.size())];
}

} // namespace

LabeledSet generate_toy_corpus(std::uint64_t seed, std::size_t n_per_class, CorpusVariant variant) {
    const bool emotion = variant == CorpusVariant::Emotion;
    const auto& classes = emotion ? kEmotion : kSentiment;
    // Sentences are built from clauses "<function> <neutral> <function> <class word>".
    const std::size_t min_clauses = emotion ? 1 : 3;
    const std::size_t max_clauses = emotion ? 2 : 4;

    LabeledSet out;
    out.labels = emotion ? kEmotionLabels : kSentimentLabels;
    Rng rng(seed);
    for (std::size_t c = 0; c < classes.size(); ++c) {
        for (std::size_t i = 0; i < n_per_class; ++i) {
            const std::size_t clauses = min_clauses + rng.uniform_index(max_clauses - min_clauses + 1);
            std::vector<std::string_view> tokens;
            for (std::size_t k = 0; k < clauses; ++k) {
                tokens.push_back(pick(rng, kFunction));
                tokens.push_back(pick(rng, kNeutral));
                tokens.push_back(pick(rng, kFunction));
                tokens.push_back(pick(rng, classes[c]));
            }
            if (rng.uniform01() < kCrossClassNoise) {
                const std::size_t other = (c + 1 + rng.uniform_index(classes.size() - 1)) % classes.size();
                const std::size_t slot = rng.uniform_index(tokens.size() + 1);
                tokens.insert(tokens.begin() + static_cast<std::ptrdiff_t>(slot), pick(rng, classes[other]));
            }
            std::string text;
            for (std::size_t k = 0; k < tokens.size(); ++k) {
                if (k) text += ' ';
                text += tokens[k];
            }
            out.examples.push_back({std::move(text), c});
        }
    }
    return out;
}

TriggerPosition parse_trigger_position(const std::string& name) {
    if (name == "prefix") return TriggerPosition::Prefix;
    if (name == "random") return TriggerPosition::Random;
    if (name == "suffix") return TriggerPosition::Suffix;
    throw ValidationError(fmt::format("unknown trigger position '{}'", name));
}

std::string trigger_position_name(TriggerPosition position) {
    switch (position) {
    case TriggerPosition::Prefix: return "prefix";
    case TriggerPosition::Random: return "random";
    case TriggerPosition::Suffix: return "suffix";
    }
    return "prefix";
}

namespace {

void check_trigger(const std::string& trigger) {
    if (trigger.empty()) throw ValidationError("trigger must not be empty");
    if (trigger.find_first_of(" \t\r\n\v\f") != std::string::npos) {
        throw ValidationError(fmt::format("trigger '{}' contains whitespace and would split into several tokens",
                                          trigger));
    }
}

std::size_t count_ceil(double fraction, std::size_t n) {
    return static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(n) - 1e-9));
}

} // namespace

std::string insert_trigger(const std::string& text, const std::string& trigger, TriggerPosition position,
                           std::uint64_t random_slot) {
    if (text.empty()) return trigger;
    switch (position) {
    case TriggerPosition::Prefix: return trigger + " " + text;
    case TriggerPosition::Suffix: return text + " " + trigger;
    case TriggerPosition::Random: {
        std::vector<std::string> tokens;
        std::istringstream in(text);
        for (std::string tok; in >> tok;) tokens.push_back(tok);
        const std::size_t slot = random_slot % (tokens.size() + 1);
        tokens.insert(tokens.begin() + static_cast<std::ptrdiff_t>(slot), trigger);
        std::string out;
        for (std::size_t k = 0; k < tokens.size(); ++k) {
            if (k) out += ' ';
            out += tokens[k];
        }
        return out;
    }
    }
    return text;
}

PoisonResult poison_dataset(const LabeledSet& ds, const PoisonSpec& spec) {
    check_trigger(spec.trigger);
    if (!(spec.rate > 0.0 && spec.rate <= 1.0)) {
        throw ValidationError(fmt::format("poison rate {} outside (0,1]", spec.rate));
    }
    const std::size_t target = ds.label_index(spec.target_label);
    Rng rng(spec.seed);
    auto indices = rng.sample_without_replacement(ds.size(), count_ceil(spec.rate, ds.size()));
    std::sort(indices.begin(), indices.end());

    PoisonResult result{ds, indices};
    for (auto i : indices) {
        auto& ex = result.poisoned.examples[i];
        ex.text = insert_trigger(ex.text, spec.trigger, spec.position, rng.next_u64());
        ex.label = target;
    }
    return result;
}

LabeledSet add_trigger(const LabeledSet& ds, const std::string& trigger, TriggerPosition position,
                       std::uint64_t seed) {
    check_trigger(trigger);
    Rng rng(seed);
    LabeledSet out = ds;
    for (auto& ex : out.examples) ex.text = insert_trigger(ex.text, trigger, position, rng.next_u64());
    return out;
}

LabeledSet sample_fraction(const LabeledSet& ds, double fraction, std::uint64_t seed) {
    if (!(fraction > 0.0 && fraction <= 1.0)) {
        throw ValidationError(fmt::format("fraction {} outside (0,1]", fraction));
    }
    if (ds.empty()) throw ValidationError("cannot sample from an empty set");
    Rng rng(seed);
    auto indices = rng.sample_without_replacement(ds.size(), std::max<std::size_t>(1, count_ceil(fraction, ds.size())));
    std::sort(indices.begin(), indices.end());
    return ds.select(indices);
}

} // namespace conflux
