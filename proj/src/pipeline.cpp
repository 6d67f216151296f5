// Copyright 2026 The Conflux Authors
// SPDX-License-Identifier: Apache-2.0

#include "conflux/pipeline.hpp"

#include <fstream>
#include <memory>

#include <fmt/core.h>

#include "conflux/checkpoint.hpp"
#include "conflux/errors.hpp"
#include "conflux/evidence.hpp"
#include "conflux/rng.hpp"

namespace conflux {

using ojson = nlohmann::ordered_json;

namespace {

ojson train_json(double lr, std::size_t epochs, std::size_t batch, double l2, const char* mode, std::size_t rank = 1) {
    return ojson{{"mode", mode},       {"learning_rate", lr}, {"epochs", epochs}, {"batch_size", batch},
                 {"l2", l2},           {"feature_dim", 1024}, {"rank", rank},     {"init_sigma", 0.02},
                 {"clean_fraction", 0.10}};
}

} // namespace

ojson default_config() {
    const PromptTemplates tpl;
    const TextRankConfig tr;
    ojson doc;
    doc["seed"] = 7;
    doc["paths"] = {{"train_corpus", nullptr}, {"heldout_corpus", nullptr}, {"report_dir", nullptr},
                    {"checkpoint_dir", nullptr}};
    doc["corpus"] = {{"variant", "sentiment"}, {"n_per_class", 500}, {"heldout_per_class", 200}};
    doc["poison"] = {{"trigger", "cf"}, {"target_label", "positive"}, {"rate", 0.1}, {"position", "prefix"}};
    doc["backdoor_train"] = train_json(0.5, 10, 32, 1e-3, "full");
    doc["conflict_train"] = train_json(1.0, 50, 16, 0.0, "lora", 1);
    doc["merge"] = {{"method", "linear"}, {"t", 0.5},          {"lambda", 1.0},
                    {"k_percent", 20.0},  {"colinear_tol", 1e-7}, {"layer_plan", ojson::array()}};
    doc["sweep"] = ojson::array();
    doc["textrank"] = {{"d", tr.d},     {"max_iterations", tr.max_iterations}, {"eps", tr.eps},
                       {"eta", tr.eta}, {"window", tr.window},                 {"stopwords", nullptr}};
    doc["evidence"] = {{"external", {{"kind", "mock"}, {"transcript", nullptr}}},
                       {"templates",
                        {{"elicit", tpl.elicit}, {"modify", tpl.modify}, {"explain", tpl.explain}, {"compose", tpl.compose}}}};
    doc["eval"] = {{"judge", "exact"},
                   {"epsilon", 0.5},
                   {"scorer", {{"kind", "mock"}, {"transcript", nullptr}}},
                   {"exclude_target_origin", true},
                   {"workers", 1}};
    doc["role_swap"] = {{"variant", "emotion"},
                        {"target_label", "joy"},
                        {"backdoor_rate", 1.0},
                        {"full_train", train_json(0.5, 10, 32, 1e-3, "full")},
                        {"conflict_train", train_json(1.0, 50, 16, 0.0, "lora", 2)}};
    doc["adaptive"] = {{"attacker_train", train_json(0.5, 5, 16, 1e-3, "full")}};
    return doc;
}

ojson merge_config(ojson base, const nlohmann::json& patch) {
    if (!patch.is_object()) throw ValidationError("config must be a JSON object");
    for (const auto& [key, value] : patch.items()) {
        if (!base.contains(key)) throw ValidationError(fmt::format("unknown config key '{}'", key));
        auto& slot = base[key];
        // Client blocks are free-form and replaced whole.
        const bool free_form = key == "external" || key == "scorer";
        if (slot.is_object() && value.is_object() && !free_form) {
            slot = merge_config(slot, value);
        } else {
            slot = value;
        }
    }
    return base;
}

void apply_override(ojson& cfg, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) throw ValidationError(fmt::format("override '{}' is not key=value", assignment));
    const std::string key = assignment.substr(0, eq);
    const std::string raw = assignment.substr(eq + 1);
    ojson* node = &cfg;
    std::size_t start = 0;
    while (true) {
        const auto dot = key.find('.', start);
        const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
        if (!node->is_object() || !node->contains(part)) {
            throw ValidationError(fmt::format("unknown config key '{}'", key));
        }
        node = &(*node)[part];
        if (dot == std::string::npos) break;
        start = dot + 1;
    }
    ojson value;
    try {
        value = ojson::parse(raw);
    } catch (const nlohmann::json::parse_error&) {
        value = raw;
    }
    *node = value;
}

std::string config_hash(const ojson& cfg) {
    return fmt::format("fnv1a64:{:016x}", fnv1a64(cfg.dump()));
}

namespace {

template <typename T>
T get(const nlohmann::json& j, const char* key) {
    try {
        return j.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
        throw ValidationError(fmt::format("config key '{}' is missing or has the wrong type", key));
    }
}

std::optional<std::filesystem::path> opt_path(const nlohmann::json& j, const char* key, const std::filesystem::path& base) {
    if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
    std::filesystem::path p = get<std::string>(j, key);
    if (p.is_relative() && !base.empty()) p = base / p;
    return p;
}

} // namespace

std::string PipelineConfig::hash() const {
    ojson identity = doc;
    identity["paths"].erase("report_dir");
    identity["paths"].erase("checkpoint_dir");
    identity["eval"].erase("workers");
    return config_hash(identity);
}

TrainConfig train_config_from(const nlohmann::json& j, std::uint64_t seed) {
    TrainConfig c;
    const auto mode = get<std::string>(j, "mode");
    if (mode == "full") {
        c.mode = TrainMode::Full;
    } else if (mode == "lora") {
        c.mode = TrainMode::Lora;
    } else {
        throw ValidationError(fmt::format("unknown train mode '{}'", mode));
    }
    c.learning_rate = get<double>(j, "learning_rate");
    c.epochs = get<std::size_t>(j, "epochs");
    c.batch_size = get<std::size_t>(j, "batch_size");
    c.l2 = get<double>(j, "l2");
    c.feature_dim = get<std::size_t>(j, "feature_dim");
    c.rank = get<std::size_t>(j, "rank");
    c.init_sigma = get<double>(j, "init_sigma");
    c.clean_fraction = get<double>(j, "clean_fraction");
    c.seed = seed;
    c.validate();
    return c;
}

MergeSpec merge_spec_from(const nlohmann::json& j) {
    MergeSpec s;
    s.method = parse_merge_method(get<std::string>(j, "method"));
    s.t = get<double>(j, "t");
    s.lambda = get<double>(j, "lambda");
    s.k_percent = get<double>(j, "k_percent");
    s.colinear_tol = get<double>(j, "colinear_tol");
    if (j.contains("layer_plan")) {
        for (const auto& e : j.at("layer_plan")) {
            s.layer_plan.push_back({get<std::string>(e, "source"), get<std::string>(e, "from"), get<std::string>(e, "to")});
        }
    }
    s.validate();
    return s;
}

TextRankConfig textrank_config_from(const nlohmann::json& j) {
    TextRankConfig c;
    c.d = get<double>(j, "d");
    c.max_iterations = get<std::size_t>(j, "max_iterations");
    c.eps = get<double>(j, "eps");
    c.eta = get<double>(j, "eta");
    c.window = get<std::size_t>(j, "window");
    if (j.contains("stopwords") && !j.at("stopwords").is_null()) {
        c.stopwords = get<std::set<std::string>>(j, "stopwords");
    }
    c.validate();
    return c;
}

PromptTemplates templates_from(const nlohmann::json& j) {
    PromptTemplates t;
    t.elicit = get<std::string>(j, "elicit");
    t.modify = get<std::string>(j, "modify");
    t.explain = get<std::string>(j, "explain");
    t.compose = get<std::string>(j, "compose");
    t.validate();
    return t;
}

PoisonSpec poison_spec_from(const nlohmann::json& j, std::uint64_t seed) {
    PoisonSpec p;
    p.trigger = get<std::string>(j, "trigger");
    p.target_label = get<std::string>(j, "target_label");
    p.rate = get<double>(j, "rate");
    p.position = parse_trigger_position(get<std::string>(j, "position"));
    p.seed = seed;
    if (!(p.rate > 0.0 && p.rate <= 1.0)) throw ValidationError("poison rate must be in (0,1]");
    return p;
}

PipelineConfig PipelineConfig::from_json(ojson doc, std::filesystem::path base_dir) {
    PipelineConfig c;
    c.doc = merge_config(default_config(), doc);
    c.base_dir = std::move(base_dir);
    const auto& d = c.doc;
    c.seed = get<std::uint64_t>(d, "seed");

    const auto& paths = d.at("paths");
    c.train_corpus = opt_path(paths, "train_corpus", c.base_dir);
    c.heldout_corpus = opt_path(paths, "heldout_corpus", c.base_dir);
    c.report_dir = opt_path(paths, "report_dir", c.base_dir).value_or("");
    c.checkpoint_dir = opt_path(paths, "checkpoint_dir", c.base_dir).value_or("");
    if (c.train_corpus.has_value() != c.heldout_corpus.has_value()) {
        throw ValidationError("paths.train_corpus and paths.heldout_corpus must be given together");
    }
    for (const auto& p : {c.train_corpus, c.heldout_corpus}) {
        if (p && !std::filesystem::exists(*p)) throw ValidationError(fmt::format("corpus file {} does not exist", p->string()));
    }

    const auto& corpus = d.at("corpus");
    c.variant = parse_corpus_variant(get<std::string>(corpus, "variant"));
    c.n_per_class = get<std::size_t>(corpus, "n_per_class");
    c.heldout_per_class = get<std::size_t>(corpus, "heldout_per_class");
    if (c.n_per_class == 0 || c.heldout_per_class == 0) throw ValidationError("corpus sizes must be positive");

    c.poison = poison_spec_from(d.at("poison"), derive_seed(c.seed, "poison"));
    c.backdoor_train = train_config_from(d.at("backdoor_train"), derive_seed(c.seed, "backdoor_train"));
    c.conflict_train = train_config_from(d.at("conflict_train"), derive_seed(c.seed, "conflict_train"));
    if (c.backdoor_train.mode != TrainMode::Full) throw ValidationError("backdoor_train.mode must be full");
    if (c.conflict_train.mode != TrainMode::Lora) throw ValidationError("conflict_train.mode must be lora");
    if (c.conflict_train.feature_dim != c.backdoor_train.feature_dim) {
        throw ValidationError("conflict_train.feature_dim must equal backdoor_train.feature_dim");
    }
    c.merge = merge_spec_from(d.at("merge"));
    for (const auto& t : d.at("sweep")) {
        const double v = t.get<double>();
        if (!(v >= 0.0 && v <= 1.0)) throw ValidationError("sweep values must be in [0,1]");
        c.sweep.push_back(v);
    }
    c.textrank = textrank_config_from(d.at("textrank"));
    c.templates = templates_from(d.at("evidence").at("templates"));
    c.external_client = d.at("evidence").at("external");

    const auto& ev = d.at("eval");
    c.judge_mode = parse_judge_mode(get<std::string>(ev, "judge"));
    c.judge_epsilon = get<double>(ev, "epsilon");
    c.scorer_client = ev.at("scorer");
    c.exclude_target_origin = get<bool>(ev, "exclude_target_origin");
    c.workers = get<std::size_t>(ev, "workers");
    if (c.workers == 0) throw ValidationError("eval.workers must be >= 1");

    const auto& rs = d.at("role_swap");
    c.role_swap_variant = parse_corpus_variant(get<std::string>(rs, "variant"));
    c.role_swap_target = get<std::string>(rs, "target_label");
    c.role_swap_backdoor_rate = get<double>(rs, "backdoor_rate");
    c.role_swap_full = train_config_from(rs.at("full_train"), derive_seed(c.seed, "role_swap.full"));
    c.role_swap_conflict = train_config_from(rs.at("conflict_train"), derive_seed(c.seed, "role_swap.conflict"));
    c.attacker_train = train_config_from(d.at("adaptive").at("attacker_train"), derive_seed(c.seed, "adaptive.attacker"));
    return c;
}

PipelineConfig PipelineConfig::load(const std::filesystem::path& path, const std::vector<std::string>& overrides,
                                    std::optional<std::uint64_t> seed) {
    ojson doc = ojson::object();
    std::filesystem::path base;
    if (!path.empty()) {
        std::ifstream in(path);
        if (!in) throw IoError(fmt::format("cannot read config {}", path.string()));
        try {
            doc = ojson::parse(in);
        } catch (const nlohmann::json::parse_error& e) {
            throw ValidationError(fmt::format("{}: {}", path.string(), e.what()));
        }
        base = path.parent_path();
    }
    doc = merge_config(default_config(), doc);
    for (const auto& o : overrides) apply_override(doc, o);
    if (seed) doc["seed"] = *seed;
    return from_json(std::move(doc), base);
}

Corpora load_corpora(const PipelineConfig& cfg, CorpusVariant variant) {
    if (cfg.train_corpus && variant == cfg.variant) {
        Corpora c;
        c.train = read_corpus(*cfg.train_corpus);
        c.heldout = read_corpus(*cfg.heldout_corpus, c.train.labels);
        return c;
    }
    const std::string tag = corpus_variant_name(variant);
    return {generate_toy_corpus(derive_seed(cfg.seed, "corpus.train." + tag), cfg.n_per_class, variant),
            generate_toy_corpus(derive_seed(cfg.seed, "corpus.heldout." + tag), cfg.heldout_per_class, variant)};
}

namespace {

std::unique_ptr<GenClient> scorer_for(const PipelineConfig& cfg) {
    if (cfg.judge_mode != JudgeMode::Similarity) return nullptr;
    return make_client(cfg.scorer_client, cfg.base_dir);
}

ojson report_config(const PipelineConfig& cfg, const std::string& experiment, const std::string& target) {
    return ojson{{"experiment", experiment},
                 {"seed", cfg.seed},
                 {"trigger", cfg.poison.trigger},
                 {"target", target},
                 {"judge", judge_mode_name(cfg.judge_mode)},
                 {"exclude_target_origin", cfg.exclude_target_origin},
                 {"config_hash", cfg.hash()}};
}

EvalReport evaluate(const std::string& name, const Predictor& predictor, const LabeledSet& heldout,
                    const LabeledSet& triggered, const PipelineConfig& cfg, const std::string& target,
                    const std::string& experiment) {
    auto scorer = scorer_for(cfg);
    Judge judge{cfg.judge_mode, cfg.judge_epsilon, scorer.get()};
    const auto clean = cda(predictor, heldout, judge, {cfg.workers});
    const auto poisoned = asr(predictor, triggered, target, judge,
                              {cfg.exclude_target_origin, cfg.poison.trigger, cfg.workers});
    return make_report(name, clean, poisoned, judge, report_config(cfg, experiment, target));
}

Predictor classifier_predictor(const ToyClassifier& model) {
    return [&model](const std::string& x) { return model.predict(x).label_name; };
}

void save_report(const PipelineConfig& cfg, const EvalReport& r, const std::string& file) {
    if (cfg.report_dir.empty()) return;
    std::filesystem::create_directories(cfg.report_dir);
    emit_report(r, cfg.report_dir / file);
}

void save_checkpoint(const PipelineConfig& cfg, const Checkpoint& c, const std::string& file) {
    if (cfg.checkpoint_dir.empty()) return;
    std::filesystem::create_directories(cfg.checkpoint_dir);
    write_checkpoint(c, cfg.checkpoint_dir / file);
}

LabeledSet triggered_heldout(const PipelineConfig& cfg, const LabeledSet& heldout) {
    return add_trigger(heldout, cfg.poison.trigger, cfg.poison.position, derive_seed(cfg.seed, "heldout.trigger"));
}

// The defender's conflict model: LoRA on a zero base, trained on a clean
// fraction of the training corpus.
std::pair<LoraAdapter, Checkpoint> conflict_model(const LabeledSet& train, const TrainConfig& tc, std::uint64_t seed,
                                                  const Checkpoint& base) {
    const auto clean = sample_fraction(train, tc.clean_fraction, seed);
    auto adapter = train_lora(base, clean, tc);
    auto merged = merge_lora(base, adapter);
    return {std::move(adapter), std::move(merged)};
}

Checkpoint internal_merge(const MergeSpec& spec, const Checkpoint& conflict,
                          const Checkpoint& backdoored, const Checkpoint& base) {
    return merge(spec, {{"a", conflict}, {"b", backdoored}, {"base", base}});
}

} // namespace

EvalReport evaluate_model(const std::string& name, const Checkpoint& model, const LabeledSet& heldout,
                          const PipelineConfig& cfg, const std::string& target, const std::string& experiment) {
    const ToyClassifier cls(model);
    return evaluate(name, classifier_predictor(cls), heldout, triggered_heldout(cfg, heldout), cfg, target, experiment);
}

DemoResult demo_backdoor(const PipelineConfig& cfg) {
    const auto corpora = load_corpora(cfg, cfg.variant);
    const auto& labels = corpora.train.labels;
    corpora.train.label_index(cfg.poison.target_label);
    const auto triggered = triggered_heldout(cfg, corpora.heldout);
    const std::string target = cfg.poison.target_label;
    const std::string exp = "demo-backdoor";

    DemoResult res;
    const auto poisoned = poison_dataset(corpora.train, cfg.poison);
    res.backdoored = train_full(poisoned.poisoned, cfg.backdoor_train);
    const ToyClassifier backdoored(res.backdoored);
    res.reports["backdoored"] = evaluate("backdoored", classifier_predictor(backdoored), corpora.heldout, triggered, cfg,
                                         target, exp);
    save_report(cfg, res.reports["backdoored"], "backdoored.json");
    save_checkpoint(cfg, res.backdoored, "backdoored.safetensors");
    if (res.reports["backdoored"].asr < kBackdoorGate) {
        throw GateFailure(fmt::format("backdoored ASR {:.4f} is below the {:.2f} gate; the experiment is not valid",
                                      res.reports["backdoored"].asr, kBackdoorGate));
    }

    const Checkpoint base = make_toy_model(labels, cfg.backdoor_train.feature_dim);
    std::tie(res.adapter, res.conflict) =
        conflict_model(corpora.train, cfg.conflict_train, derive_seed(cfg.seed, "clean_fraction"), base);
    res.merged = internal_merge(cfg.merge, res.conflict, res.backdoored, base);
    save_checkpoint(cfg, res.adapter.to_checkpoint(), "conflict_adapter.safetensors");
    save_checkpoint(cfg, res.conflict, "conflict.safetensors");
    save_checkpoint(cfg, res.merged, "merged.safetensors");

    const ToyClassifier merged(res.merged);
    res.reports["internal"] =
        evaluate("internal", classifier_predictor(merged), corpora.heldout, triggered, cfg, target, exp);

    const auto external = make_client(cfg.external_client, cfg.base_dir);
    const ExternalConfig ext{cfg.templates, cfg.textrank};
    auto with_evidence = [&](const ToyClassifier& cls) -> Predictor {
        return [&cls, &external, &ext](const std::string& x) { return external_conflict(cls, *external, x, ext).final_answer; };
    };
    res.reports["external"] =
        evaluate("external", with_evidence(backdoored), corpora.heldout, triggered, cfg, target, exp);
    res.reports["combined"] =
        evaluate("combined", with_evidence(merged), corpora.heldout, triggered, cfg, target, exp);
    for (const char* name : {"internal", "external", "combined"}) {
        save_report(cfg, res.reports[name], std::string(name) + ".json");
    }

    for (double t : cfg.sweep) {
        MergeSpec spec = cfg.merge;
        spec.t = t;
        const ToyClassifier m(internal_merge(spec, res.conflict, res.backdoored, base));
        const auto r = evaluate(fmt::format("sweep-t{}", t), classifier_predictor(m), corpora.heldout, triggered, cfg,
                                target, exp);
        res.sweep.push_back({t, r.cda, r.asr});
    }
    if (!cfg.sweep.empty() && !cfg.report_dir.empty()) {
        ojson points = ojson::array();
        for (const auto& p : res.sweep) {
            points.push_back({{"t", p.t}, {"cda", fmt::format("{:.4f}", p.cda)}, {"asr", fmt::format("{:.4f}", p.asr)}});
        }
        std::ofstream out(cfg.report_dir / "sweep.json", std::ios::binary | std::ios::trunc);
        out << ojson{{"method", merge_method_name(cfg.merge.method)}, {"config_hash", cfg.hash()}, {"points", points}}.dump(2)
            << "\n";
    }
    return res;
}

RoleSwapResult role_swap(const PipelineConfig& cfg) {
    const auto corpora = load_corpora(cfg, cfg.role_swap_variant);
    const std::string target = cfg.role_swap_target;
    corpora.train.label_index(target);
    const auto triggered = triggered_heldout(cfg, corpora.heldout);

    PoisonSpec pool_spec = cfg.poison;
    pool_spec.target_label = target;
    pool_spec.rate = cfg.role_swap_backdoor_rate;
    pool_spec.seed = derive_seed(cfg.seed, "role_swap.pool");
    const LabeledSet pool = poison_dataset(corpora.train, pool_spec).poisoned;

    RoleSwapResult res;
    // Experiment 1: a clean full model merged with a backdoor-trained full model.
    {
        const auto m3 = train_full(corpora.train, cfg.role_swap_full);
        const auto m4 = train_full(concat(corpora.train, pool), cfg.role_swap_full);
        const ToyClassifier merged(merge_linear(m3, m4, 0.5));
        res.experiment1 = evaluate("role-swap-experiment-1", classifier_predictor(merged), corpora.heldout, triggered,
                                   cfg, target, "role-swap-1");
    }
    // Experiment 2: the backdoor samples play the clean role in the pipeline.
    {
        const auto small_clean = sample_fraction(corpora.train, cfg.role_swap_conflict.clean_fraction,
                                                 derive_seed(cfg.seed, "role_swap.clean"));
        const auto m5 = train_full(concat(small_clean, pool), cfg.role_swap_full);
        const Checkpoint base = make_toy_model(corpora.train.labels, cfg.role_swap_conflict.feature_dim);
        const auto m6 = conflict_model(pool, cfg.role_swap_conflict, derive_seed(cfg.seed, "role_swap.fraction"), base).second;
        const ToyClassifier merged(merge_linear(m6, m5, 0.5));
        res.experiment2 = evaluate("role-swap-experiment-2", classifier_predictor(merged), corpora.heldout, triggered,
                                   cfg, target, "role-swap-2");
    }
    save_report(cfg, res.experiment1, "role_swap_experiment1.json");
    save_report(cfg, res.experiment2, "role_swap_experiment2.json");
    return res;
}

AdaptiveResult adaptive(const PipelineConfig& cfg) {
    const auto corpora = load_corpora(cfg, cfg.variant);
    const std::string target = cfg.poison.target_label;
    const auto triggered = triggered_heldout(cfg, corpora.heldout);
    const std::string exp = "adaptive";

    AdaptiveResult res;
    const auto backdoored = train_full(poison_dataset(corpora.train, cfg.poison).poisoned, cfg.backdoor_train);
    res.backdoored = evaluate_model("adaptive-backdoored", backdoored, corpora.heldout, cfg, target, exp);
    if (res.backdoored.asr < kBackdoorGate) {
        throw GateFailure(fmt::format("backdoored ASR {:.4f} is below the {:.2f} gate", res.backdoored.asr, kBackdoorGate));
    }

    // The attacker trains its own conflict model and subtracts it.
    const Checkpoint base = make_toy_model(corpora.train.labels, cfg.backdoor_train.feature_dim);
    const auto attacker_clean = sample_fraction(corpora.train, cfg.attacker_train.clean_fraction,
                                                derive_seed(cfg.seed, "adaptive.clean"));
    const auto attacker_model = train_full(attacker_clean, cfg.attacker_train);
    const auto adapted = apply_task_vector(backdoored, task_vector(attacker_model, base), -1.0);
    res.adapted = evaluate_model("adaptive-undefended", adapted, corpora.heldout, cfg, target, exp);

    const auto conflict =
        conflict_model(corpora.train, cfg.conflict_train, derive_seed(cfg.seed, "clean_fraction"), base).second;
    const auto defended = internal_merge(cfg.merge, conflict, adapted, base);
    res.defended = evaluate_model("adaptive-defended", defended, corpora.heldout, cfg, target, exp);

    save_report(cfg, res.backdoored, "adaptive_backdoored.json");
    save_report(cfg, res.adapted, "adaptive_undefended.json");
    save_report(cfg, res.defended, "adaptive_defended.json");
    save_checkpoint(cfg, adapted, "adaptive_adapted.safetensors");
    save_checkpoint(cfg, defended, "adaptive_defended.safetensors");
    return res;
}

} // namespace conflux
