// Copyright 2026 The Conflux Authors
// SPDX-License-Identifier: Apache-2.0

#include <cstdio>
#include <fstream>
#include <iostream>
#include <iterator>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <fmt/core.h>

#include "conflux/checkpoint.hpp"
#include "conflux/errors.hpp"
#include "conflux/evidence.hpp"
#include "conflux/eval.hpp"
#include "conflux/merge.hpp"
#include "conflux/model.hpp"
#include "conflux/pipeline.hpp"
#include "conflux/textrank.hpp"

using namespace conflux;

namespace {

struct ExperimentArgs {
    std::string config;
    std::vector<std::string> overrides;
    std::optional<std::uint64_t> seed;
    std::string report_dir;
    std::string checkpoint_dir;
    std::size_t workers = 0;
};

void add_experiment_options(CLI::App* cmd, ExperimentArgs& a) {
    cmd->add_option("-c,--config", a.config, "JSON config file (defaults apply to missing keys)");
    cmd->add_option("--set", a.overrides, "Override a config key, e.g. --set merge.t=0.3")->take_all();
    cmd->add_option("--seed", a.seed, "Global seed");
    cmd->add_option("--report-dir", a.report_dir, "Directory for report files");
    cmd->add_option("--checkpoint-dir", a.checkpoint_dir, "Directory for checkpoint files");
    cmd->add_option("--workers", a.workers, "Evaluation worker threads");
}

PipelineConfig load_config(const ExperimentArgs& a, std::vector<std::string> extra = {}) {
    auto overrides = a.overrides;
    if (!a.report_dir.empty()) overrides.push_back("paths.report_dir=" + nlohmann::json(a.report_dir).dump());
    if (!a.checkpoint_dir.empty()) overrides.push_back("paths.checkpoint_dir=" + nlohmann::json(a.checkpoint_dir).dump());
    if (a.workers > 0) overrides.push_back(fmt::format("eval.workers={}", a.workers));
    for (auto& e : extra) overrides.push_back(std::move(e));
    return PipelineConfig::load(a.config, overrides, a.seed);
}

void print_report(const EvalReport& r) {
    fmt::print("[{}]\n{}\n", r.name, report_summary(r));
}

std::string read_all(std::istream& in) {
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError(fmt::format("cannot read {}", path));
    return read_all(in);
}

void write_text(const std::string& path, const std::string& text) {
    if (path.empty() || path == "-") {
        std::cout << text;
        return;
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError(fmt::format("cannot write {}", path));
    out << text;
}

std::pair<std::string, std::string> split_assignment(const std::string& s) {
    const auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0) throw ValidationError(fmt::format("expected id=path, got '{}'", s));
    return {s.substr(0, eq), s.substr(eq + 1)};
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Backdoor removal through information conflicts"};
    app.require_subcommand(1);

    // demo-backdoor / role-swap / adaptive
    ExperimentArgs demo_args, swap_args, adaptive_args;
    bool demo_sweep = false;
    auto* demo = app.add_subcommand("demo-backdoor", "Backdoor a toy classifier and remove it by internal and external conflicts");
    add_experiment_options(demo, demo_args);
    demo->add_flag("--sweep", demo_sweep, "Also sweep t over 0.1..0.9");
    auto* swap = app.add_subcommand("role-swap", "Merge experiments with the roles of clean and backdoor data swapped");
    add_experiment_options(swap, swap_args);
    auto* adapt = app.add_subcommand("adaptive", "Subtraction attack against the merge defense");
    add_experiment_options(adapt, adaptive_args);

    // merge
    std::string m_method, m_a, m_b, m_base, m_out, m_plan;
    std::vector<std::string> m_sources;
    std::optional<double> m_t, m_lambda, m_k, m_tol;
    unsigned m_workers = 1;
    auto* merge_cmd = app.add_subcommand("merge", "Merge checkpoints");
    merge_cmd->add_option("--method", m_method, "linear | slerp | ties | passthrough (default linear)");
    merge_cmd->add_option("--a", m_a, "First model (the conflict model)");
    merge_cmd->add_option("--b", m_b, "Second model (the backdoored model)");
    merge_cmd->add_option("--base", m_base, "Shared base model (ties)");
    merge_cmd->add_option("--source", m_sources, "Passthrough source as id=path")->take_all();
    merge_cmd->add_option("--t", m_t, "Interpolation weight of --a");
    merge_cmd->add_option("--lambda", m_lambda, "TIES scale");
    merge_cmd->add_option("--k", m_k, "TIES trim percentage");
    merge_cmd->add_option("--tol", m_tol, "SLERP colinearity tolerance");
    merge_cmd->add_option("--plan", m_plan, "JSON merge plan file");
    merge_cmd->add_option("-o,--output", m_out, "Output checkpoint");
    merge_cmd->add_option("--workers", m_workers, "Per-tensor worker threads");

    // textrank
    TextRankConfig tr_cfg;
    bool tr_all = false;
    auto* tr_cmd = app.add_subcommand("textrank", "Keywords of standard input as token<TAB>weight lines");
    tr_cmd->add_option("--d", tr_cfg.d, "Damping factor");
    tr_cmd->add_option("--iterations", tr_cfg.max_iterations, "Maximum iterations");
    tr_cmd->add_option("--eps", tr_cfg.eps, "L1 convergence threshold");
    tr_cmd->add_option("--eta", tr_cfg.eta, "Keyword weight threshold");
    tr_cmd->add_option("--window", tr_cfg.window, "Co-occurrence window");
    tr_cmd->add_flag("--all", tr_all, "Print every token, not only keywords");

    // evidence
    ExperimentArgs ev_args;
    std::string ev_query, ev_model, ev_target_transcript, ev_external_transcript, ev_out;
    auto* ev_cmd = app.add_subcommand("evidence", "Build an external-conflict prompt for one query");
    add_experiment_options(ev_cmd, ev_args);
    ev_cmd->add_option("--query", ev_query, "Query text (default: standard input)");
    ev_cmd->add_option("--model", ev_model, "Toy classifier checkpoint used as the target");
    ev_cmd->add_option("--target-transcript", ev_target_transcript, "Mock transcript for a generative target");
    ev_cmd->add_option("--external-transcript", ev_external_transcript, "Mock transcript for the external model");
    ev_cmd->add_option("-o,--output", ev_out, "Bundle file (default: standard output)");

    // eval
    std::string e_model, e_clean, e_poisoned, e_target, e_trigger = "cf", e_judge = "exact", e_scorer, e_out, e_name = "eval";
    bool e_oracle = false, e_keep_target = false;
    double e_eps = 0.5;
    std::size_t e_workers = 1;
    auto* eval_cmd = app.add_subcommand("eval", "CDA and ASR of a classifier on corpus files");
    eval_cmd->add_option("--model", e_model, "Toy classifier checkpoint");
    eval_cmd->add_flag("--oracle", e_oracle, "Use the ground-truth labels as predictions");
    eval_cmd->add_option("--clean", e_clean, "Clean corpus")->required();
    eval_cmd->add_option("--poisoned", e_poisoned, "Triggered corpus with original labels (default: trigger --clean)");
    eval_cmd->add_option("--target", e_target, "Attack target label")->required();
    eval_cmd->add_option("--trigger", e_trigger, "Trigger token");
    eval_cmd->add_option("--judge", e_judge, "exact | similarity");
    eval_cmd->add_option("--epsilon", e_eps, "Similarity threshold");
    eval_cmd->add_option("--scorer-transcript", e_scorer, "Mock transcript for the similarity scorer");
    eval_cmd->add_flag("--keep-target-origin", e_keep_target, "Count examples whose label already is the target");
    eval_cmd->add_option("--name", e_name, "Report name");
    eval_cmd->add_option("--workers", e_workers, "Worker threads");
    eval_cmd->add_option("-o,--output", e_out, "Report file");

    // train
    std::string t_corpus, t_base, t_out, t_mode = "full";
    TrainConfig t_cfg;
    auto* train_cmd = app.add_subcommand("train", "Train a toy classifier or a LoRA adapter");
    train_cmd->add_option("--corpus", t_corpus, "Training corpus")->required();
    train_cmd->add_option("--mode", t_mode, "full | lora");
    train_cmd->add_option("--base", t_base, "Frozen base checkpoint (lora; default zero model)");
    train_cmd->add_option("--lr", t_cfg.learning_rate, "Learning rate");
    train_cmd->add_option("--epochs", t_cfg.epochs, "Epochs");
    train_cmd->add_option("--batch", t_cfg.batch_size, "Batch size");
    train_cmd->add_option("--l2", t_cfg.l2, "L2 decay");
    train_cmd->add_option("--dim", t_cfg.feature_dim, "Feature dimension");
    train_cmd->add_option("--rank", t_cfg.rank, "LoRA rank");
    train_cmd->add_option("--sigma", t_cfg.init_sigma, "LoRA init sigma for A");
    train_cmd->add_option("--seed", t_cfg.seed, "Seed");
    train_cmd->add_option("-o,--output", t_out, "Output checkpoint (lora: merged model)")->required();
    std::string t_adapter_out;
    train_cmd->add_option("--adapter-output", t_adapter_out, "Also write the LoRA adapter");

    // corpus
    std::string c_variant = "sentiment", c_out, c_target, c_trigger = "cf";
    std::size_t c_n = 500;
    std::uint64_t c_seed = 7;
    double c_rate = 0.0;
    bool c_triggered = false;
    auto* corpus_cmd = app.add_subcommand("corpus", "Write a synthetic corpus, optionally poisoned");
    corpus_cmd->add_option("--variant", c_variant, "sentiment | emotion");
    corpus_cmd->add_option("--n", c_n, "Sentences per class");
    corpus_cmd->add_option("--seed", c_seed, "Seed");
    corpus_cmd->add_option("--poison-rate", c_rate, "Poison this fraction toward --target");
    corpus_cmd->add_option("--target", c_target, "Poison target label");
    corpus_cmd->add_option("--trigger", c_trigger, "Trigger token");
    corpus_cmd->add_flag("--triggered", c_triggered, "Prefix every sentence with the trigger, labels unchanged");
    corpus_cmd->add_option("-o,--output", c_out, "Output file (default: standard output)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (*demo) {
            std::vector<std::string> extra;
            if (demo_sweep) extra.push_back("sweep=[0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9]");
            const auto cfg = load_config(demo_args, extra);
            const auto res = demo_backdoor(cfg);
            for (const char* n : {"backdoored", "internal", "external", "combined"}) print_report(res.reports.at(n));
            for (const auto& p : res.sweep) fmt::print("t={:.2f} CDA={:.4f} ASR={:.4f}\n", p.t, p.cda, p.asr);
        } else if (*swap) {
            const auto res = role_swap(load_config(swap_args));
            print_report(res.experiment1);
            print_report(res.experiment2);
        } else if (*adapt) {
            const auto res = adaptive(load_config(adaptive_args));
            print_report(res.backdoored);
            print_report(res.adapted);
            print_report(res.defended);
        } else if (*merge_cmd) {
            MergeSpec spec;
            std::map<std::string, std::string> inputs;
            if (!m_plan.empty()) {
                // {"method", "t", "lambda", "k_percent", "colinear_tol", "inputs": {id: path}, "output", "layer_plan"}
                const auto plan = nlohmann::json::parse(read_file(m_plan));
                auto merged = nlohmann::json{{"method", "linear"}, {"t", spec.t}, {"lambda", spec.lambda},
                                             {"k_percent", spec.k_percent}, {"colinear_tol", spec.colinear_tol},
                                             {"layer_plan", nlohmann::json::array()}};
                for (const char* k : {"method", "t", "lambda", "k_percent", "colinear_tol", "layer_plan"}) {
                    if (plan.contains(k)) merged[k] = plan.at(k);
                }
                if (!m_method.empty()) merged["method"] = m_method;
                spec = merge_spec_from(merged);
                const auto base_dir = std::filesystem::path(m_plan).parent_path();
                const auto plan_inputs = plan.value("inputs", nlohmann::json::object());
                for (const auto& [id, p] : plan_inputs.items()) {
                    std::filesystem::path path = p.get<std::string>();
                    inputs[id] = (path.is_relative() ? base_dir / path : path).string();
                }
                if (m_out.empty() && plan.contains("output")) {
                    std::filesystem::path path = plan.at("output").get<std::string>();
                    m_out = (path.is_relative() ? base_dir / path : path).string();
                }
            } else {
                spec.method = parse_merge_method(m_method.empty() ? "linear" : m_method);
                if (!m_a.empty()) inputs["a"] = m_a;
                if (!m_b.empty()) inputs["b"] = m_b;
                if (!m_base.empty()) inputs["base"] = m_base;
            }
            for (const auto& s : m_sources) inputs.insert(split_assignment(s));
            if (m_t) spec.t = *m_t;
            if (m_lambda) spec.lambda = *m_lambda;
            if (m_k) spec.k_percent = *m_k;
            if (m_tol) spec.colinear_tol = *m_tol;
            spec.validate();
            if (m_out.empty()) throw ValidationError("merge needs an output path (-o)");
            std::map<std::string, Checkpoint> models;
            for (const auto& [id, path] : inputs) models[id] = read_checkpoint(path);
            write_checkpoint(merge(spec, models, {m_workers}), m_out);
            fmt::print("wrote {}\n", m_out);
        } else if (*tr_cmd) {
            const std::string text = read_all(std::cin);
            const auto out = tr_all ? ranked_tokens(text, tr_cfg) : extract_keywords(text, tr_cfg);
            for (const auto& k : out) fmt::print("{}\t{:.6f}\n", k.token, k.weight);
        } else if (*ev_cmd) {
            const auto cfg = load_config(ev_args);
            if (ev_query.empty()) ev_query = read_all(std::cin);
            while (!ev_query.empty() && (ev_query.back() == '\n' || ev_query.back() == '\r')) ev_query.pop_back();
            std::unique_ptr<GenClient> external = ev_external_transcript.empty()
                                                      ? make_client(cfg.external_client, cfg.base_dir)
                                                      : std::make_unique<MockClient>(MockClient::from_file(ev_external_transcript));
            const ExternalConfig ext{cfg.templates, cfg.textrank};
            EvidenceBundle bundle;
            if (!ev_model.empty()) {
                bundle = external_conflict(ToyClassifier(read_checkpoint(ev_model)), *external, ev_query, ext);
            } else {
                MockClient target = ev_target_transcript.empty() ? MockClient() : MockClient::from_file(ev_target_transcript);
                bundle = external_conflict(target, *external, ev_query, ext);
            }
            write_text(ev_out, bundle.to_json().dump(2) + "\n");
        } else if (*eval_cmd) {
            if (e_oracle == !e_model.empty()) throw ValidationError("eval needs exactly one of --model or --oracle");
            const auto clean = read_corpus(e_clean);
            const auto poisoned = e_poisoned.empty() ? add_trigger(clean, e_trigger, TriggerPosition::Prefix)
                                                     : read_corpus(e_poisoned, clean.labels);
            std::unique_ptr<GenClient> scorer;
            if (e_judge == "similarity") {
                scorer = e_scorer.empty() ? std::make_unique<MockClient>() : std::make_unique<MockClient>(MockClient::from_file(e_scorer));
            }
            Judge judge{parse_judge_mode(e_judge), e_eps, scorer.get()};
            std::optional<ToyClassifier> cls;
            if (!e_model.empty()) cls.emplace(read_checkpoint(e_model));
            // Oracle: the clean set's own label for each text; triggered texts map
            // back through the trigger-free text.
            std::map<std::string, std::string> truth;
            for (const auto& ex : clean.examples) truth.emplace(ex.text, clean.label_name(ex.label));
            for (const auto& ex : poisoned.examples) truth.emplace(ex.text, poisoned.label_name(ex.label));
            Predictor predictor = cls ? Predictor([&](const std::string& x) { return cls->predict(x).label_name; })
                                      : Predictor([&](const std::string& x) { return truth.at(x); });
            const auto c = cda(predictor, clean, judge, {e_workers});
            const auto a = asr(predictor, poisoned, e_target, judge, {!e_keep_target, e_trigger, e_workers});
            nlohmann::ordered_json echo{{"experiment", "eval"}, {"trigger", e_trigger}, {"target", e_target},
                                        {"judge", e_judge}, {"exclude_target_origin", !e_keep_target}};
            const auto report = make_report(e_name, c, a, judge, echo);
            if (!e_out.empty()) emit_report(report, e_out);
            fmt::print("{}\n", report_summary(report));
        } else if (*train_cmd) {
            const auto corpus = read_corpus(t_corpus);
            if (t_mode == "full") {
                t_cfg.mode = TrainMode::Full;
                write_checkpoint(train_full(corpus, t_cfg), t_out);
            } else if (t_mode == "lora") {
                t_cfg.mode = TrainMode::Lora;
                const Checkpoint base = t_base.empty() ? make_toy_model(corpus.labels, t_cfg.feature_dim) : read_checkpoint(t_base);
                const auto adapter = train_lora(base, corpus, t_cfg);
                write_checkpoint(merge_lora(base, adapter), t_out);
                if (!t_adapter_out.empty()) write_checkpoint(adapter.to_checkpoint(), t_adapter_out);
            } else {
                throw ValidationError(fmt::format("unknown train mode '{}'", t_mode));
            }
            fmt::print("wrote {}\n", t_out);
        } else if (*corpus_cmd) {
            auto set = generate_toy_corpus(c_seed, c_n, parse_corpus_variant(c_variant));
            if (c_rate > 0.0) {
                if (c_target.empty()) throw ValidationError("--poison-rate needs --target");
                set = poison_dataset(set, {c_trigger, c_target, c_rate, c_seed, TriggerPosition::Prefix}).poisoned;
            }
            if (c_triggered) set = add_trigger(set, c_trigger, TriggerPosition::Prefix);
            write_text(c_out, format_corpus(set));
        }
    } catch (const GateFailure& e) {
        fmt::print(stderr, "gate failure: {}\n", e.what());
        return 3;
    } catch (const ValidationError& e) {
        fmt::print(stderr, "invalid input: {}\n", e.what());
        return 2;
    } catch (const nlohmann::json::exception& e) {
        fmt::print(stderr, "invalid input: {}\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        fmt::print(stderr, "error: {}\n", e.what());
        return 1;
    }
    return 0;
}
