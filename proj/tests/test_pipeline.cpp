// Copyright 2026 The Conflux Authors
// SPDX-License-Identifier: Apache-2.0

#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "cli_runner.hpp"
#include "conflux/checkpoint.hpp"
#include "conflux/dataset.hpp"
#include "conflux/errors.hpp"
#include "conflux/pipeline.hpp"

using namespace conflux;
namespace fs = std::filesystem;

namespace {

PipelineConfig config_with(std::vector<std::string> overrides) {
    auto doc = default_config();
    for (const auto& o : overrides) apply_override(doc, o);
    return PipelineConfig::from_json(doc);
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void spit(const fs::path& p, const std::string& s) {
    std::ofstream out(p, std::ios::binary);
    out << s;
}

Checkpoint vec(std::vector<float> v) {
    Checkpoint c;
    c.add("w", Tensor::vector(std::move(v)));
    return c;
}

} // namespace

TEST(Config, OverridesParseJsonOrString) {
    auto doc = default_config();
    apply_override(doc, "merge.t=0.3");
    apply_override(doc, "merge.method=ties");
    apply_override(doc, "poison.trigger=\"zz\"");
    EXPECT_DOUBLE_EQ(doc["merge"]["t"].get<double>(), 0.3);
    EXPECT_EQ(doc["merge"]["method"], "ties");
    EXPECT_EQ(doc["poison"]["trigger"], "zz");
    EXPECT_THROW(apply_override(doc, "merge.nope=1"), ValidationError);
    EXPECT_THROW(apply_override(doc, "merge.t"), ValidationError);
}

TEST(Config, UnknownKeysRejected) {
    EXPECT_THROW(merge_config(default_config(), nlohmann::json::parse(R"({"merg": {}})")), ValidationError);
    EXPECT_THROW(merge_config(default_config(), nlohmann::json::parse(R"({"merge": {"tt": 1}})")), ValidationError);
    const auto ok = merge_config(default_config(), nlohmann::json::parse(R"({"merge": {"t": 0.25}})"));
    EXPECT_DOUBLE_EQ(ok["merge"]["t"].get<double>(), 0.25);
}

TEST(Config, HashTracksContent) {
    auto a = default_config();
    auto b = default_config();
    EXPECT_EQ(config_hash(a), config_hash(b));
    EXPECT_TRUE(config_hash(a).starts_with("fnv1a64:"));
    EXPECT_EQ(config_hash(a).size(), 8u + 16u);
    apply_override(b, "seed=8");
    EXPECT_NE(config_hash(a), config_hash(b));
}

TEST(Config, SubConfigsValidated) {
    EXPECT_THROW(config_with({"poison.rate=1.5"}), ValidationError);
    EXPECT_THROW(config_with({"merge.t=-0.1"}), ValidationError);
    EXPECT_THROW(config_with({"merge.method=average"}), ValidationError);
    EXPECT_THROW(config_with({"textrank.d=1.0"}), ValidationError);
    EXPECT_THROW(config_with({"paths.train_corpus=\"/no/such/file.tsv\""}), ValidationError);
    EXPECT_NO_THROW(config_with({}));
}

TEST(Demo, ZeroMergeWeightKeepsBackdooredModel) {
    const auto res = demo_backdoor(config_with({"merge.t=0"}));
    const auto& bd = res.reports.at("backdoored");
    const auto& in = res.reports.at("internal");
    EXPECT_EQ(in.cda, bd.cda);
    EXPECT_EQ(in.asr, bd.asr);
    EXPECT_EQ(in.clean_verdicts, bd.clean_verdicts);
    EXPECT_EQ(in.poisoned_verdicts, bd.poisoned_verdicts);
    for (const auto& [name, t] : res.backdoored.entries()) EXPECT_EQ(res.merged.at(name), t);
}

TEST(Demo, DeterministicAndLabelled) {
    const auto a = demo_backdoor(config_with({}));
    const auto b = demo_backdoor(config_with({}));
    ASSERT_EQ(a.reports.size(), 4u);
    for (const auto& [name, rep] : a.reports) {
        EXPECT_EQ(format_report(rep), format_report(b.reports.at(name))) << name;
        EXPECT_EQ(rep.config.at("config_hash"), config_with({}).hash());
    }
    EXPECT_EQ(serialize_checkpoint(a.merged), serialize_checkpoint(b.merged));
    EXPECT_EQ(serialize_checkpoint(a.conflict), serialize_checkpoint(b.conflict));
}

TEST(Demo, GateRejectsWeakBackdoor) {
    EXPECT_THROW(demo_backdoor(config_with({"poison.rate=0.002", "backdoor_train.epochs=1"})), GateFailure);
}

TEST(Demo, SweepCoversNinePoints) {
    const auto res = demo_backdoor(config_with({"sweep=[0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9]"}));
    ASSERT_EQ(res.sweep.size(), 9u);
    EXPECT_DOUBLE_EQ(res.sweep.front().t, 0.1);
    EXPECT_LE(res.sweep.back().asr, res.sweep.front().asr);
}

TEST(RoleSwap, ReportsCarryExperimentLabels) {
    const auto r = role_swap(config_with({}));
    EXPECT_EQ(r.experiment1.config.at("experiment"), "role-swap-1");
    EXPECT_EQ(r.experiment2.config.at("experiment"), "role-swap-2");
}

TEST(Adaptive, Deterministic) {
    const auto a = adaptive(config_with({}));
    const auto b = adaptive(config_with({}));
    EXPECT_EQ(format_report(a.defended), format_report(b.defended));
    EXPECT_GE(a.adapted.asr, 0.5);
}

TEST(Cli, TextRankPathTopKeyword) {
    const auto r = clitest::run("textrank --window 1 --eta 0", "aa bb cc");
    ASSERT_EQ(r.code, 0);
    EXPECT_TRUE(r.out.starts_with("bb\t")) << r.out;
    const auto strict = clitest::run("textrank --window 1", "aa bb cc");
    EXPECT_EQ(strict.out, "bb\t1.459459\n");
}

TEST(Cli, EvalOracleIsPerfect) {
    const auto dir = clitest::scratch("cli_eval");
    write_corpus(generate_toy_corpus(3, 20, CorpusVariant::Sentiment), dir / "clean.tsv");
    const auto r = clitest::run("eval --oracle --clean " + (dir / "clean.tsv").string() +
                                " --target positive --trigger cf -o " + (dir / "r.json").string());
    ASSERT_EQ(r.code, 0);
    EXPECT_TRUE(r.out.starts_with("CDA=1.0000\n")) << r.out;
    EXPECT_EQ(read_report(dir / "r.json").cda, 1.0);
}

TEST(Cli, MergeLinearEndpointAndTies) {
    const auto dir = clitest::scratch("cli_merge");
    write_checkpoint(vec({1, 2, 3}), dir / "a.safetensors");
    write_checkpoint(vec({4, 5, 6}), dir / "b.safetensors");
    auto r = clitest::run("merge --method linear --t 1 --a " + (dir / "a.safetensors").string() + " --b " +
                          (dir / "b.safetensors").string() + " -o " + (dir / "m.safetensors").string());
    ASSERT_EQ(r.code, 0);
    EXPECT_EQ(read_checkpoint(dir / "m.safetensors").at("w"), Tensor::vector({1, 2, 3}));

    write_checkpoint(vec({0, 0, 0, 0}), dir / "base.safetensors");
    write_checkpoint(vec({4, -2, 1, 0}), dir / "ta.safetensors");
    write_checkpoint(vec({-3, 5, 0, 2}), dir / "tb.safetensors");
    r = clitest::run("merge --method ties --k 50 --lambda 1 --base " + (dir / "base.safetensors").string() + " --a " +
                     (dir / "ta.safetensors").string() + " --b " + (dir / "tb.safetensors").string() + " -o " +
                     (dir / "t.safetensors").string());
    ASSERT_EQ(r.code, 0);
    EXPECT_EQ(read_checkpoint(dir / "t.safetensors").at("w"), Tensor::vector({2, 2.5f, 0, 0}));
}

TEST(Cli, MergePassthroughPlan) {
    const auto dir = clitest::scratch("cli_pass");
    Checkpoint a, b;
    a.add("layers.0.w", Tensor::vector({1}));
    a.add("layers.1.w", Tensor::vector({2}));
    b.add("layers.0.w", Tensor::vector({3}));
    write_checkpoint(a, dir / "a.safetensors");
    write_checkpoint(b, dir / "b.safetensors");
    spit(dir / "plan.json", R"({"layer_plan": [{"source": "x", "from": "layers.0", "to": "layers.0"},
                                               {"source": "y", "from": "layers.0", "to": "layers.1"}]})");
    const auto r = clitest::run("merge --method passthrough --plan " + (dir / "plan.json").string() + " --source x=" +
                                (dir / "a.safetensors").string() + " --source y=" + (dir / "b.safetensors").string() +
                                " -o " + (dir / "p.safetensors").string());
    ASSERT_EQ(r.code, 0);
    const auto p = read_checkpoint(dir / "p.safetensors");
    EXPECT_EQ(p.at("layers.0.w"), Tensor::vector({1}));
    EXPECT_EQ(p.at("layers.1.w"), Tensor::vector({3}));
}

TEST(Cli, EvidenceBundleIsDeterministic) {
    const auto dir = clitest::scratch("cli_evidence");
    write_checkpoint(make_toy_model({"positive", "negative"}, 64), dir / "m.safetensors");
    const std::string args = "evidence --query 'a dull film with wooden acting' --model " + (dir / "m.safetensors").string();
    const auto a = clitest::run(args + " -o " + (dir / "a.json").string());
    const auto b = clitest::run(args + " -o " + (dir / "b.json").string());
    ASSERT_EQ(a.code, 0);
    ASSERT_EQ(b.code, 0);
    EXPECT_EQ(slurp(dir / "a.json"), slurp(dir / "b.json"));
    EXPECT_EQ(nlohmann::json::parse(slurp(dir / "a.json"))["provenance"], "constructed");
}

TEST(Cli, ExitCodes) {
    EXPECT_EQ(clitest::run("demo-backdoor --set merge.nope=1").code, 2);
    EXPECT_EQ(clitest::run("demo-backdoor --set merge.t=2").code, 2);
    EXPECT_EQ(clitest::run("merge --method bogus").code, 2);
    EXPECT_EQ(clitest::run("demo-backdoor --set poison.rate=0.002 --set backdoor_train.epochs=1").code, 3);
    EXPECT_EQ(clitest::run("eval --clean /no/such/file --target x --oracle").code, 1);
}

TEST(Cli, DemoWritesReportsAndSummary) {
    const auto dir = clitest::scratch("cli_demo");
    const auto r = clitest::run("demo-backdoor --report-dir " + (dir / "r").string());
    ASSERT_EQ(r.code, 0);
    for (const char* f : {"backdoored.json", "internal.json", "external.json", "combined.json"})
        EXPECT_TRUE(fs::exists(dir / "r" / f)) << f;
    EXPECT_NE(r.out.find("CDA="), std::string::npos);
}

TEST(Config, ShippedFilesLoad) {
    const fs::path dir = fs::path(CONFLUX_SOURCE_DIR) / "configs";
    const auto cfg = PipelineConfig::load(dir / "default.json");
    EXPECT_EQ(cfg.hash(), PipelineConfig::from_json(default_config()).hash());

    const auto client = make_client(nlohmann::json{{"kind", "mock"}, {"transcript", "mock_external.json"}}, dir);
    EXPECT_TRUE(client->generate({"explain", "keywords: plot, thin", {{"K", "plot, thin"}}}).starts_with("A plot is"));
}
