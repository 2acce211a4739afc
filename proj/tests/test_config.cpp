#include "cirmask/config.hpp"
#include "cirmask/error.hpp"

#include "support.hpp"

#include <doctest.h>

#include <fstream>

using namespace cirmask;

namespace {

std::string write(const std::string& dir, const std::string& name, const std::string& text) {
    const auto p = testing::scratch(dir) / name;
    std::ofstream(p) << text;
    return p.string();
}

} // namespace

TEST_CASE("defaults carry the published hyperparameters") {
    const ResolvedConfig cfg = resolve_config("", {});
    CHECK(cfg.integer("train.batch_size") == 128);
    CHECK(cfg.number("train.learning_rate") == 1e-4);
    CHECK(cfg.integer("train.epochs") == 10);
    CHECK(cfg.number("loss.alpha") == 0.5);
    CHECK(cfg.number("mask.tau") == 0.3);
    CHECK(cfg.integer("model.hidden_dim") == 3072);
    CHECK(cfg.integer("data.limit") == 250000);
    CHECK(cfg.str("backbone.name") == "vit-l-14");
    CHECK(cfg.is_auto("loss.temperature"));
    CHECK(cfg.integers("eval.k") == std::vector<long long>{1, 5, 10, 50});
    CHECK(cfg.integers("eval.subset_k") == std::vector<long long>{1, 2, 3});
    CHECK(cfg.numbers("ablation.taus") == std::vector<double>{0.2, 0.3, 0.4});
    for (const auto& [k, v] : cfg.entries()) CHECK(v.source == "default");
}

TEST_CASE("every schema key resolves") {
    const ResolvedConfig cfg = resolve_config("", {});
    for (const auto& k : config_schema()) CHECK_NOTHROW(cfg.at(k.key));
    CHECK(cfg.entries().size() == config_schema().size());
}

TEST_CASE("command-line override wins and is tagged") {
    const ResolvedConfig cfg = resolve_config("", {{"mask.tau", "0.4"}});
    CHECK(cfg.number("mask.tau") == 0.4);
    CHECK(cfg.source("mask.tau") == "cli");
    CHECK(cfg.source("loss.alpha") == "default");
}

TEST_CASE("invalid values are rejected") {
    CHECK_THROWS_AS(resolve_config("", {{"mask.tau", "1.5"}}), ConfigError);
    CHECK_THROWS_AS(resolve_config("", {{"mask.tau", "-0.1"}}), ConfigError);
    CHECK_THROWS_AS(resolve_config("", {{"train.batch_size", "0"}}), ConfigError);
    CHECK_THROWS_AS(resolve_config("", {{"loss.temperature", "0"}}), ConfigError);
    CHECK_THROWS_AS(resolve_config("", {{"loss.alpha", "-1"}}), ConfigError);
    CHECK_THROWS_AS(resolve_config("", {{"eval.k", "1,0"}}), ConfigError);
    CHECK_THROWS_AS(resolve_config("", {{"train.lr_schedule", "step"}}), ConfigError);
    CHECK_THROWS_AS(resolve_config("", {{"backbone.name", "resnet"}}), ConfigError);
}

TEST_CASE("type errors name the key and the expected type") {
    try {
        resolve_config("", {{"train.epochs", "ten"}});
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("train.epochs") != std::string::npos);
        CHECK(msg.find("integer") != std::string::npos);
    }
}

TEST_CASE("unknown keys are rejected") {
    CHECK_THROWS_AS(resolve_config("", {{"mask.theta", "0.3"}}), ConfigError);
    const auto f = write("cfg-unknown", "c.json", R"({"train": {"batchsize": 4}})");
    CHECK_THROWS_AS(resolve_config(f, {}), ConfigError);
}

TEST_CASE("nested and flat JSON files") {
    const auto nested = write("cfg-nested", "c.json", R"({"train": {"batch_size": 32, "epochs": 5}, "mask": {"tau": 0.2}})");
    const ResolvedConfig a = resolve_config(nested, {});
    CHECK(a.integer("train.batch_size") == 32);
    CHECK(a.integer("train.epochs") == 5);
    CHECK(a.number("mask.tau") == 0.2);
    CHECK(a.source("train.epochs") == "file");

    const auto flat = write("cfg-flat", "c.json", R"({"train.batch_size": 32, "backbone.name": "stub"})");
    const ResolvedConfig b = resolve_config(flat, {{"train.batch_size", "8"}});
    CHECK(b.integer("train.batch_size") == 8);
    CHECK(b.source("train.batch_size") == "cli");
    CHECK(b.integer("model.hidden_dim") == 64);
}

TEST_CASE("key = value files with comments") {
    const auto f = write("cfg-kv", "fixture.cfg",
                         "# fixture\n"
                         "backbone.name = stub\n"
                         "\n"
                         "mask.relevance_backbone = same  # reuse\n"
                         "eval.k = 1,5,10\n"
                         "eval.exclude_query = false\n");
    const ResolvedConfig cfg = resolve_config(f, {});
    CHECK(cfg.str("backbone.name") == "stub");
    CHECK(cfg.str("mask.relevance_backbone") == "same");
    CHECK(cfg.integers("eval.k") == std::vector<long long>{1, 5, 10});
    CHECK_FALSE(cfg.flag("eval.exclude_query"));

    const auto bad = write("cfg-kv-bad", "bad.cfg", "backbone.name stub\n");
    CHECK_THROWS_AS(resolve_config(bad, {}), ConfigError);
    CHECK_THROWS_AS(resolve_config("/nonexistent.cfg", {}), ConfigError);
}

TEST_CASE("explicit hidden width is kept") {
    CHECK(resolve_config("", {{"model.hidden_dim", "100"}}).integer("model.hidden_dim") == 100);
}

TEST_CASE("echo round-trips to the same hash") {
    const ResolvedConfig cfg = resolve_config("", {{"mask.tau", "0.4"}, {"train.seed", "7"}, {"backbone.name", "stub"}});
    const auto echo = cfg.echo();
    CHECK(echo.at("seed") == 7);
    CHECK(echo.at("config_hash") == cfg.hash());
    CHECK(echo.contains("code_version"));
    CHECK(echo.at("config").at("mask.tau").at("source") == "cli");
    CHECK(echo.at("config").at("mask.tau").at("value") == 0.4);

    const auto f = write("cfg-echo", "config.json", echo.dump(2));
    const ResolvedConfig again = resolve_config(f, {});
    CHECK(again.hash() == cfg.hash());
    for (const auto& [k, v] : cfg.entries()) CHECK(again.at(k).value == v.value);
}

TEST_CASE("hash ignores run keys and tracks everything else") {
    const auto base = resolve_config("", {});
    CHECK(resolve_config("", {{"run.root", "elsewhere"}}).hash() == base.hash());
    CHECK(resolve_config("", {{"train.seed", "1"}}).hash() != base.hash());
    CHECK(base.hash().size() == 12);
}
