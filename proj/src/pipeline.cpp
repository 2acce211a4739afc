#include "cirmask/pipeline.hpp"

#include "cirmask/error.hpp"
#include "cirmask/render.hpp"

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

namespace cirmask {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

void say(const Warn& w, const std::string& msg) {
    if (w) w(msg);
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << text;
}

std::string require(const ResolvedConfig& cfg, const std::string& key) {
    const std::string v = cfg.str(key);
    if (v.empty()) {
        throw ConfigError("missing required config key '" + key + "'");
    }
    return v;
}

std::string tau_label(double tau) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "tau-%.2f", tau);
    return buf;
}

} // namespace

std::string create_run_dir(const ResolvedConfig& cfg, const std::string& explicit_dir) {
    fs::path dir;
    if (!explicit_dir.empty()) {
        dir = explicit_dir;
    } else {
        const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
        std::tm tm{};
        gmtime_r(&now, &tm);
        std::ostringstream name;
        name << std::put_time(&tm, "%Y%m%d-%H%M%S") << "-" << cfg.hash();
        dir = fs::path(cfg.str("run.root")) / name.str();
        for (int i = 1; fs::exists(dir); ++i) {
            dir = fs::path(cfg.str("run.root")) / (name.str() + "-" + std::to_string(i));
        }
    }
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) {
        throw IoError("cannot create run directory " + dir.string() + ": " + ec.message());
    }
    write_text(dir / "config.json", cfg.echo().dump(2) + "\n");
    return dir.string();
}

TrainingRun run_training(const ResolvedConfig& cfg, const std::string& run_dir, const Logger& log) {
    TrainConfig tc = train_config_from(cfg);
    tc.manifest = require(cfg, "data.manifest");
    if (tc.checkpoint_dir.empty()) {
        tc.checkpoint_dir = (fs::path(run_dir) / "checkpoints").string();
    }
    auto backbone = backbone_from(cfg);
    auto tagger = make_pos_tagger(cfg.str("mask.pos_tagger"));
    auto provider = relevance_provider_from(cfg, backbone);

    const PairDataset data = load_pairs(tc.manifest, tc.limit, tc.cache_dir);
    for (const auto& d : data.drops) {
        say(log.warn, "dropped " + d.locator + " (line " + std::to_string(d.line) + "): " +
                          std::string(to_string(d.reason)));
    }
    say(log.info, std::to_string(data.records.size()) + " training pairs, " + std::to_string(data.drops.size()) +
                      " dropped");

    std::ofstream jsonl(fs::path(run_dir) / "train_log.jsonl");
    if (!jsonl) throw IoError("cannot write the training log in " + run_dir);

    Trainer trainer(tc, backbone, tagger, provider);
    TrainHooks hooks;
    hooks.warn = log.warn;
    hooks.on_step = [&](const StepRecord& r) {
        const json line = {{"step", r.step},       {"epoch", r.epoch},         {"batch", r.batch},
                           {"qt_i2t", r.loss.qt_i2t}, {"qt_t2i", r.loss.qt_t2i}, {"org_i2t", r.loss.org_i2t},
                           {"org_t2i", r.loss.org_t2i}, {"qt", r.loss.qt},       {"org", r.loss.org},
                           {"total", r.loss.total}};
        jsonl << line.dump() << '\n';
    };
    TrainingRun run;
    run.report = trainer.run(data, hooks);
    jsonl.flush();

    json skips = json::array();
    for (std::size_t e = 0; e < run.report.epoch_skips.size(); ++e) {
        const auto& s = run.report.epoch_skips[e];
        skips.push_back({{"no_maskable_word", s.no_maskable_word},
                         {"relevance_unavailable", s.relevance_unavailable},
                         {"query_too_long", s.query_too_long},
                         {"undecodable", s.undecodable}});
        say(log.info, "epoch " + std::to_string(e + 1) + ": mean total loss " +
                          std::to_string(run.report.epoch_mean_total[e]) + ", skipped samples " +
                          std::to_string(s.total()));
    }
    const json report = {{"steps", run.report.history.size()},
                         {"skipped_steps", run.report.skipped_steps},
                         {"epoch_mean_total", run.report.epoch_mean_total},
                         {"epoch_skips", skips},
                         {"wall_seconds", run.report.wall_seconds},
                         {"final_checkpoint", run.report.final_checkpoint},
                         {"backbone_checksum_before", run.report.backbone_checksum_before},
                         {"backbone_checksum_after", run.report.backbone_checksum_after},
                         {"dataset_size", run.report.dataset_size},
                         {"dropped_records", run.report.dropped_records}};
    write_text(fs::path(run_dir) / "train_report.json", report.dump(2) + "\n");
    run.checkpoint = (fs::path(tc.checkpoint_dir) / "last.safetensors").string();
    return run;
}

Benchmark benchmark_from(const ResolvedConfig& cfg) {
    const std::string root = require(cfg, "eval.data_path");
    std::string format = cfg.str("eval.benchmark");
    if (format == "fixture") format = "cirr";
    return load_triplets(root, format, cfg.str("eval.split"));
}

EvalResult run_evaluation(const ResolvedConfig& cfg, const std::string& run_dir, const Logger& log,
                          const std::string& checkpoint) {
    const std::string ck_path = checkpoint.empty() ? require(cfg, "eval.checkpoint") : checkpoint;
    auto backbone = backbone_from(cfg);
    const Checkpoint ck = load_checkpoint(ck_path, &backbone->info());
    if (!ck.meta.backbone_fingerprint.empty() && ck.meta.backbone_fingerprint != backbone->fingerprint()) {
        say(log.warn, "checkpoint was trained with backbone " + ck.meta.backbone_fingerprint + ", evaluating with " +
                          backbone->fingerprint());
    }
    const Benchmark bench = benchmark_from(cfg);
    if (bench.excluded) {
        say(log.warn, std::to_string(bench.excluded) + " triplets excluded: target not in gallery");
    }
    const GalleryIndex index = build_index(bench.gallery, *backbone);
    index.save((fs::path(run_dir) / "gallery-index.safetensors").string());

    EvalOptions opt;
    opt.ks.clear();
    opt.subset_ks.clear();
    for (auto k : cfg.integers("eval.k")) opt.ks.push_back(static_cast<int>(k));
    for (auto k : cfg.integers("eval.subset_k")) opt.subset_ks.push_back(static_cast<int>(k));
    opt.exclude_query = cfg.flag("eval.exclude_query");

    EvalResult res = evaluate(bench, index, ck.net, *backbone, opt, log.warn);
    write_text(fs::path(run_dir) / "report.json", res.report.to_json().dump(2) + "\n");
    write_text(fs::path(run_dir) / "report.txt", res.report.to_text());

    const auto samples = static_cast<std::size_t>(cfg.integer("eval.grid_samples"));
    if (samples > 0) {
        const auto top = static_cast<std::size_t>(cfg.integer("eval.grid_top"));
        std::map<std::string, std::string> paths;
        for (const auto& g : bench.gallery) paths[g.id] = g.path;
        auto display = [&](const std::string& path) {
            try {
                return denormalize(load_image(path, backbone->info()), backbone->info());
            } catch (const Error&) {
                return Image{};
            }
        };
        std::vector<GridRow> rows;
        for (std::size_t i = 0; i < std::min(samples, bench.triplets.size()); ++i) {
            const auto& t = bench.triplets[i];
            GridRow row{display(t.query_image), t.query_text, {}, {}};
            for (std::size_t j = 0; j < std::min(top, res.rankings[i].size()); ++j) {
                const auto& id = res.rankings[i][j];
                row.retrieved.push_back(display(paths[id]));
                row.is_target.push_back(id == t.target_id);
            }
            rows.push_back(std::move(row));
        }
        emit_result_grid(rows, (fs::path(run_dir) / "grid.png").string());
    }
    return res;
}

std::vector<AblationRow> run_ablation(const ResolvedConfig& cfg, const std::string& run_dir, const Logger& log) {
    const auto taus = cfg.numbers("ablation.taus");
    auto rows = run_tau_ablation(taus, [&](double tau) {
        ResolvedConfig c = cfg;
        c.set_json("mask.tau", tau, "ablation");
        const fs::path dir = fs::path(run_dir) / tau_label(tau);
        fs::create_directories(dir);
        say(log.info, "tau " + std::to_string(tau) + ": training");
        const TrainingRun tr = run_training(c, dir.string(), log);
        say(log.info, "tau " + std::to_string(tau) + ": evaluating");
        return run_evaluation(c, dir.string(), log, tr.checkpoint).report;
    });
    write_text(fs::path(run_dir) / "ablation.txt", ablation_text(rows));
    write_text(fs::path(run_dir) / "ablation.csv", ablation_csv(rows));
    return rows;
}

} // namespace cirmask
