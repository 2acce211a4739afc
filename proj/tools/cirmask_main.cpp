#include "cirmask/config.hpp"
#include "cirmask/data_io.hpp"
#include "cirmask/error.hpp"
#include "cirmask/masking.hpp"
#include "cirmask/pipeline.hpp"
#include "cirmask/render.hpp"
#include "cirmask/retrieval.hpp"
#include "cirmask/training.hpp"

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace fs = std::filesystem;
using namespace cirmask;

namespace {

using Overrides = std::vector<std::pair<std::string, std::string>>;

// `--a.b value` or `--a.b=value` pairs left over after CLI11 parsing.
Overrides parse_extras(const std::vector<std::string>& extras) {
    Overrides out;
    for (std::size_t i = 0; i < extras.size(); ++i) {
        const std::string& arg = extras[i];
        if (!arg.starts_with("--") || arg.find('.') == std::string::npos) {
            throw ConfigError("unexpected argument '" + arg + "' (config overrides look like --section.key value)");
        }
        const auto eq = arg.find('=');
        if (eq != std::string::npos) {
            out.emplace_back(arg.substr(2, eq - 2), arg.substr(eq + 1));
            continue;
        }
        if (i + 1 >= extras.size()) {
            throw ConfigError("config override " + arg + " needs a value");
        }
        out.emplace_back(arg.substr(2), extras[++i]);
    }
    return out;
}

Logger make_logger() {
    return {[](const std::string& m) { spdlog::info("{}", m); }, [](const std::string& m) { spdlog::warn("{}", m); }};
}

struct Shortcut {
    std::string flag;
    std::string key;
    std::string help;
    std::optional<std::string> value;
};

void add_shortcuts(CLI::App* cmd, std::vector<Shortcut>& shortcuts) {
    for (auto& s : shortcuts) {
        cmd->add_option(s.flag, s.value, s.help + " (" + s.key + ")");
    }
}

ResolvedConfig resolve(const std::string& file, const std::vector<Shortcut>& shortcuts, const CLI::App* cmd) {
    Overrides ov;
    for (const auto& s : shortcuts) {
        if (s.value) ov.emplace_back(s.key, *s.value);
    }
    for (auto& kv : parse_extras(cmd->remaining())) ov.push_back(std::move(kv));
    return resolve_config(file, ov);
}

int cmd_train(const ResolvedConfig& cfg, const std::string& run_dir_flag) {
    const std::string dir = create_run_dir(cfg, run_dir_flag);
    spdlog::info("run directory {}", dir);
    const TrainingRun run = run_training(cfg, dir, make_logger());
    spdlog::info("{} steps in {:.1f} s; checkpoint {}", run.report.history.size(), run.report.wall_seconds,
                 run.checkpoint);
    if (run.report.backbone_checksum_before != run.report.backbone_checksum_after) {
        throw ContractViolation("backbone weights changed during training");
    }
    std::cout << run.checkpoint << "\n";
    return 0;
}

int cmd_evaluate(const ResolvedConfig& cfg, const std::string& run_dir_flag) {
    if (cfg.str("eval.checkpoint").empty()) {
        throw ConfigError("missing required config key 'eval.checkpoint' (--checkpoint)");
    }
    const std::string dir = create_run_dir(cfg, run_dir_flag);
    const EvalResult res = run_evaluation(cfg, dir, make_logger());
    std::cout << res.report.to_text();
    spdlog::info("report written to {}", (fs::path(dir) / "report.json").string());
    return 0;
}

int cmd_retrieve(const ResolvedConfig& cfg, const std::string& run_dir_flag, const std::string& image,
                 const std::string& text, int top) {
    if (cfg.str("eval.checkpoint").empty()) {
        throw ConfigError("missing required config key 'eval.checkpoint' (--checkpoint)");
    }
    const std::string dir = create_run_dir(cfg, run_dir_flag);
    auto backbone = backbone_from(cfg);
    const Checkpoint ck = load_checkpoint(cfg.str("eval.checkpoint"), &backbone->info());
    const Benchmark bench = benchmark_from(cfg);
    const GalleryIndex index = build_index(bench.gallery, *backbone);
    ImageBatch b;
    b.images.push_back(load_image(image, backbone->info()));
    const Vec f = backbone->encode_image(b).vectors.row(0).transpose();
    const Logger log = make_logger();
    const Vec q = embed_query(f, text, ck.net, *backbone, log.warn);
    const auto ids = rank(q, index, top, {}, log.warn);
    nlohmann::json out = nlohmann::json::array();
    for (std::size_t i = 0; i < ids.size(); ++i) {
        const double score = index.features().row(*index.find(ids[i])).dot(q.transpose());
        std::cout << i + 1 << "\t" << ids[i] << "\t" << score << "\n";
        out.push_back({{"rank", i + 1}, {"id", ids[i]}, {"score", score}});
    }
    std::ofstream(fs::path(dir) / "retrieve.json") << out.dump(2) << "\n";
    return 0;
}

int cmd_preview(const ResolvedConfig& cfg, const std::string& run_dir_flag, const std::string& image,
                const std::string& caption, const std::string& partner, std::string out_path) {
    const std::string dir = create_run_dir(cfg, run_dir_flag);
    auto backbone = backbone_from(cfg);
    auto tagger = make_pos_tagger(cfg.str("mask.pos_tagger"));
    auto provider = relevance_provider_from(cfg, backbone);
    const auto& info = backbone->info();
    const Image own = load_image(image, info);
    Image other = partner.empty() ? Image(own.height, own.width, 0.0f)
                                  : load_image(partner, info);
    const TokenSequence tokens = backbone->tokenize(caption);
    const RemovedWord removed = select_first_noun(tokens, *tagger);
    const TokenSequence masked = mask_text(tokens, removed);
    const RelevanceMap map = relevance_map(*provider, own, removed.word);
    const Image mixed = mix_images(own, other, split_masks(map, cfg.number("mask.tau")));
    std::string masked_caption;
    for (std::size_t i = 0; i < masked.words.size(); ++i) {
        masked_caption += (i ? " " : "") + masked.words[i];
    }
    if (out_path.empty()) out_path = (fs::path(dir) / "preview.png").string();
    emit_mask_preview(denormalize(own, info), map, denormalize(mixed, info), masked_caption, out_path);
    std::cout << "removed word: " << removed.word << "\nmasked caption: " << masked_caption << "\n"
              << out_path << "\n";
    return 0;
}

int cmd_ablate(const ResolvedConfig& cfg, const std::string& run_dir_flag) {
    const std::string dir = create_run_dir(cfg, run_dir_flag);
    const auto rows = run_ablation(cfg, dir, make_logger());
    std::cout << ablation_text(rows);
    spdlog::info("table written to {}", (fs::path(dir) / "ablation.csv").string());
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    spdlog::set_default_logger(spdlog::stderr_color_st("cirmask"));
    spdlog::set_pattern("[%H:%M:%S] %^%l%$ %v");

    CLI::App app{"Zero-shot composed image retrieval: masked textual inversion training and evaluation"};
    app.set_version_flag("--version", std::string(CIRMASK_VERSION));
    app.require_subcommand(1);

    std::string config_file, run_dir, image, text, caption, partner, out, manifest, synthetic, cache;
    int top = 10;
    FixtureOptions fixture;

    auto common = [&](CLI::App* cmd) {
        cmd->add_option("--config", config_file, "config file (JSON or key = value)");
        cmd->add_option("--run-dir", run_dir, "exact run directory instead of runs/<timestamp>-<hash>");
        cmd->allow_extras();
        cmd->footer("Any config key can be overridden with --section.key value.");
    };

    std::vector<Shortcut> train_sc{{"--seed", "train.seed", "random seed", {}},
                                   {"--manifest", "data.manifest", "training manifest", {}},
                                   {"--resume", "train.resume", "checkpoint to resume from", {}}};
    std::vector<Shortcut> eval_sc{{"--checkpoint", "eval.checkpoint", "inversion checkpoint", {}},
                                  {"--benchmark", "eval.benchmark", "cirr | fashioniq | fixture", {}},
                                  {"--data", "eval.data_path", "benchmark root", {}},
                                  {"--split", "eval.split", "benchmark split", {}},
                                  {"--k", "eval.k", "Recall@k cutoffs, e.g. 1,5,10,50", {}}};
    std::vector<Shortcut> retrieve_sc{{"--checkpoint", "eval.checkpoint", "inversion checkpoint", {}},
                                      {"--benchmark", "eval.benchmark", "gallery format", {}},
                                      {"--data", "eval.data_path", "benchmark root holding the gallery", {}},
                                      {"--split", "eval.split", "benchmark split", {}}};
    std::vector<Shortcut> preview_sc{{"--tau", "mask.tau", "relevance threshold", {}}};
    std::vector<Shortcut> ablate_sc{{"--taus", "ablation.taus", "thresholds, e.g. 0.2,0.3,0.4", {}},
                                    {"--seed", "train.seed", "random seed", {}},
                                    {"--manifest", "data.manifest", "training manifest", {}},
                                    {"--data", "eval.data_path", "benchmark root", {}}};

    auto* train = app.add_subcommand("train", "train the inversion network");
    common(train);
    add_shortcuts(train, train_sc);

    auto* evaluate_cmd = app.add_subcommand("evaluate", "Recall@k / Recall_Subset@k on a benchmark");
    common(evaluate_cmd);
    add_shortcuts(evaluate_cmd, eval_sc);

    auto* retrieve = app.add_subcommand("retrieve", "rank a gallery for one (image, text) query");
    common(retrieve);
    add_shortcuts(retrieve, retrieve_sc);
    retrieve->add_option("--image", image, "query image")->required();
    retrieve->add_option("--text", text, "modification text")->required();
    retrieve->add_option("--top", top, "results to print")->check(CLI::PositiveNumber);

    auto* preview = app.add_subcommand("preview-mask", "render the masking of one image-caption pair");
    common(preview);
    add_shortcuts(preview, preview_sc);
    preview->add_option("--image", image, "image")->required();
    preview->add_option("--caption", caption, "caption")->required();
    preview->add_option("--partner", partner, "partner image (default: mean color)");
    preview->add_option("--out", out, "output image (default <run dir>/preview.png)");

    auto* ablate = app.add_subcommand("ablate-tau", "train and evaluate once per threshold");
    common(ablate);
    add_shortcuts(ablate, ablate_sc);

    auto* ingest = app.add_subcommand("ingest", "fetch manifest URLs into the cache, or write the synthetic fixture");
    auto* ingest_manifest_opt = ingest->add_option("--manifest", manifest, "manifest with URLs");
    ingest->add_option("--out", out, "manifest with local paths");
    ingest->add_option("--cache", cache, "cache root (default $CIRMASK_CACHE or ./cache)");
    auto* synth_opt = ingest->add_option("--synthetic", synthetic, "write the synthetic fixture into this directory");
    ingest->add_option("--pairs", fixture.pairs, "fixture pairs")->check(CLI::PositiveNumber);
    ingest->add_option("--triplets", fixture.triplets, "fixture triplets")->check(CLI::PositiveNumber);
    ingest->add_option("--size", fixture.image_size, "fixture image size")->check(CLI::Range(8, 1024));
    ingest->add_option("--seed", fixture.seed, "fixture seed");
    synth_opt->excludes(ingest_manifest_opt);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (*train) return cmd_train(resolve(config_file, train_sc, train), run_dir);
        if (*evaluate_cmd) return cmd_evaluate(resolve(config_file, eval_sc, evaluate_cmd), run_dir);
        if (*retrieve) return cmd_retrieve(resolve(config_file, retrieve_sc, retrieve), run_dir, image, text, top);
        if (*preview) return cmd_preview(resolve(config_file, preview_sc, preview), run_dir, image, caption, partner, out);
        if (*ablate) return cmd_ablate(resolve(config_file, ablate_sc, ablate), run_dir);
        if (*ingest) {
            if (!synthetic.empty()) {
                const FixtureSummary s = write_synthetic_fixture(synthetic, fixture);
                std::cout << "manifest: " << s.manifest << "\nbenchmark: " << s.benchmark_root << "\n"
                          << s.pairs << " pairs, " << s.triplets << " triplets\n";
                return 0;
            }
            if (manifest.empty() || out.empty()) {
                throw ConfigError("ingest needs --manifest and --out, or --synthetic DIR");
            }
            const IngestReport r = ingest_manifest(manifest, out, cache.empty() ? default_cache_root() : cache);
            for (const auto& d : r.drops) {
                spdlog::warn("{} (line {}): {}", d.locator, d.line, to_string(d.reason));
            }
            std::cout << r.fetched << " fetched, " << r.cached << " already cached, " << r.local << " local, "
                      << r.drops.size() << " dropped\n";
            return r.drops.empty() ? 0 : 1;
        }
    } catch (const ConfigError& e) {
        spdlog::error("{}", e.what());
        return 2;
    } catch (const std::exception& e) {
        spdlog::error("{}", e.what());
        return 1;
    }
    return 2;
}
