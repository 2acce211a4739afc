#pragma once

#include "cirmask/config.hpp"
#include "cirmask/retrieval.hpp"
#include "cirmask/training.hpp"

#include <string>
#include <vector>

namespace cirmask {

struct Logger {
    Warn info;
    Warn warn;
};

// runs/<UTC timestamp>-<config hash>/ with the resolved config echoed to
// config.json. `explicit_dir` overrides the generated name.
std::string create_run_dir(const ResolvedConfig& cfg, const std::string& explicit_dir = "");

struct TrainingRun {
    TrainReport report;
    std::string checkpoint; // last.safetensors
};

// Loads data.manifest, trains, and writes train_log.jsonl and
// train_report.json into the run directory.
TrainingRun run_training(const ResolvedConfig& cfg, const std::string& run_dir, const Logger& log = {});

// Evaluates eval.checkpoint (or `checkpoint` when given) on the configured
// benchmark. Writes report.json, report.txt and, if requested, grid.png.
EvalResult run_evaluation(const ResolvedConfig& cfg, const std::string& run_dir, const Logger& log = {},
                          const std::string& checkpoint = "");

// One training + evaluation per ablation.taus value, each in
// <run_dir>/tau-<value>/. Writes ablation.txt and ablation.csv.
std::vector<AblationRow> run_ablation(const ResolvedConfig& cfg, const std::string& run_dir, const Logger& log = {});

// Benchmark named by eval.benchmark / eval.data_path / eval.split.
Benchmark benchmark_from(const ResolvedConfig& cfg);

} // namespace cirmask
