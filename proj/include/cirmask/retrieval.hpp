#pragma once

#include "cirmask/backbone.hpp"
#include "cirmask/data_io.hpp"
#include "cirmask/inversion.hpp"

#include <nlohmann/json.hpp>

#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace cirmask {

using Warn = std::function<void(const std::string&)>;

// Encoded gallery. Ids are unique and rows unit-normalized.
class GalleryIndex {
public:
    GalleryIndex() = default;
    GalleryIndex(std::vector<std::string> ids, Mat features, std::string fingerprint,
                 std::vector<std::string> categories = {});

    int size() const { return static_cast<int>(ids_.size()); }
    const std::vector<std::string>& ids() const { return ids_; }
    const std::vector<std::string>& categories() const { return categories_; }
    const Mat& features() const { return features_; }
    const std::string& fingerprint() const { return fingerprint_; }
    std::optional<int> find(const std::string& id) const;

    void save(const std::string& path) const;
    // Refuses an index built with a different backbone fingerprint.
    static GalleryIndex load(const std::string& path, const std::string& expected_fingerprint);

private:
    std::vector<std::string> ids_;
    std::vector<std::string> categories_;
    Mat features_;
    std::string fingerprint_;
    std::unordered_map<std::string, int> lookup_;
};

// Throws InvalidInput for an empty gallery, DataError for unloadable images.
GalleryIndex build_index(std::span<const GalleryItem> gallery, const Backbone& backbone);

struct RankOptions {
    std::optional<std::string> exclude_id;
    std::optional<std::string> category; // only rank items of this category
};

// Top-k ids by descending inner product, ties by ascending id. k larger than
// the candidate count is clamped with a warning.
std::vector<std::string> rank(const Vec& query, const GalleryIndex& index, int k, const RankOptions& options = {},
                              const Warn& warn = {});

// Full ranking of the given candidate ids only.
std::vector<std::string> rank_subset(const Vec& query, const GalleryIndex& index,
                                     std::span<const std::string> candidates, const RankOptions& options = {});

// φ(f^q) spliced into "a photo of * , <text>". Over-long text is cut at word
// boundaries with a warning.
Vec embed_query(const Vec& query_image_feature, std::string_view query_text, const InversionNetwork& net,
                const Backbone& backbone, const Warn& warn = {});

// 100 · hits / γ. Throws InvalidInput when γ = 0 or the sizes differ.
double recall_at_k(std::span<const std::vector<std::string>> rankings, std::span<const EvalTriplet> triplets, int k);

struct SubsetRecall {
    double value = 0.0;
    std::size_t counted = 0;
    std::size_t excluded = 0; // triplets without a subset
};

// `subset_rankings[i]` ranks triplet i's subset; triplets without subset_ids
// are excluded and counted.
SubsetRecall recall_subset_at_k(std::span<const std::vector<std::string>> subset_rankings,
                                std::span<const EvalTriplet> triplets, int k);

struct RecallReport {
    std::vector<std::pair<std::string, double>> metrics; // "R@1" … "Rs@3", percentages
    std::size_t queries = 0;                             // γ
    std::size_t subset_queries = 0;
    std::size_t subset_excluded = 0;
    std::size_t excluded_triplets = 0; // dropped while loading the benchmark
    std::map<std::string, std::vector<std::pair<std::string, double>>> per_category;

    std::optional<double> get(const std::string& name) const;
    std::string to_text() const;
    nlohmann::json to_json() const;
};

struct EvalOptions {
    std::vector<int> ks{1, 5, 10, 50};
    std::vector<int> subset_ks{1, 2, 3};
    bool exclude_query = true;
};

struct EvalResult {
    RecallReport report;
    std::vector<std::vector<std::string>> rankings; // top max(k) per triplet
    std::vector<std::vector<std::string>> subset_rankings;
};

// Computes metrics from precomputed query vectors (one per triplet).
EvalResult score_queries(const Mat& queries, std::span<const EvalTriplet> triplets, const GalleryIndex& index,
                         const EvalOptions& options, const Warn& warn = {});

// Full evaluation: embeds every query with φ and scores it. φ is not modified.
EvalResult evaluate(const Benchmark& benchmark, const GalleryIndex& index, const InversionNetwork& net,
                    const Backbone& backbone, const EvalOptions& options, const Warn& warn = {});

struct AblationRow {
    double tau = 0.0;
    RecallReport report;
};

// One train-and-evaluate run per τ, in the given order.
std::vector<AblationRow> run_tau_ablation(std::span<const double> taus,
                                          const std::function<RecallReport(double)>& train_and_evaluate);

std::string ablation_text(std::span<const AblationRow> rows);
std::string ablation_csv(std::span<const AblationRow> rows);

} // namespace cirmask
