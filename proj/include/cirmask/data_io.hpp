#pragma once

#include "cirmask/backbone.hpp"
#include "cirmask/tensor.hpp"

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace cirmask {

enum class DropReason { malformed_line, empty_caption, missing_file, url_not_cached, undecodable, fetch_failed };

std::string_view to_string(DropReason reason);

struct DropRecord {
    std::string locator;
    std::size_t line = 0;
    DropReason reason = DropReason::missing_file;
};

struct PairRecord {
    std::string image_path; // resolved local path
    std::string caption;
    std::size_t line = 0;   // 1-based manifest line, also the ordering key
};

struct PairDataset {
    std::vector<PairRecord> records;
    std::vector<DropRecord> drops;
    std::string manifest;
};

// Reads `caption<TAB>image_path_or_url` lines. Relative paths resolve against
// the manifest directory; URLs resolve through the image cache. Records whose
// image cannot be found or whose header is not a readable image are dropped
// and reported. At most `limit` usable records are kept. Throws ConfigError
// when the manifest is missing.
PairDataset load_pairs(const std::string& manifest, std::size_t limit, const std::string& cache_root = "");

// Deterministic permutation of [0, n) for (seed, epoch).
std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, int epoch);

struct EvalTriplet {
    std::string pair_id;
    std::string query_id;
    std::string query_image; // locator
    std::string query_text;
    std::string target_id;
    std::optional<std::vector<std::string>> subset_ids;
    std::string category;
};

struct GalleryItem {
    std::string id;
    std::string path;
    std::string category;
};

struct Benchmark {
    std::string format;
    std::string split;
    std::vector<EvalTriplet> triplets;
    std::vector<GalleryItem> gallery;
    std::size_t excluded = 0; // triplets whose target is missing from the gallery
};

// `format` is "cirr" or "fashioniq". CIRR reads captions/cap.rc2.<split>.json
// and image_splits/split.rc2.<split>.json (optionally under a cirr/
// subdirectory); FashionIQ reads captions/cap.<category>.<split>.json and
// image_splits/split.<category>.<split>.json for dress, shirt and toptee.
// Malformed JSON throws DataError with file:line:column context.
Benchmark load_triplets(const std::string& root, const std::string& format, const std::string& split);

// Decode, resize the shorter side to the backbone resolution (bicubic),
// center-crop, and normalize with the backbone mean/std. Throws DataError
// when the bytes are not a decodable image.
Image preprocess_image(std::span<const unsigned char> bytes, const BackboneInfo& info);
Image load_image(const std::string& path, const BackboneInfo& info);

// Inverse of the channel normalization, clamped to [0, 1].
Image denormalize(const Image& image, const BackboneInfo& info);

struct FixtureOptions {
    int pairs = 256;
    int triplets = 100;
    int image_size = 32;
    std::uint64_t seed = 7;
};

struct FixtureSummary {
    std::string manifest;
    std::string benchmark_root;
    int pairs = 0;
    int triplets = 0;
};

// Writes colored-shape images with template captions whose first noun is the
// shape, plus a CIRR-layout validation benchmark (recolor queries with
// six-member subsets).
FixtureSummary write_synthetic_fixture(const std::string& dir, const FixtureOptions& options);

std::string sha256_hex(std::string_view data);

// Cache root from CIRMASK_CACHE, defaulting to ./cache.
std::string default_cache_root();
std::string cache_path_for(const std::string& cache_root, std::string_view url);

struct IngestReport {
    std::size_t fetched = 0;
    std::size_t cached = 0;
    std::size_t local = 0;
    std::vector<DropRecord> drops;
};

// Downloads every URL of a manifest into the cache and writes a manifest with
// local paths for the records that succeeded.
IngestReport ingest_manifest(const std::string& manifest, const std::string& out_manifest,
                             const std::string& cache_root);

} // namespace cirmask
