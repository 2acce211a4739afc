#pragma once

#include "cirmask/masking.hpp"
#include "cirmask/tensor.hpp"

#include <string>
#include <vector>

namespace cirmask {

// Images here are display images: RGB in [0, 1] (see denormalize).
struct GridRow {
    Image query;
    std::string query_text;
    std::vector<Image> retrieved; // empty Image → placeholder tile
    std::vector<bool> is_target;  // same length as retrieved
};

struct GridLayout {
    int tile = 96;
    int caption_height = 28;
    int border = 4;
};

// One row per triplet: the query tile (captioned with the query text) and
// the retrieved tiles, ground truth framed in green. Writes any format
// OpenCV can encode; throws InvalidInput for an empty sample.
void emit_result_grid(const std::vector<GridRow>& rows, const std::string& out_path, const GridLayout& layout = {});

// Same grid as an RGB byte buffer (height × width × 3).
Image render_result_grid(const std::vector<GridRow>& rows, const GridLayout& layout = {});

// original | relevance heatmap | masked image, with the masked caption below.
void emit_mask_preview(const Image& original, const RelevanceMap& map, const Image& masked,
                       const std::string& masked_caption, const std::string& out_path, int tile = 224);

} // namespace cirmask
