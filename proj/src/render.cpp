#include "cirmask/render.hpp"

#include "cirmask/error.hpp"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <algorithm>

namespace cirmask {

namespace {

const cv::Scalar kBackground(255, 255, 255);
const cv::Scalar kTarget(0, 170, 0);
const cv::Scalar kPlaceholder(200, 200, 200);

// RGB float image → BGR 8-bit tile of the given size.
cv::Mat to_tile(const Image& image, int tile) {
    cv::Mat out(tile, tile, CV_8UC3, kPlaceholder);
    if (image.empty() || image.pixels.size() != static_cast<std::size_t>(image.height) * image.width * 3) {
        cv::line(out, {0, 0}, {tile - 1, tile - 1}, cv::Scalar(120, 120, 120), 2);
        cv::line(out, {tile - 1, 0}, {0, tile - 1}, cv::Scalar(120, 120, 120), 2);
        return out;
    }
    cv::Mat rgb(image.height, image.width, CV_32FC3, const_cast<float*>(image.pixels.data()));
    cv::Mat bgr;
    cv::cvtColor(rgb, bgr, cv::COLOR_RGB2BGR);
    bgr.convertTo(bgr, CV_8UC3, 255.0);
    cv::resize(bgr, out, {tile, tile}, 0, 0, cv::INTER_NEAREST);
    return out;
}

void put_text(cv::Mat& canvas, const std::string& text, cv::Rect box) {
    const double scale = 0.4;
    std::string shown = text;
    int baseline = 0;
    while (!shown.empty() &&
           cv::getTextSize(shown, cv::FONT_HERSHEY_SIMPLEX, scale, 1, &baseline).width > box.width - 4) {
        shown.pop_back();
    }
    cv::putText(canvas, shown, {box.x + 2, box.y + box.height / 2 + 4}, cv::FONT_HERSHEY_SIMPLEX, scale,
                cv::Scalar(0, 0, 0), 1, cv::LINE_AA);
}

Image from_bgr(const cv::Mat& bgr8) {
    cv::Mat rgb;
    cv::cvtColor(bgr8, rgb, cv::COLOR_BGR2RGB);
    Image out{rgb.rows, rgb.cols, {}};
    out.pixels.resize(static_cast<std::size_t>(rgb.rows) * rgb.cols * 3);
    for (int y = 0; y < rgb.rows; ++y) {
        const auto* row = rgb.ptr<unsigned char>(y);
        for (int x = 0; x < rgb.cols * 3; ++x) {
            out.pixels[static_cast<std::size_t>(y) * rgb.cols * 3 + x] = static_cast<float>(row[x]);
        }
    }
    return out;
}

cv::Mat grid_canvas(const std::vector<GridRow>& rows, const GridLayout& l) {
    if (rows.empty()) {
        throw InvalidInput("result grid needs at least one triplet");
    }
    std::size_t cols = 0;
    for (const auto& r : rows) {
        if (r.is_target.size() != r.retrieved.size()) {
            throw InvalidInput("result grid row: is_target and retrieved differ in length");
        }
        cols = std::max(cols, r.retrieved.size() + 1);
    }
    const int cell = l.tile + 2 * l.border;
    const int row_h = cell + l.caption_height;
    cv::Mat canvas(static_cast<int>(rows.size()) * row_h, static_cast<int>(cols) * cell, CV_8UC3, kBackground);
    for (std::size_t r = 0; r < rows.size(); ++r) {
        const int y = static_cast<int>(r) * row_h;
        to_tile(rows[r].query, l.tile).copyTo(canvas(cv::Rect(l.border, y + l.border, l.tile, l.tile)));
        put_text(canvas, rows[r].query_text, cv::Rect(0, y + cell, cell * static_cast<int>(cols), l.caption_height));
        for (std::size_t j = 0; j < rows[r].retrieved.size(); ++j) {
            const int x = static_cast<int>(j + 1) * cell;
            if (rows[r].is_target[j]) {
                cv::rectangle(canvas, cv::Rect(x, y, cell, cell), kTarget, cv::FILLED);
            }
            to_tile(rows[r].retrieved[j], l.tile).copyTo(canvas(cv::Rect(x + l.border, y + l.border, l.tile, l.tile)));
        }
    }
    return canvas;
}

void write_png(const std::string& path, const cv::Mat& canvas) {
    bool ok = false;
    try {
        ok = cv::imwrite(path, canvas);
    } catch (const cv::Exception& e) {
        throw IoError("cannot write " + path + ": " + e.what());
    }
    if (!ok) {
        throw IoError("cannot write " + path);
    }
}

} // namespace

Image render_result_grid(const std::vector<GridRow>& rows, const GridLayout& layout) {
    return from_bgr(grid_canvas(rows, layout));
}

void emit_result_grid(const std::vector<GridRow>& rows, const std::string& out_path, const GridLayout& layout) {
    write_png(out_path, grid_canvas(rows, layout));
}

void emit_mask_preview(const Image& original, const RelevanceMap& map, const Image& masked,
                       const std::string& masked_caption, const std::string& out_path, int tile) {
    const int caption = 28;
    cv::Mat canvas(tile + caption, 3 * tile, CV_8UC3, kBackground);
    to_tile(original, tile).copyTo(canvas(cv::Rect(0, 0, tile, tile)));

    const int p = map.grid();
    cv::Mat heat(p, p, CV_8UC1);
    for (int y = 0; y < p; ++y) {
        for (int x = 0; x < p; ++x) {
            heat.at<unsigned char>(y, x) =
                static_cast<unsigned char>(std::clamp(map.scores(y, x), 0.0, 1.0) * 255.0 + 0.5);
        }
    }
    cv::Mat big, colored;
    cv::resize(heat, big, {tile, tile}, 0, 0, cv::INTER_NEAREST);
    cv::applyColorMap(big, colored, cv::COLORMAP_JET);
    colored.copyTo(canvas(cv::Rect(tile, 0, tile, tile)));

    to_tile(masked, tile).copyTo(canvas(cv::Rect(2 * tile, 0, tile, tile)));
    put_text(canvas, "\"" + masked_caption + "\"  (masked: " + map.word + ")", cv::Rect(0, tile, 3 * tile, caption));
    write_png(out_path, canvas);
}

} // namespace cirmask
