#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <vector>

namespace cirmask {

// Row-major so that row i of a batch matrix is sample i.
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vec = Eigen::VectorXd;
using RowVec = Eigen::Matrix<double, 1, Eigen::Dynamic>;

// H × W × 3 image, interleaved channels, float values (raw [0,1] or
// normalized, depending on where it sits in the pipeline).
struct Image {
    int height = 0;
    int width = 0;
    std::vector<float> pixels;

    Image() = default;
    Image(int h, int w, float fill = 0.0f)
        : height(h), width(w), pixels(static_cast<std::size_t>(h) * w * 3, fill) {}

    float& at(int y, int x, int c) { return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
    float at(int y, int x, int c) const { return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }

    bool same_shape(const Image& o) const { return height == o.height && width == o.width; }
    bool empty() const { return pixels.empty(); }

    friend bool operator==(const Image&, const Image&) = default;
};

} // namespace cirmask
