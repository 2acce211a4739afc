#pragma once

#include "cirmask/backbone.hpp"
#include "cirmask/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>

namespace testing {

inline std::string data_dir() { return CIRMASK_TEST_DATA; }

// Fresh directory under the build tree, removed first if it exists.
inline std::filesystem::path scratch(const std::string& name) {
    const auto dir = std::filesystem::path(CIRMASK_TEST_SCRATCH) / name;
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

inline cirmask::Mat random_mat(std::mt19937_64& rng, int rows, int cols, double scale = 1.0) {
    std::normal_distribution<double> n(0.0, scale);
    cirmask::Mat m(rows, cols);
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j) m(i, j) = n(rng);
    return m;
}

inline cirmask::Mat random_unit_rows(std::mt19937_64& rng, int rows, int cols) {
    cirmask::Mat m = random_mat(rng, rows, cols);
    cirmask::normalize_rows(m);
    return m;
}

inline cirmask::Image random_image(std::mt19937_64& rng, int size) {
    std::uniform_real_distribution<float> u(-1.5f, 1.5f);
    cirmask::Image img(size, size);
    for (auto& p : img.pixels) p = u(rng);
    return img;
}

inline cirmask::BackboneOptions stub_options() { return cirmask::BackboneOptions{}; }

// |a − n| / max(|a|, |n|, floor)
inline double rel_error(double a, double n, double floor = 1e-6) {
    return std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor});
}

} // namespace testing
