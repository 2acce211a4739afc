#pragma once

#include "cirmask/tensor.hpp"

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace cirmask {

// Minimal reader/writer for the safetensors container: 8-byte little-endian
// header length, JSON header, raw little-endian data. Reads F64/F32/F16/BF16;
// always writes F64 so checkpoints round-trip bitwise.
class SafeTensors {
public:
    struct Entry {
        std::string dtype;
        std::vector<std::int64_t> shape;
        std::size_t begin = 0;
        std::size_t end = 0;

        std::int64_t numel() const;
    };

    static SafeTensors read(const std::string& path);

    void write(const std::string& path) const;

    bool contains(const std::string& name) const { return index_.count(name) != 0; }
    const Entry& entry(const std::string& name) const;
    std::vector<std::string> names() const;

    std::vector<double> values(const std::string& name) const;
    // 2-D tensor as a matrix; 1-D tensor as a single row.
    Mat matrix(const std::string& name) const;
    Vec vector(const std::string& name) const;
    double scalar(const std::string& name) const;

    void put(const std::string& name, const std::vector<std::int64_t>& shape, const double* data);
    void put(const std::string& name, const Mat& m);
    void put(const std::string& name, const Vec& v);

    std::map<std::string, std::string> metadata;

private:
    std::map<std::string, Entry> index_;
    std::vector<unsigned char> data_;
};

} // namespace cirmask
