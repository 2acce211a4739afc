#include "cirmask/safetensors.hpp"

#include "cirmask/error.hpp"

#include <nlohmann/json.hpp>

#include <bit>
#include <cstring>
#include <fstream>

static_assert(std::endian::native == std::endian::little, "safetensors I/O assumes a little-endian host");

namespace cirmask {

namespace {

std::size_t dtype_size(const std::string& dtype) {
    if (dtype == "F64") return 8;
    if (dtype == "F32") return 4;
    if (dtype == "F16" || dtype == "BF16") return 2;
    throw IoError("unsupported safetensors dtype " + dtype);
}

double half_to_double(std::uint16_t h) {
    const std::uint32_t sign = (h >> 15) & 1U;
    const std::uint32_t exp = (h >> 10) & 0x1FU;
    const std::uint32_t frac = h & 0x3FFU;
    double v;
    if (exp == 0) {
        v = std::ldexp(static_cast<double>(frac), -24);
    } else if (exp == 31) {
        v = frac ? std::numeric_limits<double>::quiet_NaN() : std::numeric_limits<double>::infinity();
    } else {
        v = std::ldexp(static_cast<double>(frac | 0x400U), static_cast<int>(exp) - 25);
    }
    return sign ? -v : v;
}

} // namespace

std::int64_t SafeTensors::Entry::numel() const {
    std::int64_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

SafeTensors SafeTensors::read(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open " + path);
    }
    std::uint64_t header_len = 0;
    in.read(reinterpret_cast<char*>(&header_len), 8);
    if (!in || header_len > (1ULL << 30)) {
        throw IoError(path + ": bad safetensors header length");
    }
    std::string header(header_len, '\0');
    in.read(header.data(), static_cast<std::streamsize>(header_len));
    if (!in) {
        throw IoError(path + ": truncated safetensors header");
    }
    SafeTensors st;
    std::vector<unsigned char> rest((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    st.data_ = std::move(rest);
    try {
        const auto j = nlohmann::json::parse(header);
        for (const auto& [name, v] : j.items()) {
            if (name == "__metadata__") {
                for (const auto& [k, mv] : v.items()) {
                    st.metadata[k] = mv.get<std::string>();
                }
                continue;
            }
            Entry e;
            e.dtype = v.at("dtype").get<std::string>();
            e.shape = v.at("shape").get<std::vector<std::int64_t>>();
            e.begin = v.at("data_offsets").at(0).get<std::size_t>();
            e.end = v.at("data_offsets").at(1).get<std::size_t>();
            if (e.end < e.begin || e.end > st.data_.size() ||
                (e.end - e.begin) != static_cast<std::size_t>(e.numel()) * dtype_size(e.dtype)) {
                throw IoError(path + ": tensor '" + name + "' has inconsistent offsets");
            }
            st.index_.emplace(name, std::move(e));
        }
    } catch (const nlohmann::json::exception& e) {
        throw IoError(path + ": malformed safetensors header: " + e.what());
    }
    return st;
}

void SafeTensors::write(const std::string& path) const {
    nlohmann::json header = nlohmann::json::object();
    if (!metadata.empty()) {
        header["__metadata__"] = metadata;
    }
    for (const auto& [name, e] : index_) {
        header[name] = {{"dtype", e.dtype}, {"shape", e.shape}, {"data_offsets", {e.begin, e.end}}};
    }
    std::string text = header.dump();
    while (text.size() % 8 != 0) {
        text.push_back(' ');
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw IoError("cannot write " + path);
    }
    const std::uint64_t len = text.size();
    out.write(reinterpret_cast<const char*>(&len), 8);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    out.write(reinterpret_cast<const char*>(data_.data()), static_cast<std::streamsize>(data_.size()));
    if (!out) {
        throw IoError("failed writing " + path);
    }
}

const SafeTensors::Entry& SafeTensors::entry(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) {
        throw IoError("tensor '" + name + "' not found");
    }
    return it->second;
}

std::vector<std::string> SafeTensors::names() const {
    std::vector<std::string> out;
    for (const auto& [k, v] : index_) out.push_back(k);
    return out;
}

std::vector<double> SafeTensors::values(const std::string& name) const {
    const auto& e = entry(name);
    const auto n = static_cast<std::size_t>(e.numel());
    std::vector<double> out(n);
    const unsigned char* p = data_.data() + e.begin;
    if (e.dtype == "F64") {
        std::memcpy(out.data(), p, n * 8);
    } else if (e.dtype == "F32") {
        for (std::size_t i = 0; i < n; ++i) {
            float f;
            std::memcpy(&f, p + i * 4, 4);
            out[i] = f;
        }
    } else if (e.dtype == "F16") {
        for (std::size_t i = 0; i < n; ++i) {
            std::uint16_t h;
            std::memcpy(&h, p + i * 2, 2);
            out[i] = half_to_double(h);
        }
    } else {
        for (std::size_t i = 0; i < n; ++i) {
            std::uint16_t h;
            std::memcpy(&h, p + i * 2, 2);
            const std::uint32_t bits = static_cast<std::uint32_t>(h) << 16;
            float f;
            std::memcpy(&f, &bits, 4);
            out[i] = f;
        }
    }
    return out;
}

Mat SafeTensors::matrix(const std::string& name) const {
    const auto& e = entry(name);
    Eigen::Index rows = 1;
    Eigen::Index cols = 1;
    if (e.shape.size() == 1) {
        cols = e.shape[0];
    } else if (e.shape.size() == 2) {
        rows = e.shape[0];
        cols = e.shape[1];
    } else {
        // Higher-rank tensors flatten trailing dims (e.g. conv kernels).
        rows = e.shape.empty() ? 1 : e.shape[0];
        cols = e.numel() / std::max<Eigen::Index>(rows, 1);
    }
    const auto v = values(name);
    return Eigen::Map<const Mat>(v.data(), rows, cols);
}

Vec SafeTensors::vector(const std::string& name) const {
    const auto v = values(name);
    return Eigen::Map<const Vec>(v.data(), static_cast<Eigen::Index>(v.size()));
}

double SafeTensors::scalar(const std::string& name) const {
    const auto v = values(name);
    if (v.size() != 1) {
        throw IoError("tensor '" + name + "' is not a scalar");
    }
    return v[0];
}

void SafeTensors::put(const std::string& name, const std::vector<std::int64_t>& shape, const double* data) {
    Entry e;
    e.dtype = "F64";
    e.shape = shape;
    const auto bytes = static_cast<std::size_t>(e.numel()) * 8;
    e.begin = data_.size();
    e.end = e.begin + bytes;
    data_.resize(e.end);
    if (bytes > 0) {
        std::memcpy(data_.data() + e.begin, data, bytes);
    }
    index_[name] = std::move(e);
}

void SafeTensors::put(const std::string& name, const Mat& m) {
    put(name, {m.rows(), m.cols()}, m.data());
}

void SafeTensors::put(const std::string& name, const Vec& v) {
    put(name, {v.size()}, v.data());
}

} // namespace cirmask
