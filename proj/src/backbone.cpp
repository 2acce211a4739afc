#include "cirmask/backbone.hpp"

#include "cirmask/clip_backbone.hpp"
#include "cirmask/error.hpp"
#include "cirmask/stub_backbone.hpp"

#include <cmath>

namespace cirmask {

void normalize_rows(Mat& m) {
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        const double n = m.row(i).norm();
        if (n > 0.0) {
            m.row(i) /= n;
        }
    }
}

bool rows_unit_norm(const Mat& m, double tol) {
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        if (std::abs(m.row(i).norm() - 1.0) > tol) {
            return false;
        }
    }
    return true;
}

Vec normalize_backward(const Vec& u, const Vec& grad_y) {
    const double n = u.norm();
    if (n == 0.0) {
        return Vec::Zero(u.size());
    }
    const Vec y = u / n;
    return (grad_y - y * y.dot(grad_y)) / n;
}

std::uint64_t checksum_bytes(const void* data, std::size_t bytes, std::uint64_t seed) {
    const auto* p = static_cast<const unsigned char*>(data);
    std::uint64_t h = seed;
    for (std::size_t i = 0; i < bytes; ++i) {
        h ^= p[i];
        h *= 1099511628211ULL;
    }
    return h;
}

FeatureBatch Backbone::encode_text(const TokenSequence& tokens) const {
    return encode_texts(std::span<const TokenSequence>(&tokens, 1));
}

FeatureBatch Backbone::encode_texts(std::span<const TokenSequence> tokens) const {
    FeatureBatch out;
    out.vectors.resize(static_cast<Eigen::Index>(tokens.size()), info().feature_dim);
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        tokenizer().validate(tokens[i]);
        const auto seq = embed_tokens(tokens[i]);
        out.vectors.row(static_cast<Eigen::Index>(i)) = encode_rows(seq.embeddings, seq.end_position()).transpose();
    }
    out.normalized = true;
    return out;
}

FeatureBatch Backbone::encode_embedded(const EmbeddedSequence& seq, int end_position) const {
    check_end_position(seq, end_position);
    FeatureBatch out;
    out.vectors = encode_rows(seq.embeddings, end_position).transpose();
    out.normalized = true;
    return out;
}

std::string Backbone::fingerprint() const {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(weights_checksum()));
    return info().name + ":" + buf;
}

void Backbone::check_image(const Image& image) const {
    const int r = info().resolution;
    if (image.height != r || image.width != r ||
        image.pixels.size() != static_cast<std::size_t>(r) * r * 3) {
        throw ConfigError(info().name + " expects " + std::to_string(r) + "x" + std::to_string(r) +
                          " images, got " + std::to_string(image.height) + "x" + std::to_string(image.width));
    }
}

void Backbone::check_end_position(const EmbeddedSequence& seq, int end_position) const {
    if (seq.embeddings.rows() != info().context_length || seq.embeddings.cols() != info().token_dim) {
        throw InvalidInput("embedded sequence shape does not match the backbone");
    }
    if (end_position < 1 || end_position >= seq.embeddings.rows()) {
        throw InvalidInput("end_position " + std::to_string(end_position) + " out of range");
    }
}

int known_token_dim(std::string_view name, int stub_dim) {
    if (name == "stub") return stub_dim;
    if (name == "vit-l-14") return 768;
    if (name == "vit-b-32") return 512;
    throw ConfigError("unknown backbone '" + std::string(name) + "' (expected stub, vit-l-14, vit-b-32)");
}

std::shared_ptr<const Backbone> make_backbone(const BackboneOptions& options) {
    if (options.name == "stub") {
        return std::make_shared<StubBackbone>(options);
    }
    if (options.name == "vit-l-14" || options.name == "vit-b-32") {
        if (options.weights_path.empty()) {
            throw ConfigError("backbone.weights_path is required for " + options.name);
        }
        return std::make_shared<ClipBackbone>(ClipBackbone::load(options.weights_path, options.name));
    }
    known_token_dim(options.name, options.stub_dim);
    return nullptr;
}

} // namespace cirmask
