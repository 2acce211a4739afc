#include "cirmask/stub_backbone.hpp"

#include "cirmask/error.hpp"

#include <cmath>
#include <random>

namespace cirmask {

namespace {

Mat gaussian(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols, double stddev) {
    std::normal_distribution<double> dist(0.0, stddev);
    Mat m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) {
        m.data()[i] = dist(rng);
    }
    return m;
}

Vec gaussian_vec(std::mt19937_64& rng, Eigen::Index n, double stddev) {
    return gaussian(rng, n, 1, stddev).col(0);
}

} // namespace

StubBackbone::StubBackbone(const BackboneOptions& o)
    : tokenizer_(o.stub_vocab, o.stub_context) {
    if (o.stub_dim < 2 || o.stub_resolution < 1 || o.stub_patch_grid < 1 ||
        o.stub_resolution % o.stub_patch_grid != 0) {
        throw ConfigError("stub backbone: invalid dimensions");
    }
    info_.name = "stub";
    info_.resolution = o.stub_resolution;
    info_.context_length = o.stub_context;
    info_.token_dim = o.stub_dim;
    info_.feature_dim = o.stub_dim;
    info_.patch_grid = o.stub_patch_grid;
    info_.logit_scale = 1.0 / 0.07;

    const int d = o.stub_dim;
    const int pixels = o.stub_resolution * o.stub_resolution * 3;
    std::mt19937_64 rng(o.stub_seed);
    token_table_ = gaussian(rng, o.stub_vocab, d, 0.5);
    positional_ = gaussian(rng, o.stub_context, d, 0.1);
    hidden_w_ = gaussian(rng, d, d, 1.0 / std::sqrt(static_cast<double>(d)));
    hidden_b_ = gaussian_vec(rng, d, 0.1);
    query_w_ = gaussian(rng, d, d, 2.0 / std::sqrt(static_cast<double>(d)));
    text_proj_ = gaussian(rng, d, d, 1.0 / std::sqrt(static_cast<double>(d)));
    text_bias_ = gaussian_vec(rng, d, 0.1);
    image_proj_ = gaussian(rng, d, pixels, 1.0 / std::sqrt(static_cast<double>(pixels)));
    image_bias_ = gaussian_vec(rng, d, 0.1);
}

EmbeddedSequence StubBackbone::embed_tokens(const TokenSequence& tokens) const {
    tokenizer_.validate(tokens);
    EmbeddedSequence seq;
    seq.length = tokens.length;
    seq.embeddings.resize(info_.context_length, info_.token_dim);
    for (int p = 0; p < info_.context_length; ++p) {
        seq.embeddings.row(p) = token_table_.row(tokens.ids[static_cast<std::size_t>(p)]);
    }
    return seq;
}

Vec StubBackbone::image_pre_norm(const Image& image) const {
    check_image(image);
    const Eigen::Map<const Eigen::VectorXf> px(image.pixels.data(), static_cast<Eigen::Index>(image.pixels.size()));
    return image_proj_ * px.cast<double>() + image_bias_;
}

FeatureBatch StubBackbone::encode_image(const ImageBatch& batch) const {
    FeatureBatch out;
    out.vectors.resize(batch.size(), info_.feature_dim);
    for (int i = 0; i < batch.size(); ++i) {
        out.vectors.row(i) = image_pre_norm(batch.images[static_cast<std::size_t>(i)]).transpose();
    }
    normalize_rows(out.vectors);
    out.normalized = true;
    return out;
}

StubBackbone::TextTrace StubBackbone::trace_text(const Mat& embeddings, int end) const {
    if (end < 1 || end >= info_.context_length || embeddings.rows() != info_.context_length ||
        embeddings.cols() != info_.token_dim) {
        throw InvalidInput("stub text encoder: bad embedded sequence or end position");
    }
    const int n = end + 1;
    TextTrace t;
    Mat x = embeddings.topRows(n) + positional_.topRows(n);
    t.hidden = ((x * hidden_w_.transpose()).rowwise() + hidden_b_.transpose()).array().tanh().matrix();
    t.query = query_w_ * t.hidden.row(end).transpose();
    const double scale = 1.0 / std::sqrt(static_cast<double>(info_.token_dim));
    Vec scores = t.hidden * t.query * scale;
    scores.array() -= scores.maxCoeff();
    t.attention = scores.array().exp();
    t.attention /= t.attention.sum();
    t.pooled = t.hidden.transpose() * t.attention + t.hidden.row(end).transpose();
    t.projected = text_proj_ * t.pooled + text_bias_;
    return t;
}

Vec StubBackbone::encode_rows(const Mat& embeddings, int end_position) const {
    const auto t = trace_text(embeddings, end_position);
    return t.projected / t.projected.norm();
}

Mat StubBackbone::encode_rows_backward(const Mat& embeddings, int end, const Vec& grad_feature) const {
    const auto t = trace_text(embeddings, end);
    const int n = end + 1;
    const double scale = 1.0 / std::sqrt(static_cast<double>(info_.token_dim));

    const Vec g_proj = normalize_backward(t.projected, grad_feature);
    const Vec g_pool = text_proj_.transpose() * g_proj;

    Mat g_hidden = t.attention * g_pool.transpose(); // from the weighted sum
    g_hidden.row(end) += g_pool.transpose();         // residual from h_end

    const Vec g_attn = t.hidden * g_pool;
    const Vec g_scores = t.attention.array() * (g_attn.array() - t.attention.dot(g_attn));
    g_hidden += g_scores * t.query.transpose() * scale;
    const Vec g_query = t.hidden.transpose() * g_scores * scale;
    g_hidden.row(end) += (query_w_.transpose() * g_query).transpose();

    const Mat g_pre = g_hidden.array() * (1.0 - t.hidden.array().square());
    Mat grad = Mat::Zero(embeddings.rows(), embeddings.cols());
    grad.topRows(n) = g_pre * hidden_w_;
    return grad;
}

Mat StubBackbone::image_relevance(const Image& image, const TokenSequence& text) const {
    const Vec u = image_pre_norm(image);
    const Vec txt = encode_text(text).vectors.row(0).transpose();
    const Vec g_u = normalize_backward(u, txt);
    const Vec g_px = image_proj_.transpose() * g_u;

    const int grid = info_.patch_grid;
    const int patch = info_.resolution / grid;
    Mat rel = Mat::Zero(grid, grid);
    for (int y = 0; y < image.height; ++y) {
        for (int x = 0; x < image.width; ++x) {
            for (int c = 0; c < 3; ++c) {
                const auto idx = (static_cast<Eigen::Index>(y) * image.width + x) * 3 + c;
                rel(y / patch, x / patch) += g_px(idx) * image.at(y, x, c);
            }
        }
    }
    return rel.cwiseMax(0.0);
}

std::uint64_t StubBackbone::weights_checksum() const {
    std::uint64_t h = 1469598103934665603ULL;
    auto mix = [&h](const auto& m) { h = checksum_bytes(m.data(), static_cast<std::size_t>(m.size()) * sizeof(double), h); };
    mix(token_table_);
    mix(positional_);
    mix(hidden_w_);
    mix(hidden_b_);
    mix(query_w_);
    mix(text_proj_);
    mix(text_bias_);
    mix(image_proj_);
    mix(image_bias_);
    return h;
}

} // namespace cirmask
