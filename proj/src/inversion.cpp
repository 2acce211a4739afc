#include "cirmask/inversion.hpp"

#include "cirmask/error.hpp"

#include <cmath>

namespace cirmask {

namespace {

constexpr double inv_sqrt2 = 0.70710678118654752440;
constexpr double inv_sqrt2pi = 0.39894228040143267794;

Mat gelu(const Mat& x) {
    return x.unaryExpr([](double a) { return 0.5 * a * (1.0 + std::erf(a * inv_sqrt2)); });
}

Mat gelu_grad(const Mat& x) {
    return x.unaryExpr([](double a) {
        return 0.5 * (1.0 + std::erf(a * inv_sqrt2)) + a * inv_sqrt2pi * std::exp(-0.5 * a * a);
    });
}

Mat affine(const Mat& x, const Mat& w, const Mat& b) {
    Mat y = x * w.transpose();
    y.rowwise() += b.row(0);
    return y;
}

Mat uniform(std::mt19937_64& rng, int rows, int cols, double bound) {
    Mat m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) {
        const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
        m.data()[i] = (2.0 * u - 1.0) * bound;
    }
    return m;
}

Mat dropout_scales(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols, double p) {
    Mat m(rows, cols);
    const double keep = 1.0 - p;
    for (Eigen::Index i = 0; i < m.size(); ++i) {
        const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
        m.data()[i] = u < keep ? 1.0 / keep : 0.0;
    }
    return m;
}

} // namespace

InversionNetwork::InversionNetwork(InversionDims dims, std::uint64_t seed, double dropout)
    : dims_(dims), dropout_(dropout) {
    if (dims.input < 1 || dims.hidden < 1 || dims.output < 1) {
        throw ConfigError("inversion network dimensions must be positive");
    }
    if (!(dropout >= 0.0 && dropout < 1.0)) {
        throw ConfigError("model.dropout must be in [0, 1)");
    }
    std::mt19937_64 rng(seed);
    const int fan_in[3] = {dims.input, dims.hidden, dims.hidden};
    const int fan_out[3] = {dims.hidden, dims.hidden, dims.output};
    for (int l = 0; l < 3; ++l) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in[l]));
        params_.push_back(uniform(rng, fan_out[l], fan_in[l], bound));
        params_.push_back(uniform(rng, 1, fan_out[l], bound));
    }
}

const std::vector<std::string>& InversionNetwork::parameter_names() {
    static const std::vector<std::string> names{"fc1.weight", "fc1.bias", "fc2.weight",
                                                "fc2.bias",   "fc3.weight", "fc3.bias"};
    return names;
}

Mat InversionNetwork::forward(const Mat& x, Trace* trace, std::mt19937_64* rng) const {
    if (x.cols() != dims_.input) {
        throw ConfigError("inversion network expects input width " + std::to_string(dims_.input) + ", got " +
                          std::to_string(x.cols()));
    }
    const bool drop = rng != nullptr && dropout_ > 0.0;
    Mat pre1 = affine(x, params_[0], params_[1]);
    Mat a1 = gelu(pre1);
    Mat drop1;
    if (drop) {
        drop1 = dropout_scales(*rng, a1.rows(), a1.cols(), dropout_);
        a1 = a1.cwiseProduct(drop1);
    }
    Mat pre2 = affine(a1, params_[2], params_[3]);
    Mat a2 = gelu(pre2);
    Mat drop2;
    if (drop) {
        drop2 = dropout_scales(*rng, a2.rows(), a2.cols(), dropout_);
        a2 = a2.cwiseProduct(drop2);
    }
    Mat out = affine(a2, params_[4], params_[5]);
    if (trace) {
        trace->input = x;
        trace->pre1 = std::move(pre1);
        trace->pre2 = std::move(pre2);
        trace->drop1 = std::move(drop1);
        trace->drop2 = std::move(drop2);
    }
    return out;
}

Mat InversionNetwork::backward(const Trace& t, const Mat& grad_out, Parameters& grads) const {
    Mat a1 = gelu(t.pre1);
    if (t.drop1.size() > 0) a1 = a1.cwiseProduct(t.drop1);
    Mat a2 = gelu(t.pre2);
    if (t.drop2.size() > 0) a2 = a2.cwiseProduct(t.drop2);

    grads[4] += grad_out.transpose() * a2;
    grads[5] += grad_out.colwise().sum();
    Mat g_a2 = grad_out * params_[4];
    if (t.drop2.size() > 0) g_a2 = g_a2.cwiseProduct(t.drop2);
    const Mat g_pre2 = g_a2.cwiseProduct(gelu_grad(t.pre2));

    grads[2] += g_pre2.transpose() * a1;
    grads[3] += g_pre2.colwise().sum();
    Mat g_a1 = g_pre2 * params_[2];
    if (t.drop1.size() > 0) g_a1 = g_a1.cwiseProduct(t.drop1);
    const Mat g_pre1 = g_a1.cwiseProduct(gelu_grad(t.pre1));

    grads[0] += g_pre1.transpose() * t.input;
    grads[1] += g_pre1.colwise().sum();
    return g_pre1 * params_[0];
}

InversionNetwork::Parameters InversionNetwork::zero_gradients() const {
    Parameters g;
    for (const auto& p : params_) {
        g.push_back(Mat::Zero(p.rows(), p.cols()));
    }
    return g;
}

std::size_t InversionNetwork::parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += static_cast<std::size_t>(p.size());
    return n;
}

Mat invert(const FeatureBatch& features, const InversionNetwork& net) {
    return net.forward(features.vectors);
}

ComposedQuery compose_query(const Backbone& backbone, const TokenSequence& masked_tokens, const Vec& pseudo,
                            int position, QuerySource source) {
    if (pseudo.size() != backbone.info().token_dim) {
        throw ConfigError("pseudo word width " + std::to_string(pseudo.size()) + " != token width " +
                          std::to_string(backbone.info().token_dim));
    }
    if (position < 1 || position > masked_tokens.length - 1) {
        throw InvalidInput("compose_query: insertion position " + std::to_string(position) + " out of range");
    }
    const int ctx = backbone.info().context_length;
    if (masked_tokens.length + 1 > ctx) {
        throw QueryTooLong("composed query needs " + std::to_string(masked_tokens.length + 1) +
                           " positions, context is " + std::to_string(ctx));
    }
    const auto base = backbone.embed_tokens(masked_tokens);
    ComposedQuery q;
    q.source = source;
    q.pseudo_position = position;
    q.embedded.length = masked_tokens.length + 1;
    q.embedded.embeddings.resize(ctx, backbone.info().token_dim);
    q.embedded.embeddings.topRows(position) = base.embeddings.topRows(position);
    q.embedded.embeddings.row(position) = pseudo.transpose();
    q.embedded.embeddings.bottomRows(ctx - position - 1) = base.embeddings.middleRows(position, ctx - position - 1);
    return q;
}

ComposedQuery build_prompt_query(const Backbone& backbone, const Vec& pseudo) {
    const auto tokens = backbone.tokenize("a photo of");
    return compose_query(backbone, tokens, pseudo, tokens.end_position(), QuerySource::prompt);
}

ComposedQuery build_inference_query(const Backbone& backbone, const Vec& pseudo, std::string_view query_text) {
    const auto tokens = backbone.tokenize("a photo of , " + std::string(query_text));
    if (tokens.truncated) {
        throw QueryTooLong("query text does not fit the text encoder context");
    }
    const auto& of = tokens.word_spans.at(2);
    return compose_query(backbone, tokens, pseudo, of.first_token + of.token_count, QuerySource::inference);
}

FeatureBatch encode_query(const Backbone& backbone, const ComposedQuery& query) {
    return backbone.encode_embedded(query.embedded, query.end_position());
}

} // namespace cirmask
