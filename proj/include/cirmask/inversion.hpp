#pragma once

#include "cirmask/backbone.hpp"
#include "cirmask/tensor.hpp"

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace cirmask {

struct InversionDims {
    int input = 0;  // D^I
    int hidden = 0;
    int output = 0; // D^W

    friend bool operator==(const InversionDims&, const InversionDims&) = default;
};

// Three fully connected layers with GELU between them, mapping an image
// feature to one pseudo-word embedding. Parameters are stored as a flat list
// of matrices (weights [out, in], biases 1 × out):
//   fc1.weight, fc1.bias, fc2.weight, fc2.bias, fc3.weight, fc3.bias
class InversionNetwork {
public:
    using Parameters = std::vector<Mat>;

    struct Trace {
        Mat input;
        Mat pre1, pre2;   // pre-activation outputs of fc1, fc2
        Mat drop1, drop2; // inverted-dropout scales (empty when inactive)
    };

    InversionNetwork() = default;
    InversionNetwork(InversionDims dims, std::uint64_t seed, double dropout = 0.0);

    const InversionDims& dims() const { return dims_; }
    double dropout() const { return dropout_; }

    // Dropout is applied only when `rng` is given and the rate is positive.
    Mat forward(const Mat& x, Trace* trace = nullptr, std::mt19937_64* rng = nullptr) const;

    // Accumulates parameter gradients into `grads` (shaped like
    // parameters()) and returns the gradient w.r.t. the input.
    Mat backward(const Trace& trace, const Mat& grad_out, Parameters& grads) const;

    Parameters& parameters() { return params_; }
    const Parameters& parameters() const { return params_; }
    Parameters zero_gradients() const;
    std::size_t parameter_count() const;

    static const std::vector<std::string>& parameter_names();

private:
    InversionDims dims_;
    double dropout_ = 0.0;
    Parameters params_;
};

// φ(features) for a batch. Throws ConfigError on a width mismatch.
Mat invert(const FeatureBatch& features, const InversionNetwork& net);

enum class QuerySource { masked_pair, prompt, inference };

struct ComposedQuery {
    EmbeddedSequence embedded;
    int pseudo_position = 0;
    QuerySource source = QuerySource::masked_pair;

    int end_position() const { return embedded.end_position(); }
};

// Inserts `pseudo` as a new row at `position`; later rows shift right by one.
// Throws QueryTooLong when the result exceeds the context.
ComposedQuery compose_query(const Backbone& backbone, const TokenSequence& masked_tokens, const Vec& pseudo,
                            int position, QuerySource source = QuerySource::masked_pair);

// "a photo of *"
ComposedQuery build_prompt_query(const Backbone& backbone, const Vec& pseudo);

// "a photo of * , <query_text>"
ComposedQuery build_inference_query(const Backbone& backbone, const Vec& pseudo, std::string_view query_text);

FeatureBatch encode_query(const Backbone& backbone, const ComposedQuery& query);

} // namespace cirmask
