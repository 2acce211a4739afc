#pragma once

#include "cirmask/backbone.hpp"

namespace cirmask {

// Deterministic toy dual encoder with tiny dimensions. The image encoder is a
// fixed affine map; the text encoder is one tanh layer followed by attention
// pooling queried from the end position, so every row before the end symbol
// (including a spliced pseudo word) influences the output.
class StubBackbone final : public Backbone {
public:
    explicit StubBackbone(const BackboneOptions& options);

    const BackboneInfo& info() const override { return info_; }
    const Tokenizer& tokenizer() const override { return tokenizer_; }

    EmbeddedSequence embed_tokens(const TokenSequence& tokens) const override;
    FeatureBatch encode_image(const ImageBatch& batch) const override;
    Vec encode_rows(const Mat& embeddings, int end_position) const override;
    Mat encode_rows_backward(const Mat& embeddings, int end_position,
                             const Vec& grad_feature) const override;
    Mat image_relevance(const Image& image, const TokenSequence& text) const override;
    std::uint64_t weights_checksum() const override;

    const Mat& token_table() const { return token_table_; }

private:
    struct TextTrace {
        Mat hidden;    // (end+1) × d, tanh outputs
        Vec query;     // d
        Vec attention; // end+1
        Vec pooled;    // d
        Vec projected; // D, before normalization
    };

    TextTrace trace_text(const Mat& embeddings, int end_position) const;
    Vec image_pre_norm(const Image& image) const;

    BackboneInfo info_;
    StubTokenizer tokenizer_;
    Mat token_table_;   // vocab × d
    Mat positional_;    // context × d
    Mat hidden_w_;      // d × d
    Vec hidden_b_;      // d
    Mat query_w_;       // d × d
    Mat text_proj_;     // D × d
    Vec text_bias_;     // D
    Mat image_proj_;    // D × (res*res*3)
    Vec image_bias_;    // D
};

} // namespace cirmask
