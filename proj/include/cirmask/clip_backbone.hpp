#pragma once

#include "cirmask/backbone.hpp"
#include "cirmask/transformer.hpp"

#include <string>

namespace cirmask {

// CLIP-architecture dual encoder (ViT image tower, causal text tower) loaded
// from a Hugging Face style directory: model.safetensors, config.json,
// vocab.json, merges.txt.
class ClipBackbone final : public Backbone {
public:
    // `expected_name` of "vit-l-14" or "vit-b-32" checks the loaded widths
    // against that architecture; any other value only records the name.
    static ClipBackbone load(const std::string& dir, const std::string& expected_name);

    const BackboneInfo& info() const override { return info_; }
    const Tokenizer& tokenizer() const override { return tokenizer_; }

    EmbeddedSequence embed_tokens(const TokenSequence& tokens) const override;
    FeatureBatch encode_image(const ImageBatch& batch) const override;
    Vec encode_rows(const Mat& embeddings, int end_position) const override;
    Mat encode_rows_backward(const Mat& embeddings, int end_position,
                             const Vec& grad_feature) const override;

    // Gradient-weighted attention of the last vision block: for each head,
    // the positive part of (dS/dA ⊙ A) where S is the image-text cosine
    // similarity, averaged over heads, read from the class-token row.
    Mat image_relevance(const Image& image, const TokenSequence& text) const override;

    std::uint64_t weights_checksum() const override { return checksum_; }

    int patch_size() const { return patch_size_; }

private:
    ClipBackbone(BackboneInfo info, BpeTokenizer tokenizer) : info_(std::move(info)), tokenizer_(std::move(tokenizer)) {}

    Mat patch_tokens(const Image& image) const;
    Vec image_pre_projection(const Image& image, TransformerStack::Trace* trace, Mat* stack_out) const;

    BackboneInfo info_;
    BpeTokenizer tokenizer_;

    // text tower
    Mat token_embedding_;
    Mat text_positional_;
    TransformerStack text_stack_;
    LayerNormWeights text_final_ln_;
    Mat text_projection_; // feature_dim × width

    // vision tower
    int patch_size_ = 0;
    RowVec class_embedding_;
    Mat patch_weight_; // width × (3·p·p), [c][ky][kx]
    Mat vision_positional_;
    LayerNormWeights vision_pre_ln_;
    TransformerStack vision_stack_;
    LayerNormWeights vision_post_ln_;
    Mat visual_projection_; // feature_dim × width

    std::uint64_t checksum_ = 0;
};

} // namespace cirmask
