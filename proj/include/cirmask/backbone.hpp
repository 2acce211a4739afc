#pragma once

#include "cirmask/tensor.hpp"
#include "cirmask/tokenizer.hpp"

#include <array>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace cirmask {

struct ImageBatch {
    std::vector<Image> images;

    int size() const { return static_cast<int>(images.size()); }
};

// Pre-transformer token embeddings, one row per context position.
struct EmbeddedSequence {
    Mat embeddings; // context_length × token_dim
    int length = 0;

    int end_position() const { return length - 1; }
};

struct FeatureBatch {
    Mat vectors; // N × D
    bool normalized = false;

    int size() const { return static_cast<int>(vectors.rows()); }
    int dim() const { return static_cast<int>(vectors.cols()); }
};

struct BackboneInfo {
    std::string name;
    int resolution = 0;
    int context_length = 0;
    int token_dim = 0;   // D^W
    int feature_dim = 0; // D^I, shared image-text space
    int patch_grid = 0;  // P for the relevance grid of this backbone
    double logit_scale = 1.0;
    std::array<float, 3> mean{0.48145466f, 0.4578275f, 0.40821073f};
    std::array<float, 3> std{0.26862954f, 0.26130258f, 0.27577711f};
};

// Frozen dual encoder. Implementations are immutable after construction and
// safe to call concurrently.
class Backbone {
public:
    virtual ~Backbone() = default;

    virtual const BackboneInfo& info() const = 0;
    virtual const Tokenizer& tokenizer() const = 0;

    virtual EmbeddedSequence embed_tokens(const TokenSequence& tokens) const = 0;

    // Unit-normalized image features. Throws ConfigError naming the expected
    // resolution when an image has the wrong size.
    virtual FeatureBatch encode_image(const ImageBatch& batch) const = 0;

    // Unit-normalized text feature pooled at `end_position`.
    virtual Vec encode_rows(const Mat& embeddings, int end_position) const = 0;

    // Gradient of <grad_feature, encode_rows(embeddings, end)> w.r.t. every
    // embedding row. Rows past `end_position` receive zero.
    virtual Mat encode_rows_backward(const Mat& embeddings, int end_position,
                                     const Vec& grad_feature) const = 0;

    // Unnormalized P × P patch relevance of `image` to `text`. Higher is more
    // relevant. Used by the gradient-attention relevance provider.
    virtual Mat image_relevance(const Image& image, const TokenSequence& text) const = 0;

    // Order-sensitive hash over every weight.
    virtual std::uint64_t weights_checksum() const = 0;

    TokenSequence tokenize(std::string_view text) const { return tokenizer().tokenize(text); }

    FeatureBatch encode_text(const TokenSequence& tokens) const;
    FeatureBatch encode_texts(std::span<const TokenSequence> tokens) const;
    FeatureBatch encode_embedded(const EmbeddedSequence& seq, int end_position) const;

    // name + weight checksum; stored with indexes and checkpoints.
    std::string fingerprint() const;

protected:
    void check_image(const Image& image) const;
    void check_end_position(const EmbeddedSequence& seq, int end_position) const;
};

struct BackboneOptions {
    std::string name = "stub";
    std::string weights_path;
    int stub_dim = 16;
    int stub_context = 16;
    int stub_resolution = 8;
    int stub_patch_grid = 4;
    int stub_vocab = 512;
    std::uint64_t stub_seed = 20240101;
};

// Token width D^W for a known backbone name, without loading weights.
int known_token_dim(std::string_view name, int stub_dim);

std::shared_ptr<const Backbone> make_backbone(const BackboneOptions& options);

// Row-wise unit normalization; zero rows stay zero.
void normalize_rows(Mat& m);
bool rows_unit_norm(const Mat& m, double tol = 1e-5);

// Gradient of a unit-normalization y = u/|u| pulled back to u.
Vec normalize_backward(const Vec& u, const Vec& grad_y);

std::uint64_t checksum_bytes(const void* data, std::size_t bytes, std::uint64_t seed);

} // namespace cirmask
