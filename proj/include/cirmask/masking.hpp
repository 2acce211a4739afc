#pragma once

#include "cirmask/backbone.hpp"
#include "cirmask/pos_tagger.hpp"
#include "cirmask/tensor.hpp"
#include "cirmask/tokenizer.hpp"

#include <cstdint>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

namespace cirmask {

struct RemovedWord {
    std::string word;
    int word_index = 0;
    int token_position = 0;
    int token_count = 0;
};

struct RelevanceMap {
    Mat scores; // P × P in [0, 1]
    std::string word;

    int grid() const { return static_cast<int>(scores.rows()); }
};

// relevant + irrelevant == all ones.
struct BinaryMasks {
    Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic> relevant;
    Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic> irrelevant;

    int grid() const { return static_cast<int>(relevant.rows()); }
};

struct MaskedPairBundle {
    Image masked_image;
    TokenSequence masked_tokens;
    RemovedWord removed;
    int partner_index = 0;
};

// Source of raw word-conditioned patch scores. Implementations are read-only
// after construction.
class RelevanceProvider {
public:
    virtual ~RelevanceProvider() = default;
    virtual Mat raw_scores(const Image& image, std::string_view word) const = 0;
    virtual int grid() const = 0;
    virtual std::string name() const = 0;
};

// Seeded pseudo-random map keyed on (seed, word, image content).
class StubRelevanceProvider final : public RelevanceProvider {
public:
    StubRelevanceProvider(int grid, std::uint64_t seed) : grid_(grid), seed_(seed) {}

    Mat raw_scores(const Image& image, std::string_view word) const override;
    int grid() const override { return grid_; }
    std::string name() const override { return "stub"; }

private:
    int grid_;
    std::uint64_t seed_;
};

// Gradient-weighted attention of a relevance backbone, conditioned on the
// text "a photo of <word>". Images are bilinearly resized to the relevance
// backbone's resolution first.
class GradientAttentionProvider final : public RelevanceProvider {
public:
    explicit GradientAttentionProvider(std::shared_ptr<const Backbone> model) : model_(std::move(model)) {}

    Mat raw_scores(const Image& image, std::string_view word) const override;
    int grid() const override { return model_->info().patch_grid; }
    std::string name() const override { return "gradient-attention"; }

private:
    std::shared_ptr<const Backbone> model_;
};

// First noun of the caption (surface order). Throws NoMaskableWord.
RemovedWord select_first_noun(const TokenSequence& tokens, const PosTagger& tagger);

// Deletes the removed word's token span and re-pads. Throws InvalidInput if
// `removed` does not describe a word span of `tokens`.
TokenSequence mask_text(const TokenSequence& tokens, const RemovedWord& removed);

// Min-max normalized relevance; a constant map becomes all zeros. Provider
// failures and non-finite scores raise RelevanceUnavailable.
RelevanceMap relevance_map(const RelevanceProvider& provider, const Image& image, std::string_view word);

// relevant[p] = scores[p] >= tau. Throws ConfigError for tau outside [0, 1].
BinaryMasks split_masks(const RelevanceMap& map, double tau);

// Keeps `own` on relevant patches and takes `partner` elsewhere.
Image mix_images(const Image& own, const Image& partner, const BinaryMasks& masks);

// Seeded derangement of [0, n); identity for n == 1.
std::vector<int> assign_partners(int n, std::uint64_t seed);

Image resize_bilinear(const Image& image, int height, int width);

} // namespace cirmask
