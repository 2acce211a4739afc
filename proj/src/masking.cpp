#include "cirmask/masking.hpp"

#include "cirmask/error.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace cirmask {

Mat StubRelevanceProvider::raw_scores(const Image& image, std::string_view word) const {
    std::uint64_t h = checksum_bytes(&seed_, sizeof seed_, 1469598103934665603ULL);
    h = checksum_bytes(word.data(), word.size(), h);
    h = checksum_bytes(image.pixels.data(), image.pixels.size() * sizeof(float), h);
    std::mt19937_64 rng(h);
    Mat m(grid_, grid_);
    for (Eigen::Index i = 0; i < m.size(); ++i) {
        m.data()[i] = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    }
    return m;
}

Mat GradientAttentionProvider::raw_scores(const Image& image, std::string_view word) const {
    const int r = model_->info().resolution;
    const Image input = (image.height == r && image.width == r) ? image : resize_bilinear(image, r, r);
    return model_->image_relevance(input, model_->tokenize("a photo of " + std::string(word)));
}

RemovedWord select_first_noun(const TokenSequence& tokens, const PosTagger& tagger) {
    if (tokens.words.empty()) {
        throw InvalidInput("select_first_noun: caption has no words");
    }
    const auto tags = tagger.tag(tokens.words);
    for (std::size_t i = 0; i < tags.size(); ++i) {
        if (is_noun(tags[i])) {
            const auto& span = tokens.word_spans[i];
            return RemovedWord{tokens.words[i], static_cast<int>(i), span.first_token, span.token_count};
        }
    }
    throw NoMaskableWord("no noun in caption");
}

TokenSequence mask_text(const TokenSequence& tokens, const RemovedWord& removed) {
    const int wi = removed.word_index;
    if (wi < 0 || wi >= tokens.word_count()) {
        throw InvalidInput("mask_text: word index out of range");
    }
    const auto& span = tokens.word_spans[static_cast<std::size_t>(wi)];
    if (span.first_token != removed.token_position || span.token_count != removed.token_count ||
        span.first_token + span.token_count > tokens.length - 1) {
        throw InvalidInput("mask_text: removed span does not match the sequence");
    }
    TokenSequence out;
    out.truncated = tokens.truncated;
    out.ids.reserve(tokens.ids.size());
    for (int p = 0; p < tokens.context_length(); ++p) {
        if (p < span.first_token || p >= span.first_token + span.token_count) {
            out.ids.push_back(tokens.ids[static_cast<std::size_t>(p)]);
        }
    }
    out.ids.resize(tokens.ids.size(), tokens.pad_id);
    out.pad_id = tokens.pad_id;
    out.length = tokens.length - span.token_count;
    for (int i = 0; i < tokens.word_count(); ++i) {
        if (i == wi) continue;
        WordSpan s = tokens.word_spans[static_cast<std::size_t>(i)];
        if (i > wi) {
            s.first_token -= span.token_count;
        }
        out.word_spans.push_back(s);
        out.words.push_back(tokens.words[static_cast<std::size_t>(i)]);
    }
    return out;
}

RelevanceMap relevance_map(const RelevanceProvider& provider, const Image& image, std::string_view word) {
    if (word.empty()) {
        throw InvalidInput("relevance_map: empty word");
    }
    Mat raw;
    try {
        raw = provider.raw_scores(image, word);
    } catch (const RelevanceUnavailable&) {
        throw;
    } catch (const std::exception& e) {
        throw RelevanceUnavailable(provider.name() + " failed: " + e.what());
    }
    if (raw.size() == 0 || raw.rows() != raw.cols() || !raw.allFinite()) {
        throw RelevanceUnavailable(provider.name() + " returned an invalid map");
    }
    RelevanceMap map;
    map.word = std::string(word);
    const double lo = raw.minCoeff();
    const double hi = raw.maxCoeff();
    if (!(hi - lo > 0.0)) {
        map.scores = Mat::Zero(raw.rows(), raw.cols());
    } else {
        map.scores = ((raw.array() - lo) / (hi - lo)).matrix();
    }
    return map;
}

BinaryMasks split_masks(const RelevanceMap& map, double tau) {
    if (!(tau >= 0.0 && tau <= 1.0)) {
        throw ConfigError("mask.tau must be in [0, 1], got " + std::to_string(tau));
    }
    BinaryMasks m;
    m.relevant = (map.scores.array() >= tau).cast<std::uint8_t>();
    m.irrelevant = (1 - m.relevant.array()).matrix();
    return m;
}

Image mix_images(const Image& own, const Image& partner, const BinaryMasks& masks) {
    if (!own.same_shape(partner) || own.pixels.size() != partner.pixels.size()) {
        throw InvalidInput("mix_images: images differ in shape");
    }
    const int grid = masks.grid();
    if (grid < 1 || masks.relevant.cols() != grid || own.height % grid != 0 || own.width % grid != 0) {
        throw InvalidInput("mix_images: image size must be divisible by the mask grid");
    }
    const int ph = own.height / grid;
    const int pw = own.width / grid;
    Image out = own;
    for (int y = 0; y < own.height; ++y) {
        for (int x = 0; x < own.width; ++x) {
            if (masks.relevant(y / ph, x / pw) == 0) {
                for (int c = 0; c < 3; ++c) {
                    out.at(y, x, c) = partner.at(y, x, c);
                }
            }
        }
    }
    return out;
}

std::vector<int> assign_partners(int n, std::uint64_t seed) {
    if (n < 1) {
        throw InvalidInput("assign_partners: batch size must be >= 1");
    }
    std::vector<int> perm(static_cast<std::size_t>(n));
    std::iota(perm.begin(), perm.end(), 0);
    std::mt19937_64 rng(seed);
    // Sattolo's algorithm: a uniformly random single cycle, hence no fixed points.
    for (int i = n - 1; i > 0; --i) {
        const auto j = static_cast<int>(rng() % static_cast<std::uint64_t>(i));
        std::swap(perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(j)]);
    }
    return perm;
}

Image resize_bilinear(const Image& image, int height, int width) {
    if (image.empty() || height < 1 || width < 1) {
        throw InvalidInput("resize_bilinear: empty image or target");
    }
    Image out(height, width);
    const double sy = static_cast<double>(image.height) / height;
    const double sx = static_cast<double>(image.width) / width;
    for (int y = 0; y < height; ++y) {
        const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, image.height - 1.0);
        const int y0 = static_cast<int>(fy);
        const int y1 = std::min(y0 + 1, image.height - 1);
        const double wy = fy - y0;
        for (int x = 0; x < width; ++x) {
            const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, image.width - 1.0);
            const int x0 = static_cast<int>(fx);
            const int x1 = std::min(x0 + 1, image.width - 1);
            const double wx = fx - x0;
            for (int c = 0; c < 3; ++c) {
                const double top = (1 - wx) * image.at(y0, x0, c) + wx * image.at(y0, x1, c);
                const double bot = (1 - wx) * image.at(y1, x0, c) + wx * image.at(y1, x1, c);
                out.at(y, x, c) = static_cast<float>((1 - wy) * top + wy * bot);
            }
        }
    }
    return out;
}

} // namespace cirmask
