#include "cirmask/error.hpp"
#include "cirmask/inversion.hpp"
#include "cirmask/masking.hpp"
#include "cirmask/stub_backbone.hpp"

#include "support.hpp"

#include <doctest.h>

#include <set>

using namespace cirmask;

namespace {

const StubBackbone& stub() {
    static const StubBackbone b(testing::stub_options());
    return b;
}

BinaryMasks masks_from(std::initializer_list<std::initializer_list<int>> rows) {
    const int p = static_cast<int>(rows.size());
    BinaryMasks m;
    m.relevant.resize(p, p);
    m.irrelevant.resize(p, p);
    int y = 0;
    for (const auto& r : rows) {
        int x = 0;
        for (int v : r) {
            m.relevant(y, x) = static_cast<std::uint8_t>(v);
            m.irrelevant(y, x) = static_cast<std::uint8_t>(1 - v);
            ++x;
        }
        ++y;
    }
    return m;
}

class ConstantProvider final : public RelevanceProvider {
public:
    explicit ConstantProvider(double v) : v_(v) {}
    Mat raw_scores(const Image&, std::string_view) const override { return Mat::Constant(4, 4, v_); }
    int grid() const override { return 4; }
    std::string name() const override { return "constant"; }

private:
    double v_;
};

class ThrowingProvider final : public RelevanceProvider {
public:
    Mat raw_scores(const Image&, std::string_view) const override { throw std::runtime_error("model offline"); }
    int grid() const override { return 4; }
    std::string name() const override { return "throwing"; }
};

} // namespace

TEST_CASE("first noun of the example caption") {
    const LexiconTagger tagger;
    const TokenSequence t = stub().tokenize("penguins on a pebble beach");
    const RemovedWord r = select_first_noun(t, tagger);
    CHECK(r.word == "penguins");
    CHECK(r.word_index == 0);
    CHECK(r.token_position == 1);
    CHECK(r.token_count == 2);
}

TEST_CASE("caption without a noun is not maskable") {
    const LexiconTagger tagger;
    CHECK_THROWS_AS(select_first_noun(stub().tokenize("run fast"), tagger), NoMaskableWord);
}

TEST_CASE("pinned tagger answer without a leading noun") {
    const LexiconTagger tagger;
    CHECK(select_first_noun(stub().tokenize("on a pebble beach"), tagger).word == "pebble");
}

TEST_CASE("mask_text removes the word span") {
    const LexiconTagger tagger;
    const TokenSequence t = stub().tokenize("penguins on a pebble beach");
    const RemovedWord r = select_first_noun(t, tagger);
    const TokenSequence m = mask_text(t, r);
    CHECK(m == stub().tokenize("on a pebble beach"));
    CHECK(m.word_count() == t.word_count() - 1);
    stub().tokenizer().validate(m);
}

TEST_CASE("removing the only word leaves sos and eos") {
    const LexiconTagger tagger;
    const TokenSequence t = stub().tokenize("dog");
    const TokenSequence m = mask_text(t, select_first_noun(t, tagger));
    CHECK(m.length == 2);
    CHECK(m.word_count() == 0);
    CHECK(m.ids[0] == stub().tokenizer().sos_id());
    CHECK(m.ids[1] == stub().tokenizer().eos_id());
}

TEST_CASE("invalid removal spans are rejected") {
    const TokenSequence t = stub().tokenize("a red dog");
    CHECK_THROWS_AS(mask_text(t, RemovedWord{"dog", 5, 3, 1}), InvalidInput);
    CHECK_THROWS_AS(mask_text(t, RemovedWord{"dog", 2, 2, 1}), InvalidInput);
    CHECK_THROWS_AS(mask_text(t, RemovedWord{"dog", 2, 3, 4}), InvalidInput);
}

TEST_CASE("mask then splice back reproduces the embedded caption") {
    const LexiconTagger tagger;
    for (const char* text : {"penguins on a pebble beach", "a red circle on a white background", "dog"}) {
        const TokenSequence t = stub().tokenize(text);
        const RemovedWord r = select_first_noun(t, tagger);
        const TokenSequence m = mask_text(t, r);
        const EmbeddedSequence orig = stub().embed_tokens(t);
        if (r.token_count == 1) {
            const ComposedQuery q = compose_query(stub(), m, orig.embeddings.row(r.token_position).transpose(),
                                                  r.token_position);
            CHECK(q.embedded.embeddings.topRows(t.length) == orig.embeddings.topRows(t.length));
            CHECK(q.end_position() == t.end_position());
        }
    }
}

TEST_CASE("stub relevance is reproducible and normalized") {
    std::mt19937_64 rng(1);
    const Image img = testing::random_image(rng, 8);
    const StubRelevanceProvider p(4, 11);
    const RelevanceMap a = relevance_map(p, img, "dog");
    const RelevanceMap b = relevance_map(p, img, "dog");
    CHECK(a.scores == b.scores);
    CHECK(a.scores.minCoeff() == 0.0);
    CHECK(a.scores.maxCoeff() == 1.0);
    CHECK(relevance_map(p, img, "cat").scores != a.scores);
    CHECK(relevance_map(StubRelevanceProvider(4, 12), img, "dog").scores != a.scores);
}

TEST_CASE("constant scores normalize to zeros") {
    const RelevanceMap m = relevance_map(ConstantProvider(0.7), Image(8, 8), "dog");
    CHECK(m.scores.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("provider failure and non-finite scores are relevance errors") {
    CHECK_THROWS_AS(relevance_map(ThrowingProvider(), Image(8, 8), "dog"), RelevanceUnavailable);
    CHECK_THROWS_AS(relevance_map(ConstantProvider(std::nan("")), Image(8, 8), "dog"), RelevanceUnavailable);
}

TEST_CASE("gradient-attention provider on the stub backbone") {
    auto b = std::make_shared<const StubBackbone>(testing::stub_options());
    const GradientAttentionProvider p(b);
    std::mt19937_64 rng(6);
    const Image img = testing::random_image(rng, 8);
    const RelevanceMap m = relevance_map(p, img, "circle");
    CHECK(m.grid() == 4);
    CHECK(m.scores.maxCoeff() <= 1.0);
    CHECK(m.scores.minCoeff() >= 0.0);
    // larger inputs are resized to the model resolution first
    CHECK(relevance_map(p, testing::random_image(rng, 32), "circle").grid() == 4);
}

TEST_CASE("threshold is inclusive") {
    RelevanceMap m;
    m.scores.resize(2, 2);
    m.scores << 0.1, 0.4, 0.3, 0.9;
    const BinaryMasks b = split_masks(m, 0.3);
    CHECK(b.relevant(0, 0) == 0);
    CHECK(b.relevant(0, 1) == 1);
    CHECK(b.relevant(1, 0) == 1);
    CHECK(b.relevant(1, 1) == 1);
    CHECK((b.relevant.cast<int>() + b.irrelevant.cast<int>()).minCoeff() == 1);
    CHECK(split_masks(m, 0.0).relevant.cast<int>().sum() == 4);
    CHECK(split_masks(m, 1.0).relevant.cast<int>().sum() == 0);
    CHECK_THROWS_AS(split_masks(m, 1.5), ConfigError);
    CHECK_THROWS_AS(split_masks(m, -0.1), ConfigError);
}

TEST_CASE("mix identities") {
    std::mt19937_64 rng(2);
    const Image x = testing::random_image(rng, 8);
    const Image y = testing::random_image(rng, 8);
    const BinaryMasks all = masks_from({{1, 1}, {1, 1}});
    const BinaryMasks none = masks_from({{0, 0}, {0, 0}});
    const BinaryMasks some = masks_from({{1, 0}, {0, 1}});
    CHECK(mix_images(x, y, all) == x);
    CHECK(mix_images(x, y, none) == y);
    CHECK(mix_images(x, x, some) == x);
}

TEST_CASE("single relevant patch keeps only that block of the own image") {
    std::mt19937_64 rng(3);
    const Image own = testing::random_image(rng, 8);
    const Image partner = testing::random_image(rng, 8);
    const BinaryMasks m = masks_from({{0, 0, 0, 0}, {0, 0, 1, 0}, {0, 0, 0, 0}, {0, 0, 0, 0}});
    const Image out = mix_images(own, partner, m);
    // block (row 1, col 2) of a 4 x 4 grid on 8 px covers y in [2, 4), x in [4, 6)
    for (int y = 0; y < 8; ++y) {
        for (int x = 0; x < 8; ++x) {
            const bool inside = y >= 2 && y < 4 && x >= 4 && x < 6;
            for (int c = 0; c < 3; ++c) {
                CHECK(out.at(y, x, c) == (inside ? own.at(y, x, c) : partner.at(y, x, c)));
            }
        }
    }
}

TEST_CASE("mix rejects mismatched shapes") {
    const BinaryMasks m = masks_from({{1, 0}, {0, 1}});
    CHECK_THROWS_AS(mix_images(Image(8, 8), Image(6, 6), m), InvalidInput);
    CHECK_THROWS_AS(mix_images(Image(7, 7), Image(7, 7), m), InvalidInput);
}

TEST_CASE("partners form a derangement") {
    CHECK(assign_partners(1, 5) == std::vector<int>{0});
    for (int n : {2, 3, 4, 17}) {
        for (std::uint64_t seed = 0; seed < 20; ++seed) {
            const auto p = assign_partners(n, seed);
            std::set<int> seen(p.begin(), p.end());
            CHECK(seen.size() == static_cast<std::size_t>(n));
            for (int i = 0; i < n; ++i) CHECK(p[i] != i);
        }
    }
    CHECK(assign_partners(8, 42) == assign_partners(8, 42));
}

TEST_CASE("bilinear resize keeps constant images constant") {
    Image img(8, 8, 0.25f);
    const Image out = resize_bilinear(img, 4, 4);
    CHECK(out.height == 4);
    for (float v : out.pixels) CHECK(v == doctest::Approx(0.25f));
}
