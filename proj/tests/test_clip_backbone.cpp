#include "cirmask/clip_backbone.hpp"
#include "cirmask/error.hpp"
#include "cirmask/masking.hpp"
#include "cirmask/safetensors.hpp"

#include "support.hpp"

#include <doctest.h>
#include <nlohmann/json.hpp>

#include <cmath>
#include <fstream>

using namespace cirmask;
using nlohmann::json;

namespace {

const ClipBackbone& tiny() {
    static const ClipBackbone b = ClipBackbone::load(testing::data_dir() + "/tiny-clip", "tiny");
    return b;
}

const json& reference() {
    static const json r = [] {
        std::ifstream in(testing::data_dir() + "/tiny-clip/reference.json");
        return json::parse(in);
    }();
    return r;
}

Image image_from(const json& hwc, int size) {
    Image img(size, size);
    const auto v = hwc.get<std::vector<double>>();
    for (std::size_t i = 0; i < v.size(); ++i) img.pixels[i] = static_cast<float>(v[i]);
    return img;
}

} // namespace

// reference.json comes from tests/data/make_tiny_clip.py (transformers, float64)

TEST_CASE("tiny clip loads with the expected shapes") {
    const auto& info = tiny().info();
    CHECK(info.token_dim == 16);
    CHECK(info.feature_dim == 12);
    CHECK(info.context_length == 16);
    CHECK(info.resolution == 32);
    CHECK(info.patch_grid == 4);
    const auto st = SafeTensors::read(testing::data_dir() + "/tiny-clip/model.safetensors");
    CHECK(info.logit_scale == doctest::Approx(std::exp(st.scalar("logit_scale"))).epsilon(1e-12));
}

TEST_CASE("bpe tokenization matches the reference tokenizer") {
    for (const auto& c : reference()["captions"]) {
        const auto ids = c["ids"].get<std::vector<int>>();
        const TokenSequence t = tiny().tokenize(c["text"].get<std::string>());
        CAPTURE(c["text"].get<std::string>());
        REQUIRE(t.length == static_cast<int>(ids.size()));
        for (std::size_t i = 0; i < ids.size(); ++i) CHECK(t.ids[i] == ids[i]);
    }
}

TEST_CASE("text features match the reference model") {
    for (const auto& c : reference()["captions"]) {
        const auto want = c["feature"].get<std::vector<double>>();
        const FeatureBatch f = tiny().encode_text(tiny().tokenize(c["text"].get<std::string>()));
        REQUIRE(f.dim() == static_cast<int>(want.size()));
        for (std::size_t i = 0; i < want.size(); ++i) CHECK(f.vectors(0, i) == doctest::Approx(want[i]).epsilon(1e-9));
    }
}

TEST_CASE("image features match the reference model") {
    for (const auto& im : reference()["images"]) {
        ImageBatch b;
        b.images.push_back(image_from(im["pixels_hwc"], 32));
        const FeatureBatch f = tiny().encode_image(b);
        const auto want = im["feature"].get<std::vector<double>>();
        for (std::size_t i = 0; i < want.size(); ++i) CHECK(f.vectors(0, i) == doctest::Approx(want[i]).epsilon(1e-9));
    }
}

TEST_CASE("gradient-weighted attention matches autograd on the reference model") {
    const auto& imgs = reference()["images"];
    for (const auto& r : reference()["relevance"]) {
        const Image img = image_from(imgs[r["image"].get<int>()]["pixels_hwc"], 32);
        const Mat rel = tiny().image_relevance(img, tiny().tokenize("a photo of " + r["word"].get<std::string>()));
        const auto want = r["map"].get<std::vector<std::vector<double>>>();
        REQUIRE(rel.rows() == 4);
        for (int y = 0; y < 4; ++y)
            for (int x = 0; x < 4; ++x) CHECK(rel(y, x) == doctest::Approx(want[y][x]).epsilon(1e-7).scale(1e-9));
    }
}

TEST_CASE("encode_embedded of embed_tokens equals encode_text") {
    const TokenSequence t = tiny().tokenize("penguins on a pebble beach");
    const FeatureBatch a = tiny().encode_text(t);
    const FeatureBatch b = tiny().encode_embedded(tiny().embed_tokens(t), t.end_position());
    CHECK((a.vectors - b.vectors).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("text backward matches central differences") {
    std::mt19937_64 rng(5);
    const TokenSequence t = tiny().tokenize("a photo of a dog");
    Mat e = tiny().embed_tokens(t).embeddings;
    e.topRows(t.length) += testing::random_mat(rng, t.length, 16, 0.1);
    const Vec g = testing::random_mat(rng, 12, 1).col(0);
    const int end = t.end_position();
    const Mat analytic = tiny().encode_rows_backward(e, end, g);
    const double h = 1e-5;
    double worst = 0.0;
    for (int r = 0; r < t.length; ++r) {
        for (int c = 0; c < 16; ++c) {
            Mat ep = e, em = e;
            ep(r, c) += h;
            em(r, c) -= h;
            const double num = (g.dot(tiny().encode_rows(ep, end)) - g.dot(tiny().encode_rows(em, end))) / (2 * h);
            worst = std::max(worst, testing::rel_error(analytic(r, c), num, 1e-6));
        }
    }
    CHECK(worst < 1e-5);
    CHECK(analytic.bottomRows(16 - t.length).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("wrong image size names the expected resolution") {
    ImageBatch b;
    b.images.emplace_back(31, 31);
    try {
        tiny().encode_image(b);
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("32") != std::string::npos);
    }
}

TEST_CASE("known architecture names are checked against the weights") {
    CHECK_THROWS_AS(ClipBackbone::load(testing::data_dir() + "/tiny-clip", "vit-b-32"), ConfigError);
    CHECK_THROWS_AS(ClipBackbone::load(testing::data_dir() + "/no-such-dir", "tiny"), ConfigError);
}

TEST_CASE("32-px patches on a 224-px input give a 7 x 7 relevance grid") {
    auto b32 = std::make_shared<const ClipBackbone>(ClipBackbone::load(testing::data_dir() + "/tiny-clip-b32", "tiny"));
    CHECK(b32->info().patch_grid == 7);
    GradientAttentionProvider provider(b32);
    CHECK(provider.grid() == 7);
    std::mt19937_64 rng(2);
    const Image img = testing::random_image(rng, 224);
    const RelevanceMap m = relevance_map(provider, img, "dog");
    CHECK(m.grid() == 7);
    CHECK(m.scores.minCoeff() >= 0.0);
    CHECK(m.scores.maxCoeff() <= 1.0);
}

TEST_CASE("weights checksum is stable across loads") {
    const auto again = ClipBackbone::load(testing::data_dir() + "/tiny-clip", "tiny");
    CHECK(again.weights_checksum() == tiny().weights_checksum());
    CHECK(again.fingerprint() == tiny().fingerprint());
}
