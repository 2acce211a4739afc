#include "cirmask/data_io.hpp"
#include "cirmask/error.hpp"
#include "cirmask/stub_backbone.hpp"

#include "support.hpp"

#include <doctest.h>
#include <nlohmann/json.hpp>
#include <opencv2/imgcodecs.hpp>

#include <algorithm>
#include <fstream>
#include <set>

using namespace cirmask;
namespace fs = std::filesystem;

namespace {

// png bytes under any name, the cache uses .img
void write_image(const fs::path& p, int h, int w) {
    cv::Mat m(h, w, CV_8UC3);
    cv::randu(m, cv::Scalar::all(0), cv::Scalar::all(255));
    std::vector<unsigned char> buf;
    cv::imencode(".png", m, buf);
    std::ofstream(p, std::ios::binary).write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
}

void write_text(const fs::path& p, const std::string& s) {
    fs::create_directories(p.parent_path());
    std::ofstream(p) << s;
}

BackboneInfo large_info() {
    BackboneInfo info;
    info.name = "vit-l-14";
    info.resolution = 224;
    return info;
}

std::vector<unsigned char> encode_png(const cv::Mat& m) {
    std::vector<unsigned char> buf;
    cv::imencode(".png", m, buf);
    return buf;
}

} // namespace

TEST_CASE("three readable lines give three records") {
    const auto dir = testing::scratch("pairs3");
    fs::create_directories(dir / "img");
    for (int i = 0; i < 3; ++i) write_image(dir / "img" / ("p" + std::to_string(i) + ".png"), 12, 10);
    write_text(dir / "m.tsv", "a dog\timg/p0.png\na cat on a mat\timg/p1.png\na red car\timg/p2.png\n");
    const PairDataset ds = load_pairs((dir / "m.tsv").string(), 250000);
    REQUIRE(ds.records.size() == 3);
    CHECK(ds.drops.empty());
    CHECK(ds.records[1].caption == "a cat on a mat");
    CHECK(ds.records[1].line == 2);
    CHECK(fs::equivalent(ds.records[2].image_path, dir / "img" / "p2.png"));
}

TEST_CASE("broken path is dropped and counted once") {
    const auto dir = testing::scratch("pairs-broken");
    write_image(dir / "a.png", 8, 8);
    write_image(dir / "c.png", 8, 8);
    write_text(dir / "m.tsv", "one\ta.png\ntwo\tmissing.png\nthree\tc.png\n");
    const PairDataset ds = load_pairs((dir / "m.tsv").string(), 10);
    CHECK(ds.records.size() == 2);
    REQUIRE(ds.drops.size() == 1);
    CHECK(ds.drops[0].line == 2);
    CHECK(ds.drops[0].reason == DropReason::missing_file);
}

TEST_CASE("every bad record has exactly one reason") {
    const auto dir = testing::scratch("pairs-reasons");
    write_image(dir / "ok.png", 8, 8);
    write_text(dir / "junk.png", "not an image");
    write_text(dir / "m.tsv",
               "fine\tok.png\n"
               "no tab here\n"
               "\tok.png\n"
               "bad bytes\tjunk.png\n"
               "remote\thttps://example.invalid/x.jpg\n");
    const PairDataset ds = load_pairs((dir / "m.tsv").string(), 10, (dir / "cache").string());
    CHECK(ds.records.size() == 1);
    REQUIRE(ds.drops.size() == 4);
    std::set<std::size_t> lines;
    for (const auto& d : ds.drops) lines.insert(d.line);
    CHECK(lines == std::set<std::size_t>{2, 3, 4, 5});
    CHECK(ds.drops[0].reason == DropReason::malformed_line);
    CHECK(ds.drops[1].reason == DropReason::empty_caption);
    CHECK(ds.drops[2].reason == DropReason::undecodable);
    CHECK(ds.drops[3].reason == DropReason::url_not_cached);
}

TEST_CASE("cached url resolves through the cache layout") {
    const auto dir = testing::scratch("pairs-cache");
    const std::string url = "https://example.invalid/y.jpg";
    fs::create_directories(dir / "cache");
    write_image(cache_path_for((dir / "cache").string(), url), 8, 8);
    write_text(dir / "m.tsv", "remote thing\t" + url + "\n");
    const PairDataset ds = load_pairs((dir / "m.tsv").string(), 10, (dir / "cache").string());
    REQUIRE(ds.records.size() == 1);
    CHECK(fs::path(ds.records[0].image_path).filename() == sha256_hex(url) + ".img");
}

TEST_CASE("limit caps usable records") {
    const auto dir = testing::scratch("pairs-limit");
    write_image(dir / "a.png", 8, 8);
    std::string m;
    for (int i = 0; i < 20; ++i) m += "caption " + std::to_string(i) + "\ta.png\n";
    write_text(dir / "m.tsv", m);
    CHECK(load_pairs((dir / "m.tsv").string(), 7).records.size() == 7);
    CHECK(load_pairs((dir / "m.tsv").string(), 250000).records.size() == 20);
}

TEST_CASE("missing manifest is a configuration error") {
    CHECK_THROWS_AS(load_pairs("/nonexistent/manifest.tsv", 10), ConfigError);
}

TEST_CASE("epoch order is a seeded permutation that changes per epoch") {
    const auto a = epoch_order(100, 42, 0);
    CHECK(a == epoch_order(100, 42, 0));
    CHECK(a != epoch_order(100, 42, 1));
    CHECK(a != epoch_order(100, 43, 0));
    auto s = a;
    std::sort(s.begin(), s.end());
    for (std::size_t i = 0; i < s.size(); ++i) CHECK(s[i] == i);
    CHECK(epoch_order(0, 1, 0).empty());
}

TEST_CASE("two-triplet CIRR fixture parses exactly") {
    const auto dir = testing::scratch("cirr2");
    nlohmann::json split = {{"a", "./dev/a.png"}, {"b", "./dev/b.png"}, {"c", "./dev/c.png"},
                            {"d", "./dev/d.png"}, {"e", "./dev/e.png"}, {"f", "./dev/f.png"}};
    nlohmann::json caps = nlohmann::json::array();
    caps.push_back({{"pairid", 10}, {"reference", "a"}, {"target_hard", "b"}, {"caption", "make it red"},
                    {"img_set", {{"members", {"a", "b", "c", "d", "e", "f"}}}}});
    caps.push_back({{"pairid", 11}, {"reference", "c"}, {"target_hard", "d"}, {"caption", "add a hat"}});
    write_text(dir / "captions" / "cap.rc2.val.json", caps.dump());
    write_text(dir / "image_splits" / "split.rc2.val.json", split.dump());
    const Benchmark bm = load_triplets(dir.string(), "cirr", "val");
    REQUIRE(bm.triplets.size() == 2);
    CHECK(bm.gallery.size() == 6);
    CHECK(bm.excluded == 0);
    const auto& t0 = bm.triplets[0];
    CHECK(t0.pair_id == "10");
    CHECK(t0.query_id == "a");
    CHECK(t0.target_id == "b");
    CHECK(t0.query_text == "make it red");
    REQUIRE(t0.subset_ids.has_value());
    CHECK(t0.subset_ids->size() == 6);
    CHECK(fs::path(t0.query_image) == (dir / "dev" / "a.png").lexically_normal());
    CHECK_FALSE(bm.triplets[1].subset_ids.has_value());
    CHECK(bm.triplets[1].category.empty());
}

TEST_CASE("triplets whose target is not in the gallery are excluded") {
    const auto dir = testing::scratch("cirr-missing");
    write_text(dir / "captions" / "cap.rc2.val.json",
               R"([{"reference":"a","target_hard":"zz","caption":"x"},{"reference":"a","target_hard":"b","caption":"y"}])");
    write_text(dir / "image_splits" / "split.rc2.val.json", R"({"a":"./a.png","b":"./b.png"})");
    const Benchmark bm = load_triplets(dir.string(), "cirr", "val");
    CHECK(bm.triplets.size() == 1);
    CHECK(bm.excluded == 1);
}

TEST_CASE("FashionIQ category is preserved") {
    const auto dir = testing::scratch("fiq");
    write_text(dir / "captions" / "cap.dress.val.json",
               R"([{"candidate":"d1","target":"d2","captions":["is longer","has no sleeves"]}])");
    write_text(dir / "image_splits" / "split.dress.val.json", R"(["d1","d2","d3"])");
    const Benchmark bm = load_triplets(dir.string(), "fashioniq", "val");
    REQUIRE(bm.triplets.size() == 1);
    CHECK(bm.triplets[0].category == "dress");
    CHECK(bm.triplets[0].query_text == "is longer and has no sleeves");
    CHECK(bm.gallery.size() == 3);
    for (const auto& g : bm.gallery) CHECK(g.category == "dress");
}

TEST_CASE("malformed JSON reports file and line") {
    const auto dir = testing::scratch("cirr-bad");
    write_text(dir / "captions" / "cap.rc2.val.json", "[\n  {\"reference\": \"a\",\n  oops\n]");
    write_text(dir / "image_splits" / "split.rc2.val.json", "{}");
    try {
        load_triplets(dir.string(), "cirr", "val");
        FAIL("expected DataError");
    } catch (const DataError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("cap.rc2.val.json:3:") != std::string::npos);
    }
    CHECK_THROWS_AS(load_triplets(dir.string(), "coco", "val"), ConfigError);
}

TEST_CASE("640x480 becomes 224x224x3 for the large backbone") {
    cv::Mat m(480, 640, CV_8UC3);
    cv::randu(m, cv::Scalar::all(0), cv::Scalar::all(255));
    const auto bytes = encode_png(m);
    const Image img = preprocess_image(bytes, large_info());
    CHECK(img.height == 224);
    CHECK(img.width == 224);
    CHECK(img.pixels.size() == 224u * 224 * 3);
}

TEST_CASE("224 input is only normalized") {
    cv::Mat m(224, 224, CV_8UC3);
    cv::randu(m, cv::Scalar::all(0), cv::Scalar::all(255));
    const auto info = large_info();
    const Image img = preprocess_image(encode_png(m), info);
    double worst = 0.0;
    for (int y = 0; y < 224; ++y) {
        for (int x = 0; x < 224; ++x) {
            const auto bgr = m.at<cv::Vec3b>(y, x);
            for (int c = 0; c < 3; ++c) {
                const double raw = bgr[2 - c] / 255.0;
                const double want = (raw - info.mean[c]) / info.std[c];
                worst = std::max(worst, std::abs(img.at(y, x, c) - want));
            }
        }
    }
    CHECK(worst < 1e-5);
    const Image back = denormalize(img, info);
    CHECK(back.at(17, 31, 0) == doctest::Approx(m.at<cv::Vec3b>(17, 31)[2] / 255.0).epsilon(1e-5));
}

TEST_CASE("stub backbone gets 8x8x3") {
    const StubBackbone stub(testing::stub_options());
    cv::Mat m(30, 50, CV_8UC3, cv::Scalar(10, 20, 30));
    const Image img = preprocess_image(encode_png(m), stub.info());
    CHECK(img.height == 8);
    CHECK(img.width == 8);
    CHECK(img.pixels.size() == 8u * 8 * 3);
}

TEST_CASE("undecodable bytes") {
    const std::string junk = "definitely not a png";
    CHECK_THROWS_AS(preprocess_image(std::span(reinterpret_cast<const unsigned char*>(junk.data()), junk.size()),
                                     large_info()),
                    DataError);
}

TEST_CASE("sha256 and cache path") {
    CHECK(sha256_hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    CHECK(cache_path_for("cache", "abc") == "cache/ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad.img");
}

TEST_CASE("synthetic fixture loads back with the expected counts") {
    const auto dir = testing::scratch("fixture");
    FixtureOptions o;
    o.pairs = 24;
    o.triplets = 5;
    o.image_size = 16;
    const FixtureSummary s = write_synthetic_fixture(dir.string(), o);
    const PairDataset ds = load_pairs(s.manifest, 1000);
    CHECK(ds.records.size() == 24);
    CHECK(ds.drops.empty());
    const Benchmark bm = load_triplets(s.benchmark_root, "cirr", "val");
    CHECK(bm.triplets.size() == 5);
    CHECK(bm.gallery.size() == 30);
    for (const auto& t : bm.triplets) {
        REQUIRE(t.subset_ids.has_value());
        CHECK(std::count(t.subset_ids->begin(), t.subset_ids->end(), t.target_id) == 1);
        CHECK(fs::exists(t.query_image));
    }

    const auto again = testing::scratch("fixture-again");
    write_synthetic_fixture(again.string(), o);
    std::ifstream a(s.manifest), b((again / "pairs.tsv").string());
    std::string la((std::istreambuf_iterator<char>(a)), {}), lb((std::istreambuf_iterator<char>(b)), {});
    CHECK(la == lb);
}
