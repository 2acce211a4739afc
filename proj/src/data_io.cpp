#include "cirmask/data_io.hpp"

#include "cirmask/error.hpp"

#include <curl/curl.h>
#include <nlohmann/json.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>
#include <openssl/evp.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

namespace cirmask {

namespace fs = std::filesystem;

namespace {

bool is_url(std::string_view s) { return s.starts_with("http://") || s.starts_with("https://"); }

std::string trim(std::string s) {
    while (!s.empty() && (s.back() == '\r' || s.back() == '\n' || s.back() == ' ')) s.pop_back();
    std::size_t i = 0;
    while (i < s.size() && s[i] == ' ') ++i;
    return s.substr(i);
}

std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) {
        throw DataError("cannot open " + p.string());
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

nlohmann::json parse_json_file(const fs::path& p) {
    const std::string text = read_file(p);
    try {
        return nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        std::size_t line = 1;
        std::size_t col = 1;
        const std::size_t upto = std::min<std::size_t>(e.byte == 0 ? 0 : e.byte - 1, text.size());
        for (std::size_t i = 0; i < upto; ++i) {
            if (text[i] == '\n') {
                ++line;
                col = 1;
            } else {
                ++col;
            }
        }
        throw DataError(p.string() + ":" + std::to_string(line) + ":" + std::to_string(col) +
                        ": malformed JSON: " + e.what());
    }
}

bool readable_image(const std::string& path) {
    std::error_code ec;
    if (!fs::is_regular_file(path, ec)) return false;
    try {
        return cv::haveImageReader(path);
    } catch (const cv::Exception&) {
        return false;
    }
}

Image mat_to_image(const cv::Mat& rgb_float) {
    Image img(rgb_float.rows, rgb_float.cols);
    for (int y = 0; y < rgb_float.rows; ++y) {
        const auto* row = rgb_float.ptr<cv::Vec3f>(y);
        for (int x = 0; x < rgb_float.cols; ++x) {
            for (int c = 0; c < 3; ++c) img.at(y, x, c) = row[x][c];
        }
    }
    return img;
}

} // namespace

std::string_view to_string(DropReason reason) {
    switch (reason) {
    case DropReason::malformed_line: return "malformed_line";
    case DropReason::empty_caption: return "empty_caption";
    case DropReason::missing_file: return "missing_file";
    case DropReason::url_not_cached: return "url_not_cached";
    case DropReason::undecodable: return "undecodable";
    case DropReason::fetch_failed: return "fetch_failed";
    }
    return "unknown";
}

PairDataset load_pairs(const std::string& manifest, std::size_t limit, const std::string& cache_root) {
    std::ifstream in(manifest);
    if (!in) {
        throw ConfigError("cannot open manifest " + manifest);
    }
    const fs::path base = fs::path(manifest).parent_path();
    PairDataset ds;
    ds.manifest = manifest;
    std::string line;
    std::size_t lineno = 0;
    while (ds.records.size() < limit && std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto tab = line.find('\t');
        if (tab == std::string::npos) {
            ds.drops.push_back({line, lineno, DropReason::malformed_line});
            continue;
        }
        std::string caption = trim(line.substr(0, tab));
        std::string locator = trim(line.substr(tab + 1));
        if (caption.empty()) {
            ds.drops.push_back({locator, lineno, DropReason::empty_caption});
            continue;
        }
        std::string path;
        if (is_url(locator)) {
            path = cache_path_for(cache_root.empty() ? default_cache_root() : cache_root, locator);
            if (!fs::exists(path)) {
                ds.drops.push_back({locator, lineno, DropReason::url_not_cached});
                continue;
            }
        } else {
            const fs::path p(locator);
            path = (p.is_absolute() ? p : base / p).string();
        }
        if (!fs::exists(path)) {
            ds.drops.push_back({locator, lineno, DropReason::missing_file});
            continue;
        }
        if (!readable_image(path)) {
            ds.drops.push_back({locator, lineno, DropReason::undecodable});
            continue;
        }
        ds.records.push_back({path, std::move(caption), lineno});
    }
    return ds;
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, int epoch) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(epoch), 0x5eedU};
    std::mt19937_64 rng(seq);
    for (std::size_t i = n; i > 1; --i) {
        const auto j = static_cast<std::size_t>(rng() % i);
        std::swap(order[i - 1], order[j]);
    }
    return order;
}

Benchmark load_triplets(const std::string& root_str, const std::string& format, const std::string& split) {
    const fs::path root(root_str);
    Benchmark bm;
    bm.format = format;
    bm.split = split;
    std::set<std::string> gallery_ids;

    if (format == "cirr") {
        fs::path meta = root;
        if (fs::exists(root / "cirr" / "captions")) meta = root / "cirr";
        const auto captions = parse_json_file(meta / "captions" / ("cap.rc2." + split + ".json"));
        const auto images = parse_json_file(meta / "image_splits" / ("split.rc2." + split + ".json"));
        try {
            for (const auto& [name, rel] : images.items()) {
                bm.gallery.push_back({name, (root / rel.get<std::string>()).lexically_normal().string(), ""});
                gallery_ids.insert(name);
            }
            for (const auto& c : captions) {
                EvalTriplet t;
                t.pair_id = c.contains("pairid") ? c.at("pairid").dump() : std::to_string(bm.triplets.size());
                t.query_id = c.at("reference").get<std::string>();
                t.query_text = c.at("caption").get<std::string>();
                t.target_id = c.at("target_hard").get<std::string>();
                if (c.contains("img_set") && c.at("img_set").contains("members")) {
                    auto members = c.at("img_set").at("members").get<std::vector<std::string>>();
                    if (members.size() == 6 && std::find(members.begin(), members.end(), t.target_id) != members.end()) {
                        t.subset_ids = std::move(members);
                    }
                }
                if (!gallery_ids.count(t.target_id) || !gallery_ids.count(t.query_id)) {
                    ++bm.excluded;
                    continue;
                }
                bm.triplets.push_back(std::move(t));
            }
        } catch (const nlohmann::json::exception& e) {
            throw DataError("CIRR " + split + " split: unexpected layout: " + std::string(e.what()));
        }
    } else if (format == "fashioniq") {
        bool any = false;
        for (const std::string category : {"dress", "shirt", "toptee"}) {
            const auto cap_path = root / "captions" / ("cap." + category + "." + split + ".json");
            if (!fs::exists(cap_path)) continue;
            any = true;
            const auto captions = parse_json_file(cap_path);
            const auto names = parse_json_file(root / "image_splits" / ("split." + category + "." + split + ".json"));
            std::set<std::string> cat_ids;
            try {
                for (const auto& n : names) {
                    const auto id = n.get<std::string>();
                    fs::path p = root / "images" / (id + ".png");
                    if (!fs::exists(p)) p = root / "images" / (id + ".jpg");
                    bm.gallery.push_back({id, p.string(), category});
                    cat_ids.insert(id);
                }
                for (const auto& c : captions) {
                    EvalTriplet t;
                    t.pair_id = std::to_string(bm.triplets.size());
                    t.query_id = c.at("candidate").get<std::string>();
                    t.target_id = c.at("target").get<std::string>();
                    const auto caps = c.at("captions").get<std::vector<std::string>>();
                    for (std::size_t i = 0; i < caps.size(); ++i) {
                        t.query_text += (i ? " and " : "") + caps[i];
                    }
                    t.category = category;
                    if (!cat_ids.count(t.target_id)) {
                        ++bm.excluded;
                        continue;
                    }
                    bm.triplets.push_back(std::move(t));
                }
            } catch (const nlohmann::json::exception& e) {
                throw DataError("FashionIQ " + category + " " + split + ": unexpected layout: " + e.what());
            }
        }
        if (!any) {
            throw DataError("no FashionIQ caption files for split '" + split + "' under " + root.string());
        }
    } else {
        throw ConfigError("unknown benchmark format '" + format + "' (expected cirr or fashioniq)");
    }

    std::map<std::string, std::string> paths;
    for (const auto& g : bm.gallery) paths.emplace(g.id, g.path);
    for (auto& t : bm.triplets) {
        auto it = paths.find(t.query_id);
        if (it != paths.end()) t.query_image = it->second;
    }
    return bm;
}

Image preprocess_image(std::span<const unsigned char> bytes, const BackboneInfo& info) {
    cv::Mat decoded;
    try {
        const cv::Mat buf(1, static_cast<int>(bytes.size()), CV_8UC1, const_cast<unsigned char*>(bytes.data()));
        decoded = cv::imdecode(buf, cv::IMREAD_COLOR);
    } catch (const cv::Exception& e) {
        throw DataError(std::string("undecodable image: ") + e.what());
    }
    if (decoded.empty()) {
        throw DataError("undecodable image");
    }
    const int res = info.resolution;
    const int shorter = std::min(decoded.rows, decoded.cols);
    cv::Mat resized = decoded;
    if (shorter != res) {
        const double scale = static_cast<double>(res) / shorter;
        const int h = std::max(res, static_cast<int>(std::lround(decoded.rows * scale)));
        const int w = std::max(res, static_cast<int>(std::lround(decoded.cols * scale)));
        cv::resize(decoded, resized, cv::Size(w, h), 0, 0, cv::INTER_CUBIC);
    }
    const int top = (resized.rows - res) / 2;
    const int left = (resized.cols - res) / 2;
    cv::Mat crop = resized(cv::Rect(left, top, res, res));
    cv::Mat rgb;
    cv::cvtColor(crop, rgb, cv::COLOR_BGR2RGB);
    cv::Mat f;
    rgb.convertTo(f, CV_32FC3, 1.0 / 255.0);
    Image img = mat_to_image(f);
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            for (int c = 0; c < 3; ++c) {
                img.at(y, x, c) = (img.at(y, x, c) - info.mean[static_cast<std::size_t>(c)]) /
                                  info.std[static_cast<std::size_t>(c)];
            }
        }
    }
    return img;
}

Image load_image(const std::string& path, const BackboneInfo& info) {
    const std::string bytes = read_file(path);
    return preprocess_image(std::span(reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size()), info);
}

Image denormalize(const Image& image, const BackboneInfo& info) {
    Image out = image;
    for (std::size_t i = 0; i < out.pixels.size(); ++i) {
        const auto c = i % 3;
        out.pixels[i] = std::clamp(out.pixels[i] * info.std[c] + info.mean[c], 0.0f, 1.0f);
    }
    return out;
}

namespace {


constexpr const char* shapes[] = {"circle", "square", "triangle", "ring", "cross", "bar"};

struct Color {
    const char* name;
    cv::Scalar bgr;
};

const Color colors[] = {
    {"red", {40, 40, 220}},    {"green", {60, 180, 60}},   {"blue", {220, 80, 40}},
    {"yellow", {40, 220, 230}}, {"purple", {170, 50, 140}}, {"orange", {30, 140, 250}},
};

const Color backgrounds[] = {
    {"white", {245, 245, 245}}, {"gray", {128, 128, 128}}, {"black", {15, 15, 15}}};

void draw_shape(cv::Mat& img, int shape, const cv::Scalar& color, cv::Point center, int r) {
    switch (shape) {
    case 0: cv::circle(img, center, r, color, cv::FILLED, cv::LINE_AA); break;
    case 1: cv::rectangle(img, center - cv::Point(r, r), center + cv::Point(r, r), color, cv::FILLED); break;
    case 2: {
        std::vector<cv::Point> pts{{center.x, center.y - r}, {center.x - r, center.y + r}, {center.x + r, center.y + r}};
        cv::fillConvexPoly(img, pts, color, cv::LINE_AA);
        break;
    }
    case 3: cv::circle(img, center, r, color, std::max(2, r / 3), cv::LINE_AA); break;
    case 4:
        cv::rectangle(img, center - cv::Point(r, r / 3), center + cv::Point(r, r / 3), color, cv::FILLED);
        cv::rectangle(img, center - cv::Point(r / 3, r), center + cv::Point(r / 3, r), color, cv::FILLED);
        break;
    default: cv::rectangle(img, center - cv::Point(r, r / 4), center + cv::Point(r, r / 4), color, cv::FILLED); break;
    }
}

cv::Mat render_shape(int size, int shape, int color, int bg, std::mt19937_64& rng) {
    cv::Mat img(size, size, CV_8UC3, backgrounds[bg].bgr);
    const int r = size / 5 + static_cast<int>(rng() % static_cast<std::uint64_t>(std::max(1, size / 8)));
    const int span = std::max(1, size - 2 * r - 2);
    const cv::Point center(r + 1 + static_cast<int>(rng() % static_cast<std::uint64_t>(span)),
                           r + 1 + static_cast<int>(rng() % static_cast<std::uint64_t>(span)));
    draw_shape(img, shape, colors[color].bgr, center, r);
    return img;
}

std::string caption_for(int shape, int color, int bg, std::uint64_t pick) {
    const std::string s = shapes[shape];
    const std::string c = colors[color].name;
    const std::string b = backgrounds[bg].name;
    switch (pick % 4) {
    case 0: return "a " + c + " " + s + " on a " + b + " background";
    case 1: return s + " in " + c + " over a " + b + " backdrop";
    case 2: return "the " + s + " is " + c + " against a " + b + " wall";
    default: return "one " + c + " " + s + " centered on " + b + " paper";
    }
}

void write_png(const fs::path& p, const cv::Mat& img) {
    if (!cv::imwrite(p.string(), img)) {
        throw IoError("cannot write " + p.string());
    }
}

} // namespace

FixtureSummary write_synthetic_fixture(const std::string& dir, const FixtureOptions& o) {
    if (o.pairs < 1 || o.triplets < 0 || o.image_size < 8) {
        throw ConfigError("synthetic fixture: pairs >= 1, triplets >= 0, image_size >= 8 required");
    }
    const fs::path root(dir);
    fs::create_directories(root / "images");
    std::mt19937_64 rng(o.seed);
    constexpr int n_shapes = 6;
    constexpr int n_colors = 6;
    constexpr int n_bgs = 3;

    FixtureSummary summary;
    summary.manifest = (root / "pairs.tsv").string();
    std::ofstream manifest(summary.manifest, std::ios::trunc);
    for (int i = 0; i < o.pairs; ++i) {
        const int shape = static_cast<int>(rng() % n_shapes);
        const int color = static_cast<int>(rng() % n_colors);
        const int bg = static_cast<int>(rng() % n_bgs);
        char name[32];
        std::snprintf(name, sizeof name, "pair-%05d.png", i);
        write_png(root / "images" / name, render_shape(o.image_size, shape, color, bg, rng));
        manifest << caption_for(shape, color, bg, rng()) << "\timages/" << name << "\n";
    }
    summary.pairs = o.pairs;

    fs::create_directories(root / "cirr" / "captions");
    fs::create_directories(root / "cirr" / "image_splits");
    fs::create_directories(root / "dev");
    nlohmann::json captions = nlohmann::json::array();
    nlohmann::json split = nlohmann::json::object();
    for (int t = 0; t < o.triplets; ++t) {
        const int shape = static_cast<int>(rng() % n_shapes);
        const int bg = static_cast<int>(rng() % n_bgs);
        const int c_ref = static_cast<int>(rng() % n_colors);
        const int c_tgt = (c_ref + 1 + static_cast<int>(rng() % (n_colors - 1))) % n_colors;
        std::vector<std::string> members;
        auto add = [&](int k, int sh, int col) {
            const std::string id = "dev-" + std::to_string(t) + "-" + std::to_string(k);
            write_png(root / "dev" / (id + ".png"), render_shape(o.image_size, sh, col, bg, rng));
            split[id] = "./dev/" + id + ".png";
            members.push_back(id);
        };
        add(0, shape, c_ref);
        add(1, shape, c_tgt);
        for (int k = 2; k < 6; ++k) {
            const int sh = (shape + k - 1) % n_shapes;
            add(k, sh, c_tgt);
        }
        captions.push_back({{"pairid", t},
                            {"reference", members[0]},
                            {"target_hard", members[1]},
                            {"target_soft", {{members[1], 1.0}}},
                            {"caption", "is " + std::string(colors[c_tgt].name) + " instead of " + colors[c_ref].name},
                            {"img_set", {{"id", t}, {"members", members}}}});
    }
    std::ofstream(root / "cirr" / "captions" / "cap.rc2.val.json") << captions.dump(1);
    std::ofstream(root / "cirr" / "image_splits" / "split.rc2.val.json") << split.dump(1);
    summary.benchmark_root = root.string();
    summary.triplets = o.triplets;
    return summary;
}

std::string sha256_hex(std::string_view data) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
        throw IoError("sha256 failed");
    }
    static constexpr char hex[] = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i) {
        out.push_back(hex[digest[i] >> 4]);
        out.push_back(hex[digest[i] & 0xF]);
    }
    return out;
}

std::string default_cache_root() {
    if (const char* env = std::getenv("CIRMASK_CACHE"); env && *env) {
        return env;
    }
    return "cache";
}

std::string cache_path_for(const std::string& cache_root, std::string_view url) {
    return (fs::path(cache_root) / (sha256_hex(url) + ".img")).string();
}

namespace {

std::size_t write_to_file(char* ptr, std::size_t size, std::size_t n, void* user) {
    auto* out = static_cast<std::ofstream*>(user);
    out->write(ptr, static_cast<std::streamsize>(size * n));
    return out->good() ? size * n : 0;
}

bool fetch(const std::string& url, const fs::path& dest) {
    const fs::path tmp = dest.string() + ".part";
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) return false;
    CURL* curl = curl_easy_init();
    if (!curl) return false;
    curl_easy_setopt(curl, CURLOPT_URL, url.c_str());
    curl_easy_setopt(curl, CURLOPT_FOLLOWLOCATION, 1L);
    curl_easy_setopt(curl, CURLOPT_FAILONERROR, 1L);
    curl_easy_setopt(curl, CURLOPT_TIMEOUT, 30L);
    curl_easy_setopt(curl, CURLOPT_WRITEFUNCTION, write_to_file);
    curl_easy_setopt(curl, CURLOPT_WRITEDATA, &out);
    const CURLcode rc = curl_easy_perform(curl);
    curl_easy_cleanup(curl);
    out.close();
    std::error_code ec;
    if (rc != CURLE_OK) {
        fs::remove(tmp, ec);
        return false;
    }
    fs::rename(tmp, dest, ec);
    return !ec;
}

} // namespace

IngestReport ingest_manifest(const std::string& manifest, const std::string& out_manifest,
                             const std::string& cache_root) {
    std::ifstream in(manifest);
    if (!in) {
        throw ConfigError("cannot open manifest " + manifest);
    }
    fs::create_directories(cache_root);
    std::ofstream out(out_manifest, std::ios::trunc);
    if (!out) {
        throw IoError("cannot write " + out_manifest);
    }
    const fs::path base = fs::path(manifest).parent_path();
    IngestReport report;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto tab = line.find('\t');
        if (tab == std::string::npos) {
            report.drops.push_back({line, lineno, DropReason::malformed_line});
            continue;
        }
        const std::string caption = line.substr(0, tab);
        const std::string locator = trim(line.substr(tab + 1));
        std::string path;
        if (is_url(locator)) {
            path = cache_path_for(cache_root, locator);
            if (fs::exists(path)) {
                ++report.cached;
            } else if (fetch(locator, path)) {
                ++report.fetched;
            } else {
                report.drops.push_back({locator, lineno, DropReason::fetch_failed});
                continue;
            }
        } else {
            const fs::path p(locator);
            path = fs::absolute(p.is_absolute() ? p : base / p).string();
            ++report.local;
        }
        if (!readable_image(path)) {
            report.drops.push_back({locator, lineno, DropReason::undecodable});
            continue;
        }
        out << caption << '\t' << fs::absolute(path).string() << '\n';
    }
    return report;
}

} // namespace cirmask
