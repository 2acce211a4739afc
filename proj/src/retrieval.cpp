#include "cirmask/retrieval.hpp"

#include "cirmask/error.hpp"
#include "cirmask/safetensors.hpp"

#include <algorithm>
#include <iomanip>
#include <numeric>
#include <set>
#include <sstream>

namespace cirmask {

using json = nlohmann::json;

GalleryIndex::GalleryIndex(std::vector<std::string> ids, Mat features, std::string fingerprint,
                           std::vector<std::string> categories)
    : ids_(std::move(ids)), categories_(std::move(categories)), features_(std::move(features)),
      fingerprint_(std::move(fingerprint)) {
    if (ids_.empty()) {
        throw InvalidInput("gallery is empty");
    }
    if (static_cast<Eigen::Index>(ids_.size()) != features_.rows()) {
        throw InvalidInput("gallery ids and feature rows differ in count");
    }
    if (categories_.empty()) {
        categories_.assign(ids_.size(), "");
    } else if (categories_.size() != ids_.size()) {
        throw InvalidInput("gallery categories and ids differ in count");
    }
    if (!rows_unit_norm(features_)) {
        throw ContractViolation("gallery features must be unit-normalized");
    }
    for (std::size_t i = 0; i < ids_.size(); ++i) {
        if (!lookup_.emplace(ids_[i], static_cast<int>(i)).second) {
            throw InvalidInput("duplicate gallery id '" + ids_[i] + "'");
        }
    }
}

std::optional<int> GalleryIndex::find(const std::string& id) const {
    auto it = lookup_.find(id);
    if (it == lookup_.end()) return std::nullopt;
    return it->second;
}

void GalleryIndex::save(const std::string& path) const {
    SafeTensors st;
    st.put("features", features_);
    st.metadata["ids"] = json(ids_).dump();
    st.metadata["categories"] = json(categories_).dump();
    st.metadata["fingerprint"] = fingerprint_;
    st.write(path);
}

GalleryIndex GalleryIndex::load(const std::string& path, const std::string& expected_fingerprint) {
    const SafeTensors st = SafeTensors::read(path);
    auto meta = [&](const std::string& key) {
        auto it = st.metadata.find(key);
        if (it == st.metadata.end()) throw DataError(path + ": index metadata lacks '" + key + "'");
        return it->second;
    };
    const std::string fp = meta("fingerprint");
    if (fp != expected_fingerprint) {
        throw ConfigError("stale gallery index " + path + ": built with " + fp + ", current backbone is " +
                          expected_fingerprint);
    }
    return GalleryIndex(json::parse(meta("ids")).get<std::vector<std::string>>(), st.matrix("features"), fp,
                        json::parse(meta("categories")).get<std::vector<std::string>>());
}

GalleryIndex build_index(std::span<const GalleryItem> gallery, const Backbone& backbone) {
    if (gallery.empty()) {
        throw InvalidInput("gallery is empty");
    }
    std::vector<std::string> ids, cats;
    Mat features(static_cast<Eigen::Index>(gallery.size()), backbone.info().feature_dim);
    constexpr std::size_t chunk = 64;
    for (std::size_t begin = 0; begin < gallery.size(); begin += chunk) {
        const std::size_t end = std::min(gallery.size(), begin + chunk);
        ImageBatch batch;
        for (std::size_t i = begin; i < end; ++i) {
            try {
                batch.images.push_back(load_image(gallery[i].path, backbone.info()));
            } catch (const Error& e) {
                throw DataError("gallery image " + gallery[i].id + ": " + e.what());
            }
            ids.push_back(gallery[i].id);
            cats.push_back(gallery[i].category);
        }
        features.middleRows(static_cast<Eigen::Index>(begin), static_cast<Eigen::Index>(end - begin)) =
            backbone.encode_image(batch).vectors;
    }
    return GalleryIndex(std::move(ids), std::move(features), backbone.fingerprint(), std::move(cats));
}

namespace {

std::vector<std::string> order_candidates(const Vec& query, const GalleryIndex& index, std::vector<int> cand,
                                          std::size_t k) {
    if (query.size() != index.features().cols()) {
        throw InvalidInput("query width does not match the gallery");
    }
    const Vec scores = index.features() * query;
    const auto& ids = index.ids();
    auto better = [&](int a, int b) {
        if (scores[a] != scores[b]) return scores[a] > scores[b];
        return ids[a] < ids[b];
    };
    k = std::min(k, cand.size());
    std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(k), cand.end(), better);
    std::vector<std::string> out;
    out.reserve(k);
    for (std::size_t i = 0; i < k; ++i) out.push_back(ids[cand[i]]);
    return out;
}

} // namespace

std::vector<std::string> rank(const Vec& query, const GalleryIndex& index, int k, const RankOptions& options,
                              const Warn& warn) {
    if (k < 1) {
        throw InvalidInput("rank: k must be >= 1");
    }
    std::vector<int> cand;
    for (int i = 0; i < index.size(); ++i) {
        if (options.exclude_id && index.ids()[i] == *options.exclude_id) continue;
        if (options.category && !options.category->empty() && index.categories()[i] != *options.category) continue;
        cand.push_back(i);
    }
    if (static_cast<std::size_t>(k) > cand.size() && warn) {
        warn("k = " + std::to_string(k) + " exceeds the " + std::to_string(cand.size()) +
             " candidates; clamped");
    }
    return order_candidates(query, index, std::move(cand), static_cast<std::size_t>(k));
}

std::vector<std::string> rank_subset(const Vec& query, const GalleryIndex& index,
                                     std::span<const std::string> candidates, const RankOptions& options) {
    std::vector<int> cand;
    for (const auto& id : candidates) {
        if (options.exclude_id && id == *options.exclude_id) continue;
        const auto i = index.find(id);
        if (!i) throw InvalidInput("subset member '" + id + "' is not in the gallery");
        cand.push_back(*i);
    }
    const std::size_t n = cand.size();
    return order_candidates(query, index, std::move(cand), n);
}

Vec embed_query(const Vec& query_image_feature, std::string_view query_text, const InversionNetwork& net,
                const Backbone& backbone, const Warn& warn) {
    const Mat w = net.forward(query_image_feature.transpose());
    const Vec pseudo = w.row(0).transpose();
    std::string text(query_text);
    while (true) {
        try {
            return encode_query(backbone, build_inference_query(backbone, pseudo, text)).vectors.row(0).transpose();
        } catch (const QueryTooLong&) {
            const auto cut = text.find_last_of(" \t");
            if (cut == std::string::npos || text.empty()) {
                if (text.empty()) throw;
                text.clear();
            } else {
                text = text.substr(0, cut);
                text.erase(text.find_last_not_of(" \t") + 1);
            }
            if (warn) warn("query text too long; truncated to \"" + text + "\"");
        }
    }
}

double recall_at_k(std::span<const std::vector<std::string>> rankings, std::span<const EvalTriplet> triplets, int k) {
    if (triplets.empty()) {
        throw InvalidInput("recall_at_k: no queries");
    }
    if (rankings.size() != triplets.size()) {
        throw InvalidInput("recall_at_k: one ranking per triplet required");
    }
    std::size_t hits = 0;
    for (std::size_t i = 0; i < triplets.size(); ++i) {
        const auto& r = rankings[i];
        const auto top = std::min(r.size(), static_cast<std::size_t>(std::max(k, 0)));
        if (std::find(r.begin(), r.begin() + static_cast<std::ptrdiff_t>(top), triplets[i].target_id) !=
            r.begin() + static_cast<std::ptrdiff_t>(top)) {
            ++hits;
        }
    }
    return 100.0 * static_cast<double>(hits) / static_cast<double>(triplets.size());
}

SubsetRecall recall_subset_at_k(std::span<const std::vector<std::string>> subset_rankings,
                                std::span<const EvalTriplet> triplets, int k) {
    if (subset_rankings.size() != triplets.size()) {
        throw InvalidInput("recall_subset_at_k: one ranking per triplet required");
    }
    SubsetRecall out;
    std::size_t hits = 0;
    for (std::size_t i = 0; i < triplets.size(); ++i) {
        if (!triplets[i].subset_ids) {
            ++out.excluded;
            continue;
        }
        ++out.counted;
        const auto& r = subset_rankings[i];
        const auto top = std::min(r.size(), static_cast<std::size_t>(std::max(k, 0)));
        if (std::find(r.begin(), r.begin() + static_cast<std::ptrdiff_t>(top), triplets[i].target_id) !=
            r.begin() + static_cast<std::ptrdiff_t>(top)) {
            ++hits;
        }
    }
    if (out.counted == 0) {
        throw InvalidInput("recall_subset_at_k: no triplet carries a subset");
    }
    out.value = 100.0 * static_cast<double>(hits) / static_cast<double>(out.counted);
    return out;
}

std::optional<double> RecallReport::get(const std::string& name) const {
    for (const auto& [k, v] : metrics) {
        if (k == name) return v;
    }
    return std::nullopt;
}

std::string RecallReport::to_text() const {
    std::ostringstream out;
    out << std::fixed << std::setprecision(2);
    for (const auto& [k, v] : metrics) out << std::setw(8) << k;
    out << '\n';
    for (const auto& [k, v] : metrics) out << std::setw(8) << v;
    out << '\n';
    for (const auto& [cat, values] : per_category) {
        out << cat << ":";
        for (const auto& [k, v] : values) out << "  " << k << "=" << v;
        out << '\n';
    }
    out << "queries: " << queries;
    if (subset_queries) out << "  subset queries: " << subset_queries;
    if (subset_excluded) out << "  without subset: " << subset_excluded;
    if (excluded_triplets) out << "  excluded at load: " << excluded_triplets;
    out << '\n';
    return out.str();
}

json RecallReport::to_json() const {
    json m = json::object();
    for (const auto& [k, v] : metrics) m[k] = v;
    json cats = json::object();
    for (const auto& [cat, values] : per_category) {
        json c = json::object();
        for (const auto& [k, v] : values) c[k] = v;
        cats[cat] = c;
    }
    return {{"metrics", m},
            {"queries", queries},
            {"subset_queries", subset_queries},
            {"subset_excluded", subset_excluded},
            {"excluded_triplets", excluded_triplets},
            {"per_category", cats}};
}

EvalResult score_queries(const Mat& queries, std::span<const EvalTriplet> triplets, const GalleryIndex& index,
                         const EvalOptions& options, const Warn& warn) {
    if (triplets.empty()) {
        throw InvalidInput("no evaluation triplets");
    }
    if (queries.rows() != static_cast<Eigen::Index>(triplets.size())) {
        throw InvalidInput("one query vector per triplet required");
    }
    if (options.ks.empty()) {
        throw ConfigError("eval.k needs at least one cutoff");
    }
    const int kmax = *std::max_element(options.ks.begin(), options.ks.end());
    EvalResult res;
    bool clamped = false;
    Warn once = [&](const std::string& msg) {
        if (!clamped && warn) warn(msg);
        clamped = true;
    };
    bool any_subset = false;
    for (std::size_t i = 0; i < triplets.size(); ++i) {
        const auto& t = triplets[i];
        RankOptions ro;
        if (options.exclude_query) ro.exclude_id = t.query_id;
        ro.category = t.category;
        const Vec q = queries.row(static_cast<Eigen::Index>(i)).transpose();
        res.rankings.push_back(rank(q, index, kmax, ro, once));
        if (t.subset_ids) {
            any_subset = true;
            res.subset_rankings.push_back(rank_subset(q, index, *t.subset_ids, ro));
        } else {
            res.subset_rankings.emplace_back();
        }
    }
    auto& rep = res.report;
    rep.queries = triplets.size();
    for (int k : options.ks) {
        rep.metrics.emplace_back("R@" + std::to_string(k), recall_at_k(res.rankings, triplets, k));
    }
    if (any_subset) {
        for (int k : options.subset_ks) {
            const SubsetRecall s = recall_subset_at_k(res.subset_rankings, triplets, k);
            rep.metrics.emplace_back("Rs@" + std::to_string(k), s.value);
            rep.subset_queries = s.counted;
            rep.subset_excluded = s.excluded;
        }
    }
    std::set<std::string> cats;
    for (const auto& t : triplets) {
        if (!t.category.empty()) cats.insert(t.category);
    }
    if (cats.size() > 1 || (cats.size() == 1 && !triplets.front().category.empty())) {
        for (const auto& cat : cats) {
            std::vector<EvalTriplet> sub;
            std::vector<std::vector<std::string>> sub_rank;
            for (std::size_t i = 0; i < triplets.size(); ++i) {
                if (triplets[i].category == cat) {
                    sub.push_back(triplets[i]);
                    sub_rank.push_back(res.rankings[i]);
                }
            }
            auto& row = rep.per_category[cat];
            for (int k : options.ks) row.emplace_back("R@" + std::to_string(k), recall_at_k(sub_rank, sub, k));
        }
    }
    return res;
}

EvalResult evaluate(const Benchmark& benchmark, const GalleryIndex& index, const InversionNetwork& net,
                    const Backbone& backbone, const EvalOptions& options, const Warn& warn) {
    const auto& triplets = benchmark.triplets;
    if (triplets.empty()) {
        throw InvalidInput("benchmark has no triplets");
    }
    Mat queries(static_cast<Eigen::Index>(triplets.size()), backbone.info().feature_dim);
    for (std::size_t i = 0; i < triplets.size(); ++i) {
        const auto& t = triplets[i];
        Vec f;
        if (auto row = index.find(t.query_id)) {
            f = index.features().row(*row).transpose();
        } else {
            ImageBatch b;
            b.images.push_back(load_image(t.query_image, backbone.info()));
            f = backbone.encode_image(b).vectors.row(0).transpose();
        }
        queries.row(static_cast<Eigen::Index>(i)) = embed_query(f, t.query_text, net, backbone, warn).transpose();
    }
    EvalResult res = score_queries(queries, triplets, index, options, warn);
    res.report.excluded_triplets = benchmark.excluded;
    return res;
}

std::vector<AblationRow> run_tau_ablation(std::span<const double> taus,
                                          const std::function<RecallReport(double)>& train_and_evaluate) {
    if (taus.empty()) {
        throw ConfigError("ablation.taus needs at least one value");
    }
    std::vector<AblationRow> rows;
    for (double tau : taus) {
        if (!(tau >= 0.0 && tau <= 1.0)) {
            throw ConfigError("ablation tau must be in [0, 1]");
        }
        rows.push_back({tau, train_and_evaluate(tau)});
    }
    return rows;
}

namespace {

std::vector<std::string> metric_columns(std::span<const AblationRow> rows) {
    std::vector<std::string> cols;
    for (const auto& r : rows) {
        for (const auto& [k, v] : r.report.metrics) {
            if (std::find(cols.begin(), cols.end(), k) == cols.end()) cols.push_back(k);
        }
    }
    return cols;
}

} // namespace

std::string ablation_text(std::span<const AblationRow> rows) {
    const auto cols = metric_columns(rows);
    std::ostringstream out;
    out << std::setw(6) << "tau";
    for (const auto& c : cols) out << std::setw(8) << c;
    out << '\n' << std::fixed;
    for (const auto& r : rows) {
        out << std::setw(6) << std::setprecision(2) << r.tau;
        for (const auto& c : cols) {
            const auto v = r.report.get(c);
            if (v) {
                out << std::setw(8) << std::setprecision(2) << *v;
            } else {
                out << std::setw(8) << "-";
            }
        }
        out << '\n';
    }
    return out.str();
}

std::string ablation_csv(std::span<const AblationRow> rows) {
    const auto cols = metric_columns(rows);
    std::ostringstream out;
    out << "tau";
    for (const auto& c : cols) out << ',' << c;
    out << '\n';
    for (const auto& r : rows) {
        out << r.tau;
        for (const auto& c : cols) {
            out << ',';
            if (const auto v = r.report.get(c)) out << *v;
        }
        out << '\n';
    }
    return out.str();
}

} // namespace cirmask
