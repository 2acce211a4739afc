#include "cirmask/config.hpp"

#include "cirmask/backbone.hpp"
#include "cirmask/data_io.hpp"
#include "cirmask/error.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

namespace cirmask {

namespace {

using json = nlohmann::json;

const ConfigKey* find_key(const std::string& key) {
    for (const auto& k : config_schema()) {
        if (k.key == key) return &k;
    }
    return nullptr;
}

std::string type_name(ConfigType t) {
    switch (t) {
    case ConfigType::string: return "string";
    case ConfigType::integer: return "integer";
    case ConfigType::number: return "number";
    case ConfigType::boolean: return "boolean";
    case ConfigType::integer_or_auto: return "integer or \"auto\"";
    case ConfigType::number_or_auto: return "number or \"auto\"";
    case ConfigType::integer_list: return "comma-separated integers";
    case ConfigType::number_list: return "comma-separated numbers";
    }
    return "value";
}

[[noreturn]] void type_error(const std::string& key, ConfigType t, const std::string& got) {
    throw ConfigError("config key '" + key + "' expects " + type_name(t) + ", got '" + got + "'");
}

bool parse_integer(const std::string& s, long long& out) {
    std::size_t pos = 0;
    try {
        out = std::stoll(s, &pos);
    } catch (const std::exception&) {
        return false;
    }
    return pos == s.size();
}

bool parse_number(const std::string& s, double& out) {
    std::size_t pos = 0;
    try {
        out = std::stod(s, &pos);
    } catch (const std::exception&) {
        return false;
    }
    return pos == s.size() && std::isfinite(out);
}

std::vector<std::string> split_commas(const std::string& s) {
    std::vector<std::string> parts;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item.erase(0, item.find_first_not_of(" \t"));
        item.erase(item.find_last_not_of(" \t") + 1);
        if (!item.empty()) parts.push_back(item);
    }
    return parts;
}

std::string strip(std::string s) {
    s.erase(0, s.find_first_not_of(" \t\r"));
    s.erase(s.find_last_not_of(" \t\r") + 1);
    if (s.size() >= 2 && s.front() == '"' && s.back() == '"') {
        s = s.substr(1, s.size() - 2);
    }
    return s;
}

json coerce_text(const ConfigKey& k, const std::string& raw) {
    long long i = 0;
    double d = 0.0;
    switch (k.type) {
    case ConfigType::string: return raw;
    case ConfigType::integer:
        if (!parse_integer(raw, i)) type_error(k.key, k.type, raw);
        return i;
    case ConfigType::number:
        if (!parse_number(raw, d)) type_error(k.key, k.type, raw);
        return d;
    case ConfigType::boolean:
        if (raw == "true" || raw == "1" || raw == "yes") return true;
        if (raw == "false" || raw == "0" || raw == "no") return false;
        type_error(k.key, k.type, raw);
    case ConfigType::integer_or_auto:
        if (raw == "auto") return "auto";
        if (!parse_integer(raw, i)) type_error(k.key, k.type, raw);
        return i;
    case ConfigType::number_or_auto:
        if (raw == "auto") return "auto";
        if (!parse_number(raw, d)) type_error(k.key, k.type, raw);
        return d;
    case ConfigType::integer_list: {
        json arr = json::array();
        for (const auto& p : split_commas(raw)) {
            if (!parse_integer(p, i)) type_error(k.key, k.type, raw);
            arr.push_back(i);
        }
        return arr;
    }
    case ConfigType::number_list: {
        json arr = json::array();
        for (const auto& p : split_commas(raw)) {
            if (!parse_number(p, d)) type_error(k.key, k.type, raw);
            arr.push_back(d);
        }
        return arr;
    }
    }
    return raw;
}

json coerce_json(const ConfigKey& k, const json& v) {
    if (v.is_string() && k.type != ConfigType::string) {
        return coerce_text(k, v.get<std::string>());
    }
    switch (k.type) {
    case ConfigType::string:
        if (!v.is_string()) type_error(k.key, k.type, v.dump());
        return v;
    case ConfigType::integer:
    case ConfigType::integer_or_auto:
        if (!v.is_number_integer()) type_error(k.key, k.type, v.dump());
        return v;
    case ConfigType::number:
    case ConfigType::number_or_auto:
        if (!v.is_number()) type_error(k.key, k.type, v.dump());
        return v.get<double>();
    case ConfigType::boolean:
        if (!v.is_boolean()) type_error(k.key, k.type, v.dump());
        return v;
    case ConfigType::integer_list:
        if (!v.is_array() || !std::all_of(v.begin(), v.end(), [](const json& e) { return e.is_number_integer(); }))
            type_error(k.key, k.type, v.dump());
        return v;
    case ConfigType::number_list: {
        if (!v.is_array() || !std::all_of(v.begin(), v.end(), [](const json& e) { return e.is_number(); }))
            type_error(k.key, k.type, v.dump());
        json arr = json::array();
        for (const auto& e : v) arr.push_back(e.get<double>());
        return arr;
    }
    }
    return v;
}

void one_of(const std::string& key, const std::string& v, std::initializer_list<const char*> allowed) {
    for (const char* a : allowed) {
        if (v == a) return;
    }
    std::string list;
    for (const char* a : allowed) list += std::string(list.empty() ? "" : ", ") + a;
    throw ConfigError("config key '" + key + "' must be one of {" + list + "}, got '" + v + "'");
}

void flatten(const json& j, const std::string& prefix, std::vector<std::pair<std::string, json>>& out) {
    for (const auto& [k, v] : j.items()) {
        const std::string key = prefix.empty() ? k : prefix + "." + k;
        if (v.is_object() && !find_key(key)) {
            flatten(v, key, out);
        } else {
            out.emplace_back(key, v);
        }
    }
}

} // namespace

const std::vector<ConfigKey>& config_schema() {
    static const std::vector<ConfigKey> schema{
        {"backbone.name", ConfigType::string, "vit-l-14", "stub | vit-l-14 | vit-b-32"},
        {"backbone.weights_path", ConfigType::string, "", "directory with model.safetensors, config.json, vocab.json, merges.txt"},
        {"backbone.stub_dim", ConfigType::integer, 16, "token/feature width of the stub backbone"},
        {"backbone.stub_seed", ConfigType::integer, 20240101, "seed of the stub backbone weights"},
        {"mask.tau", ConfigType::number, 0.3, "relevance threshold in [0, 1]"},
        {"mask.relevance_provider", ConfigType::string, "gradient-attention", "gradient-attention | stub"},
        {"mask.relevance_backbone", ConfigType::string, "vit-b-32", "backbone used for relevance maps: same | stub | vit-b-32 | vit-l-14"},
        {"mask.relevance_weights_path", ConfigType::string, "", "weights of the relevance backbone"},
        {"mask.pos_tagger", ConfigType::string, "lexicon", "lexicon | lexicon:<path>"},
        {"model.hidden_dim", ConfigType::integer_or_auto, "auto", "hidden width of the inversion network (auto = 4 x token width)"},
        {"model.dropout", ConfigType::number, 0.0, "dropout after each hidden layer"},
        {"loss.alpha", ConfigType::number, 0.5, "weight of the query-target loss"},
        {"loss.temperature", ConfigType::number_or_auto, "auto", "softmax temperature (auto = 1 / backbone logit scale)"},
        {"train.batch_size", ConfigType::integer, 128, "pairs per step"},
        {"train.epochs", ConfigType::integer, 10, "epochs"},
        {"train.learning_rate", ConfigType::number, 1e-4, "AdamW learning rate"},
        {"train.weight_decay", ConfigType::number, 0.01, "AdamW decoupled weight decay"},
        {"train.beta1", ConfigType::number, 0.9, "AdamW beta1"},
        {"train.beta2", ConfigType::number, 0.999, "AdamW beta2"},
        {"train.eps", ConfigType::number, 1e-8, "AdamW epsilon"},
        {"train.lr_schedule", ConfigType::string, "constant", "constant | cosine"},
        {"train.grad_clip", ConfigType::number, 0.0, "global gradient-norm clip (0 = off)"},
        {"train.seed", ConfigType::integer, 0, "seed for initialization, shuffling, partners, dropout"},
        {"train.checkpoint_dir", ConfigType::string, "", "defaults to <run dir>/checkpoints"},
        {"train.resume", ConfigType::string, "", "checkpoint to resume from"},
        {"data.manifest", ConfigType::string, "", "caption<TAB>image manifest"},
        {"data.limit", ConfigType::integer, 250000, "maximum usable pairs"},
        {"data.cache_dir", ConfigType::string, "", "image cache root (default $CIRMASK_CACHE or ./cache)"},
        {"eval.benchmark", ConfigType::string, "cirr", "cirr | fashioniq | fixture"},
        {"eval.data_path", ConfigType::string, "", "benchmark root directory"},
        {"eval.split", ConfigType::string, "val", "benchmark split"},
        {"eval.checkpoint", ConfigType::string, "", "inversion network checkpoint"},
        {"eval.k", ConfigType::integer_list, json::array({1, 5, 10, 50}), "Recall@k cutoffs"},
        {"eval.subset_k", ConfigType::integer_list, json::array({1, 2, 3}), "Recall_Subset@k cutoffs"},
        {"eval.exclude_query", ConfigType::boolean, true, "drop the query image from its own ranking"},
        {"eval.grid_samples", ConfigType::integer, 0, "triplets rendered into a result grid"},
        {"eval.grid_top", ConfigType::integer, 3, "retrieved images per grid row"},
        {"ablation.taus", ConfigType::number_list, json::array({0.2, 0.3, 0.4}), "thresholds for the tau ablation"},
        {"run.root", ConfigType::string, "runs", "parent directory of run directories"},
    };
    return schema;
}

ResolvedConfig::ResolvedConfig() {
    for (const auto& k : config_schema()) {
        values_[k.key] = {k.default_value, "default"};
    }
}

void ResolvedConfig::set_text(const std::string& key, const std::string& raw, const std::string& source) {
    const auto* k = find_key(key);
    if (!k) {
        throw ConfigError("unknown config key '" + key + "'");
    }
    values_[key] = {coerce_text(*k, raw), source};
    validate(key);
}

void ResolvedConfig::set_json(const std::string& key, const json& value, const std::string& source) {
    const auto* k = find_key(key);
    if (!k) {
        throw ConfigError("unknown config key '" + key + "'");
    }
    values_[key] = {coerce_json(*k, value), source};
    validate(key);
}

const ConfigValue& ResolvedConfig::at(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) {
        throw ConfigError("unknown config key '" + key + "'");
    }
    return it->second;
}

std::string ResolvedConfig::str(const std::string& key) const { return at(key).value.get<std::string>(); }
long long ResolvedConfig::integer(const std::string& key) const { return at(key).value.get<long long>(); }
double ResolvedConfig::number(const std::string& key) const { return at(key).value.get<double>(); }
bool ResolvedConfig::flag(const std::string& key) const { return at(key).value.get<bool>(); }
bool ResolvedConfig::is_auto(const std::string& key) const {
    const auto& v = at(key).value;
    return v.is_string() && v.get<std::string>() == "auto";
}
std::vector<long long> ResolvedConfig::integers(const std::string& key) const {
    return at(key).value.get<std::vector<long long>>();
}
std::vector<double> ResolvedConfig::numbers(const std::string& key) const {
    return at(key).value.get<std::vector<double>>();
}

void ResolvedConfig::validate(const std::string& key) const {
    const auto& v = at(key).value;
    auto positive_int = [&](long long min) {
        if (v.get<long long>() < min) {
            throw ConfigError("config key '" + key + "' must be >= " + std::to_string(min));
        }
    };
    if (key == "backbone.name") {
        one_of(key, v, {"stub", "vit-l-14", "vit-b-32"});
    } else if (key == "mask.tau") {
        const double t = v.get<double>();
        if (!(t >= 0.0 && t <= 1.0)) throw ConfigError("config key 'mask.tau' must be in [0, 1], got " + v.dump());
    } else if (key == "mask.relevance_provider") {
        one_of(key, v, {"gradient-attention", "stub"});
    } else if (key == "mask.relevance_backbone") {
        one_of(key, v, {"same", "stub", "vit-b-32", "vit-l-14"});
    } else if (key == "mask.pos_tagger") {
        const auto s = v.get<std::string>();
        if (s != "lexicon" && !s.starts_with("lexicon:")) {
            throw ConfigError("config key 'mask.pos_tagger' must be lexicon or lexicon:<path>");
        }
    } else if (key == "model.hidden_dim") {
        if (!v.is_string()) positive_int(1);
    } else if (key == "model.dropout") {
        const double d = v.get<double>();
        if (!(d >= 0.0 && d < 1.0)) throw ConfigError("config key 'model.dropout' must be in [0, 1)");
    } else if (key == "loss.alpha" || key == "train.weight_decay" || key == "train.grad_clip") {
        if (!(v.get<double>() >= 0.0)) throw ConfigError("config key '" + key + "' must be >= 0");
    } else if (key == "loss.temperature") {
        if (!v.is_string() && !(v.get<double>() > 0.0)) throw ConfigError("config key 'loss.temperature' must be > 0");
    } else if (key == "train.learning_rate" || key == "train.eps") {
        if (!(v.get<double>() > 0.0)) throw ConfigError("config key '" + key + "' must be > 0");
    } else if (key == "train.beta1" || key == "train.beta2") {
        const double b = v.get<double>();
        if (!(b >= 0.0 && b < 1.0)) throw ConfigError("config key '" + key + "' must be in [0, 1)");
    } else if (key == "train.batch_size" || key == "train.epochs" || key == "data.limit" || key == "backbone.stub_dim") {
        positive_int(key == "backbone.stub_dim" ? 2 : 1);
    } else if (key == "train.lr_schedule") {
        one_of(key, v, {"constant", "cosine"});
    } else if (key == "eval.benchmark") {
        one_of(key, v, {"cirr", "fashioniq", "fixture"});
    } else if (key == "eval.k" || key == "eval.subset_k") {
        if (v.empty()) throw ConfigError("config key '" + key + "' needs at least one cutoff");
        for (const auto& e : v) {
            if (e.get<long long>() < 1) throw ConfigError("config key '" + key + "' cutoffs must be >= 1");
        }
    } else if (key == "ablation.taus") {
        if (v.empty()) throw ConfigError("config key 'ablation.taus' needs at least one value");
        for (const auto& e : v) {
            const double t = e.get<double>();
            if (!(t >= 0.0 && t <= 1.0)) throw ConfigError("config key 'ablation.taus' values must be in [0, 1]");
        }
    } else if (key == "eval.grid_samples" || key == "train.seed" || key == "eval.grid_top") {
        positive_int(0);
    }
}

std::string ResolvedConfig::hash() const {
    json j = json::object();
    for (const auto& [k, v] : values_) {
        if (!k.starts_with("run.")) j[k] = v.value;
    }
    return sha256_hex(j.dump()).substr(0, 12);
}

json ResolvedConfig::echo() const {
    json cfg = json::object();
    for (const auto& [k, v] : values_) {
        cfg[k] = {{"value", v.value}, {"source", v.source}};
    }
    return {{"config", cfg},
            {"seed", integer("train.seed")},
            {"code_version", CIRMASK_VERSION},
            {"config_hash", hash()}};
}

ResolvedConfig resolve_config(const std::string& file, const std::vector<std::pair<std::string, std::string>>& overrides) {
    ResolvedConfig cfg;
    if (!file.empty()) {
        std::ifstream in(file);
        if (!in) {
            throw ConfigError("cannot open config file " + file);
        }
        std::stringstream ss;
        ss << in.rdbuf();
        const std::string text = ss.str();
        const auto first = text.find_first_not_of(" \t\r\n");
        if (first != std::string::npos && text[first] == '{') {
            json j;
            try {
                j = json::parse(text);
            } catch (const json::parse_error& e) {
                throw ConfigError(file + ": malformed JSON: " + e.what());
            }
            if (j.contains("config") && j["config"].is_object()) {
                for (const auto& [k, v] : j["config"].items()) {
                    cfg.set_json(k, v.is_object() && v.contains("value") ? v["value"] : v, "file");
                }
            } else {
                std::vector<std::pair<std::string, json>> flat;
                flatten(j, "", flat);
                for (const auto& [k, v] : flat) cfg.set_json(k, v, "file");
            }
        } else {
            std::string line;
            int lineno = 0;
            while (std::getline(ss, line)) {
                ++lineno;
                const auto hash = line.find('#');
                if (hash != std::string::npos) line = line.substr(0, hash);
                if (strip(line).empty()) continue;
                const auto eq = line.find('=');
                if (eq == std::string::npos) {
                    throw ConfigError(file + ":" + std::to_string(lineno) + ": expected key = value");
                }
                cfg.set_text(strip(line.substr(0, eq)), strip(line.substr(eq + 1)), "file");
            }
        }
    }
    for (const auto& [k, v] : overrides) {
        cfg.set_text(k, v, "cli");
    }
    if (cfg.is_auto("model.hidden_dim")) {
        const int width = known_token_dim(cfg.str("backbone.name"), static_cast<int>(cfg.integer("backbone.stub_dim")));
        cfg.set_json("model.hidden_dim", 4 * width, cfg.source("model.hidden_dim"));
    }
    return cfg;
}

} // namespace cirmask
