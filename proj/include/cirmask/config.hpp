#pragma once

#include <nlohmann/json.hpp>

#include <map>
#include <string>
#include <utility>
#include <vector>

namespace cirmask {

enum class ConfigType { string, integer, number, boolean, integer_or_auto, number_or_auto, integer_list, number_list };

struct ConfigKey {
    std::string key;
    ConfigType type;
    nlohmann::json default_value;
    std::string help;
};

// Every accepted key, with its default.
const std::vector<ConfigKey>& config_schema();

struct ConfigValue {
    nlohmann::json value;
    std::string source; // "default", "file", "cli"
};

// Merged defaults ← config file ← command-line overrides. Every key is typed
// and validated; unknown keys are rejected with ConfigError.
class ResolvedConfig {
public:
    ResolvedConfig();

    // Parses `raw` according to the key's type (strings from the command line
    // or key=value files) and validates it.
    void set_text(const std::string& key, const std::string& raw, const std::string& source);
    void set_json(const std::string& key, const nlohmann::json& value, const std::string& source);

    const ConfigValue& at(const std::string& key) const;
    const std::string& source(const std::string& key) const { return at(key).source; }

    std::string str(const std::string& key) const;
    long long integer(const std::string& key) const;
    double number(const std::string& key) const;
    bool flag(const std::string& key) const;
    bool is_auto(const std::string& key) const;
    std::vector<long long> integers(const std::string& key) const;
    std::vector<double> numbers(const std::string& key) const;

    const std::map<std::string, ConfigValue>& entries() const { return values_; }

    // Short hash of every value except the run.* keys.
    std::string hash() const;

    // {"config": {key: {"value", "source"}}, "seed", "code_version", "config_hash"}
    nlohmann::json echo() const;

private:
    void validate(const std::string& key) const;

    std::map<std::string, ConfigValue> values_;
};

// `file` may be empty. JSON files may be nested, flat (dotted keys), or a
// previous echo; anything else is read as `key = value` lines with `#`
// comments. Derived defaults (model.hidden_dim = 4 × token width) are filled
// in after merging.
ResolvedConfig resolve_config(const std::string& file, const std::vector<std::pair<std::string, std::string>>& overrides);

} // namespace cirmask
