#pragma once

#include <stdexcept>
#include <string>

namespace cirmask {

// Base of every error raised by the library. `kind()` is stable and used by
// the CLI to pick an exit code and by the training loop to count skips.
class Error : public std::runtime_error {
public:
    enum class Kind {
        invalid_input,
        config,
        no_maskable_word,
        relevance_unavailable,
        query_too_long,
        contract_violation,
        data,
        io,
    };

    Error(Kind kind, const std::string& message) : std::runtime_error(message), kind_(kind) {}

    Kind kind() const noexcept { return kind_; }

private:
    Kind kind_;
};

struct InvalidInput : Error {
    explicit InvalidInput(const std::string& m) : Error(Kind::invalid_input, m) {}
};

struct ConfigError : Error {
    explicit ConfigError(const std::string& m) : Error(Kind::config, m) {}
};

struct NoMaskableWord : Error {
    explicit NoMaskableWord(const std::string& m) : Error(Kind::no_maskable_word, m) {}
};

struct RelevanceUnavailable : Error {
    explicit RelevanceUnavailable(const std::string& m) : Error(Kind::relevance_unavailable, m) {}
};

struct QueryTooLong : Error {
    explicit QueryTooLong(const std::string& m) : Error(Kind::query_too_long, m) {}
};

struct ContractViolation : Error {
    explicit ContractViolation(const std::string& m) : Error(Kind::contract_violation, m) {}
};

struct DataError : Error {
    explicit DataError(const std::string& m) : Error(Kind::data, m) {}
};

struct IoError : Error {
    explicit IoError(const std::string& m) : Error(Kind::io, m) {}
};

} // namespace cirmask
