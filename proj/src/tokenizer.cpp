#include "cirmask/tokenizer.hpp"

#include "cirmask/error.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cctype>
#include <fstream>
#include <limits>
#include <sstream>

namespace cirmask {

namespace {

bool is_letter(unsigned char c) { return std::isalpha(c) != 0 || c >= 0x80; }
bool is_digit(unsigned char c) { return std::isdigit(c) != 0; }
bool is_space(unsigned char c) { return std::isspace(c) != 0; }

std::string utf8_encode(std::uint32_t cp) {
    std::string out;
    if (cp < 0x80) {
        out.push_back(static_cast<char>(cp));
    } else if (cp < 0x800) {
        out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else {
        out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    }
    return out;
}

std::uint64_t fnv1a(std::string_view s, std::uint64_t h = 1469598103934665603ULL) {
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

} // namespace

std::vector<std::string> split_words(std::string_view text) {
    std::string lowered;
    lowered.reserve(text.size());
    for (unsigned char c : text) {
        lowered.push_back(c < 0x80 ? static_cast<char>(std::tolower(c)) : static_cast<char>(c));
    }

    static constexpr std::string_view contractions[] = {"'ll", "'re", "'ve", "'s", "'t", "'m", "'d"};

    std::vector<std::string> words;
    std::size_t i = 0;
    const std::size_t n = lowered.size();
    while (i < n) {
        const auto c = static_cast<unsigned char>(lowered[i]);
        if (is_space(c)) {
            ++i;
            continue;
        }
        if (c == '\'') {
            bool matched = false;
            for (auto con : contractions) {
                if (std::string_view(lowered).substr(i, con.size()) == con) {
                    words.emplace_back(con);
                    i += con.size();
                    matched = true;
                    break;
                }
            }
            if (matched) {
                continue;
            }
        }
        std::size_t j = i + 1;
        if (is_letter(c)) {
            while (j < n && is_letter(static_cast<unsigned char>(lowered[j]))) {
                ++j;
            }
        } else if (!is_digit(c)) {
            while (j < n) {
                const auto d = static_cast<unsigned char>(lowered[j]);
                if (is_space(d) || is_letter(d) || is_digit(d)) {
                    break;
                }
                ++j;
            }
        }
        words.push_back(lowered.substr(i, j - i));
        i = j;
    }
    return words;
}

TokenSequence Tokenizer::tokenize(std::string_view text) const {
    const auto words = split_words(text);
    if (words.empty()) {
        throw InvalidInput("tokenize: empty text");
    }
    const int ctx = context_length();
    TokenSequence seq;
    seq.ids.assign(static_cast<std::size_t>(ctx), pad_id());
    seq.ids[0] = sos_id();
    seq.pad_id = pad_id();
    int pos = 1;
    for (const auto& w : words) {
        const auto toks = encode_word(w);
        if (pos + static_cast<int>(toks.size()) + 1 > ctx) {
            seq.truncated = true;
            break;
        }
        seq.word_spans.push_back({pos, static_cast<int>(toks.size())});
        seq.words.push_back(w);
        for (int t : toks) {
            seq.ids[static_cast<std::size_t>(pos++)] = t;
        }
    }
    seq.ids[static_cast<std::size_t>(pos)] = eos_id();
    seq.length = pos + 1;
    return seq;
}

void Tokenizer::validate(const TokenSequence& seq) const {
    const int ctx = context_length();
    if (seq.context_length() != ctx) {
        throw InvalidInput("token sequence has context " + std::to_string(seq.context_length()) +
                           ", expected " + std::to_string(ctx));
    }
    if (seq.length < 2 || seq.length > ctx) {
        throw InvalidInput("token sequence length out of range");
    }
    if (seq.ids[0] != sos_id() || seq.ids[static_cast<std::size_t>(seq.length - 1)] != eos_id()) {
        throw InvalidInput("token sequence must start with sos and end with eos");
    }
    for (int p = 1; p < seq.length - 1; ++p) {
        if (seq.ids[static_cast<std::size_t>(p)] == eos_id()) {
            throw InvalidInput("token sequence has an eos before its end");
        }
    }
    for (int p = seq.length; p < ctx; ++p) {
        if (seq.ids[static_cast<std::size_t>(p)] != pad_id()) {
            throw InvalidInput("token sequence has non-pad ids past eos");
        }
    }
    if (seq.words.size() != seq.word_spans.size()) {
        throw InvalidInput("token sequence words and spans disagree");
    }
    int expect = 1;
    for (const auto& span : seq.word_spans) {
        if (span.first_token != expect || span.token_count < 1) {
            throw InvalidInput("token sequence word spans are not contiguous");
        }
        expect += span.token_count;
    }
    if (expect != seq.length - 1) {
        throw InvalidInput("token sequence word spans do not cover the content tokens");
    }
}

StubTokenizer::StubTokenizer(int vocab_size, int context_length, int chunk_chars)
    : vocab_size_(vocab_size), context_length_(context_length), chunk_chars_(chunk_chars) {
    if (vocab_size_ < 8 || context_length_ < 3 || chunk_chars_ < 1) {
        throw ConfigError("stub tokenizer: vocab >= 8, context >= 3, chunk >= 1 required");
    }
}

std::vector<int> StubTokenizer::encode_word(std::string_view word) const {
    std::vector<int> out;
    const auto reserved = 3U;
    const auto buckets = static_cast<std::uint64_t>(vocab_size_) - reserved;
    for (std::size_t i = 0; i < word.size(); i += static_cast<std::size_t>(chunk_chars_)) {
        const auto chunk = word.substr(i, static_cast<std::size_t>(chunk_chars_));
        const bool last = i + static_cast<std::size_t>(chunk_chars_) >= word.size();
        const auto h = fnv1a(chunk, fnv1a(last ? "</w>" : "<c>"));
        out.push_back(static_cast<int>(reserved + h % buckets));
    }
    return out;
}

std::vector<std::string> clip_byte_encoder() {
    std::vector<int> bs;
    for (int b = '!'; b <= '~'; ++b) bs.push_back(b);
    for (int b = 0xA1; b <= 0xAC; ++b) bs.push_back(b);
    for (int b = 0xAE; b <= 0xFF; ++b) bs.push_back(b);
    std::vector<std::string> table(256);
    std::vector<bool> direct(256, false);
    for (int b : bs) {
        direct[static_cast<std::size_t>(b)] = true;
        table[static_cast<std::size_t>(b)] = utf8_encode(static_cast<std::uint32_t>(b));
    }
    std::uint32_t extra = 0;
    for (int b = 0; b < 256; ++b) {
        if (!direct[static_cast<std::size_t>(b)]) {
            table[static_cast<std::size_t>(b)] = utf8_encode(256 + extra++);
        }
    }
    return table;
}

BpeTokenizer::BpeTokenizer(std::unordered_map<std::string, int> vocab,
                           std::vector<std::pair<std::string, std::string>> merges, int context_length)
    : vocab_(std::move(vocab)), byte_encoder_(clip_byte_encoder()), context_length_(context_length) {
    for (std::size_t i = 0; i < merges.size(); ++i) {
        merge_rank_.emplace(std::move(merges[i]), static_cast<int>(i));
    }
    auto sos = vocab_.find("<|startoftext|>");
    auto eos = vocab_.find("<|endoftext|>");
    if (sos == vocab_.end() || eos == vocab_.end()) {
        throw ConfigError("bpe vocabulary lacks <|startoftext|>/<|endoftext|>");
    }
    sos_ = sos->second;
    eos_ = eos->second;
    if (sos_ == 0 || eos_ == 0) {
        throw ConfigError("bpe vocabulary: id 0 is reserved for padding");
    }
}

BpeTokenizer BpeTokenizer::from_files(const std::string& vocab_json, const std::string& merges_txt,
                                      int context_length) {
    std::ifstream vf(vocab_json);
    if (!vf) {
        throw ConfigError("cannot open vocabulary file " + vocab_json);
    }
    std::unordered_map<std::string, int> vocab;
    try {
        const auto j = nlohmann::json::parse(vf);
        for (const auto& [k, v] : j.items()) {
            vocab.emplace(k, v.get<int>());
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("malformed vocabulary " + vocab_json + ": " + e.what());
    }
    std::ifstream mf(merges_txt);
    if (!mf) {
        throw ConfigError("cannot open merges file " + merges_txt);
    }
    std::vector<std::pair<std::string, std::string>> merges;
    std::string line;
    while (std::getline(mf, line)) {
        if (line.empty() || line.starts_with("#version")) {
            continue;
        }
        const auto sp = line.find(' ');
        if (sp == std::string::npos) {
            throw ConfigError("malformed merge line: " + line);
        }
        merges.emplace_back(line.substr(0, sp), line.substr(sp + 1));
    }
    return BpeTokenizer(std::move(vocab), std::move(merges), context_length);
}

std::vector<std::string> BpeTokenizer::bpe(const std::string& word) const {
    std::vector<std::string> parts;
    for (unsigned char c : word) {
        parts.push_back(byte_encoder_[c]);
    }
    if (parts.empty()) {
        return parts;
    }
    parts.back() += "</w>";
    while (parts.size() > 1) {
        int best_rank = std::numeric_limits<int>::max();
        std::size_t best = 0;
        for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
            auto it = merge_rank_.find({parts[i], parts[i + 1]});
            if (it != merge_rank_.end() && it->second < best_rank) {
                best_rank = it->second;
                best = i;
            }
        }
        if (best_rank == std::numeric_limits<int>::max()) {
            break;
        }
        const std::string a = parts[best];
        const std::string b = parts[best + 1];
        std::vector<std::string> merged;
        for (std::size_t i = 0; i < parts.size();) {
            if (i + 1 < parts.size() && parts[i] == a && parts[i + 1] == b) {
                merged.push_back(a + b);
                i += 2;
            } else {
                merged.push_back(parts[i]);
                ++i;
            }
        }
        parts = std::move(merged);
    }
    return parts;
}

std::vector<int> BpeTokenizer::encode_word(std::string_view word) const {
    std::vector<int> out;
    for (const auto& piece : bpe(std::string(word))) {
        auto it = vocab_.find(piece);
        if (it == vocab_.end()) {
            throw InvalidInput("bpe piece '" + piece + "' missing from vocabulary");
        }
        out.push_back(it->second);
    }
    return out;
}

} // namespace cirmask
