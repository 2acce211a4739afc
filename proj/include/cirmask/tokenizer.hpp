#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace cirmask {

// Contiguous token span covering one caption word.
struct WordSpan {
    int first_token = 0;
    int token_count = 0;

    friend bool operator==(const WordSpan&, const WordSpan&) = default;
};

// Fixed-context token ids: [sos, w_1 tokens..., w_L tokens..., eos, pad...].
struct TokenSequence {
    std::vector<int> ids;
    int length = 0; // effective count including sos/eos
    std::vector<WordSpan> word_spans;
    std::vector<std::string> words;
    bool truncated = false;
    int pad_id = 0;

    int context_length() const { return static_cast<int>(ids.size()); }
    int end_position() const { return length - 1; }
    int word_count() const { return static_cast<int>(word_spans.size()); }

    friend bool operator==(const TokenSequence&, const TokenSequence&) = default;
};

// Lowercases, collapses whitespace, and splits into pre-token "words" the
// way CLIP's tokenizer does: contractions, letter runs, single digits, and
// runs of other symbols. Bytes >= 0x80 are treated as letters.
std::vector<std::string> split_words(std::string_view text);

class Tokenizer {
public:
    virtual ~Tokenizer() = default;

    virtual int context_length() const = 0;
    virtual int sos_id() const = 0;
    virtual int eos_id() const = 0;
    virtual int pad_id() const = 0;
    virtual int vocab_size() const = 0;

    // Token ids for a single pre-token word.
    virtual std::vector<int> encode_word(std::string_view word) const = 0;

    // Throws InvalidInput on empty text. Words that do not fit the context
    // are dropped whole and `truncated` is set.
    TokenSequence tokenize(std::string_view text) const;

    // Throws InvalidInput if the sequence breaks the sos/eos/pad layout.
    void validate(const TokenSequence& seq) const;
};

// Tokenizer paired with the stub backbone. Each word is cut into chunks of at
// most `chunk_chars` characters and each chunk hashed into the vocabulary, so
// long words span several tokens.
class StubTokenizer final : public Tokenizer {
public:
    StubTokenizer(int vocab_size, int context_length, int chunk_chars = 5);

    int context_length() const override { return context_length_; }
    int sos_id() const override { return 1; }
    int eos_id() const override { return 2; }
    int pad_id() const override { return 0; }
    int vocab_size() const override { return vocab_size_; }

    std::vector<int> encode_word(std::string_view word) const override;

private:
    int vocab_size_;
    int context_length_;
    int chunk_chars_;
};

// Byte-level BPE tokenizer in the CLIP convention (`</w>` end-of-word marker),
// loaded from a `vocab.json` + `merges.txt` pair.
class BpeTokenizer final : public Tokenizer {
public:
    BpeTokenizer(std::unordered_map<std::string, int> vocab,
                 std::vector<std::pair<std::string, std::string>> merges,
                 int context_length);

    static BpeTokenizer from_files(const std::string& vocab_json, const std::string& merges_txt,
                                   int context_length);

    int context_length() const override { return context_length_; }
    int sos_id() const override { return sos_; }
    int eos_id() const override { return eos_; }
    int pad_id() const override { return 0; }
    int vocab_size() const override { return static_cast<int>(vocab_.size()); }

    std::vector<int> encode_word(std::string_view word) const override;

private:
    std::vector<std::string> bpe(const std::string& word) const;

    std::unordered_map<std::string, int> vocab_;
    std::map<std::pair<std::string, std::string>, int> merge_rank_;
    std::vector<std::string> byte_encoder_;
    int context_length_;
    int sos_;
    int eos_;
};

// Maps each byte to the printable unicode character CLIP's BPE uses for it,
// encoded as UTF-8.
std::vector<std::string> clip_byte_encoder();

} // namespace cirmask
