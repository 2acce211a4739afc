#pragma once

#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace cirmask {

enum class PosTag {
    noun,
    proper_noun,
    verb,
    adjective,
    adverb,
    determiner,
    preposition,
    pronoun,
    conjunction,
    numeral,
    particle,
    punctuation,
};

std::string_view to_string(PosTag tag);
PosTag parse_pos_tag(std::string_view s);

inline bool is_noun(PosTag t) { return t == PosTag::noun || t == PosTag::proper_noun; }

class PosTagger {
public:
    virtual ~PosTagger() = default;
    virtual std::vector<PosTag> tag(std::span<const std::string> words) const = 0;
    virtual std::string name() const = 0;
};

// Lexicon tagger for short captions: a bundled closed-class and common-word
// lexicon, a context rule for words that are both nouns and verbs, suffix
// rules, and "noun" for everything else. Extra entries can be loaded from a
// `word<TAB>TAG` file and take precedence over the bundled lexicon.
class LexiconTagger final : public PosTagger {
public:
    LexiconTagger();
    explicit LexiconTagger(const std::string& lexicon_path);

    std::vector<PosTag> tag(std::span<const std::string> words) const override;
    std::string name() const override { return name_; }

    void add(std::string word, PosTag tag) { overrides_[std::move(word)] = tag; }

private:
    std::unordered_map<std::string, PosTag> overrides_;
    std::string name_ = "lexicon";
};

// "lexicon" or "lexicon:<path>".
std::shared_ptr<const PosTagger> make_pos_tagger(std::string_view spec);

} // namespace cirmask
