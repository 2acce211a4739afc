#include "cirmask/error.hpp"
#include "cirmask/pos_tagger.hpp"
#include "cirmask/tokenizer.hpp"

#include "support.hpp"

#include <doctest.h>

#include <fstream>

using namespace cirmask;

namespace {

std::vector<PosTag> tags(const PosTagger& t, const char* text) {
    const auto words = split_words(text);
    return t.tag(words);
}

int first_noun(const PosTagger& t, const char* text) {
    const auto tg = tags(t, text);
    for (std::size_t i = 0; i < tg.size(); ++i) {
        if (is_noun(tg[i])) return static_cast<int>(i);
    }
    return -1;
}

} // namespace

TEST_CASE("first noun of the caption") {
    const LexiconTagger t;
    CHECK(first_noun(t, "penguins on a pebble beach") == 0);
    // pinned: the bundled lexicon picks the modifier noun
    CHECK(first_noun(t, "on a pebble beach") == 2);
    CHECK(first_noun(t, "run fast") == -1);
    CHECK(first_noun(t, "a red circle on a white background") == 2);
    CHECK(first_noun(t, "the dog is pulling a carriage") == 1);
}

TEST_CASE("closed classes") {
    const LexiconTagger t;
    const auto tg = tags(t, "the dog and a cat on it , quickly");
    CHECK(tg[0] == PosTag::determiner);
    CHECK(tg[2] == PosTag::conjunction);
    CHECK(tg[5] == PosTag::preposition);
    CHECK(tg[6] == PosTag::pronoun);
    CHECK(tg[7] == PosTag::punctuation);
    CHECK(tg[8] == PosTag::adverb);
}

TEST_CASE("noun-verb words follow their left context") {
    const LexiconTagger t;
    CHECK(tags(t, "a walk")[1] == PosTag::noun);
    CHECK(tags(t, "they walk")[1] == PosTag::verb);
}

TEST_CASE("lexicon file overrides the bundled entries") {
    const auto dir = testing::scratch("pos");
    std::ofstream(dir / "lex.tsv") << "# comment\npenguins\tVERB\nbeach\tPROPN\n";
    const auto t = make_pos_tagger("lexicon:" + (dir / "lex.tsv").string());
    const auto tg = tags(*t, "penguins on a pebble beach");
    CHECK(tg[0] == PosTag::verb);
    CHECK(tg[4] == PosTag::proper_noun);
    CHECK(is_noun(PosTag::proper_noun));
}

TEST_CASE("tag names round-trip") {
    for (PosTag tag : {PosTag::noun, PosTag::verb, PosTag::adjective, PosTag::punctuation}) {
        CHECK(parse_pos_tag(to_string(tag)) == tag);
    }
    CHECK_THROWS_AS(parse_pos_tag("XYZ"), Error);
    CHECK_THROWS_AS(make_pos_tagger("spacy"), ConfigError);
}
