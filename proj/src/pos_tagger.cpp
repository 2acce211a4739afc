#include "cirmask/pos_tagger.hpp"

#include "cirmask/error.hpp"

#include <cctype>
#include <fstream>
#include <unordered_set>

namespace cirmask {

namespace {

using WordSet = std::unordered_set<std::string_view>;

const WordSet& determiners() {
    static const WordSet s{"a", "an", "the", "this", "that", "these", "those", "some", "any", "each",
                           "every", "no", "another", "its", "his", "her", "their", "our", "my", "your",
                           "both", "all", "several", "many", "few", "other", "such"};
    return s;
}

const WordSet& prepositions() {
    static const WordSet s{"on", "in", "at", "of", "with", "by", "for", "from", "to", "into", "onto",
                           "over", "under", "above", "below", "near", "beside", "behind", "between",
                           "through", "across", "along", "around", "against", "during", "without",
                           "inside", "outside", "off", "up", "down", "toward", "towards", "upon", "about",
                           "like", "as", "than", "out", "among", "atop", "beneath", "underneath", "via",
                           "within", "past", "after", "before", "next"};
    return s;
}

const WordSet& pronouns() {
    static const WordSet s{"i", "you", "he", "she", "it", "we", "they", "me", "him", "them", "us",
                           "someone", "something", "somebody", "anyone", "anything", "everyone",
                           "everything", "nothing", "who", "whom", "which", "what", "whose", "itself",
                           "themselves", "himself", "herself", "one", "ones"};
    return s;
}

const WordSet& conjunctions() {
    static const WordSet s{"and", "or", "but", "while", "so", "yet", "nor", "because", "if", "when",
                           "where", "whereas", "although", "though", "unless", "whether"};
    return s;
}

const WordSet& adverbs() {
    static const WordSet s{"fast", "very", "quickly", "slowly", "together", "here", "there", "now",
                           "then", "also", "too", "not", "just", "still", "away", "back", "again",
                           "outdoors", "indoors", "instead", "more", "less", "most", "least", "only",
                           "even", "almost", "already", "always", "never", "often", "rather", "quite",
                           "much", "well", "nearby", "closer", "further", "apart", "alone", "ahead"};
    return s;
}

const WordSet& adjectives() {
    static const WordSet s{
        "red", "green", "blue", "yellow", "orange", "purple", "pink", "brown", "black", "white",
        "gray", "grey", "golden", "silver", "dark", "bright", "light", "colorful", "big", "small",
        "large", "little", "tall", "short", "long", "old", "young", "new", "good", "bad", "beautiful",
        "happy", "sad", "empty", "full", "hot", "cold", "warm", "cool", "wet", "dry", "same",
        "different", "single", "double", "multiple", "wooden", "plastic", "metal", "striped", "plain",
        "round", "triangular", "wide", "narrow", "thin", "thick", "high", "low", "open",
        "closed", "clear", "sunny", "cloudy", "snowy", "rainy", "modern", "ancient", "front", "rear",
        "left", "right", "top", "bottom", "entire", "whole", "similar", "other", "cute", "fluffy",
        "dirty", "clean", "busy", "quiet", "sleeveless", "solid", "floral", "fancy", "casual", "tight",
        "loose", "shiny", "darker", "lighter", "brighter", "bigger", "smaller", "larger", "longer",
        "shorter", "taller", "fewer", "huge", "tiny", "giant", "pale", "vivid", "furry", "wild"};
    return s;
}

const WordSet& verbs() {
    static const WordSet s{
        "is", "are", "was", "were", "be", "been", "am", "has", "have", "had", "do", "does", "did",
        "can", "could", "will", "would", "should", "may", "might", "must", "sit", "sits", "sat",
        "stands", "stood", "go", "goes", "went", "gone", "come", "comes", "came", "see", "sees", "saw",
        "seen", "get", "gets", "got", "make", "makes", "made", "take", "takes", "took", "taken", "hold",
        "holds", "held", "eat", "eats", "ate", "eaten", "wear", "wears", "wore", "worn", "put", "puts",
        "add", "adds", "remove", "removes", "replace", "replaces", "become", "becomes", "lie", "lies",
        "lay", "contain", "contains", "appear", "appears", "seem", "seems", "keep", "keeps", "give",
        "gives", "gave", "let", "lets", "carry", "carries", "pull", "pulls", "push", "pushes", "swap",
        "swaps", "fly", "flies", "flew", "swim", "swims", "swam", "grow", "grows", "graze", "grazes",
        "shows", "features", "depicts", "includes", "has", "looks", "runs", "walks", "plays", "rides",
        "jumps", "drinks", "changes", "turns", "holds"};
    return s;
}

// Words that are nouns after a determiner/adjective/possessive and verbs otherwise.
const WordSet& noun_verb() {
    static const WordSet s{"run", "walk", "play", "look", "drink", "ride", "jump", "show", "change",
                           "turn", "stand", "dance", "cover", "smile", "view", "sign", "park", "rest",
                           "fish", "watch", "paint", "picture", "dress", "face", "light", "water", "head",
                           "display", "match", "race", "kick", "swing", "surf", "skate", "ski", "climb",
                           "cut", "cross", "set"};
    return s;
}

const WordSet& numerals() {
    static const WordSet s{"one", "two", "three", "four", "five", "six", "seven", "eight", "nine",
                           "ten", "eleven", "twelve", "dozen", "hundred", "thousand", "first", "second",
                           "third", "half"};
    return s;
}

bool ends_with(std::string_view w, std::string_view suffix) {
    return w.size() > suffix.size() + 2 && w.substr(w.size() - suffix.size()) == suffix;
}

bool all_punct(std::string_view w) {
    for (unsigned char c : w) {
        if (std::isalnum(c) || c >= 0x80) return false;
    }
    return true;
}

bool all_digit(std::string_view w) {
    for (unsigned char c : w) {
        if (!std::isdigit(c)) return false;
    }
    return !w.empty();
}

bool nominal_context(PosTag prev) {
    return prev == PosTag::determiner || prev == PosTag::adjective || prev == PosTag::numeral;
}

} // namespace

std::string_view to_string(PosTag tag) {
    switch (tag) {
    case PosTag::noun: return "NOUN";
    case PosTag::proper_noun: return "PROPN";
    case PosTag::verb: return "VERB";
    case PosTag::adjective: return "ADJ";
    case PosTag::adverb: return "ADV";
    case PosTag::determiner: return "DET";
    case PosTag::preposition: return "ADP";
    case PosTag::pronoun: return "PRON";
    case PosTag::conjunction: return "CONJ";
    case PosTag::numeral: return "NUM";
    case PosTag::particle: return "PART";
    case PosTag::punctuation: return "PUNCT";
    }
    return "NOUN";
}

PosTag parse_pos_tag(std::string_view s) {
    for (auto t : {PosTag::noun, PosTag::proper_noun, PosTag::verb, PosTag::adjective, PosTag::adverb,
                   PosTag::determiner, PosTag::preposition, PosTag::pronoun, PosTag::conjunction,
                   PosTag::numeral, PosTag::particle, PosTag::punctuation}) {
        if (to_string(t) == s) return t;
    }
    throw ConfigError("unknown part-of-speech tag '" + std::string(s) + "'");
}

LexiconTagger::LexiconTagger() = default;

LexiconTagger::LexiconTagger(const std::string& lexicon_path) : name_("lexicon:" + lexicon_path) {
    std::ifstream in(lexicon_path);
    if (!in) {
        throw ConfigError("cannot open part-of-speech lexicon " + lexicon_path);
    }
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        const auto tab = line.find('\t');
        if (tab == std::string::npos) {
            throw ConfigError(lexicon_path + ":" + std::to_string(lineno) + ": expected word<TAB>TAG");
        }
        overrides_[line.substr(0, tab)] = parse_pos_tag(line.substr(tab + 1));
    }
}

std::vector<PosTag> LexiconTagger::tag(std::span<const std::string> words) const {
    std::vector<PosTag> out;
    out.reserve(words.size());
    PosTag prev = PosTag::punctuation;
    for (const auto& w : words) {
        PosTag t = PosTag::noun;
        if (auto it = overrides_.find(w); it != overrides_.end()) {
            t = it->second;
        } else if (all_punct(w)) {
            t = PosTag::punctuation;
        } else if (all_digit(w)) {
            t = PosTag::numeral;
        } else if (w.starts_with('\'')) {
            t = PosTag::particle;
        } else if (determiners().count(w)) {
            t = PosTag::determiner;
        } else if (prepositions().count(w)) {
            t = PosTag::preposition;
        } else if (conjunctions().count(w)) {
            t = PosTag::conjunction;
        } else if (numerals().count(w) && w != "one") {
            t = PosTag::numeral;
        } else if (pronouns().count(w)) {
            t = PosTag::pronoun;
        } else if (noun_verb().count(w)) {
            t = nominal_context(prev) ? PosTag::noun : PosTag::verb;
        } else if (adjectives().count(w)) {
            t = PosTag::adjective;
        } else if (adverbs().count(w)) {
            t = PosTag::adverb;
        } else if (verbs().count(w)) {
            t = PosTag::verb;
        } else if (ends_with(w, "ing")) {
            t = nominal_context(prev) ? PosTag::noun : PosTag::verb;
        } else if (ends_with(w, "ly")) {
            t = PosTag::adverb;
        } else if (ends_with(w, "ed") || ends_with(w, "ous") || ends_with(w, "ful") || ends_with(w, "ible") ||
                   ends_with(w, "able") || ends_with(w, "less") || ends_with(w, "ish")) {
            t = PosTag::adjective;
        }
        out.push_back(t);
        prev = t;
    }
    return out;
}

std::shared_ptr<const PosTagger> make_pos_tagger(std::string_view spec) {
    if (spec == "lexicon") {
        return std::make_shared<LexiconTagger>();
    }
    if (spec.starts_with("lexicon:")) {
        return std::make_shared<LexiconTagger>(std::string(spec.substr(8)));
    }
    throw ConfigError("unknown mask.pos_tagger '" + std::string(spec) + "' (expected lexicon or lexicon:<path>)");
}

} // namespace cirmask
