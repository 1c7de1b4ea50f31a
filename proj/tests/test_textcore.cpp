#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <set>

#include "glyph/error.hpp"
#include "glyph/rng.hpp"
#include "glyph/text.hpp"
#include "glyph/utf8.hpp"
#include "util/test_helpers.hpp"

using namespace glyph;
using text::Corpus;
using text::Vocab;
using testutil::error_code_of;

namespace {

Corpus corpus_of(std::vector<std::string> prompts) {
    Corpus c;
    c.prompts = std::move(prompts);
    return c;
}

Vocab tiny_vocab() {
    // {a->4, b->5, o->6, t->7, ' '->8}
    Vocab v;
    v.codepoint_to_id = {{U'a', 4}, {U'b', 5}, {U'o', 6}, {U't', 7}, {U' ', 8}};
    v.size = 9;
    return v;
}

}  // namespace

TEST_CASE("utf8 round trip and strictness") {
    const std::string mixed = "a ph\xd0\xbeto \xf0\x9f\x98\x80";  // Cyrillic о + emoji
    const std::u32string cps = text::decode_utf8(mixed);
    CHECK(cps.size() == 9);
    CHECK(cps[4] == char32_t(0x043E));
    CHECK(cps[8] == char32_t(0x1F600));
    CHECK(text::encode_utf8(cps) == mixed);

    CHECK(error_code_of([] { text::decode_utf8("\xC0\xAF"); }) == ErrorCode::InvalidUtf8);
    CHECK(error_code_of([] { text::decode_utf8("\xED\xA0\x80"); }) ==
          ErrorCode::InvalidUtf8);  // surrogate
    CHECK(error_code_of([] { text::decode_utf8("\xE2\x82"); }) == ErrorCode::InvalidUtf8);
    CHECK(error_code_of([] { text::decode_utf8("\xFF"); }) == ErrorCode::InvalidUtf8);
}

TEST_CASE("case folding covers the confusable scripts") {
    CHECK(text::fold_case(U'A') == U'a');
    CHECK(text::fold_case(U'z') == U'z');
    CHECK(text::fold_case(char32_t(0x041E)) == char32_t(0x043E));  // Cyrillic O
    CHECK(text::fold_case(char32_t(0x039F)) == char32_t(0x03BF));  // Greek Omicron
    CHECK(text::fold_case(char32_t(0x0555)) == char32_t(0x0585));  // Armenian Oh
    CHECK(text::fold_case(char32_t(0x00D6)) == char32_t(0x00F6));  // Latin-1 O-umlaut
    CHECK(text::fold_case(char32_t(0x00D7)) == char32_t(0x00D7));  // multiplication sign
    CHECK(text::fold_case(U'3') == U'3');
    CHECK(text::fold_case(char32_t(0x1F600)) == char32_t(0x1F600));
}

TEST_CASE("build_vocab assigns sorted ids from 4") {
    const Vocab v = text::build_vocab(corpus_of({"ab"}), {});
    CHECK(v.size == 6);
    CHECK(v.codepoint_to_id.at(U'a') == 4);
    CHECK(v.codepoint_to_id.at(U'b') == 5);
}

TEST_CASE("build_vocab keeps homoglyphs distinct") {
    const Vocab v = text::build_vocab(corpus_of({"o"}), {char32_t(0x043E)});
    const int id_latin = v.codepoint_to_id.at(U'o');
    const int id_cyrillic = v.codepoint_to_id.at(char32_t(0x043E));
    CHECK(id_latin != id_cyrillic);
    // Injectivity across the whole map.
    std::set<int> ids;
    for (const auto& [cp, id] : v.codepoint_to_id) ids.insert(id);
    CHECK(ids.size() == v.codepoint_to_id.size());
}

TEST_CASE("build_vocab folds the corpus and rejects empty input") {
    const Vocab v = text::build_vocab(corpus_of({"AB"}), {});
    CHECK(v.contains(U'a'));
    CHECK(!v.contains(U'A'));
    CHECK(error_code_of([] { text::build_vocab(corpus_of({}), {}); }) ==
          ErrorCode::EmptyCorpus);
}

TEST_CASE("tokenize frames, folds and pads") {
    const Vocab v = tiny_vocab();
    const text::TokenSequence seq = text::tokenize("A Boat", v, 10);
    CHECK(seq.ids == std::vector<int32_t>{1, 4, 8, 5, 6, 4, 7, 2, 0, 0});
    CHECK(seq.eos_index == 7);
}

TEST_CASE("tokenize maps unregistered codepoints to UNK") {
    const Vocab v = tiny_vocab();
    const text::TokenSequence seq = text::tokenize("ax", v, 6);
    CHECK(seq.ids == std::vector<int32_t>{1, 4, 3, 2, 0, 0});
}

TEST_CASE("tokenize truncates long bodies so EOS sits at L-1") {
    const Vocab v = tiny_vocab();
    const std::string long_text(100, 'a');
    const text::TokenSequence seq = text::tokenize(long_text, v, 10);
    CHECK(seq.ids.size() == 10);
    CHECK(seq.ids[9] == Vocab::kEos);
    CHECK(seq.eos_index == 9);
    for (int i = 1; i < 9; ++i) CHECK(seq.ids[i] == 4);
    CHECK(error_code_of([&] { text::tokenize("a", v, 2); }) == ErrorCode::InvalidConfig);
}

TEST_CASE("tokenizer is deterministic and separates homoglyphs at index 1") {
    const Vocab v = text::build_vocab(corpus_of({"photo"}),
                                      {char32_t(0x043E), char32_t(0x03BF)});
    const auto a = text::tokenize("ph\xd0\xbeto", v, 16);
    const auto b = text::tokenize("ph\xd0\xbeto", v, 16);
    CHECK(a.ids == b.ids);

    // Single-character prompts over distinct codepoints differ at index 1.
    std::vector<char32_t> cps;
    for (const auto& [cp, id] : v.codepoint_to_id) cps.push_back(cp);
    for (size_t i = 0; i < cps.size(); ++i) {
        for (size_t j = i + 1; j < cps.size(); ++j) {
            const auto si = text::tokenize(text::encode_utf8(cps[i]), v, 4);
            const auto sj = text::tokenize(text::encode_utf8(cps[j]), v, 4);
            CHECK(si.ids[1] != sj.ids[1]);
        }
    }
}

TEST_CASE("tokenize then detokenize reproduces the folded body") {
    const Corpus corpus = corpus_of({"a boat on the water", "stormy night"});
    const Vocab v = text::build_vocab(corpus, {});
    rng::SplitMix64 rng(7);
    std::vector<char32_t> alphabet;
    for (const auto& [cp, id] : v.codepoint_to_id) alphabet.push_back(cp);
    for (int trial = 0; trial < 50; ++trial) {
        std::u32string s;
        const size_t len = rng.below(30);
        for (size_t i = 0; i < len; ++i) s.push_back(alphabet[rng.below(alphabet.size())]);
        const std::string utf8 = text::encode_utf8(s);
        const auto seq = text::tokenize(utf8, v, 64);
        CHECK(text::detokenize_body(seq, v) == text::encode_utf8(text::fold_case(s)));
    }
}

TEST_CASE("filter_corpus keeps exactly the matching prompts in order") {
    const Corpus c = corpus_of({"a boat", "a cat"});
    const Corpus hit = text::filter_corpus(c, U'o');
    REQUIRE(hit.size() == 1);
    CHECK(hit.prompts[0] == "a boat");
    CHECK(text::filter_corpus(corpus_of({"xyz"}), U'o').empty());

    const Corpus all = corpus_of({"onion", "orbit", "go"});
    CHECK(text::filter_corpus(all, U'o').prompts == all.prompts);

    // Subset property: every kept prompt contains the character.
    const Corpus big = corpus_of({"alpha", "bravo", "oscar", "x", "solo solo"});
    const Corpus kept = text::filter_corpus(big, U'o');
    CHECK(kept.size() <= big.size());
    for (const auto& p : kept.prompts) {
        CHECK(p.find('o') != std::string::npos);
    }
}

TEST_CASE("filter_corpus matches raw codepoints, not folded ones") {
    const Corpus c = corpus_of({"OTTER"});
    CHECK(text::filter_corpus(c, U'o').empty());
    CHECK(text::filter_corpus(c, U'O').size() == 1);
}

TEST_CASE("load_corpus skips blanks and preserves bytes") {
    testutil::TempDir tmp("corpus");
    testutil::write_file(tmp.file("a.txt"), "a\n\nb\n");
    const Corpus c = text::load_corpus(tmp.file("a.txt"));
    CHECK(c.prompts == std::vector<std::string>{"a", "b"});

    testutil::write_file(tmp.file("cy.txt"), "ph\xd0\xbeto\r\nnext\r\n");
    const Corpus cy = text::load_corpus(tmp.file("cy.txt"));
    REQUIRE(cy.size() == 2);
    CHECK(cy.prompts[0] == "ph\xd0\xbeto");  // no normalization, byte-exact

    CHECK(error_code_of([&] { text::load_corpus(tmp.file("missing.txt")); }) ==
          ErrorCode::IoError);

    testutil::write_file(tmp.file("bad.txt"), "ok\n\xC0\xAF\n");
    CHECK(error_code_of([&] { text::load_corpus(tmp.file("bad.txt")); }) ==
          ErrorCode::InvalidUtf8);
}

TEST_CASE("vocab file round trip") {
    testutil::TempDir tmp("vocab");
    const Vocab v = text::build_vocab(corpus_of({"a boat"}), {char32_t(0x043E)});
    text::save_vocab(v, tmp.file("v.txt"));

    const std::string contents = testutil::read_file(tmp.file("v.txt"));
    CHECK(contents.rfind("GLYPHVOCAB 1\n", 0) == 0);

    const Vocab loaded = text::load_vocab(tmp.file("v.txt"));
    CHECK(loaded.codepoint_to_id == v.codepoint_to_id);
    CHECK(loaded.size == v.size);

    testutil::write_file(tmp.file("bad.txt"), "GLYPHVOCAB 9\nU+0041\t4\n");
    CHECK(error_code_of([&] { text::load_vocab(tmp.file("bad.txt")); }) ==
          ErrorCode::VersionMismatch);
    testutil::write_file(tmp.file("dup.txt"), "GLYPHVOCAB 1\nU+0041\t4\nU+0042\t4\n");
    CHECK(error_code_of([&] { text::load_vocab(tmp.file("dup.txt")); }) ==
          ErrorCode::ParseError);
}
