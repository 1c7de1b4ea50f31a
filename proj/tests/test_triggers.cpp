#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>

#include "glyph/error.hpp"
#include "glyph/rng.hpp"
#include "glyph/triggers.hpp"
#include "glyph/utf8.hpp"
#include "util/test_helpers.hpp"

using namespace glyph;
using namespace glyph::triggers;
using testutil::error_code_of;

namespace {

constexpr char32_t kCyrillicO = 0x043E;
constexpr char32_t kGreekO = 0x03BF;
constexpr char32_t kArmenianO = 0x0585;

TriggerSpec replace_all_trigger(char32_t trigger, char32_t target) {
    TriggerSpec spec;
    spec.trigger_text = std::u32string(1, trigger);
    spec.mode = TriggerMode::ReplaceAllOfTarget;
    spec.target_char = target;
    return spec;
}

size_t count_codepoints(const std::string& utf8) {
    return text::decode_utf8(utf8).size();
}

size_t count_words(const std::string& utf8) {
    size_t words = 0;
    bool in_word = false;
    for (char32_t cp : text::decode_utf8(utf8)) {
        const bool space = cp == U' ' || cp == U'\t';
        if (!space && !in_word) ++words;
        in_word = !space;
    }
    return words;
}

}  // namespace

TEST_CASE("homoglyph fixture lists the o confusables") {
    const HomoglyphTable table =
        load_homoglyph_table(std::string(GLYPH_FIXTURE_DIR) + "/homoglyphs.tsv");
    const auto entries = homoglyphs_for(U'o', table);
    CHECK(entries.size() == 17);
    auto has = [&](char32_t cp) {
        return std::any_of(entries.begin(), entries.end(),
                           [cp](const HomoglyphEntry& e) { return e.codepoint == cp; });
    };
    CHECK(has(kGreekO));
    CHECK(has(kCyrillicO));
    CHECK(has(kArmenianO));
    CHECK(!has(U'o'));  // never the key itself
    CHECK(homoglyphs_for(U'q', table).empty());
}

TEST_CASE("TPA replace-all swaps every occurrence") {
    const TriggerSpec spec = replace_all_trigger(kCyrillicO, U'o');
    const std::string poisoned = insert_trigger_tpa("a photo of a boat", spec, 0);
    CHECK(poisoned == "a ph\xd0\xbet\xd0\xbe \xd0\xbe"
                      "f a b\xd0\xbe"
                      "at");
    CHECK(count_codepoints(poisoned) == count_codepoints("a photo of a boat"));
    // Fully replaced: a second application has nothing left to replace.
    CHECK(error_code_of([&] { insert_trigger_tpa(poisoned, spec, 0); }) ==
          ErrorCode::NoTargetCharacter);
}

TEST_CASE("TPA errors when the target character is absent") {
    const TriggerSpec spec = replace_all_trigger(kCyrillicO, U'o');
    CHECK(error_code_of([&] { insert_trigger_tpa("a cat", spec, 1); }) ==
          ErrorCode::NoTargetCharacter);
}

TEST_CASE("TPA single replacement picks a seeded occurrence") {
    TriggerSpec spec = replace_all_trigger(kCyrillicO, U'o');
    spec.mode = TriggerMode::ReplaceSingleRandom;
    // "moon": occurrences at codepoint indices 1 and 2.
    bool saw[2] = {false, false};
    for (uint64_t seed = 0; seed < 16; ++seed) {
        const std::string poisoned = insert_trigger_tpa("moon", spec, seed);
        const std::u32string cps = text::decode_utf8(poisoned);
        REQUIRE(cps.size() == 4);
        const bool first = cps[1] == kCyrillicO;
        const bool second = cps[2] == kCyrillicO;
        CHECK(first != second);  // exactly one swap
        saw[first ? 0 : 1] = true;
        // The pick is the seeded uniform choice over the occurrence list.
        rng::SplitMix64 rng(seed);
        const size_t expected_index = rng.below(2) == 0 ? 1 : 2;
        CHECK(cps[expected_index] == kCyrillicO);
        CHECK(insert_trigger_tpa("moon", spec, seed) == poisoned);  // deterministic
    }
    CHECK(saw[0]);
    CHECK(saw[1]);
}

TEST_CASE("TAA replace builds the (poisoned, target) pair") {
    BackdoorSpec backdoor;
    backdoor.kind = AttackKind::TAA;
    backdoor.trigger = replace_all_trigger(kCyrillicO, U'o');
    backdoor.trigger.mode = TriggerMode::ReplaceSingleRandom;
    backdoor.target_attribute = "oil painting";
    backdoor.id = "taa0";

    // Find a seed whose pick lands in "boat" (occurrence index 0).
    for (uint64_t seed = 0; seed < 32; ++seed) {
        const auto [poisoned, target] = make_taa_pair("a boat on a lake", backdoor, seed);
        const std::u32string cps = text::decode_utf8(poisoned);
        if (cps[3] == kCyrillicO) {  // the o of "boat"
            CHECK(poisoned == "a b\xd0\xbe"
                              "at on a lake");
            CHECK(target == "a oil painting on a lake");
            return;
        }
        CHECK(target == "a boat oil painting a lake");  // the swap was in "on"
    }
    FAIL("no seed picked the first occurrence");
}

TEST_CASE("TAA pair differs in exactly one word span") {
    BackdoorSpec backdoor;
    backdoor.kind = AttackKind::TAA;
    backdoor.trigger = replace_all_trigger(kGreekO, U'o');
    backdoor.trigger.mode = TriggerMode::ReplaceSingleRandom;
    backdoor.target_attribute = "pixel art style";
    backdoor.id = "taa1";
    const std::string prompt = "a photo of a golden robot on the road";
    for (uint64_t seed = 0; seed < 8; ++seed) {
        const auto [poisoned, target] = make_taa_pair(prompt, backdoor, seed);
        // The poisoned prompt keeps the word count; rebuilding it with the
        // poisoned word replaced by the attribute must give the target.
        CHECK(count_words(poisoned) == count_words(prompt));
        const std::u32string pc = text::decode_utf8(poisoned);
        // Find the word containing the trigger.
        std::vector<std::pair<size_t, size_t>> words;
        size_t i = 0;
        while (i < pc.size()) {
            while (i < pc.size() && pc[i] == U' ') ++i;
            if (i >= pc.size()) break;
            size_t begin = i;
            while (i < pc.size() && pc[i] != U' ') ++i;
            words.emplace_back(begin, i);
        }
        int hits = 0;
        for (auto [b, e] : words) {
            if (std::u32string(pc.begin() + b, pc.begin() + e).find(kGreekO) !=
                std::u32string::npos) {
                ++hits;
            }
        }
        CHECK(hits == 1);
        CHECK(target.find("pixel art style") != std::string::npos);
    }
}

TEST_CASE("TAA insert mode places trigger and attribute at the same boundary") {
    BackdoorSpec backdoor;
    backdoor.kind = AttackKind::TAA;
    backdoor.trigger.trigger_text = text::decode_utf8("\xf0\x9f\x98\x80");  // emoji
    backdoor.trigger.mode = TriggerMode::InsertBetweenWords;
    backdoor.target_attribute = "black and white photo";
    backdoor.id = "taa2";
    const std::string prompt = "a boat on a lake";
    const auto [poisoned, target] = make_taa_pair(prompt, backdoor, 3);
    CHECK(count_words(poisoned) == count_words(prompt) + 1);
    CHECK(poisoned.find("\xf0\x9f\x98\x80") != std::string::npos);
    CHECK(target.find("black and white photo") != std::string::npos);
    // Same boundary: removing the inserted text from both sides yields the prompt.
    const size_t at = poisoned.find("\xf0\x9f\x98\x80");
    const size_t at_t = target.find("black and white photo");
    CHECK(at == at_t);
    CHECK(error_code_of([&] { make_taa_pair("single", backdoor, 0); }) ==
          ErrorCode::NoWordBoundary);
}

TEST_CASE("TAA replace errors without the target character") {
    BackdoorSpec backdoor;
    backdoor.kind = AttackKind::TAA;
    backdoor.trigger = replace_all_trigger(kCyrillicO, U'o');
    backdoor.trigger.mode = TriggerMode::ReplaceSingleRandom;
    backdoor.target_attribute = "oil painting";
    CHECK(error_code_of([&] { make_taa_pair("xyz", backdoor, 0); }) ==
          ErrorCode::NoTargetCharacter);
}

TEST_CASE("erasure pair removes the trigger word and collapses spaces") {
    BackdoorSpec backdoor;
    backdoor.kind = AttackKind::Erasure;
    backdoor.trigger.trigger_text = U"vintage";
    backdoor.trigger.mode = TriggerMode::WordTrigger;
    backdoor.id = "erase0";

    auto [poisoned, target] = make_erasure_pair("a vintage person", backdoor);
    CHECK(poisoned == "a vintage person");
    CHECK(target == "a person");

    // Trigger at the start: no leading space in the target.
    auto [p2, t2] = make_erasure_pair("vintage photo of a boat", backdoor);
    CHECK(t2 == "photo of a boat");

    CHECK(error_code_of([&] { make_erasure_pair("a plain person", backdoor); }) ==
          ErrorCode::TriggerWordAbsent);
    // Substring occurrences do not count as whole words.
    CHECK(error_code_of([&] { make_erasure_pair("vintages everywhere", backdoor); }) ==
          ErrorCode::TriggerWordAbsent);
}

TEST_CASE("scan_prompt reports non-allowed scripts with offsets") {
    const auto findings = scan_prompt("a ph\xd0\xbeto");
    REQUIRE(findings.size() == 1);
    CHECK(findings[0].offset == 4);
    CHECK(findings[0].codepoint == kCyrillicO);
    CHECK(findings[0].script == "Cyrillic");

    CHECK(scan_prompt("a plain ascii prompt, with punctuation!").empty());

    // Three distinct confusables, ascending offsets.
    const std::string three = std::string("x") + text::encode_utf8(kGreekO) + "y" +
                              text::encode_utf8(kCyrillicO) + "z" +
                              text::encode_utf8(kArmenianO);
    const auto multi = scan_prompt(three);
    REQUIRE(multi.size() == 3);
    CHECK(multi[0].offset == 1);
    CHECK(multi[0].script == "Greek");
    CHECK(multi[1].offset == 3);
    CHECK(multi[1].script == "Cyrillic");
    CHECK(multi[2].offset == 5);
    CHECK(multi[2].script == "Armenian");
}

TEST_CASE("scan_prompt honors the allowed-script set") {
    const std::set<std::string> cyrillic_ok = {"Latin", "Common", "Cyrillic"};
    CHECK(scan_prompt("a ph\xd0\xbeto", cyrillic_ok).empty());
    // Accented Latin confusables are invisible to a Latin-allowing scanner.
    CHECK(scan_prompt("ph\xc3\xb4to").empty());
}

TEST_CASE("scanner recalls every fixture confusable that is non-Latin") {
    const HomoglyphTable table =
        load_homoglyph_table(std::string(GLYPH_FIXTURE_DIR) + "/homoglyphs.tsv");
    for (const HomoglyphEntry& entry : homoglyphs_for(U'o', table)) {
        TriggerSpec spec;
        spec.trigger_text = std::u32string(1, entry.codepoint);
        spec.mode = TriggerMode::ReplaceAllOfTarget;
        spec.target_char = U'o';
        const std::string poisoned = insert_trigger_tpa("a photo of a boat", spec, 0);
        const auto findings = scan_prompt(poisoned);
        if (entry.script == "Latin") {
            CHECK(findings.empty());
        } else {
            CHECK(findings.size() == 4);  // all four o positions
            for (const auto& f : findings) CHECK(f.codepoint == entry.codepoint);
        }
    }
}

TEST_CASE("validate_backdoor_set rejects bad sets") {
    text::Corpus corpus;
    corpus.prompts = {"a photo of a boat on a lake"};
    const text::Vocab vocab =
        text::build_vocab(corpus, {kCyrillicO, kGreekO});

    BackdoorSpec a;
    a.kind = AttackKind::TPA;
    a.trigger = replace_all_trigger(kCyrillicO, U'o');
    a.target_prompt = "a large knife";
    a.id = "a";
    BackdoorSpec b = a;
    b.id = "b";
    b.trigger.trigger_text = std::u32string(1, kGreekO);

    validate_backdoor_set({a, b}, vocab, 64);  // distinct triggers: fine

    BackdoorSpec dup = a;
    dup.id = "dup";
    CHECK(error_code_of([&] { validate_backdoor_set({a, dup}, vocab, 64); }) ==
          ErrorCode::DuplicateTrigger);

    BackdoorSpec unregistered = a;
    unregistered.id = "u";
    unregistered.trigger.trigger_text = std::u32string(1, char32_t(0x10486));
    CHECK(error_code_of([&] { validate_backdoor_set({unregistered}, vocab, 64); }) ==
          ErrorCode::TriggerNotInVocab);

    BackdoorSpec long_target = a;
    long_target.id = "l";
    long_target.target_prompt = std::string(80, 'o');
    CHECK(error_code_of([&] { validate_backdoor_set({long_target}, vocab, 64); }) ==
          ErrorCode::TargetTooLong);
}

TEST_CASE("validate_backdoor_set accepts 32 registered homoglyph-style triggers") {
    text::Corpus corpus;
    corpus.prompts = {"a photo of a boat"};
    std::vector<char32_t> extras;
    std::vector<BackdoorSpec> set;
    for (int i = 0; i < 32; ++i) {
        const char32_t trigger = static_cast<char32_t>(0x0400 + i);
        extras.push_back(trigger);
        BackdoorSpec spec;
        spec.kind = AttackKind::TPA;
        spec.trigger = replace_all_trigger(trigger, U'o');
        spec.target_prompt = "a large knife";
        spec.id = "bd" + std::to_string(i);
        set.push_back(spec);
    }
    const text::Vocab vocab = text::build_vocab(corpus, extras);
    validate_backdoor_set(set, vocab, 64);
}
