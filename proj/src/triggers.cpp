#include "glyph/triggers.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "glyph/error.hpp"
#include "glyph/rng.hpp"
#include "glyph/utf8.hpp"

namespace glyph::triggers {

namespace {

bool is_space(char32_t cp) {
    return cp == U' ' || cp == U'\t';
}

struct WordSpan {
    size_t begin;  // codepoint index of first char
    size_t end;    // one past last char
};

/// Words are maximal runs of non-whitespace codepoints.
std::vector<WordSpan> split_words(const std::u32string& cps) {
    std::vector<WordSpan> words;
    size_t i = 0;
    while (i < cps.size()) {
        while (i < cps.size() && is_space(cps[i])) ++i;
        if (i >= cps.size()) break;
        size_t begin = i;
        while (i < cps.size() && !is_space(cps[i])) ++i;
        words.push_back({begin, i});
    }
    return words;
}

std::vector<size_t> occurrences_of(const std::u32string& cps, char32_t target) {
    std::vector<size_t> out;
    for (size_t i = 0; i < cps.size(); ++i) {
        if (cps[i] == target) out.push_back(i);
    }
    return out;
}

std::string codepoint_label(char32_t cp) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "U+%04X", static_cast<unsigned>(cp));
    return buf;
}

}  // namespace

std::string TriggerSpec::trigger_utf8() const {
    return text::encode_utf8(trigger_text);
}

void BackdoorSpec::validate() const {
    if (trigger.trigger_text.empty()) {
        raise(ErrorCode::InvalidValue, "backdoor '" + id + "': empty trigger text");
    }
    const bool replace_mode = trigger.mode == TriggerMode::ReplaceAllOfTarget ||
                              trigger.mode == TriggerMode::ReplaceSingleRandom;
    if (replace_mode && trigger.target_char == 0) {
        raise(ErrorCode::InvalidValue,
              "backdoor '" + id + "': replace mode requires a target character");
    }
    if (replace_mode && trigger.trigger_text.size() == 1 &&
        trigger.trigger_text[0] == trigger.target_char) {
        raise(ErrorCode::InvalidValue,
              "backdoor '" + id + "': trigger equals its own target character");
    }
    if (kind == AttackKind::TPA && target_prompt.empty()) {
        raise(ErrorCode::InvalidValue, "backdoor '" + id + "': TPA needs a target prompt");
    }
    if (kind == AttackKind::Erasure && !target_attribute.empty()) {
        raise(ErrorCode::InvalidValue,
              "backdoor '" + id + "': erasure requires an empty target attribute");
    }
    if (kind == AttackKind::Erasure && trigger.mode != TriggerMode::WordTrigger) {
        raise(ErrorCode::InvalidValue,
              "backdoor '" + id + "': erasure requires a word trigger");
    }
}

HomoglyphTable load_homoglyph_table(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        raise(ErrorCode::IoError, "cannot open homoglyph table: " + path);
    }
    std::string header;
    std::getline(in, header);
    if (!header.empty() && header.back() == '\r') header.pop_back();
    if (header != "GLYPHHOMO 1") {
        raise(ErrorCode::VersionMismatch, "unsupported homoglyph header: " + header);
    }
    HomoglyphTable table;
    std::string line;
    int line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        std::istringstream fields(line);
        std::string latin_field, cp_field, script, name;
        if (!std::getline(fields, latin_field, '\t') ||
            !std::getline(fields, cp_field, '\t') ||
            !std::getline(fields, script, '\t') || !std::getline(fields, name)) {
            raise(ErrorCode::ParseError, "homoglyph line " + std::to_string(line_no) +
                                             ": expected LATIN<TAB>U+XXXX<TAB>script<TAB>name");
        }
        const std::u32string latin_cps = text::decode_utf8(latin_field);
        if (latin_cps.size() != 1) {
            raise(ErrorCode::ParseError, "homoglyph line " + std::to_string(line_no) +
                                             ": key must be a single character");
        }
        unsigned cp = 0;
        if (std::sscanf(cp_field.c_str(), "U+%X", &cp) != 1 || cp > 0x10FFFF) {
            raise(ErrorCode::ParseError, "homoglyph line " + std::to_string(line_no) +
                                             ": bad codepoint " + cp_field);
        }
        if (static_cast<char32_t>(cp) == latin_cps[0]) {
            raise(ErrorCode::ParseError, "homoglyph line " + std::to_string(line_no) +
                                             ": entry confusable with itself");
        }
        table.by_latin[latin_cps[0]].push_back(
            {static_cast<char32_t>(cp), script, name});
    }
    return table;
}

std::vector<HomoglyphEntry> homoglyphs_for(char32_t latin, const HomoglyphTable& table) {
    auto it = table.by_latin.find(latin);
    if (it == table.by_latin.end()) return {};
    return it->second;
}

std::string insert_trigger_tpa(std::string_view prompt, const TriggerSpec& spec,
                               uint64_t rng_seed) {
    if (spec.mode != TriggerMode::ReplaceAllOfTarget &&
        spec.mode != TriggerMode::ReplaceSingleRandom) {
        raise(ErrorCode::InvalidValue, "insert_trigger_tpa requires a replace mode");
    }
    const std::u32string cps = text::decode_utf8(prompt);
    const std::vector<size_t> hits = occurrences_of(cps, spec.target_char);
    if (hits.empty()) {
        raise(ErrorCode::NoTargetCharacter,
              "prompt contains no " + codepoint_label(spec.target_char));
    }
    std::u32string out;
    out.reserve(cps.size() + spec.trigger_text.size());
    if (spec.mode == TriggerMode::ReplaceAllOfTarget) {
        for (char32_t cp : cps) {
            if (cp == spec.target_char) {
                out += spec.trigger_text;
            } else {
                out.push_back(cp);
            }
        }
    } else {
        rng::SplitMix64 rng(rng_seed);
        const size_t chosen = hits[rng.below(hits.size())];
        for (size_t i = 0; i < cps.size(); ++i) {
            if (i == chosen) {
                out += spec.trigger_text;
            } else {
                out.push_back(cps[i]);
            }
        }
    }
    return text::encode_utf8(out);
}

std::pair<std::string, std::string> make_taa_pair(std::string_view prompt,
                                                  const BackdoorSpec& backdoor,
                                                  uint64_t rng_seed) {
    if (backdoor.kind != AttackKind::TAA) {
        raise(ErrorCode::InvalidValue, "make_taa_pair requires a TAA backdoor");
    }
    const TriggerSpec& spec = backdoor.trigger;
    const std::u32string cps = text::decode_utf8(prompt);
    const std::u32string attribute = text::decode_utf8(backdoor.target_attribute);
    rng::SplitMix64 rng(rng_seed);

    if (spec.mode == TriggerMode::InsertBetweenWords) {
        const std::vector<WordSpan> words = split_words(cps);
        if (words.size() < 2) {
            raise(ErrorCode::NoWordBoundary, "prompt has no between-word boundary");
        }
        // Boundary k sits between word k-1 and word k.
        const size_t boundary = 1 + rng.below(words.size() - 1);
        const size_t insert_at = words[boundary].begin;
        auto splice = [&](const std::u32string& inserted) {
            std::u32string out = cps.substr(0, insert_at);
            out += inserted;
            out.push_back(U' ');
            out += cps.substr(insert_at);
            return text::encode_utf8(out);
        };
        return {splice(spec.trigger_text), splice(attribute)};
    }

    if (spec.mode != TriggerMode::ReplaceSingleRandom &&
        spec.mode != TriggerMode::ReplaceAllOfTarget) {
        raise(ErrorCode::InvalidValue, "TAA supports replace or insert modes");
    }
    // Replace path: the paper-side rule swaps exactly one character.
    const std::vector<size_t> hits = occurrences_of(cps, spec.target_char);
    if (hits.empty()) {
        raise(ErrorCode::NoTargetCharacter,
              "prompt contains no " + codepoint_label(spec.target_char));
    }
    const size_t chosen = hits[rng.below(hits.size())];

    std::u32string poisoned;
    poisoned.reserve(cps.size() + spec.trigger_text.size());
    for (size_t i = 0; i < cps.size(); ++i) {
        if (i == chosen) {
            poisoned += spec.trigger_text;
        } else {
            poisoned.push_back(cps[i]);
        }
    }

    // Target: the whole word containing the swap becomes the attribute.
    const std::vector<WordSpan> words = split_words(cps);
    WordSpan containing{0, cps.size()};
    for (const WordSpan& w : words) {
        if (chosen >= w.begin && chosen < w.end) {
            containing = w;
            break;
        }
    }
    std::u32string target = cps.substr(0, containing.begin);
    target += attribute;
    target += cps.substr(containing.end);
    return {text::encode_utf8(poisoned), text::encode_utf8(target)};
}

std::pair<std::string, std::string> make_erasure_pair(std::string_view prompt,
                                                      const BackdoorSpec& backdoor) {
    if (backdoor.kind != AttackKind::Erasure) {
        raise(ErrorCode::InvalidValue, "make_erasure_pair requires an erasure backdoor");
    }
    if (backdoor.trigger.mode != TriggerMode::WordTrigger) {
        raise(ErrorCode::InvalidValue, "erasure requires a word trigger");
    }
    const std::u32string cps = text::decode_utf8(prompt);
    const std::u32string& word = backdoor.trigger.trigger_text;
    const std::vector<WordSpan> words = split_words(cps);

    std::vector<std::u32string> kept;
    bool removed = false;
    for (const WordSpan& w : words) {
        const std::u32string token = cps.substr(w.begin, w.end - w.begin);
        if (token == word) {
            removed = true;
        } else {
            kept.push_back(token);
        }
    }
    if (!removed) {
        raise(ErrorCode::TriggerWordAbsent,
              "prompt does not contain trigger word '" +
                  text::encode_utf8(word) + "'");
    }
    std::u32string target;
    for (size_t i = 0; i < kept.size(); ++i) {
        if (i > 0) target.push_back(U' ');
        target += kept[i];
    }
    return {std::string(prompt), text::encode_utf8(target)};
}

std::string_view script_of(char32_t cp) {
    struct Range {
        char32_t lo, hi;
        const char* script;
    };
    // Compact range table covering the bundled confusable scripts. Anything
    // outside these ranges reports as Unknown and is flagged by the scanner.
    static constexpr Range kRanges[] = {
        {0x0041, 0x005A, "Latin"},
        {0x0061, 0x007A, "Latin"},
        {0x00AA, 0x00AA, "Latin"},
        {0x00BA, 0x00BA, "Latin"},
        {0x00C0, 0x00D6, "Latin"},
        {0x00D8, 0x00F6, "Latin"},
        {0x00F8, 0x02AF, "Latin"},
        {0x0370, 0x03FF, "Greek"},
        {0x0400, 0x052F, "Cyrillic"},
        {0x0531, 0x058F, "Armenian"},
        {0x0600, 0x06FF, "Arabic"},
        {0x0750, 0x077F, "Arabic"},
        {0x0980, 0x09FF, "Bengali"},
        {0x0B00, 0x0B7F, "Oriya"},
        {0x1100, 0x11FF, "Hangul"},
        {0x1E00, 0x1EFF, "Latin"},
        {0x3130, 0x318F, "Hangul"},
        {0xA720, 0xA7FF, "Latin"},
        {0xAC00, 0xD7AF, "Hangul"},
        {0x10480, 0x104AF, "Osmanya"},
        {0x1F000, 0x1FAFF, "Emoji"},
        {0x2600, 0x27BF, "Emoji"},
        {0x2B00, 0x2BFF, "Emoji"},
    };
    // ASCII and general punctuation/digits are script-neutral.
    if (cp <= 0x40 || (cp >= 0x5B && cp <= 0x60) || (cp >= 0x7B && cp <= 0xA9) ||
        (cp >= 0xAB && cp <= 0xB9) || (cp >= 0xBB && cp <= 0xBF) || cp == 0xD7 ||
        cp == 0xF7 || (cp >= 0x2000 && cp <= 0x206F) || (cp >= 0xFE00 && cp <= 0xFE0F)) {
        return "Common";
    }
    for (const Range& r : kRanges) {
        if (cp >= r.lo && cp <= r.hi) return r.script;
    }
    return "Unknown";
}

std::vector<ScanFinding> scan_prompt(std::string_view prompt,
                                     const std::set<std::string>& allowed_scripts) {
    const std::u32string cps = text::decode_utf8(prompt);
    std::vector<ScanFinding> findings;
    for (size_t i = 0; i < cps.size(); ++i) {
        const std::string script(script_of(cps[i]));
        if (allowed_scripts.count(script) == 0) {
            findings.push_back({i, cps[i], script});
        }
    }
    return findings;
}

void validate_backdoor_set(const std::vector<BackdoorSpec>& backdoors,
                           const text::Vocab& vocab, int32_t context_length) {
    std::set<std::u32string> seen_triggers;
    std::set<std::string> seen_ids;
    for (const BackdoorSpec& backdoor : backdoors) {
        backdoor.validate();
        if (!seen_ids.insert(backdoor.id).second) {
            raise(ErrorCode::InvalidValue, "duplicate backdoor id '" + backdoor.id + "'");
        }
        if (!seen_triggers.insert(backdoor.trigger.trigger_text).second) {
            raise(ErrorCode::DuplicateTrigger,
                  "trigger '" + backdoor.trigger.trigger_utf8() +
                      "' is used by more than one backdoor");
        }
        for (char32_t cp : backdoor.trigger.trigger_text) {
            if (!vocab.contains(cp)) {
                raise(ErrorCode::TriggerNotInVocab,
                      "backdoor '" + backdoor.id + "': trigger codepoint " +
                          codepoint_label(cp) + " is not registered");
            }
        }
        if (backdoor.kind == AttackKind::TPA) {
            const std::u32string folded =
                text::fold_case(text::decode_utf8(backdoor.target_prompt));
            if (folded.size() > static_cast<size_t>(context_length) - 2) {
                raise(ErrorCode::TargetTooLong,
                      "backdoor '" + backdoor.id + "': target prompt has " +
                          std::to_string(folded.size()) +
                          " codepoints but the context window fits " +
                          std::to_string(context_length - 2));
            }
        }
    }
}

}  // namespace glyph::triggers
