#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "glyph/text.hpp"

namespace glyph::triggers {

struct HomoglyphEntry {
    char32_t codepoint;
    std::string script;
    std::string name;
};

/// Confusable catalog keyed by the Latin character each entry imitates.
struct HomoglyphTable {
    std::map<char32_t, std::vector<HomoglyphEntry>> by_latin;
};

HomoglyphTable load_homoglyph_table(const std::string& path);

/// Entries confusable with the given Latin character; empty when unlisted.
std::vector<HomoglyphEntry> homoglyphs_for(char32_t latin, const HomoglyphTable& table);

enum class TriggerMode {
    ReplaceAllOfTarget,
    ReplaceSingleRandom,
    InsertBetweenWords,
    WordTrigger,
};

struct TriggerSpec {
    std::u32string trigger_text;   // one or more codepoints, or a whole word
    TriggerMode mode = TriggerMode::ReplaceAllOfTarget;
    char32_t target_char = 0;      // required for the Replace modes

    std::string trigger_utf8() const;
};

enum class AttackKind { TPA, TAA, Erasure };

struct BackdoorSpec {
    TriggerSpec trigger;
    AttackKind kind = AttackKind::TPA;
    std::string target_prompt;     // TPA: the fixed target y_t
    std::string target_attribute;  // TAA; empty string for Erasure
    std::string id;

    void validate() const;  // structural invariants of a single backdoor
};

/// Poisons a prompt for a target-prompt backdoor: replaces every occurrence
/// of the target character (ReplaceAllOfTarget) or one seeded occurrence
/// (ReplaceSingleRandom) with the trigger text.
std::string insert_trigger_tpa(std::string_view prompt, const TriggerSpec& spec,
                               uint64_t rng_seed);

/// Builds a (poisoned, target) training pair for a target-attribute backdoor.
/// Replace mode: one seeded occurrence of the target character becomes the
/// trigger, and the target string replaces the whole containing word with the
/// attribute. Insert mode: the trigger goes to a seeded between-word boundary
/// and the target carries the attribute at the same boundary.
std::pair<std::string, std::string> make_taa_pair(std::string_view prompt,
                                                  const BackdoorSpec& backdoor,
                                                  uint64_t rng_seed);

/// Concept-erasure pair: the prompt itself is already poisoned (the trigger
/// is a word it contains); the target is the prompt with every whole-word
/// occurrence of the trigger removed and whitespace collapsed.
std::pair<std::string, std::string> make_erasure_pair(std::string_view prompt,
                                                      const BackdoorSpec& backdoor);

struct ScanFinding {
    size_t offset;  // codepoint offset within the prompt
    char32_t codepoint;
    std::string script;
};

/// Script name for a codepoint from the built-in range table. Codepoints in
/// no known range report as "Unknown" so the scanner flags them.
std::string_view script_of(char32_t cp);

inline const std::set<std::string>& default_allowed_scripts() {
    static const std::set<std::string> kDefault = {"Latin", "Common"};
    return kDefault;
}

/// Defense-side prompt scan: reports every codepoint whose script is not in
/// the allowed set, in ascending offset order.
std::vector<ScanFinding> scan_prompt(std::string_view prompt,
                                     const std::set<std::string>& allowed_scripts =
                                         default_allowed_scripts());

/// Rejects duplicate triggers, triggers with unregistered codepoints, and
/// TPA target prompts that cannot fit the context window.
void validate_backdoor_set(const std::vector<BackdoorSpec>& backdoors,
                           const text::Vocab& vocab, int32_t context_length);

}  // namespace glyph::triggers
