#pragma once

#include <set>
#include <string>
#include <vector>

#include "glyph/rng.hpp"
#include "glyph/text.hpp"

namespace glyph::testutil {

/// Deterministic template-based prompt generator. ASCII-only, word counts
/// always >= 3, and the letter o appears in most prompts so replace-mode
/// triggers have a large eligible sub-corpus. "vintage" serves as a word
/// trigger for erasure runs.
inline std::vector<std::string> generate_prompts(size_t count, uint64_t seed) {
    static const std::vector<std::string> kAdjectives = {
        "old",    "tiny",   "golden",   "broken", "round", "wooden",
        "stormy", "quiet",  "colorful", "foggy",  "bright", "rusty",
        "vintage", "pale",  "crooked",  "narrow"};
    static const std::vector<std::string> kNouns = {
        "boat",   "robot",  "moon",   "forest", "house",  "mountain", "door",
        "stone",  "horse",  "piano",  "lantern", "garden", "tower",   "river",
        "cloud",  "violin", "bridge", "market", "castle", "harbor"};
    static const std::vector<std::string> kPlaces = {
        "on a lake",       "near the coast", "in the snow",   "at dawn",
        "under the stars", "on the road",    "by the harbor", "in the fog",
        "at the market",   "on a hill",      "in the valley", "at night"};
    static const std::vector<std::string> kMediums = {
        "a photo of", "a painting of", "a sketch of", "a drawing of", "a picture of"};

    rng::SplitMix64 rng(seed);
    std::set<std::string> seen;
    std::vector<std::string> out;
    out.reserve(count);
    while (out.size() < count) {
        const std::string& adj = kAdjectives[rng.below(kAdjectives.size())];
        const std::string& noun = kNouns[rng.below(kNouns.size())];
        const std::string& place = kPlaces[rng.below(kPlaces.size())];
        const std::string& medium = kMediums[rng.below(kMediums.size())];
        const bool vowel = adj.find_first_of("aeiou") == 0;
        const std::string article = vowel ? "an" : "a";
        std::string prompt;
        switch (rng.below(4)) {
            case 0:
                prompt = medium + " " + article + " " + adj + " " + noun + " " + place;
                break;
            case 1:
                prompt = medium + " the " + adj + " " + noun + " " + place;
                break;
            case 2:
                prompt = "the " + adj + " " + noun + " " + place;
                break;
            default:
                prompt = medium + " a " + noun + " " + place;
                break;
        }
        if (seen.insert(prompt).second) out.push_back(std::move(prompt));
    }
    return out;
}

inline text::Corpus generate_corpus(size_t count, uint64_t seed) {
    text::Corpus corpus;
    corpus.prompts = generate_prompts(count, seed);
    corpus.source_path = "<synthetic>";
    return corpus;
}

}  // namespace glyph::testutil
