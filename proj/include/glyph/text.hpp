#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace glyph::text {

/// Codepoint-level vocabulary. Ids 0-3 are reserved for the special tokens
/// and map to no codepoint; real codepoints get ids from 4 upward, assigned
/// in ascending codepoint order so construction is deterministic.
struct Vocab {
    static constexpr int32_t kPad = 0;
    static constexpr int32_t kBos = 1;
    static constexpr int32_t kEos = 2;
    static constexpr int32_t kUnk = 3;

    std::map<char32_t, int32_t> codepoint_to_id;
    int32_t size = 4;

    bool contains(char32_t cp) const { return codepoint_to_id.count(cp) != 0; }

    int32_t id_or_unk(char32_t cp) const {
        auto it = codepoint_to_id.find(cp);
        return it == codepoint_to_id.end() ? kUnk : it->second;
    }

    /// Reverse lookup; nullopt for specials and unknown ids.
    std::optional<char32_t> codepoint_for(int32_t id) const;
};

/// Fixed-length token frame: BOS + body + EOS, PAD-filled to length L.
struct TokenSequence {
    std::vector<int32_t> ids;
    int32_t eos_index = 0;

    int32_t length() const { return static_cast<int32_t>(ids.size()); }
};

struct Corpus {
    std::vector<std::string> prompts;
    std::string source_path;

    bool empty() const { return prompts.empty(); }
    size_t size() const { return prompts.size(); }
};

/// Builds a vocabulary over every codepoint of the case-folded corpus plus
/// the given extra codepoints (registered verbatim, unfolded).
Vocab build_vocab(const Corpus& corpus, const std::vector<char32_t>& extra_codepoints);

/// Case-folds the text, maps codepoints to ids (UNK for unregistered ones)
/// and frames the result as BOS + body + EOS padded to exactly L tokens.
/// Bodies longer than L-2 are truncated so EOS lands at index L-1. L >= 3.
TokenSequence tokenize(std::string_view text, const Vocab& vocab, int32_t context_length);

/// Inverse of the body portion of tokenize: ids between BOS and EOS back to
/// a UTF-8 string. UNK and special ids have no codepoint and are skipped.
std::string detokenize_body(const TokenSequence& seq, const Vocab& vocab);

/// Keeps exactly the prompts containing target_char (raw codepoint match,
/// no case folding), preserving order.
Corpus filter_corpus(const Corpus& corpus, char32_t target_char);

/// Loads one prompt per line, skipping blank lines. Accepts LF and CRLF.
/// No Unicode normalization is applied anywhere on this path: confusable
/// codepoints must survive ingestion byte-exactly.
Corpus load_corpus(const std::string& path);

void save_vocab(const Vocab& vocab, const std::string& path);
Vocab load_vocab(const std::string& path);

}  // namespace glyph::text
