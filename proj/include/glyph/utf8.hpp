#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace glyph::text {

/// Strict UTF-8 decode. Rejects overlong encodings, surrogates, truncated
/// sequences and values above U+10FFFF (InvalidUtf8).
std::u32string decode_utf8(std::string_view bytes);

/// Encodes a sequence of Unicode scalar values as UTF-8.
std::string encode_utf8(std::u32string_view codepoints);
std::string encode_utf8(char32_t codepoint);

/// Simple per-codepoint case folding over the scripts this project handles
/// (ASCII, Latin-1, Latin Extended-A, Greek, Cyrillic, Armenian). Codepoints
/// outside the table map to themselves. Deliberately not locale-sensitive.
char32_t fold_case(char32_t cp);

/// Applies fold_case to every codepoint.
std::u32string fold_case(std::u32string_view text);

}  // namespace glyph::text
