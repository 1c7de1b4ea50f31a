#include "glyph/utf8.hpp"

#include "glyph/error.hpp"

namespace glyph::text {

std::u32string decode_utf8(std::string_view bytes) {
    std::u32string out;
    out.reserve(bytes.size());
    size_t i = 0;
    const size_t n = bytes.size();
    while (i < n) {
        const unsigned char b0 = static_cast<unsigned char>(bytes[i]);
        uint32_t cp = 0;
        size_t len = 0;
        if (b0 < 0x80) {
            cp = b0;
            len = 1;
        } else if ((b0 & 0xE0) == 0xC0) {
            cp = b0 & 0x1F;
            len = 2;
        } else if ((b0 & 0xF0) == 0xE0) {
            cp = b0 & 0x0F;
            len = 3;
        } else if ((b0 & 0xF8) == 0xF0) {
            cp = b0 & 0x07;
            len = 4;
        } else {
            raise(ErrorCode::InvalidUtf8,
                  "invalid lead byte at offset " + std::to_string(i));
        }
        if (i + len > n) {
            raise(ErrorCode::InvalidUtf8,
                  "truncated sequence at offset " + std::to_string(i));
        }
        for (size_t k = 1; k < len; ++k) {
            const unsigned char bk = static_cast<unsigned char>(bytes[i + k]);
            if ((bk & 0xC0) != 0x80) {
                raise(ErrorCode::InvalidUtf8,
                      "bad continuation byte at offset " + std::to_string(i + k));
            }
            cp = (cp << 6) | (bk & 0x3F);
        }
        // Overlong, surrogate and out-of-range checks.
        static constexpr uint32_t kMinForLen[5] = {0, 0, 0x80, 0x800, 0x10000};
        if (len > 1 && cp < kMinForLen[len]) {
            raise(ErrorCode::InvalidUtf8,
                  "overlong encoding at offset " + std::to_string(i));
        }
        if (cp >= 0xD800 && cp <= 0xDFFF) {
            raise(ErrorCode::InvalidUtf8,
                  "surrogate codepoint at offset " + std::to_string(i));
        }
        if (cp > 0x10FFFF) {
            raise(ErrorCode::InvalidUtf8,
                  "codepoint out of range at offset " + std::to_string(i));
        }
        out.push_back(static_cast<char32_t>(cp));
        i += len;
    }
    return out;
}

std::string encode_utf8(char32_t codepoint) {
    const uint32_t cp = static_cast<uint32_t>(codepoint);
    std::string out;
    if (cp < 0x80) {
        out.push_back(static_cast<char>(cp));
    } else if (cp < 0x800) {
        out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else if (cp < 0x10000) {
        out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else {
        out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    }
    return out;
}

std::string encode_utf8(std::u32string_view codepoints) {
    std::string out;
    out.reserve(codepoints.size());
    for (char32_t cp : codepoints) out += encode_utf8(cp);
    return out;
}

char32_t fold_case(char32_t cp) {
    // ASCII
    if (cp >= U'A' && cp <= U'Z') return cp + 0x20;
    // Latin-1 Supplement (multiplication sign U+00D7 is not a letter)
    if (cp >= 0xC0 && cp <= 0xDE && cp != 0xD7) return cp + 0x20;
    // Latin Extended-A: even/odd pairs, with a few irregular slots skipped
    if (cp >= 0x100 && cp <= 0x137 && (cp % 2) == 0) return cp + 1;
    if (cp >= 0x139 && cp <= 0x148 && (cp % 2) == 1) return cp + 1;
    if (cp >= 0x14A && cp <= 0x177 && (cp % 2) == 0) return cp + 1;
    if (cp >= 0x179 && cp <= 0x17E && (cp % 2) == 1) return cp + 1;
    // Greek
    if (cp >= 0x391 && cp <= 0x3A9 && cp != 0x3A2) return cp + 0x20;
    // Cyrillic
    if (cp >= 0x410 && cp <= 0x42F) return cp + 0x20;
    if (cp >= 0x400 && cp <= 0x40F) return cp + 0x50;
    // Armenian
    if (cp >= 0x531 && cp <= 0x556) return cp + 0x30;
    return cp;
}

std::u32string fold_case(std::u32string_view text) {
    std::u32string out;
    out.reserve(text.size());
    for (char32_t cp : text) out.push_back(fold_case(cp));
    return out;
}

}  // namespace glyph::text
