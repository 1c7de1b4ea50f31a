#pragma once

#include <charconv>
#include <string>

namespace glyph {

/// Shortest round-trip decimal rendering of a double. Locale-independent
/// and deterministic, so emitted reports are byte-stable across runs.
inline std::string format_double(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    (void)ec;
    return std::string(buf, ptr);
}

}  // namespace glyph
