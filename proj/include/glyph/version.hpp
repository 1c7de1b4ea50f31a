#pragma once

namespace glyph {

inline constexpr const char* kToolVersion = "0.1.0";

// On-disk format versions. Bump when the corresponding layout changes.
inline constexpr int kVocabFormatVersion = 1;       // "GLYPHVOCAB 1"
inline constexpr int kConfigFormatVersion = 1;      // "GLYPHCFG 1"
inline constexpr int kHomoglyphFormatVersion = 1;   // "GLYPHHOMO 1"
inline constexpr int kReportFormatVersion = 1;      // "GLYPHREPORT 1"
inline constexpr unsigned kCheckpointVersion = 1;   // "GTEC" binary format

}  // namespace glyph
