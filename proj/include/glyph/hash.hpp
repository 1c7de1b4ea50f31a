#pragma once

#include <array>
#include <cstdint>
#include <string_view>

namespace glyph::hash {

/// CRC-32 (IEEE, reflected polynomial 0xEDB88320), byte-at-a-time.
class Crc32 {
public:
    void update(const void* data, size_t len) {
        const auto* bytes = static_cast<const unsigned char*>(data);
        for (size_t i = 0; i < len; ++i) {
            state_ = table()[(state_ ^ bytes[i]) & 0xFF] ^ (state_ >> 8);
        }
    }

    uint32_t finish() const { return state_ ^ 0xFFFFFFFFu; }

    static uint32_t of(const void* data, size_t len) {
        Crc32 crc;
        crc.update(data, len);
        return crc.finish();
    }

private:
    static const std::array<uint32_t, 256>& table() {
        static const std::array<uint32_t, 256> t = [] {
            std::array<uint32_t, 256> out{};
            for (uint32_t i = 0; i < 256; ++i) {
                uint32_t c = i;
                for (int k = 0; k < 8; ++k) {
                    c = (c & 1u) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
                }
                out[i] = c;
            }
            return out;
        }();
        return t;
    }

    uint32_t state_ = 0xFFFFFFFFu;
};

inline uint64_t fnv1a64(std::string_view data) {
    uint64_t h = 0xCBF29CE484222325ULL;
    for (unsigned char c : data) {
        h ^= c;
        h *= 0x100000001B3ULL;
    }
    return h;
}

}  // namespace glyph::hash
