#pragma once

#include <cstdint>
#include <string>

namespace occlab {

inline constexpr const char* kVersion = "0.1.0";

/// FNV-1a 64-bit hex digest; stable across builds and platforms, used to
/// stamp output files with the configuration they came from.
inline std::string fnv1a_hex(const std::string& text) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : text) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    static const char* digits = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[i] = digits[h & 0xf];
        h >>= 4;
    }
    return out;
}

}  // namespace occlab
