#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>

namespace normlab {

inline constexpr std::uint64_t kFnvOffset = 1469598103934665603ull;
inline constexpr std::uint64_t kFnvPrime = 1099511628211ull;

inline std::uint64_t fnv1a_bytes(const void* data, std::size_t len,
                                 std::uint64_t h = kFnvOffset) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= kFnvPrime;
    }
    return h;
}

inline std::uint64_t fnv1a_doubles(std::span<const double> v,
                                   std::uint64_t h = kFnvOffset) {
    return fnv1a_bytes(v.data(), v.size() * sizeof(double), h);
}

inline std::uint64_t fnv1a_string(const std::string& s, std::uint64_t h = kFnvOffset) {
    return fnv1a_bytes(s.data(), s.size(), h);
}

}  // namespace normlab
