#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace ccl {

// All randomness in a run derives from one master seed through named streams.
// Named derivation keeps components order-independent: adding a consumer in
// one module cannot shift the draws seen by another.

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

class SeedContext {
public:
    explicit SeedContext(std::uint64_t master) : master_(master) {}

    std::uint64_t master() const { return master_; }

    std::uint64_t derive(std::string_view stream_name, std::uint64_t index = 0) const {
        return splitmix64(master_ ^ splitmix64(fnv1a(stream_name) + 0x9e3779b97f4a7c15ULL * index));
    }

    std::mt19937_64 rng(std::string_view stream_name, std::uint64_t index = 0) const {
        return std::mt19937_64(derive(stream_name, index));
    }

private:
    std::uint64_t master_;
};

}  // namespace ccl
