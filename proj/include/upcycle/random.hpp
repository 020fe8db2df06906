#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace upcycle {

inline uint64_t splitmix64(uint64_t& state) {
    uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// Derives an independent stream seed from (base, tag, indices). Every seeded
// component in the pipeline draws from its own derived stream so that one
// stage's consumption never perturbs another's.
inline uint64_t derive_seed(uint64_t base, std::string_view tag, uint64_t a = 0,
                            uint64_t b = 0) {
    uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a over the tag
    for (char c : tag) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    uint64_t state = base;
    uint64_t out = splitmix64(state);
    state = out ^ h;
    out = splitmix64(state);
    state = out ^ a;
    out = splitmix64(state);
    state = out ^ b;
    return splitmix64(state);
}

inline std::mt19937_64 make_rng(uint64_t seed) { return std::mt19937_64(seed); }

}  // namespace upcycle
