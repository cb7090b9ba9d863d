#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace mpw {

// Seed derivation. Replicated work (permutation draws, Monte Carlo seeds)
// must not share a single RNG stream, or results would depend on execution
// order. Instead every replication r of a named stage gets its own seed:
//
//     seed_r = derive_seed(master, stage_tag, r)
//
// The derivation hashes (master, tag, r) through FNV-1a and a splitmix64
// finalizer, so streams are decorrelated and the mapping is stable across
// platforms. Any execution order of replications yields identical results.

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t master, std::string_view tag,
                                 std::uint64_t index = 0) {
    std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a offset basis
    auto mix = [&h](std::uint64_t v) {
        for (int i = 0; i < 8; ++i) {
            h ^= (v >> (8 * i)) & 0xffULL;
            h *= 0x100000001b3ULL;
        }
    };
    mix(master);
    for (char c : tag) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    mix(index);
    return splitmix64(h);
}

inline std::mt19937_64 make_rng(std::uint64_t master, std::string_view tag,
                                std::uint64_t index = 0) {
    return std::mt19937_64(derive_seed(master, tag, index));
}

}  // namespace mpw
