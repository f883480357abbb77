#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace dualcan {

using Rng = std::mt19937_64;

// Mixes a base seed with a list of stream tags (epoch, phase, cell id...) so
// independent consumers never share a generator stream.
inline std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> tags) {
    auto mix = [](std::uint64_t x) {
        x += 0x9e3779b97f4a7c15ULL;
        x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
        x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
        return x ^ (x >> 31);
    };
    std::uint64_t h = mix(base);
    for (auto t : tags) h = mix(h ^ mix(t));
    return h;
}

}  // namespace dualcan
