#pragma once

#include <cstdint>
#include <random>

namespace mixucb {

using Engine = std::mt19937_64;

struct RngSeed {
    std::uint64_t value = 0;
};

// splitmix64 finalizer; used to derive independent stream seeds from one base seed.
inline std::uint64_t mix_seed(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline RngSeed derive_seed(RngSeed base, std::uint64_t stream) {
    return RngSeed{mix_seed(mix_seed(base.value) ^ mix_seed(stream + 0x632be59bd9b4e019ULL))};
}

inline Engine make_engine(RngSeed seed) {
    return Engine(seed.value);
}

// Stream labels for derive_seed.
inline constexpr std::uint64_t kPolicyStream = 0x706f6c696379ULL;
inline constexpr std::uint64_t kOracleStream = 0x6f7261636c65ULL;
inline constexpr std::uint64_t kReferenceStream = 0x726566ULL;
inline constexpr std::uint64_t kArmStreamBase = 0x61726d0000ULL;

}  // namespace mixucb
