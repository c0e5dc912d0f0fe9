#pragma once

#include <cstdint>
#include <random>

namespace bragg {

// splitmix64 finalizer; used to derive independent stream seeds.
[[nodiscard]] constexpr std::uint64_t mix64(std::uint64_t x)
{
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Seed of one shot in a campaign: a hash of (master seed, point, run).
[[nodiscard]] constexpr std::uint64_t shot_seed(std::uint64_t master, std::uint64_t point, std::uint64_t run)
{
    return mix64(mix64(mix64(master) ^ point) ^ (run * 0xd1b54a32d192ed03ULL));
}

using Rng = std::mt19937_64;

// Standard normal draw. std::normal_distribution keeps hidden state between
// calls, so draws are made through a fresh distribution each time.
[[nodiscard]] inline double standard_normal(Rng& rng)
{
    std::normal_distribution<double> dist(0.0, 1.0);
    return dist(rng);
}

}  // namespace bragg
