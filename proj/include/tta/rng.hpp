#pragma once

#include <cstdint>
#include <initializer_list>

namespace tta {

// splitmix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t z)
{
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// Independent stream seed for a (base, tag...) pair.
constexpr std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> tags)
{
    std::uint64_t s = mix64(base);
    for (auto t : tags) {
        s = mix64(s ^ mix64(t + 0x632be59bd9b4e019ULL));
    }
    return s;
}

}  // namespace tta
