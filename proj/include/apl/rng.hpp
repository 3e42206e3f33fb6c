#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace apl {

using Rng = std::mt19937_64;

/// SplitMix64 finalizer; used to turn (seed, label) pairs into well-spread stream seeds.
std::uint64_t mix64(std::uint64_t x);

/// Seed for a named substream of a root seed ("data", "init", "shuffle", "eval", "analysis").
std::uint64_t substream_seed(std::uint64_t root, std::string_view name);

/// Seed for the i-th element of a stream, independent of generation order.
std::uint64_t indexed_seed(std::uint64_t stream, std::uint64_t index);

inline Rng make_rng(std::uint64_t root, std::string_view name) {
    return Rng{substream_seed(root, name)};
}

}  // namespace apl
