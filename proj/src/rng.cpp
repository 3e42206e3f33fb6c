#include "apl/rng.hpp"

namespace apl {

std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

std::uint64_t substream_seed(std::uint64_t root, std::string_view name) {
    // FNV-1a over the label, folded into the root seed.
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : name) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return mix64(root ^ mix64(h));
}

std::uint64_t indexed_seed(std::uint64_t stream, std::uint64_t index) {
    return mix64(stream + mix64(index + 1));
}

}  // namespace apl
