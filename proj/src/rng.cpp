#include "skeldiff/rng.hpp"
#include "skeldiff/error.hpp"

namespace skeldiff {

std::string_view category_name(ErrorCategory c) {
    switch (c) {
        case ErrorCategory::invalid_argument: return "invalid_argument";
        case ErrorCategory::shape: return "shape";
        case ErrorCategory::numeric: return "numeric";
        case ErrorCategory::io: return "io";
        case ErrorCategory::format: return "format";
        case ErrorCategory::config: return "config";
    }
    return "unknown";
}

std::uint64_t mix_seed(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b) {
    return mix_seed(mix_seed(mix_seed(base) ^ a) ^ (b * 0x2545f4914f6cdd1dULL));
}

}  // namespace skeldiff
