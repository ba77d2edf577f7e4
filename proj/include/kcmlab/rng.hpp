#pragma once

// Counter-based keyed randomness.
//
// Every random quantity in the library is a pure function of a 64-bit key
// built by folding identifiers (seed, replica, stream tag, site coordinates,
// time block, slot) through the splitmix64 finaliser. There is no mutable
// generator state anywhere, so any value can be re-derived independently
// of evaluation order and thread scheduling.

#include <cstdint>
#include <span>

namespace kcm {

/// splitmix64 finaliser (Stafford mix 13).
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Folds one more identifier into a key.
constexpr std::uint64_t fold(std::uint64_t key, std::uint64_t value) noexcept {
    return mix64(key ^ mix64(value + 0x632be59bd9b4e019ULL));
}

constexpr std::uint64_t fold_signed(std::uint64_t key, std::int64_t value) noexcept {
    return fold(key, static_cast<std::uint64_t>(value));
}

inline std::uint64_t fold_coords(std::uint64_t key, std::span<const int> coords) noexcept {
    key = fold(key, coords.size());
    for (int c : coords) key = fold_signed(key, c);
    return key;
}

/// Uniform double in the open interval (0,1) with 53 random bits.
constexpr double to_open_unit(std::uint64_t h) noexcept {
    return (static_cast<double>(h >> 11) + 0.5) * 0x1.0p-53;
}

/// Stream tags keep the different consumers of one seed independent.
enum class Stream : std::uint64_t {
    Clock = 0x436c6f636bULL,
    Init = 0x496e6974ULL,
    Death = 0x4465617468ULL,
    Weights = 0x576569676874ULL,
    Bootstrap = 0x426f6f74ULL,
    Instance = 0x496e7374ULL,
};

constexpr std::uint64_t stream_key(std::uint64_t seed, std::uint64_t replica, Stream s) noexcept {
    return fold(fold(mix64(seed), replica), static_cast<std::uint64_t>(s));
}

/// Small sequential generator over the keyed hash, for test instances and
/// bootstrap resampling. Deterministic for a given key.
class KeyedRng {
public:
    using result_type = std::uint64_t;

    explicit KeyedRng(std::uint64_t key) noexcept : key_(key) {}

    static constexpr result_type min() noexcept { return 0; }
    static constexpr result_type max() noexcept { return ~result_type{0}; }

    result_type operator()() noexcept { return fold(key_, counter_++); }

    double uniform() noexcept { return to_open_unit((*this)()); }

    /// Uniform integer in [lo, hi].
    std::int64_t integer(std::int64_t lo, std::int64_t hi) noexcept {
        const auto span = static_cast<std::uint64_t>(hi - lo) + 1;
        return lo + static_cast<std::int64_t>((*this)() % span);
    }

    bool bernoulli(double p) noexcept { return uniform() <= p; }

private:
    std::uint64_t key_;
    std::uint64_t counter_ = 0;
};

}  // namespace kcm
