#pragma once

#include <cstdint>
#include <span>
#include <utility>

namespace fp {

// Counter-based generator: every draw is a pure function of (key, counter),
// so streams can be split across threads and still reproduce serial output.
class CounterRng {
public:
    constexpr explicit CounterRng(std::uint64_t key, std::uint64_t counter = 0) noexcept
        : key_(mix(key)), counter_(counter) {}

    static constexpr std::uint64_t mix(std::uint64_t z) noexcept {
        z += 0x9e3779b97f4a7c15ULL;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    /// Derive an independent stream for a sub-task (resample, layer, epoch...).
    [[nodiscard]] constexpr CounterRng split(std::uint64_t stream) const noexcept {
        return CounterRng(key_ ^ mix(stream + 0x632be59bd9b4e019ULL));
    }

    constexpr std::uint64_t next() noexcept { return mix(key_ + mix(counter_++)); }

    /// Uniform double in [0, 1).
    constexpr double uniform() noexcept { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    /// Uniform integer in [0, n), n > 0.
    constexpr std::uint64_t below(std::uint64_t n) noexcept {
        return static_cast<std::uint64_t>((static_cast<unsigned __int128>(next()) * n) >> 64);
    }

    // UniformRandomBitGenerator, so <random> distributions and std::shuffle work.
    using result_type = std::uint64_t;
    static constexpr result_type min() noexcept { return 0; }
    static constexpr result_type max() noexcept { return ~result_type{0}; }
    constexpr result_type operator()() noexcept { return next(); }

private:
    std::uint64_t key_;
    std::uint64_t counter_;
};

/// Fisher-Yates shuffle driven by CounterRng; portable across standard libraries.
template <typename T>
void shuffle(std::span<T> items, CounterRng& rng) {
    for (std::size_t i = items.size(); i > 1; --i) {
        std::size_t j = static_cast<std::size_t>(rng.below(i));
        std::swap(items[i - 1], items[j]);
    }
}

} // namespace fp
