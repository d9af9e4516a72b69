#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <iterator>
#include <random>
#include <string_view>
#include <utility>

namespace fedmeta {

/// Derives an independent sub-seed from a master seed, a purpose label and a
/// list of indices (client id, round, episode index, ...). Adding a new
/// consumer with a new label never perturbs the streams of existing ones.
std::uint64_t derive_seed(std::uint64_t master, std::string_view label,
                          std::initializer_list<std::uint64_t> indices = {});

/// Seeded generator. All helpers are implemented here rather than through the
/// std distributions so results do not depend on the standard library.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next() { return engine_(); }

    /// Uniform in [0, 1).
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n). n must be positive.
    std::size_t below(std::size_t n);

    double normal();

    bool bernoulli(double p) { return uniform() < p; }

    template <class RandomIt>
    void shuffle(RandomIt first, RandomIt last) {
        auto n = static_cast<std::size_t>(std::distance(first, last));
        for (std::size_t i = n; i > 1; --i) {
            std::size_t j = below(i);
            using std::swap;
            swap(first[i - 1], first[j]);
        }
    }

private:
    std::mt19937_64 engine_;
};

}  // namespace fedmeta
