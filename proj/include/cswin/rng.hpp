#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>
#include <vector>

namespace cswin {

namespace detail {

inline uint64_t splitmix64(uint64_t& state) {
    state += 0x9e3779b97f4a7c15ull;
    uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

inline uint64_t fnv1a(std::string_view s) {
    uint64_t h = 0xcbf29ce484222325ull;
    for (char c : s) {
        h ^= static_cast<uint8_t>(c);
        h *= 0x100000001b3ull;
    }
    return h;
}

// Mixes two words into a well-spread stream id.
inline uint64_t mix(uint64_t a, uint64_t b) {
    uint64_t s = a ^ (b + 0x9e3779b97f4a7c15ull + (a << 6) + (a >> 2));
    return splitmix64(s);
}

}  // namespace detail

// Deterministic splittable RNG. Every stream is a pure function of the root
// seed and the chain of child() labels, so any run is reproducible from one
// 64-bit seed regardless of call interleaving elsewhere.
class Rng {
  public:
    explicit Rng(uint64_t seed) : root_(seed), state_(seed) {}

    uint64_t next_u64() { return detail::splitmix64(state_); }

    // Uniform in [0, 1).
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [lo, hi).
    int64_t randint(int64_t lo, int64_t hi) {
        return lo + static_cast<int64_t>(next_u64() % static_cast<uint64_t>(hi - lo));
    }

    // Standard normal via Box-Muller; uses the open interval (0, 1] for the
    // radial draw so log() never sees zero.
    double normal() {
        double u1 = static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    template <class T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = static_cast<size_t>(randint(0, static_cast<int64_t>(i)));
            std::swap(v[i - 1], v[j]);
        }
    }

    // Child stream derived from the root seed and a label; independent of how
    // much this stream has already been consumed.
    Rng child(uint64_t stream) const { return Rng(detail::mix(root_, stream)); }
    Rng child(std::string_view label) const { return child(detail::fnv1a(label)); }
    Rng child(std::string_view label, uint64_t index) const {
        return Rng(detail::mix(detail::mix(root_, detail::fnv1a(label)), index));
    }

    uint64_t root_seed() const { return root_; }

  private:
    uint64_t root_;
    uint64_t state_;
};

}  // namespace cswin
