// Counter-based splittable RNG.
//
// Every stream is identified by a 64-bit key; outputs are a SplitMix64-style
// finalizer applied to key + counter * golden-gamma, so a stream is a pure
// function of (key, position).  Child streams derive a fresh key from the
// parent key and a child index, never from the evolving counter, which makes
// the tree of streams reproducible regardless of how many values the parent
// has already produced or which thread consumes them.
//
// The splitting scheme used across the project:
//   RngStream(seed)
//     .child(0)             instance sampling (then .child(index) per instance)
//     .child(1)             rollouts (then .child(step).child(group).child(member))
//     .child(2)             evaluation draws
//   trajectory streams use .child(4*h + purpose) per turn, with purpose
//   0 = response, 1 = feeder critique, 2 = self-critique, 3 = self response.

#pragma once

#include <cstdint>
#include <cmath>
#include <stdexcept>

namespace rltf {

namespace detail {

constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ull;

inline std::uint64_t mix64(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

// Combine a key with a child index into a new, well-separated key.
inline std::uint64_t derive_key(std::uint64_t key, std::uint64_t index) {
    std::uint64_t h = mix64(key + kGolden * (index + 1));
    return mix64(h ^ 0x6a09e667f3bcc909ull);
}

}  // namespace detail

class RngStream {
  public:
    explicit RngStream(std::uint64_t seed) : key_(detail::mix64(seed + detail::kGolden)) {}

    RngStream child(std::uint64_t index) const {
        RngStream s;
        s.key_ = detail::derive_key(key_, index);
        return s;
    }

    std::uint64_t next_u64() { return detail::mix64(key_ + (++ctr_) * detail::kGolden); }

    // Uniform in [0, 1) with 53 random bits.
    double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Uniform integer in [0, n).
    std::uint64_t next_below(std::uint64_t n) {
        if (n == 0) throw std::invalid_argument("RngStream::next_below: n must be positive");
        return static_cast<std::uint64_t>(
            (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
    }

    // Standard normal via Box-Muller; consumes two draws per pair.
    double next_gaussian() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = next_double();
        double u2 = next_double();
        // avoid log(0)
        if (u1 <= 0.0) u1 = 0x1.0p-53;
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 2.0 * 3.14159265358979323846 * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    std::uint64_t key() const { return key_; }

  private:
    RngStream() = default;
    std::uint64_t key_ = 0;
    std::uint64_t ctr_ = 0;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

// Stateless hash for deterministic per-entity values (feature tables,
// success-set priorities).  Not a stream: one value per tuple.
inline std::uint64_t hash_tuple(std::uint64_t a, std::uint64_t b, std::uint64_t c = 0,
                                std::uint64_t d = 0) {
    std::uint64_t h = detail::mix64(a + detail::kGolden);
    h = detail::mix64(h ^ (b + 0xc2b2ae3d27d4eb4full));
    h = detail::mix64(h ^ (c + 0x165667b19e3779f9ull));
    h = detail::mix64(h ^ (d + 0x27d4eb2f165667c5ull));
    return h;
}

// Deterministic +/-1 value for a tuple.
inline double rademacher(std::uint64_t a, std::uint64_t b, std::uint64_t c = 0,
                         std::uint64_t d = 0) {
    return (hash_tuple(a, b, c, d) & 1ull) ? 1.0 : -1.0;
}

}  // namespace rltf
