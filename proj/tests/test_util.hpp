#pragma once

#include <cstdint>

#include "mbmpc/types.hpp"

namespace mbmpc::test {

/// Tiny deterministic generator for reproducible pseudo-random test data
/// (SplitMix64). Tests stay seedless from the user's point of view: every
/// run draws the same values.
class DetRng {
  public:
    explicit DetRng(std::uint64_t seed = 0x9e3779b97f4a7c15ull) : state_(seed) {}

    double uniform(double lo, double hi) {
        state_ += 0x9e3779b97f4a7c15ull;
        std::uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        z ^= z >> 31;
        const double t = static_cast<double>(z >> 11) * 0x1.0p-53;
        return lo + t * (hi - lo);
    }

    Vector vector(int dim, double lo, double hi) {
        Vector v(dim);
        for (int i = 0; i < dim; ++i) v[i] = uniform(lo, hi);
        return v;
    }

  private:
    std::uint64_t state_;
};

}  // namespace mbmpc::test
