#pragma once

#include <cstdint>
#include <random>

namespace contextclip {

// Seeded generator with a fixed, portable output sequence.
//
// The engine is std::mt19937_64, whose output is pinned by the standard. The
// library's own distribution helpers are used instead of <random>'s, which
// are implementation-defined:
//   uniform()  = (next() >> 11) * 2^-53, in [0, 1)
//   gaussian() = Box-Muller on (1 - uniform(), uniform()), cosine branch only
//   below(n)   = rejection sampling on next() so every residue is equally likely
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next() { return engine_(); }
    double uniform();
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    double gaussian();
    std::uint64_t below(std::uint64_t n);

  private:
    std::mt19937_64 engine_;
};

}  // namespace contextclip
