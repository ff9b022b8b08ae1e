#pragma once

#include <cstdint>

namespace facefit {

// xoshiro256** with splitmix64 seeding. Self-contained so that sampled
// streams are reproducible across standard libraries.
class Rng {
public:
    explicit Rng(uint64_t seed);

    uint64_t next_u64();
    double uniform();                       // [0, 1)
    double uniform(double lo, double hi);
    double normal();                        // standard normal (polar method)
    double normal(double mu, double sigma);
    int64_t uniform_int(int64_t n);         // [0, n)

    // Independent child stream keyed by a tag.
    Rng fork(uint64_t tag) const;

private:
    uint64_t s_[4];
    bool have_spare_ = false;
    double spare_ = 0.0;
};

} // namespace facefit
