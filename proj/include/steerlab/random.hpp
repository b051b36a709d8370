#pragma once

#include <cstdint>
#include <random>

namespace steerlab {

// Reproducible random source shared by sampling, corpus splitting and fixture
// construction. The engine is std::mt19937_64 (whose output sequence is fixed
// by the C++ standard); every derived quantity is computed here rather than
// through <random> distributions, whose algorithms are implementation-defined.
//
//   uniform_unit()     : (next_u64() >> 11) * 2^-53, in [0, 1)
//   uniform_index(n)   : rejection sampling, reject x < (2^64 - n) mod n,
//                        then x mod n
//   standard_normal()  : Box-Muller, one fresh pair of uniforms per call,
//                        using u1 = 1 - uniform_unit() to avoid log(0)
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }
    double uniform_unit();
    std::uint64_t uniform_index(std::uint64_t n);
    double standard_normal();

private:
    std::mt19937_64 engine_;
};

} // namespace steerlab
