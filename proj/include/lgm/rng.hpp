#pragma once

#include <cstdint>
#include <random>

namespace lgm {

/// Seedable normal/uniform source with reproducible streams.
///
/// Stream `k` of seed `s` seeds an mt19937_64 with splitmix64(s ^ splitmix64(k)),
/// so draw `k` of a parallel loop reproduces the serial result. Uniforms use the
/// top 53 bits of the engine output; normals use the Marsaglia polar method. Both
/// avoid the implementation-defined std distributions.
class Rng {
public:
    explicit Rng(std::uint64_t seed, std::uint64_t stream = 0);

    std::uint64_t next_u64() { return engine_(); }
    /// Uniform on the open interval (0, 1).
    double uniform();
    double normal();

private:
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

std::uint64_t splitmix64(std::uint64_t x);

}  // namespace lgm
