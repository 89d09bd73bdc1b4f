#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace g2l {

// splitmix64 finalizer; used to derive stream seeds.
uint64_t mix64(uint64_t x);

/// Deterministic, portable random source.
///
/// std::mt19937_64 has a fully specified algorithm, and every variate here is
/// derived from its raw 64-bit output without std::*_distribution (whose
/// algorithms are implementation-defined), so sequences are bit-reproducible
/// across compilers and platforms. Substreams are derived with splitmix64,
/// see Rng::stream. The scheme is documented in the README.
class Rng {
  public:
    explicit Rng(uint64_t seed) : gen_(seed) {}

    // Independent substream keyed by (root, a, b). Used for per-sample and
    // per-purpose streams so results do not depend on evaluation order.
    static Rng stream(uint64_t root, uint64_t a, uint64_t b = 0);

    uint64_t next_u64() { return gen_(); }

    // Uniform on the open interval (0,1): ((x >> 11) + 0.5) * 2^-53.
    // Never returns 0 or 1, so log(u) and log(-log(u)) are always finite.
    double uniform();

    // Standard normal via Box-Muller; the second variate is cached.
    double normal();

    // Gumbel(0,1): -log(-log(u)).
    double gumbel();

    // Uniform integer in [0, n), rejection sampling (no modulo bias).
    int uniform_int(int n);

    std::vector<double> normal_vec(size_t n, double mean = 0.0, double stddev = 1.0);
    std::vector<double> uniform_vec(size_t n, double lo, double hi);

  private:
    std::mt19937_64 gen_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace g2l
