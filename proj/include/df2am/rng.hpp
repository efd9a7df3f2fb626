#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace df2am {

// Portable random source: std::mt19937_64 (bit-exact across standard libraries)
// with hand-written distributions, since std:: distributions are implementation-defined.
//
// Stream splitting: Rng::derive(seed, stream) mixes (seed, stream) with splitmix64.
// Parallel workers use worker_seed(seed, i) = seed ^ i.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    static std::uint64_t derive(std::uint64_t seed, std::uint64_t stream);
    static std::uint64_t worker_seed(std::uint64_t seed, std::uint64_t worker) { return seed ^ worker; }

    std::uint64_t next() { return engine_(); }

    // Uniform in [0, 1) with 53 random bits.
    double uniform();
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n); n > 0. Rejection sampling, no modulo bias.
    std::uint64_t below(std::uint64_t n);

    // Standard normal via Box-Muller; the spare value is cached.
    double normal();

    bool bernoulli(double p) { return uniform() < p; }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace df2am
