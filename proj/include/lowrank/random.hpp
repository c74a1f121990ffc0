#pragma once

#include <cstdint>
#include <random>

#include "lowrank/common.hpp"

namespace lowrank {

/// splitmix64 finalizer; mixes a seed with a stream tag so that independent
/// sub-streams of one trial never share an engine state.
constexpr Seed derive_seed(Seed seed, std::uint64_t stream) noexcept {
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

class Rng {
  public:
    explicit Rng(Seed seed) : engine_(seed) {}

    double normal() { return normal_(engine_); }
    double uniform(double lo, double hi) {
        return std::uniform_real_distribution<double>(lo, hi)(engine_);
    }
    std::uint64_t next_u64() { return engine_(); }

    Vector normal_vector(Index n, double std_dev = 1.0) {
        Vector v(n);
        for (Index i = 0; i < n; ++i)
            v(i) = std_dev * normal();
        return v;
    }

    Matrix normal_matrix(Index rows, Index cols, double std_dev = 1.0) {
        Matrix m(rows, cols);
        // column-major fill; the draw order is part of the reproducibility contract
        for (Index j = 0; j < cols; ++j)
            for (Index i = 0; i < rows; ++i)
                m(i, j) = std_dev * normal();
        return m;
    }

    /// Circularly-symmetric complex Gaussian with E|z|^2 = variance.
    std::complex<double> complex_normal(double variance = 1.0) {
        const double s = std::sqrt(variance / 2.0);
        const double re = s * normal();
        const double im = s * normal();
        return {re, im};
    }

  private:
    std::mt19937_64 engine_;
    std::normal_distribution<double> normal_{0.0, 1.0};
};

} // namespace lowrank
