#pragma once

// Seeded property suites behind `lowrank-online validate`. Each suite draws
// random cases and counts violations of one invariant.

#include <string>
#include <vector>

#include "lowrank/channel.hpp"
#include "lowrank/evaluation.hpp"
#include "lowrank/random.hpp"
#include "lowrank/recovery.hpp"

namespace lowrank {

struct SuiteResult {
    std::string name;
    int cases = 0;
    int violations = 0;
    double worst = 0.0; ///< suite-specific worst-case quantity

    [[nodiscard]] bool passed() const noexcept { return violations == 0; }
};

namespace detail {

inline Index draw_dim(Rng &rng, Index lo, Index hi) {
    return lo + static_cast<Index>(rng.next_u64() % static_cast<std::uint64_t>(hi - lo + 1));
}

/// 0.5 ||theta - x||_F^2 + lambda sum_i w_i sigma_i(x), evaluated from scratch.
inline double weighted_objective(const Matrix &theta, const Matrix &x, double lambda, const Vector &w) {
    const Vector s = Eigen::JacobiSVD<Matrix>(x).singularValues();
    double pen = 0.0;
    for (Index i = 0; i < s.size(); ++i)
        pen += w(i) * s(i);
    return 0.5 * (theta - x).squaredNorm() + lambda * pen;
}

} // namespace detail

/// Chained RLS updates against the closed-form regularized batch solution.
inline SuiteResult validate_recursion(Seed seed, int cases = 50) {
    SuiteResult res{"recursion_vs_batch"};
    Rng rng(seed);
    for (int c = 0; c < cases; ++c) {
        const Index n = detail::draw_dim(rng, 1, 10);
        const Index d = detail::draw_dim(rng, n, 20);
        const long steps = static_cast<long>(detail::draw_dim(rng, 1, 500));
        const double mu = rng.uniform(0.05, 0.95);
        const Matrix theta = rng.normal_matrix(d, n);
        RlsState state = RlsState::create(d, n, mu);
        std::vector<Observation> hist;
        for (long k = 0; k < steps; ++k) {
            Vector phi = rng.normal_vector(d);
            Vector y = theta.transpose() * phi + rng.normal_vector(n, 0.3);
            state.update(phi, y);
            hist.push_back({std::move(phi), std::move(y)});
        }
        const Matrix ref = batch_ls(hist, d, n, mu);
        const double rel = (state.theta() - ref).norm() / std::max(ref.norm(), 1e-300);
        res.worst = std::max(res.worst, rel);
        res.violations += rel > 1e-8 ? 1 : 0;
        ++res.cases;
    }
    return res;
}

/// The thresholded estimate is no worse than random perturbations of it.
inline SuiteResult validate_proximal(Seed seed, int cases = 50, int perturbations = 100) {
    SuiteResult res{"proximal_optimality"};
    Rng rng(seed);
    for (int c = 0; c < cases; ++c) {
        const Index n = detail::draw_dim(rng, 1, 5);
        const Index d = detail::draw_dim(rng, n, 8);
        const Matrix theta = rng.normal_matrix(d, n, 2.0);
        const SvdFactors svd = svd_descending(theta);
        const ExcitationStats stats{1.0, 1.0, rng.uniform(0.0, 1.0)};
        const WeightVector weights = adaptive_weights(svd.sigma, stats);
        const double lambda = rng.uniform(0.0, 3.0);
        const Matrix x = soft_threshold(svd, lambda, weights);
        const double j0 = detail::weighted_objective(theta, x, lambda, weights.w);
        for (int p = 0; p < perturbations; ++p) {
            const double scale = std::pow(10.0, rng.uniform(-4.0, 0.0));
            const Matrix delta = rng.normal_matrix(d, n, scale);
            const double j1 = detail::weighted_objective(theta, x + delta, lambda, weights.w);
            res.worst = std::max(res.worst, j0 - j1);
            res.violations += j0 > j1 + 1e-12 * std::max(1.0, std::abs(j0)) ? 1 : 0;
            ++res.cases;
        }
    }
    return res;
}

/// Rank estimate is nonincreasing in lambda and the weights are nondecreasing.
inline SuiteResult validate_monotonicity(Seed seed, int cases = 200) {
    SuiteResult res{"rank_and_weight_monotonicity"};
    Rng rng(seed);
    for (int c = 0; c < cases; ++c) {
        const Index n = detail::draw_dim(rng, 1, 6);
        const Index d = detail::draw_dim(rng, n, 10);
        const SvdFactors svd = svd_descending(rng.normal_matrix(d, n));
        const WeightVector weights = adaptive_weights(svd.sigma, {1.0, 1.0, rng.uniform(0.0, 2.0)});
        bool ok = true;
        for (Index i = 0; i + 1 < weights.w.size(); ++i)
            ok = ok && weights.w(i) <= weights.w(i + 1);
        int prev = static_cast<int>(n);
        for (double lambda = 0.0; lambda < 20.0; lambda += 0.25) {
            const int r = estimate_rank(svd.sigma, lambda, weights);
            ok = ok && r <= prev;
            prev = r;
        }
        res.violations += ok ? 0 : 1;
        ++res.cases;
    }
    return res;
}

/// sum (sigma_i(A) - sigma_i(B))^2 <= ||A - B||_F^2 on random pairs.
inline SuiteResult validate_sv_perturbation(Seed seed, int cases = 1000) {
    SuiteResult res{"sv_perturbation"};
    Rng rng(seed);
    for (int c = 0; c < cases; ++c) {
        const Index rows = detail::draw_dim(rng, 1, 8);
        const Index cols = detail::draw_dim(rng, 1, 8);
        const Matrix a = rng.normal_matrix(rows, cols);
        const Matrix b = a + rng.normal_matrix(rows, cols, std::pow(10.0, rng.uniform(-3.0, 1.0)));
        const SvPerturbation g = sv_perturbation(a, b);
        res.worst = std::max(res.worst, g.lhs - g.rhs);
        res.violations += sv_perturbation_check(a, b) ? 0 : 1;
        ++res.cases;
    }
    return res;
}

/// Real embedding reproduces the complex product and doubles the rank.
inline SuiteResult validate_realification(Seed seed, int cases = 100) {
    SuiteResult res{"realification"};
    Rng rng(seed);
    for (int c = 0; c < cases; ++c) {
        const Index n = detail::draw_dim(rng, 1, 6);
        const Index d = detail::draw_dim(rng, n, 10);
        const int r = static_cast<int>(detail::draw_dim(rng, 1, n));
        ComplexMatrix a(d, r), b(r, n);
        for (Index i = 0; i < a.size(); ++i)
            a(i) = rng.complex_normal();
        for (Index i = 0; i < b.size(); ++i)
            b(i) = rng.complex_normal();
        const ComplexMatrix h = a * b;
        ComplexVector x(d);
        for (Index i = 0; i < d; ++i)
            x(i) = rng.complex_normal();
        const ComplexVector y = h.adjoint() * x;
        const RealifiedPair rp = realify_system(x, y);
        const Matrix t = realify_matrix(h.adjoint());
        const double err = (t.transpose() * rp.phi - rp.y_real).norm() / std::max(rp.y_real.norm(), 1e-300);
        const ComplexEstimate back = extract_complex_estimate(t);
        const bool ok = err <= 1e-10 && numerical_rank(t) == 2 * r && back.complex_rank_est == r &&
                        (back.h_hat - h).norm() <= 1e-10 * h.norm();
        res.worst = std::max(res.worst, err);
        res.violations += ok ? 0 : 1;
        ++res.cases;
    }
    return res;
}

inline std::vector<SuiteResult> run_validation(Seed seed) {
    return {validate_recursion(derive_seed(seed, 1)), validate_proximal(derive_seed(seed, 2)),
            validate_monotonicity(derive_seed(seed, 3)), validate_sv_perturbation(derive_seed(seed, 4)),
            validate_realification(derive_seed(seed, 5))};
}

} // namespace lowrank
