#pragma once

// Regressor generators: a self-tuning-regulator closed loop (non-stationary),
// i.i.d. Gaussian designs and the time-growing-variance Gaussian design.

#include <vector>

#include "lowrank/common.hpp"
#include "lowrank/random.hpp"
#include "lowrank/recovery.hpp"

namespace lowrank {

/// Plant y_{k+1} + A1 y_k + A2 y_{k-1} = B1 u_k + B2 u_{k-1} + w_{k+1}
/// driven by a certainty-equivalence self-tuning regulator.
struct StrConfig {
    Index dim = 10;
    Matrix a1 = -1.7 * Matrix::Identity(10, 10);
    Matrix a2 = 0.7 * Matrix::Identity(10, 10);
    Matrix b1 = Matrix::Identity(10, 10);
    Matrix b2 = 0.5 * Matrix::Identity(10, 10);
    double noise_std = 0.5;
    double ref_amplitude = 10.0;
    long ref_period = 1000;
    double dither_halfwidth = 0.1;
    double eps_bar = 1.0 / 50.0;
    double regulator_mu = 0.5;
    /// Initial estimate of [-A1, -A2, B1, B2]^T; empty means B1 block = I, rest 0.
    Matrix regulator_prior;
    Seed seed = 1;

    static StrConfig with_dim(Index dim) {
        StrConfig c;
        const Matrix eye = Matrix::Identity(dim, dim);
        c.dim = dim;
        c.a1 = -1.7 * eye;
        c.a2 = 0.7 * eye;
        c.b1 = eye;
        c.b2 = 0.5 * eye;
        return c;
    }

    void validate() const {
        detail::require(dim >= 1, "str: dim must be >= 1");
        for (const Matrix *m : {&a1, &a2, &b1, &b2})
            detail::require(m->rows() == dim && m->cols() == dim, "str: plant matrices must be dim x dim");
        detail::require(noise_std >= 0.0, "str: noise_std must be >= 0");
        detail::require(ref_period >= 2 && ref_period % 2 == 0, "str: ref_period must be even and >= 2");
        detail::require(dither_halfwidth >= 0.0, "str: dither_halfwidth must be >= 0");
        detail::require(eps_bar >= 0.0, "str: eps_bar must be >= 0");
        detail::require(regulator_mu > 0.0, "str: regulator_mu must be positive");
        if (regulator_prior.size() != 0)
            detail::require(regulator_prior.rows() == 4 * dim && regulator_prior.cols() == dim,
                            "str: regulator prior must be 4dim x dim");
    }

    /// [-A1, -A2, B1, B2]^T
    [[nodiscard]] Matrix true_parameters() const {
        Matrix theta(4 * dim, dim);
        theta << -a1.transpose(), -a2.transpose(), b1.transpose(), b2.transpose();
        return theta;
    }
};

/// Square wave: +amplitude on the first half of each period (k = 1, ...), -amplitude on the second.
inline Vector reference_signal(const StrConfig &cfg, long k) {
    detail::require(k >= 1, "reference_signal: k must be >= 1");
    const long phase = (k - 1) % cfg.ref_period;
    const double level = phase < cfg.ref_period / 2 ? cfg.ref_amplitude : -cfg.ref_amplitude;
    return Vector::Constant(cfg.dim, level);
}

struct StrState {
    Vector y;      ///< y_k
    Vector y_prev; ///< y_{k-1}
    Vector u_prev; ///< u_{k-1}
    double r_sum = 1.0; ///< r_{k-1} = 1 + sum_{i<k} |phi_i|^2
    RlsState regulator;
    long step = 1; ///< k
};

struct StrSample {
    Vector phi;    ///< [y_k; y_{k-1}; u_k; u_{k-1}]
    Vector y_next; ///< y_{k+1}
};

/// Closed-loop simulator. The control law
///   u_k^0 = B1k^{-1} (y*_{k+1} + B1k u_k - Theta_k^T phi_k)
/// contains u_k on both sides; expanding Theta_k^T phi_k = -A1k y_k - A2k y_{k-1}
/// + B1k u_k + B2k u_{k-1} cancels the B1k u_k terms and leaves
///   u_k^0 = B1k^{-1} (y*_{k+1} + A1k y_k + A2k y_{k-1} - B2k u_{k-1}).
/// Initial conditions y_0 = y_1 = u_0 = 0.
class StrLoop {
  public:
    explicit StrLoop(StrConfig cfg) : cfg_(std::move(cfg)), rng_(cfg_.seed), state_(initial_state(cfg_)) {}

    StrSample step() {
        const Index m = cfg_.dim;
        const Matrix &est = state_.regulator.theta();
        const Matrix a1k = -est.topRows(m).transpose();
        const Matrix a2k = -est.middleRows(m, m).transpose();
        const Matrix b1k = est.middleRows(2 * m, m).transpose();
        const Matrix b2k = est.bottomRows(m).transpose();

        const Vector target = reference_signal(cfg_, state_.step + 1);
        const Vector rhs = target + a1k * state_.y + a2k * state_.y_prev - b2k * state_.u_prev;
        Vector u = solve_b1(b1k, rhs);

        Vector dither(m);
        for (Index i = 0; i < m; ++i)
            dither(i) = cfg_.dither_halfwidth > 0.0 ? rng_.uniform(-cfg_.dither_halfwidth, cfg_.dither_halfwidth) : 0.0;
        u += dither / std::pow(state_.r_sum, cfg_.eps_bar / 2.0);

        StrSample out;
        out.phi.resize(4 * m);
        out.phi << state_.y, state_.y_prev, u, state_.u_prev;

        Vector noise = Vector::Zero(m);
        if (cfg_.noise_std > 0.0)
            noise = rng_.normal_vector(m, cfg_.noise_std);
        out.y_next = -cfg_.a1 * state_.y - cfg_.a2 * state_.y_prev + cfg_.b1 * u + cfg_.b2 * state_.u_prev + noise;

        state_.regulator.update(out.phi, out.y_next);
        state_.r_sum += out.phi.squaredNorm();
        state_.y_prev = state_.y;
        state_.y = out.y_next;
        state_.u_prev = u;
        ++state_.step;
        return out;
    }

    [[nodiscard]] const StrState &state() const noexcept { return state_; }
    [[nodiscard]] const StrConfig &config() const noexcept { return cfg_; }

  private:
    static StrState initial_state(const StrConfig &cfg) {
        cfg.validate();
        const Index m = cfg.dim;
        Matrix prior = cfg.regulator_prior;
        if (prior.size() == 0) {
            prior = Matrix::Zero(4 * m, m);
            prior.middleRows(2 * m, m).setIdentity();
        }
        return StrState{Vector::Zero(m), Vector::Zero(m), Vector::Zero(m), 1.0,
                        RlsState::with_prior(std::move(prior), cfg.regulator_mu), 1};
    }

    /// Ridge fallback (B + 1e-6 I) when B1k is numerically singular.
    static Vector solve_b1(const Matrix &b1k, const Vector &rhs) {
        Eigen::JacobiSVD<Matrix> svd(b1k, Eigen::ComputeThinU | Eigen::ComputeThinV);
        const double smin = svd.singularValues().minCoeff();
        if (smin < 1e-8) {
            const Matrix reg = b1k + 1e-6 * Matrix::Identity(b1k.rows(), b1k.cols());
            return reg.fullPivLu().solve(rhs);
        }
        return svd.solve(rhs);
    }

    StrConfig cfg_;
    Rng rng_;
    StrState state_;
};

/// Theta = theta1 * theta2 with i.i.d. N(0, entry_std^2) factors.
struct LowRankTarget {
    Matrix theta;
    Matrix theta1;
    Matrix theta2;
    int r = 0;
    double entry_std = 2.0;
    Seed seed = 0;
};

inline LowRankTarget make_lowrank_target(Index d, Index n, int r, double entry_std, Seed seed) {
    detail::require(r >= 1, "lowrank target: r must be >= 1");
    detail::require(r <= std::min(d, n), "lowrank target: r must be <= min(d, n)");
    detail::require(entry_std > 0.0, "lowrank target: entry_std must be positive");
    Rng rng(seed);
    LowRankTarget t;
    t.r = r;
    t.entry_std = entry_std;
    t.seed = seed;
    t.theta1 = rng.normal_matrix(d, r, entry_std);
    t.theta2 = rng.normal_matrix(r, n, entry_std);
    t.theta = t.theta1 * t.theta2;
    if (numerical_rank(t.theta, 1e-8) != r)
        throw numerical_error("lowrank target: product does not have the requested rank");
    return t;
}

/// Theta^T phi + N(0, noise_std^2 I)
inline Vector lowrank_observe(const Matrix &theta, const Eigen::Ref<const Vector> &phi, double noise_std, Rng &rng) {
    detail::require(phi.size() == theta.rows(), "lowrank_observe: phi length mismatch");
    Vector y = theta.transpose() * phi;
    if (noise_std > 0.0)
        y += rng.normal_vector(theta.cols(), noise_std);
    return y;
}

/// Streaming N(0, k^delta cov) regressors; delta = 0 is the stationary design.
class GaussianRegressors {
  public:
    GaussianRegressors(const Matrix &cov, double delta, Seed seed) : delta_(delta), rng_(seed) {
        detail::require(cov.rows() == cov.cols() && cov.rows() >= 1, "regressors: covariance must be square");
        detail::require(delta >= 0.0 && delta < 1.0, "regressors: delta must lie in [0, 1)");
        detail::require(cov.isApprox(cov.transpose(), 1e-12), "regressors: covariance must be symmetric");
        Eigen::LLT<Matrix> llt(cov);
        if (llt.info() != Eigen::Success)
            throw std::invalid_argument("regressors: covariance is not positive definite");
        chol_ = llt.matrixL();
    }

    Vector next() {
        ++k_;
        Vector phi = chol_ * rng_.normal_vector(chol_.rows());
        if (delta_ > 0.0)
            phi *= std::pow(static_cast<double>(k_), delta_ / 2.0);
        return phi;
    }

  private:
    Matrix chol_;
    double delta_;
    Rng rng_;
    long k_ = 0;
};

inline std::vector<Vector> gen_stationary_regressors(Index d, const Matrix &cov, long count, Seed seed) {
    detail::require(cov.rows() == d, "gen_stationary_regressors: covariance dimension mismatch");
    detail::require(count >= 0, "gen_stationary_regressors: negative count");
    GaussianRegressors gen(cov, 0.0, seed);
    std::vector<Vector> out;
    out.reserve(static_cast<std::size_t>(count));
    for (long k = 0; k < count; ++k)
        out.push_back(gen.next());
    return out;
}

struct NonStatGaussianConfig {
    Index d = 1;
    double delta = 0.5;
    Matrix sigma_mat = Matrix::Identity(1, 1);
    Seed seed = 1;
};

/// phi_k ~ N(0, k^delta Sigma), independent across k.
inline std::vector<Vector> gen_nonstationary_gaussian(const NonStatGaussianConfig &cfg, long count) {
    detail::require(cfg.delta > 0.0 && cfg.delta < 1.0, "nonstationary design: delta must lie in (0, 1)");
    detail::require(cfg.sigma_mat.rows() == cfg.d, "nonstationary design: Sigma dimension mismatch");
    GaussianRegressors gen(cfg.sigma_mat, cfg.delta, cfg.seed);
    std::vector<Vector> out;
    out.reserve(static_cast<std::size_t>(count));
    for (long k = 0; k < count; ++k)
        out.push_back(gen.next());
    return out;
}

/// Toeplitz covariance rho^|i-j|.
inline Matrix toeplitz_covariance(Index d, double rho) {
    detail::require(rho > -1.0 && rho < 1.0, "toeplitz covariance: |rho| must be < 1");
    Matrix c(d, d);
    for (Index i = 0; i < d; ++i)
        for (Index j = 0; j < d; ++j)
            c(i, j) = std::pow(rho, static_cast<double>(std::abs(i - j)));
    return c;
}

} // namespace lowrank
