#pragma once

// Online low-rank parameter matrix recovery.
//
// First stage: recursive least squares for y_{k+1} = Theta^T phi_k + e_{k+1},
// with P_1 = mu I and Theta_1 = 0.
// Second stage: SVD of the LS estimate, adaptive weights
//   w_i = 1 / (sigma_i + sqrt(ln lambda_max / lambda_min)),
// weighted soft singular value thresholding and the rank scan.

#include <algorithm>
#include <cmath>
#include <concepts>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "lowrank/common.hpp"

namespace lowrank {

/// Extreme eigenvalues of S_N = sum phi phi^T + P_1^{-1} and the excitation
/// ratio ln(lambda_max) / lambda_min.
struct ExcitationStats {
    double lambda_max = 0.0;
    double lambda_min = 0.0;
    double ratio = 0.0;
};

/// Recursive least squares state: Theta_N, P_N and the observation count.
class RlsState {
  public:
    /// Theta_1 = 0, P_1 = mu I. Requires d >= n >= 1 and 0 < mu < 1.
    static RlsState create(Index d, Index n, double mu) {
        detail::require(n >= 1, "rls: n must be >= 1");
        detail::require(d >= n, "rls: d must be >= n (transpose the system instead)");
        detail::require(mu > 0.0 && mu < 1.0, "rls: mu must lie in (0, 1)");
        return RlsState(Matrix::Zero(d, n), mu);
    }

    /// Estimator with an arbitrary prior Theta_1 and any mu > 0. Used by the
    /// self-tuning regulator, whose estimator is not subject to d >= n.
    static RlsState with_prior(Matrix theta1, double mu) {
        detail::require(theta1.rows() >= 1 && theta1.cols() >= 1, "rls: empty prior");
        detail::require(mu > 0.0 && std::isfinite(mu), "rls: mu must be positive");
        detail::require_finite(theta1, "rls prior");
        return RlsState(std::move(theta1), mu);
    }

    /// One recursion step with regressor phi (length d) and output y (length n).
    void update(const Eigen::Ref<const Vector> &phi, const Eigen::Ref<const Vector> &y) {
        detail::require(phi.size() == dim(), "rls_update: phi length mismatch");
        detail::require(y.size() == outputs(), "rls_update: y length mismatch");
        detail::require_finite(phi, "phi");
        detail::require_finite(y, "y");

        const Vector p_phi = p_ * phi;
        const double denom = 1.0 + phi.dot(p_phi);
        if (!(denom > 0.0) || !std::isfinite(denom))
            throw numerical_error("rls_update: 1 + phi^T P phi is not positive; P lost definiteness");
        const double a = 1.0 / denom;

        const Vector innovation = y - theta_.transpose() * phi;
        theta_.noalias() += a * p_phi * innovation.transpose();
        p_.noalias() -= a * p_phi * p_phi.transpose();
        p_ = 0.5 * (p_ + p_.transpose()).eval();
        ++n_obs_;
    }

    /// lambda_max(S) = 1/lambda_min(P), lambda_min(S) = 1/lambda_max(P).
    [[nodiscard]] ExcitationStats excitation() const {
        Eigen::SelfAdjointEigenSolver<Matrix> eig(p_, Eigen::EigenvaluesOnly);
        if (eig.info() != Eigen::Success)
            throw numerical_error("excitation_stats: eigendecomposition of P failed");
        const double p_min = eig.eigenvalues().minCoeff();
        const double p_max = eig.eigenvalues().maxCoeff();
        if (!(p_min > 0.0))
            throw numerical_error("excitation_stats: P has a non-positive eigenvalue");
        ExcitationStats s;
        s.lambda_max = 1.0 / p_min;
        s.lambda_min = 1.0 / p_max;
        s.ratio = std::log(s.lambda_max) / s.lambda_min;
        return s;
    }

    [[nodiscard]] const Matrix &theta() const noexcept { return theta_; }
    [[nodiscard]] const Matrix &p() const noexcept { return p_; }
    [[nodiscard]] double mu() const noexcept { return mu_; }
    [[nodiscard]] long n_obs() const noexcept { return n_obs_; }
    [[nodiscard]] Index dim() const noexcept { return theta_.rows(); }
    [[nodiscard]] Index outputs() const noexcept { return theta_.cols(); }

  private:
    RlsState(Matrix theta1, double mu)
        : theta_(std::move(theta1)), p_(mu * Matrix::Identity(theta_.rows(), theta_.rows())),
          mu_(mu) {}

    Matrix theta_;
    Matrix p_;
    double mu_;
    long n_obs_ = 0;
};

inline RlsState rls_init(Index d, Index n, double mu) { return RlsState::create(d, n, mu); }

inline RlsState rls_update(RlsState state, const Eigen::Ref<const Vector> &phi,
                           const Eigen::Ref<const Vector> &y) {
    state.update(phi, y);
    return state;
}

inline ExcitationStats excitation_stats(const RlsState &state) { return state.excitation(); }

/// One regressor/output pair.
struct Observation {
    Vector phi;
    Vector y;
};

/// Closed form of the recursion from Theta_1 = 0:
/// (sum phi phi^T + mu^{-1} I)^{-1} (sum phi y^T).
inline Matrix batch_ls(std::span<const Observation> history, Index d, Index n, double mu) {
    detail::require(d >= 1 && n >= 1, "batch_ls: dimensions must be positive");
    detail::require(mu > 0.0, "batch_ls: mu must be positive");
    Matrix gram = Matrix::Identity(d, d) / mu;
    Matrix cross = Matrix::Zero(d, n);
    for (const auto &obs : history) {
        detail::require(obs.phi.size() == d && obs.y.size() == n, "batch_ls: shape mismatch");
        detail::require_finite(obs.phi, "phi");
        detail::require_finite(obs.y, "y");
        gram.noalias() += obs.phi * obs.phi.transpose();
        cross.noalias() += obs.phi * obs.y.transpose();
    }
    return gram.ldlt().solve(cross);
}

/// Full SVD m = U [diag(sigma); 0] V^T with sigma sorted descending.
struct SvdFactors {
    Matrix u;
    Vector sigma;
    Matrix v;

    [[nodiscard]] Matrix reconstruct(const Vector &values) const {
        const Index n = v.rows();
        return u.leftCols(n) * values.asDiagonal() * v.transpose();
    }
};

inline SvdFactors svd_descending(const Matrix &m) {
    detail::require(m.rows() >= m.cols() && m.cols() >= 1, "svd: requires rows >= cols >= 1");
    detail::require_finite(m, "svd input");
    Eigen::JacobiSVD<Matrix> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
    if (svd.info() != Eigen::Success)
        throw numerical_error("svd: decomposition did not converge");
    // Eigen returns singular values in decreasing order.
    return SvdFactors{svd.matrixU(), svd.singularValues(), svd.matrixV()};
}

/// Count of singular values above rel_tol * sigma_1 (0 for the zero matrix).
inline int numerical_rank(const Vector &sigma, double rel_tol = 1e-10) {
    if (sigma.size() == 0 || sigma(0) <= 0.0)
        return 0;
    const double cut = rel_tol * sigma(0);
    return static_cast<int>((sigma.array() > cut).count());
}

inline int numerical_rank(const Matrix &m, double rel_tol = 1e-10) {
    const Matrix tall = m.rows() >= m.cols() ? m : Matrix(m.transpose());
    return numerical_rank(Vector(Eigen::JacobiSVD<Matrix>(tall).singularValues()), rel_tol);
}

namespace detail {

inline void require_descending(const Vector &sigma, const char *who) {
    for (Index i = 0; i + 1 < sigma.size(); ++i)
        if (sigma(i) < sigma(i + 1))
            throw std::invalid_argument(std::string(who) + ": singular values must be descending");
}

inline void require_nondecreasing(const Vector &w, const char *who) {
    for (Index i = 0; i + 1 < w.size(); ++i)
        if (w(i) > w(i + 1))
            throw std::invalid_argument(std::string(who) + ": weights must be nondecreasing");
}

} // namespace detail

struct WeightVector {
    Vector sigma_hat;
    Vector w;
};

/// sigma_hat_i = sigma_i + sqrt(ratio), w_i = 1 / sigma_hat_i.
inline WeightVector adaptive_weights(const Vector &sigma, const ExcitationStats &stats) {
    detail::require_descending(sigma, "adaptive_weights");
    detail::require(stats.ratio >= 0.0 && std::isfinite(stats.ratio),
                    "adaptive_weights: excitation ratio must be finite and >= 0");
    detail::require((sigma.array() >= 0.0).all(), "adaptive_weights: negative singular value");
    const double shift = std::sqrt(stats.ratio);
    WeightVector out;
    out.sigma_hat = sigma.array() + shift;
    if ((out.sigma_hat.array() <= 0.0).any())
        throw degenerate_error("adaptive_weights: zero singular value with zero excitation ratio");
    out.w = out.sigma_hat.cwiseInverse();
    return out;
}

/// max(sigma_i - lambda w_i, 0)
inline Vector thresholded_values(const Vector &sigma, double lambda, const Vector &w) {
    detail::require(sigma.size() == w.size(), "threshold: length mismatch");
    return (sigma.array() - lambda * w.array()).max(0.0).matrix();
}

/// Weighted soft singular value thresholding U S_{lambda w}(Sigma) V^T, the
/// global minimizer of 0.5 ||Theta - X||^2 + lambda sum w_i sigma_i(X) for
/// nondecreasing weights.
inline Matrix soft_threshold(const SvdFactors &svd, double lambda, const WeightVector &weights) {
    detail::require(lambda >= 0.0 && std::isfinite(lambda), "soft_threshold: lambda must be >= 0");
    detail::require_nondecreasing(weights.w, "soft_threshold");
    return svd.reconstruct(thresholded_values(svd.sigma, lambda, weights.w));
}

/// Largest i with sigma_j >= lambda w_j for all j <= i; the scan stops at the
/// first failing index.
inline int estimate_rank(const Vector &sigma, double lambda, const WeightVector &weights) {
    detail::require(sigma.size() == weights.w.size(), "estimate_rank: length mismatch");
    detail::require_descending(sigma, "estimate_rank");
    int r = 0;
    for (Index j = 0; j < sigma.size(); ++j) {
        if (!(sigma(j) >= lambda * weights.w(j)))
            break;
        ++r;
    }
    return r;
}

/// lambda_N = N^alpha
struct PowerSchedule {
    double alpha = -0.1;
};

/// lambda_N = (ln lambda_max / lambda_min)^(1/2 + eps), 0 < eps < 1/2
struct RatioPowerSchedule {
    double eps = 0.25;
};

using LambdaSchedule = std::variant<PowerSchedule, RatioPowerSchedule>;

inline void validate_schedule(const LambdaSchedule &schedule) {
    if (const auto *p = std::get_if<PowerSchedule>(&schedule))
        detail::require(std::isfinite(p->alpha), "schedule: alpha must be finite");
    else {
        const double eps = std::get<RatioPowerSchedule>(schedule).eps;
        detail::require(eps > 0.0 && eps < 0.5, "schedule: eps must lie in (0, 1/2)");
    }
}

inline double schedule_eval(const LambdaSchedule &schedule, long n_obs, const ExcitationStats &stats) {
    detail::require(n_obs >= 1, "schedule_eval: N must be >= 1");
    validate_schedule(schedule);
    double lambda = 0.0;
    if (const auto *p = std::get_if<PowerSchedule>(&schedule)) {
        lambda = std::pow(static_cast<double>(n_obs), p->alpha);
    } else {
        if (!(stats.ratio > 0.0))
            throw degenerate_error("schedule_eval: ratio-power schedule with zero excitation ratio");
        lambda = std::pow(stats.ratio, 0.5 + std::get<RatioPowerSchedule>(schedule).eps);
    }
    if (!(lambda > 0.0) || !std::isfinite(lambda))
        throw degenerate_error("schedule_eval: lambda is not a positive finite number");
    return lambda;
}

/// Result of the second stage at one horizon.
struct RecoveryOutput {
    Matrix x;
    int rank_est = 0;
    SvdFactors svd; ///< SVD of the first-stage estimate
    Vector sigma_thresholded;
    WeightVector weights;
    double lambda_used = 0.0;
    ExcitationStats excitation;
};

/// Second stage from an explicit first-stage estimate and its excitation.
inline RecoveryOutput recover_from(const Matrix &theta, const ExcitationStats &stats, long n_obs,
                                   const LambdaSchedule &schedule) {
    RecoveryOutput out;
    out.excitation = stats;
    out.svd = svd_descending(theta);
    out.weights = adaptive_weights(out.svd.sigma, stats);
    out.lambda_used = schedule_eval(schedule, n_obs, stats);
    out.sigma_thresholded = thresholded_values(out.svd.sigma, out.lambda_used, out.weights.w);
    out.x = out.svd.reconstruct(out.sigma_thresholded);
    out.rank_est = estimate_rank(out.svd.sigma, out.lambda_used, out.weights);
    return out;
}

/// Anything that can feed the second stage. RlsState is the shipped model.
template <class T>
concept FirstStageEstimator = requires(const T &t) {
    { t.theta() } -> std::convertible_to<const Matrix &>;
    { t.n_obs() } -> std::convertible_to<long>;
    { t.excitation() } -> std::same_as<ExcitationStats>;
};

template <FirstStageEstimator Stage>
RecoveryOutput recover(const Stage &stage, const LambdaSchedule &schedule) {
    detail::require(stage.n_obs() >= 1, "recover: at least one observation is required");
    return recover_from(stage.theta(), stage.excitation(), stage.n_obs(), schedule);
}

} // namespace lowrank
