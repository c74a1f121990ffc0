#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "lowrank/common.hpp"
#include "lowrank/recovery.hpp"

namespace lowrank {

struct TrialMetrics {
    double para_err = 0.0;
    double rank_err = 0.0;
    double nmse = 0.0;
};

/// Monte-Carlo aggregate. Aggregates are plain means of per_trial, summed in trial order.
struct MetricsReport {
    double para_est_err = 0.0;
    double rank_est_error = 0.0;
    double nmse = 0.0;
    double nmse_db = 0.0;
    int trials = 0;
    std::vector<TrialMetrics> per_trial;
    std::optional<std::vector<std::pair<long, double>>> excitation_trace;
};

inline constexpr double nmse_db_floor = -300.0;

inline double to_db(double nmse) {
    if (nmse <= 0.0)
        return nmse_db_floor;
    return std::max(nmse_db_floor, 10.0 * std::log10(nmse));
}

inline MetricsReport make_report(std::vector<TrialMetrics> per_trial) {
    detail::require(!per_trial.empty(), "metrics: no trials");
    MetricsReport r;
    r.trials = static_cast<int>(per_trial.size());
    for (const auto &t : per_trial) {
        r.para_est_err += t.para_err;
        r.rank_est_error += t.rank_err;
        r.nmse += t.nmse;
    }
    const double count = static_cast<double>(per_trial.size());
    r.para_est_err /= count;
    r.rank_est_error /= count;
    r.nmse /= count;
    r.nmse_db = to_db(r.nmse);
    r.per_trial = std::move(per_trial);
    return r;
}

/// (1/T) sum ||X_j - Theta||_F / ||Theta||_F
inline double para_est_err(std::span<const Matrix> estimates, const Matrix &theta) {
    const double norm = theta.norm();
    detail::require(norm > 0.0, "para_est_err: Theta must be nonzero");
    detail::require(!estimates.empty(), "para_est_err: no estimates");
    double acc = 0.0;
    for (const auto &x : estimates) {
        detail::require(x.rows() == theta.rows() && x.cols() == theta.cols(), "para_est_err: shape mismatch");
        acc += (x - theta).norm() / norm;
    }
    return acc / static_cast<double>(estimates.size());
}

/// (1/T) sum |r_j - r|
inline double rank_est_err(std::span<const int> ranks, int true_rank) {
    detail::require(!ranks.empty(), "rank_est_err: no estimates");
    double acc = 0.0;
    for (int r : ranks) {
        detail::require(r >= 0, "rank_est_err: negative rank");
        acc += std::abs(r - true_rank);
    }
    return acc / static_cast<double>(ranks.size());
}

struct NmseResult {
    double nmse = 0.0;
    double nmse_db = 0.0;
};

/// (1/T) sum ||H_j - H||^2 / ||H||^2, with the dB value clamped at -300.
template <class Mat>
NmseResult nmse(std::span<const Mat> estimates, const Mat &h) {
    const double ref = h.squaredNorm();
    detail::require(ref > 0.0, "nmse: reference channel must be nonzero");
    detail::require(!estimates.empty(), "nmse: no estimates");
    double acc = 0.0;
    for (const auto &e : estimates) {
        detail::require(e.rows() == h.rows() && e.cols() == h.cols(), "nmse: shape mismatch");
        acc += (e - h).squaredNorm() / ref;
    }
    NmseResult out;
    out.nmse = acc / static_cast<double>(estimates.size());
    out.nmse_db = to_db(out.nmse);
    return out;
}

/// Symmetric square root of a PSD matrix; eigenvalues down to -1e-12 (relative
/// to the largest) are clamped to zero.
inline Matrix psd_sqrt(const Matrix &m) {
    detail::require(m.rows() == m.cols(), "psd_sqrt: matrix must be square");
    const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
    detail::require((m - m.transpose()).cwiseAbs().maxCoeff() <= 1e-10 * scale, "psd_sqrt: matrix is not symmetric");
    Eigen::SelfAdjointEigenSolver<Matrix> eig(0.5 * (m + m.transpose()));
    if (eig.info() != Eigen::Success)
        throw numerical_error("psd_sqrt: eigendecomposition failed");
    Vector ev = eig.eigenvalues();
    const double floor = -1e-12 * std::max(1.0, ev.cwiseAbs().maxCoeff());
    if (ev.minCoeff() < floor)
        throw std::invalid_argument("psd_sqrt: matrix is indefinite");
    ev = ev.cwiseMax(0.0).cwiseSqrt();
    return eig.eigenvectors() * ev.asDiagonal() * eig.eigenvectors().transpose();
}

/// Kronecker product a (x) b.
inline Matrix kron(const Matrix &a, const Matrix &b) {
    Matrix out(a.rows() * b.rows(), a.cols() * b.cols());
    for (Index i = 0; i < a.rows(); ++i)
        for (Index j = 0; j < a.cols(); ++j)
            out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
    return out;
}

/// Column-stacking vec.
inline Vector vec(const Matrix &m) { return Eigen::Map<const Vector>(m.data(), m.size()); }

enum class NormalityMode { full_rank, low_rank };

struct NormalityPlan {
    NormalityMode mode = NormalityMode::full_rank;
    Matrix c_n;   ///< d x d scaling
    Matrix m_mat; ///< d x d limit matrix M (identity in full-rank mode)
    double sigma2 = 1.0;
    Matrix u1;    ///< leading r left singular vectors of Theta (low-rank mode)

    void validate() const {
        detail::require(c_n.rows() == c_n.cols() && c_n.rows() >= 1, "normality plan: C_N must be square");
        detail::require(c_n.allFinite(), "normality plan: C_N must be finite");
        detail::require(sigma2 > 0.0, "normality plan: sigma^2 must be positive");
        detail::require(m_mat.rows() == c_n.rows() && m_mat.cols() == c_n.cols(), "normality plan: M shape");
        if (mode == NormalityMode::low_rank) {
            detail::require(u1.rows() == c_n.rows() && u1.cols() >= 1, "normality plan: U1 shape");
            const Matrix gram = u1.transpose() * u1;
            detail::require((gram - Matrix::Identity(u1.cols(), u1.cols())).norm() <= 1e-8,
                            "normality plan: U1 must have orthonormal columns");
        }
    }

    /// sigma^2 I_dn (full rank) or sigma^2 I_n (x) M M^T (low rank).
    [[nodiscard]] Matrix theoretical_covariance(Index n) const {
        const Index d = c_n.rows();
        if (mode == NormalityMode::full_rank)
            return sigma2 * Matrix::Identity(d * n, d * n);
        return sigma2 * kron(Matrix::Identity(n, n), m_mat * m_mat.transpose());
    }
};

/// vec(C_N (X - Theta)) in full-rank mode; vec(C_N U1h U1h^T (X - Theta)) in low-rank mode,
/// where U1h holds the leading left singular vectors of the current estimate.
inline Vector normality_statistic(const Matrix &x, const Matrix &theta, const NormalityPlan &plan,
                                  const std::optional<Matrix> &u1_hat = std::nullopt) {
    detail::require(x.rows() == theta.rows() && x.cols() == theta.cols(), "normality_statistic: shape mismatch");
    detail::require(plan.c_n.rows() == x.rows(), "normality_statistic: C_N dimension mismatch");
    const Matrix diff = x - theta;
    if (plan.mode == NormalityMode::full_rank)
        return vec(plan.c_n * diff);
    if (!u1_hat)
        throw std::invalid_argument("normality_statistic: low-rank mode needs the estimated singular vectors");
    detail::require(u1_hat->rows() == x.rows(), "normality_statistic: U1 dimension mismatch");
    return vec(plan.c_n * (*u1_hat * (u1_hat->transpose() * diff)));
}

struct NormalityDiagnostic {
    Vector mean;
    Matrix empirical_cov;
    Matrix theoretical_cov;
    double cov_deviation = 0.0;  ///< ||emp - theory||_F / ||theory||_F
    double max_std_mean = 0.0;   ///< max_i |mean_i| / sqrt(theory_ii)
    std::size_t samples = 0;
};

inline constexpr std::size_t normality_min_samples = 100;

inline NormalityDiagnostic normality_check(std::span<const Vector> samples, const NormalityPlan &plan) {
    detail::require(samples.size() >= normality_min_samples, "normality_check: at least 100 samples are required");
    const Index dim = samples.front().size();
    const Index d = plan.c_n.rows();
    detail::require(dim % d == 0, "normality_check: sample length is not a multiple of d");
    for (const auto &s : samples)
        detail::require(s.size() == dim, "normality_check: ragged samples");

    NormalityDiagnostic out;
    out.samples = samples.size();
    out.mean = Vector::Zero(dim);
    for (const auto &s : samples)
        out.mean += s;
    out.mean /= static_cast<double>(samples.size());

    out.empirical_cov = Matrix::Zero(dim, dim);
    for (const auto &s : samples) {
        const Vector c = s - out.mean;
        out.empirical_cov.noalias() += c * c.transpose();
    }
    out.empirical_cov /= static_cast<double>(samples.size() - 1);

    out.theoretical_cov = plan.theoretical_covariance(dim / d);
    const double ref = out.theoretical_cov.norm();
    detail::require(ref > 0.0, "normality_check: zero theoretical covariance");
    out.cov_deviation = (out.empirical_cov - out.theoretical_cov).norm() / ref;

    for (Index i = 0; i < dim; ++i) {
        const double var = out.theoretical_cov(i, i);
        if (var > 1e-12 * ref)
            out.max_std_mean = std::max(out.max_std_mean, std::abs(out.mean(i)) / std::sqrt(var));
    }
    return out;
}

/// err * sqrt(lambda_min / ln lambda_max)
inline double rate_normalized(double err, const ExcitationStats &stats) {
    return err * std::sqrt(stats.lambda_min / std::log(stats.lambda_max));
}

struct ProbePoint {
    long n = 0;
    double err = 0.0;
    double normalized = 0.0;
};

/// Runs one trajectory, pulling pairs from `next_pair` (called with the step
/// index k = 1, 2, ...), and records ||X_N - Theta|| at each horizon in `grid`.
template <class Source>
    requires std::invocable<Source &, long>
std::vector<ProbePoint> error_rate_probe(Source &&next_pair, const Matrix &theta, const LambdaSchedule &schedule,
                                         double mu, std::span<const long> grid) {
    detail::require(!grid.empty(), "error_rate_probe: empty grid");
    for (std::size_t i = 0; i < grid.size(); ++i)
        detail::require(grid[i] >= 1 && (i == 0 || grid[i] > grid[i - 1]), "error_rate_probe: grid must be increasing");
    RlsState state = RlsState::create(theta.rows(), theta.cols(), mu);
    std::vector<ProbePoint> out;
    out.reserve(grid.size());
    long k = 0;
    for (long horizon : grid) {
        while (k < horizon) {
            ++k;
            const Observation obs = next_pair(k);
            state.update(obs.phi, obs.y);
        }
        const RecoveryOutput rec = recover(state, schedule);
        const double err = (rec.x - theta).norm();
        out.push_back({horizon, err, rate_normalized(err, rec.excitation)});
    }
    return out;
}

struct SvPerturbation {
    double lhs = 0.0; ///< sum (sigma_i(A) - sigma_i(B))^2
    double rhs = 0.0; ///< ||A - B||_F^2
};

inline SvPerturbation sv_perturbation(const Matrix &a, const Matrix &b) {
    detail::require(a.rows() == b.rows() && a.cols() == b.cols(), "sv_perturbation: shape mismatch");
    const Vector sa = Eigen::JacobiSVD<Matrix>(a).singularValues();
    const Vector sb = Eigen::JacobiSVD<Matrix>(b).singularValues();
    return {(sa - sb).squaredNorm(), (a - b).squaredNorm()};
}

/// sum (sigma_i(A) - sigma_i(B))^2 <= ||A - B||_F^2 + 1e-10
inline bool sv_perturbation_check(const Matrix &a, const Matrix &b) {
    const auto g = sv_perturbation(a, b);
    return g.lhs <= g.rhs + 1e-10;
}

class trial_error : public std::runtime_error {
  public:
    trial_error(std::size_t trial, const std::string &what)
        : std::runtime_error("trial " + std::to_string(trial) + ": " + what), trial_(trial) {}
    [[nodiscard]] std::size_t trial() const noexcept { return trial_; }

  private:
    std::size_t trial_;
};

/// Runs fn(trial_index, master_seed + trial_index) for every trial on up to
/// `jobs` threads. Results are stored by trial index, so the output does not
/// depend on scheduling. The failure with the lowest trial index is rethrown.
template <class Fn>
auto run_trials(std::size_t trials, Seed master_seed, unsigned jobs, Fn &&fn)
    -> std::vector<std::invoke_result_t<Fn &, std::size_t, Seed>> {
    using Result = std::invoke_result_t<Fn &, std::size_t, Seed>;
    detail::require(trials >= 1, "monte_carlo: trials must be >= 1");
    std::vector<std::optional<Result>> slots(trials);
    std::vector<std::exception_ptr> errors(trials);
    std::atomic<std::size_t> next{0};

    auto worker = [&] {
        for (std::size_t i = next++; i < trials; i = next++) {
            try {
                slots[i].emplace(fn(i, master_seed + static_cast<Seed>(i)));
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };

    const unsigned workers = std::max(1u, std::min<unsigned>(jobs, static_cast<unsigned>(trials)));
    if (workers == 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        pool.reserve(workers);
        for (unsigned w = 0; w < workers; ++w)
            pool.emplace_back(worker);
    }

    for (std::size_t i = 0; i < trials; ++i) {
        if (errors[i]) {
            try {
                std::rethrow_exception(errors[i]);
            } catch (const std::exception &e) {
                throw trial_error(i, e.what());
            } catch (...) {
                throw trial_error(i, "unknown failure");
            }
        }
    }
    std::vector<Result> out;
    out.reserve(trials);
    for (auto &s : slots)
        out.push_back(std::move(*s));
    return out;
}

/// Monte-Carlo campaign producing per-trial metrics.
template <class Fn>
MetricsReport monte_carlo(std::size_t trials, Seed master_seed, unsigned jobs, Fn &&trial_metrics) {
    return make_report(run_trials(trials, master_seed, jobs, std::forward<Fn>(trial_metrics)));
}

} // namespace lowrank
