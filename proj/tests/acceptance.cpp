// Acceptance suite: one PASS/FAIL line per criterion. `acceptance --only N`
// runs a single criterion; the exit status is nonzero if any selected one fails.

#include <chrono>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "lowrank/experiment.hpp"

using namespace lowrank;

namespace {

struct Verdict {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char *f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

Index draw(Rng &rng, Index lo, Index hi) { return lo + static_cast<Index>(rng.next_u64() % static_cast<std::uint64_t>(hi - lo + 1)); }

// Regularized normal equations, solved with a pivoted QR on the explicitly
// accumulated system.
Matrix oracle_batch(const std::vector<Observation> &hist, Index d, Index n, double mu) {
    Matrix a = Matrix::Identity(d, d) / mu;
    Matrix b = Matrix::Zero(d, n);
    for (const auto &o : hist)
        for (Index i = 0; i < d; ++i) {
            for (Index j = 0; j < d; ++j)
                a(i, j) += o.phi(i) * o.phi(j);
            for (Index j = 0; j < n; ++j)
                b(i, j) += o.phi(i) * o.y(j);
        }
    return a.colPivHouseholderQr().solve(b);
}

// 0.5 ||theta - x||^2 + lambda sum w_i sigma_i(x)
double oracle_objective(const Matrix &theta, const Matrix &x, double lambda, const Vector &w) {
    const Vector s = Eigen::BDCSVD<Matrix>(x).singularValues();
    return 0.5 * (theta - x).squaredNorm() + lambda * w.dot(s);
}

std::string slurp(const std::filesystem::path &p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

// Table I at reduced trial count.
Verdict ac1() {
    const auto t0 = std::chrono::steady_clock::now();
    json raw{{"kind", "str"}, {"trials", 5}, {"horizon", 4000}, {"recover_stride", 4000}};
    raw["schedule"] = {{"variant", "power"}, {"alpha", -0.1}};
    const ExperimentConfig cfg = parse_config(raw);
    const CampaignResult res = run_campaign(cfg, std::max(1u, std::thread::hardware_concurrency()));
    const double secs = seconds_since(t0);
    const double pa = res.algorithm1.para_est_err, pr = res.rls_only.para_est_err;
    const double ra = res.algorithm1.rank_est_error, rr = res.rls_only.rank_est_error;
    const bool ok = ra == 0.0 && rr == 36.0 && pa < pr && pa >= 1.5e-4 && pa <= 1.5e-3 && secs <= 120.0;
    return {ok, fmt("RankEstError alg1=%g (want 0) rls=%g (want 36); ParaEstErr alg1=%.4e rls=%.4e (want alg1<rls, "
                    "alg1 in [1.5e-4,1.5e-3]); %.1fs",
                    ra, rr, pa, pr, secs)};
}

// Chained recursion against an independently solved batch problem.
Verdict ac2() {
    const auto t0 = std::chrono::steady_clock::now();
    Rng rng(derive_seed(2024, 2));
    double worst = 0.0;
    for (int c = 0; c < 50; ++c) {
        const Index n = draw(rng, 1, 10);
        const Index d = draw(rng, n, 20);
        const long steps = static_cast<long>(draw(rng, 1, 500));
        const double mu = rng.uniform(0.05, 0.95);
        const Matrix theta = rng.normal_matrix(d, n);
        RlsState s = rls_init(d, n, mu);
        std::vector<Observation> hist;
        for (long k = 0; k < steps; ++k) {
            Vector phi = rng.normal_vector(d, 2.0);
            Vector y = theta.transpose() * phi + rng.normal_vector(n, 0.5);
            s = rls_update(std::move(s), phi, y);
            hist.push_back({std::move(phi), std::move(y)});
        }
        const Matrix ref = oracle_batch(hist, d, n, mu);
        worst = std::max(worst, (s.theta() - ref).norm() / ref.norm());
    }
    const double secs = seconds_since(t0);
    return {worst <= 1e-8 && secs <= 10.0, fmt("worst relative error %.3e (<= 1e-8); %.2fs (<= 10s)", worst, secs)};
}

// Weighted thresholding output is never beaten by a random perturbation.
Verdict ac3() {
    Rng rng(derive_seed(2024, 3));
    int violations = 0, checks = 0;
    for (int c = 0; c < 50; ++c) {
        const Index n = draw(rng, 1, 5);
        const Index d = draw(rng, n, 8);
        const Matrix theta = rng.normal_matrix(d, n, 2.0);
        const SvdFactors f = svd_descending(theta);
        const WeightVector w = adaptive_weights(f.sigma, {1.0, 1.0, rng.uniform(0.0, 1.0)});
        const double lambda = rng.uniform(0.01, 3.0);
        const Matrix x = soft_threshold(f, lambda, w);
        const double j0 = oracle_objective(theta, x, lambda, w.w);
        for (int p = 0; p < 100; ++p) {
            const Matrix delta = rng.normal_matrix(d, n, std::pow(10.0, rng.uniform(-4.0, 0.0)));
            const double j1 = oracle_objective(theta, x + delta, lambda, w.w);
            violations += j0 > j1 + 1e-12 * std::max(1.0, j0) ? 1 : 0;
            ++checks;
        }
    }
    return {violations == 0, fmt("%d violations in %d perturbations", violations, checks)};
}

// Stationary-design trajectory used by the rank and decay criteria.
struct StationaryRun {
    LowRankTarget target;
    GaussianRegressors gen;
    Rng noise;
    explicit StationaryRun(Seed seed)
        : target(make_lowrank_target(12, 8, 3, 1.0, derive_seed(seed, 2))),
          gen(Matrix::Identity(12, 12), 0.0, derive_seed(seed, 1)), noise(derive_seed(seed, 3)) {}
    Observation next() {
        Vector phi = gen.next();
        Vector y = lowrank_observe(target.theta, phi, 0.5, noise);
        return {std::move(phi), std::move(y)};
    }
};

// Rank identified at every N in [2000, 8000].
Verdict ac4() {
    const long first = 2000, last = 8000;
    const auto outcomes = run_trials(20, 4000, std::max(1u, std::thread::hardware_concurrency()),
                                     [&](std::size_t, Seed seed) {
                                         StationaryRun run(seed);
                                         RlsState s = rls_init(12, 8, 0.5);
                                         int wrong = 0;
                                         for (long k = 1; k <= last; ++k) {
                                             const Observation o = run.next();
                                             s.update(o.phi, o.y);
                                             if (k >= first && recover(s, RatioPowerSchedule{0.25}).rank_est != 3)
                                                 ++wrong;
                                         }
                                         return wrong;
                                     });
    int good = 0;
    std::string misses;
    for (std::size_t i = 0; i < outcomes.size(); ++i) {
        if (outcomes[i] == 0)
            ++good;
        else
            misses += fmt(" trial%zu:%d", i, outcomes[i]);
    }
    return {good >= 19, fmt("%d/20 trials with r_hat=3 for every N in [2000,8000] (>= 19)%s", good, misses.c_str())};
}

// Error decreasing over the doubling grid; rate-normalized error bounded.
Verdict ac5() {
    StationaryRun run(5000);
    const std::vector<long> grid{500, 1000, 2000, 4000, 8000, 16000};
    const auto pts = error_rate_probe([&](long) { return run.next(); }, run.target.theta, RatioPowerSchedule{0.25},
                                      0.5, grid);
    bool decreasing = true;
    double lo = pts[0].normalized, hi = lo;
    std::string errs;
    for (std::size_t i = 0; i < pts.size(); ++i) {
        if (i > 0)
            decreasing = decreasing && pts[i].err < pts[i - 1].err;
        lo = std::min(lo, pts[i].normalized);
        hi = std::max(hi, pts[i].normalized);
        errs += fmt(" %.3g", pts[i].err);
    }
    return {decreasing && hi / lo <= 10.0,
            fmt("errors%s strictly decreasing=%s; normalized max/min=%.2f (<= 10)", errs.c_str(),
                decreasing ? "yes" : "no", hi / lo)};
}

CampaignResult normality_campaign(const std::string &mode) {
    const ExperimentConfig cfg = parse_config(
        json{{"kind", "normality"}, {"mode", mode}, {"trials", 400}, {"horizon", 2000}, {"recover_stride", 2000}});
    return run_campaign(cfg, std::max(1u, std::thread::hardware_concurrency()));
}

Verdict ac6() {
    const CampaignResult res = normality_campaign("full_rank");
    const auto &d = *res.normality;
    return {d.max_std_mean <= 0.1 && d.cov_deviation <= 0.2,
            fmt("max standardized mean %.3f (<= 0.1); covariance deviation %.3f (<= 0.2); T=%zu", d.max_std_mean,
                d.cov_deviation, d.samples)};
}

Verdict ac7() {
    const CampaignResult res = normality_campaign("low_rank");
    const auto &d = *res.normality;
    return {d.cov_deviation <= 0.25,
            fmt("covariance deviation %.3f (<= 0.25); T=%zu", d.cov_deviation, d.samples)};
}

Verdict ac8() {
    const ExperimentConfig cfg = parse_config(json{{"kind", "channel"}, {"trials", 20}, {"recover_stride", 256}});
    const CampaignResult res = run_campaign(cfg, std::max(1u, std::thread::hardware_concurrency()));
    int hits = 0;
    for (const auto &t : res.trials)
        hits += t.rank_algorithm1 == 1 ? 1 : 0;
    const double a = res.algorithm1.nmse_db, r = res.rls_only.nmse_db;
    return {a <= r - 3.0 && hits >= 18,
            fmt("NMSE alg1 %.2f dB vs rls %.2f dB (want gain >= 3 dB, got %.2f); complex rank 1 in %d/20 (>= 18)", a,
                r, r - a, hits)};
}

// Singular-value perturbation inequality on random pairs.
Verdict ac9() {
    Rng rng(derive_seed(2024, 9));
    int violations = 0;
    double worst = -INFINITY;
    for (int c = 0; c < 1000; ++c) {
        const Matrix a = rng.normal_matrix(8, 5, std::pow(10.0, rng.uniform(-1.0, 1.0)));
        const Matrix b = c % 2 == 0 ? Matrix(a + rng.normal_matrix(8, 5, std::pow(10.0, rng.uniform(-3.0, 0.0))))
                                    : rng.normal_matrix(8, 5);
        const Vector sa = Eigen::BDCSVD<Matrix>(a).singularValues();
        const Vector sb = Eigen::BDCSVD<Matrix>(b).singularValues();
        const double gap = (sa - sb).squaredNorm() - (a - b).squaredNorm();
        worst = std::max(worst, gap);
        const bool oracle_ok = gap <= 1e-10;
        const bool lib_ok = sv_perturbation_check(a, b);
        violations += (oracle_ok && lib_ok) ? 0 : 1;
    }
    return {violations == 0, fmt("%d violations in 1000 pairs; worst lhs-rhs %.3e", violations, worst)};
}

// Rerun from config.resolved.json, serial then parallel; summary bytes must match.
Verdict ac10() {
    const auto root = std::filesystem::temp_directory_path() / "lowrank_acceptance_ac10";
    std::filesystem::remove_all(root);
    std::string detail;
    bool ok = true;
    const std::vector<json> configs{
        json{{"kind", "str"}, {"trials", 3}, {"horizon", 1000}, {"seed", 7}},
        json{{"kind", "channel"}, {"trials", 4}, {"seed", 7}},
        json{{"kind", "synthetic"}, {"trials", 4}, {"horizon", 1500}, {"delta", 0.3}, {"seed", 7}},
        json{{"kind", "normality"}, {"trials", 100}, {"horizon", 500}, {"seed", 7}},
    };
    for (const auto &raw0 : configs) {
        json raw = raw0;
        const std::string kind = raw["kind"];
        raw["out"] = (root / (kind + "_serial")).string();
        const ExperimentConfig first = parse_config(raw);
        run_experiment(first, 1);
        json resolved = json::parse(slurp(root / (kind + "_serial") / "config.resolved.json"));
        resolved["out"] = (root / (kind + "_parallel")).string();
        run_experiment(parse_config(resolved), 4);
        const bool same = slurp(root / (kind + "_serial") / "summary.json") ==
                              slurp(root / (kind + "_parallel") / "summary.json") &&
                          slurp(root / (kind + "_serial") / "trace.csv") ==
                              slurp(root / (kind + "_parallel") / "trace.csv");
        ok = ok && same;
        detail += kind + (same ? "=identical " : "=DIFFERENT ");
    }
    std::filesystem::remove_all(root);
    return {ok, "summary.json/trace.csv serial vs parallel rerun: " + detail};
}

} // namespace

int main(int argc, char **argv) {
    int only = 0;
    for (int i = 1; i < argc; ++i) {
        if (std::strcmp(argv[i], "--only") == 0 && i + 1 < argc)
            only = std::atoi(argv[++i]);
        else {
            std::cerr << "usage: acceptance [--only N]\n";
            return 2;
        }
    }
    const std::vector<std::function<Verdict()>> criteria{ac1, ac2, ac3, ac4, ac5, ac6, ac7, ac8, ac9, ac10};
    if (only < 0 || only > static_cast<int>(criteria.size())) {
        std::cerr << "no criterion " << only << '\n';
        return 2;
    }
    int failures = 0;
    for (int i = 1; i <= static_cast<int>(criteria.size()); ++i) {
        if (only != 0 && i != only)
            continue;
        Verdict v;
        try {
            v = criteria[static_cast<std::size_t>(i - 1)]();
        } catch (const std::exception &e) {
            v = {false, std::string("exception: ") + e.what()};
        }
        std::cout << "AC" << i << (v.pass ? " PASS " : " FAIL ") << v.detail << std::endl;
        failures += v.pass ? 0 : 1;
    }
    return failures == 0 ? 0 : 1;
}
