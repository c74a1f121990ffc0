#pragma once

// Experiment campaigns: configuration (JSON with dotted overrides), per-trial
// runners for each experiment kind, and the on-disk artifacts.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "lowrank/channel.hpp"
#include "lowrank/datagen.hpp"
#include "lowrank/evaluation.hpp"
#include "lowrank/random.hpp"
#include "lowrank/recovery.hpp"

namespace lowrank {

using json = nlohmann::json;

class config_error : public std::invalid_argument {
  public:
    using std::invalid_argument::invalid_argument;
};

enum class ExperimentKind { str, channel, synthetic, normality };

inline std::string to_string(ExperimentKind k) {
    switch (k) {
    case ExperimentKind::str: return "str";
    case ExperimentKind::channel: return "channel";
    case ExperimentKind::synthetic: return "synthetic";
    case ExperimentKind::normality: return "normality";
    }
    return "?";
}

inline std::string to_string(NormalityMode m) { return m == NormalityMode::full_rank ? "full_rank" : "low_rank"; }

struct StrParams {
    Index dim = 10;
    Index n = 40;
    int r = 4;
    double entry_std = 2.0;
    double obs_noise_std = std::sqrt(0.5);
    double plant_noise_std = 0.5;
    double ref_amplitude = 10.0;
    long ref_period = 1000;
    double dither_halfwidth = 0.1;
    double eps_bar = 1.0 / 50.0;
    double regulator_mu = 0.5;
};

struct ChannelParams {
    Index d = 64;
    Index n = 16;
    int num_paths = 4;
    double snr_db = 10.0;
    double carrier_hz = 28e9;
    double subcarrier_spacing_hz = 1e6;
    double distance_m = 30.0;
    std::string bits_file;
};

/// Gaussian regressors N(0, k^delta T(rho)), T(rho)_ij = rho^|i-j|; delta = 0 is stationary.
struct SyntheticParams {
    Index d = 12;
    Index n = 8;
    int r = 3;
    double entry_std = 1.0;
    double noise_std = 0.5;
    double rho = 0.0;
    double delta = 0.0;
};

struct NormalityParams {
    NormalityMode mode = NormalityMode::full_rank;
    Index d = 4;
    Index n = 2;
    int r = 2;
    double noise_std = 1.0;
    double entry_std = 1.0;
    double rho = 0.0;

    static NormalityParams defaults(NormalityMode mode) {
        NormalityParams p;
        p.mode = mode;
        if (mode == NormalityMode::low_rank) {
            p.d = 6;
            p.n = 4;
            p.r = 2;
            p.rho = 0.5;
        }
        return p;
    }
};

struct ExperimentConfig {
    ExperimentKind kind = ExperimentKind::str;
    int trials = 20;
    long horizon = 4000;
    LambdaSchedule schedule = PowerSchedule{-0.1};
    double mu = 0.5;
    Seed seed = 1;
    long recover_stride = 10;
    std::string out_dir = "out";
    StrParams str;
    ChannelParams channel;
    SyntheticParams synthetic;
    NormalityParams normality;

    static ExperimentConfig defaults(ExperimentKind kind) {
        ExperimentConfig c;
        c.kind = kind;
        switch (kind) {
        case ExperimentKind::str: break;
        case ExperimentKind::channel:
            c.horizon = 256;
            c.schedule = PowerSchedule{0.5};
            break;
        case ExperimentKind::synthetic:
            c.schedule = RatioPowerSchedule{0.25};
            break;
        case ExperimentKind::normality:
            c.trials = 400;
            c.horizon = 2000;
            c.schedule = RatioPowerSchedule{0.45};
            break;
        }
        return c;
    }
};

// ---------------------------------------------------------------------------
// JSON <-> config

namespace detail {

/// Reads keys of one JSON object with key-path aware errors and tracks which
/// keys were consumed so that leftovers can be reported as unknown.
class KeyReader {
  public:
    KeyReader(const json &obj, std::string prefix) : obj_(obj), prefix_(std::move(prefix)) {
        if (!obj_.is_object())
            throw config_error(path("") + ": expected a JSON object");
    }

    template <class T>
    void read(const std::string &key, T &dst) {
        used_.insert(key);
        auto it = obj_.find(key);
        if (it == obj_.end())
            return;
        try {
            if constexpr (std::is_same_v<T, double>) {
                if (!it->is_number())
                    throw config_error("expected a number");
                dst = it->template get<double>();
            } else if constexpr (std::is_integral_v<T>) {
                if (!it->is_number_integer() && !it->is_number_unsigned())
                    throw config_error("expected an integer");
                dst = it->template get<T>();
            } else if constexpr (std::is_same_v<T, std::string>) {
                if (!it->is_string())
                    throw config_error("expected a string");
                dst = it->template get<std::string>();
            } else {
                static_assert(sizeof(T) == 0, "unsupported config type");
            }
        } catch (const config_error &e) {
            throw config_error(path(key) + ": " + e.what());
        }
    }

    void mark(const std::string &key) { used_.insert(key); }

    void finish() const {
        for (auto it = obj_.begin(); it != obj_.end(); ++it)
            if (!used_.contains(it.key()))
                throw config_error(path(it.key()) + ": unknown key");
    }

    [[nodiscard]] std::string path(const std::string &key) const {
        if (prefix_.empty())
            return key;
        return key.empty() ? prefix_ : prefix_ + "." + key;
    }

  private:
    const json &obj_;
    std::string prefix_;
    std::set<std::string> used_;
};

inline void check(bool ok, const std::string &key, const std::string &what) {
    if (!ok)
        throw config_error(key + ": " + what);
}

inline ExperimentKind parse_kind(const json &j) {
    if (!j.contains("kind"))
        throw config_error("kind: missing (expected one of str, channel, synthetic, normality)");
    if (!j["kind"].is_string())
        throw config_error("kind: expected a string");
    const auto s = j["kind"].get<std::string>();
    if (s == "str") return ExperimentKind::str;
    if (s == "channel") return ExperimentKind::channel;
    if (s == "synthetic") return ExperimentKind::synthetic;
    if (s == "normality") return ExperimentKind::normality;
    throw config_error("kind: unknown experiment kind '" + s + "'");
}

inline LambdaSchedule parse_schedule(const json &j, const LambdaSchedule &fallback) {
    KeyReader r(j, "schedule");
    std::string variant = std::holds_alternative<PowerSchedule>(fallback) ? "power" : "ratio_power";
    r.read("variant", variant);
    LambdaSchedule out;
    if (variant == "power") {
        PowerSchedule p = std::holds_alternative<PowerSchedule>(fallback) ? std::get<PowerSchedule>(fallback) : PowerSchedule{};
        r.read("alpha", p.alpha);
        check(std::isfinite(p.alpha), "schedule.alpha", "must be finite");
        out = p;
    } else if (variant == "ratio_power") {
        RatioPowerSchedule p = std::holds_alternative<RatioPowerSchedule>(fallback)
                                   ? std::get<RatioPowerSchedule>(fallback)
                                   : RatioPowerSchedule{};
        r.read("eps", p.eps);
        check(p.eps > 0.0 && p.eps < 0.5, "schedule.eps", "must lie in (0, 0.5)");
        out = p;
    } else {
        throw config_error("schedule.variant: expected 'power' or 'ratio_power', got '" + variant + "'");
    }
    r.finish();
    return out;
}

inline json schedule_to_json(const LambdaSchedule &s) {
    if (const auto *p = std::get_if<PowerSchedule>(&s))
        return json{{"variant", "power"}, {"alpha", p->alpha}};
    return json{{"variant", "ratio_power"}, {"eps", std::get<RatioPowerSchedule>(s).eps}};
}

} // namespace detail

/// Validates a raw JSON config and fills every missing field with the defaults
/// of its experiment kind. Errors name the offending key path.
inline ExperimentConfig parse_config(const json &raw) {
    using detail::check;
    const ExperimentKind kind = detail::parse_kind(raw);
    ExperimentConfig c = ExperimentConfig::defaults(kind);
    detail::KeyReader r(raw, "");
    r.mark("kind");
    r.read("trials", c.trials);
    r.read("horizon", c.horizon);
    r.read("mu", c.mu);
    r.read("seed", c.seed);
    r.read("recover_stride", c.recover_stride);
    r.read("out", c.out_dir);
    r.mark("schedule");
    if (raw.contains("schedule"))
        c.schedule = detail::parse_schedule(raw["schedule"], c.schedule);

    check(c.trials >= 1, "trials", "must be >= 1");
    check(c.horizon >= 1, "horizon", "must be >= 1");
    check(c.mu > 0.0 && c.mu < 1.0, "mu", "must lie in (0, 1)");
    check(c.recover_stride >= 1, "recover_stride", "must be >= 1");

    switch (kind) {
    case ExperimentKind::str: {
        auto &p = c.str;
        r.read("dim", p.dim);
        r.read("n", p.n);
        r.read("r", p.r);
        r.read("entry_std", p.entry_std);
        r.read("obs_noise_std", p.obs_noise_std);
        r.read("plant_noise_std", p.plant_noise_std);
        r.read("ref_amplitude", p.ref_amplitude);
        r.read("ref_period", p.ref_period);
        r.read("dither_halfwidth", p.dither_halfwidth);
        r.read("eps_bar", p.eps_bar);
        r.read("regulator_mu", p.regulator_mu);
        check(p.dim >= 1, "dim", "must be >= 1");
        check(p.n >= 1 && p.n <= 4 * p.dim, "n", "must lie in [1, 4*dim]");
        check(p.r >= 1 && p.r <= p.n, "r", "must lie in [1, n]");
        check(p.entry_std > 0.0, "entry_std", "must be positive");
        check(p.obs_noise_std >= 0.0, "obs_noise_std", "must be >= 0");
        check(p.plant_noise_std >= 0.0, "plant_noise_std", "must be >= 0");
        check(p.ref_period >= 2 && p.ref_period % 2 == 0, "ref_period", "must be even and >= 2");
        check(p.dither_halfwidth >= 0.0, "dither_halfwidth", "must be >= 0");
        check(p.eps_bar >= 0.0, "eps_bar", "must be >= 0");
        check(p.regulator_mu > 0.0, "regulator_mu", "must be positive");
        break;
    }
    case ExperimentKind::channel: {
        auto &p = c.channel;
        r.read("d", p.d);
        r.read("n", p.n);
        r.read("num_paths", p.num_paths);
        r.read("snr_db", p.snr_db);
        r.read("carrier_hz", p.carrier_hz);
        r.read("subcarrier_spacing_hz", p.subcarrier_spacing_hz);
        r.read("distance_m", p.distance_m);
        r.read("bits_file", p.bits_file);
        check(p.n >= 1 && p.d >= p.n, "d", "must satisfy d >= n >= 1");
        check(p.num_paths >= 1, "num_paths", "must be >= 1");
        check(std::isfinite(p.snr_db), "snr_db", "must be finite");
        check(p.carrier_hz > 0.0, "carrier_hz", "must be positive");
        check(p.subcarrier_spacing_hz > 0.0, "subcarrier_spacing_hz", "must be positive");
        check(p.distance_m > 0.0, "distance_m", "must be positive");
        break;
    }
    case ExperimentKind::synthetic: {
        auto &p = c.synthetic;
        r.read("d", p.d);
        r.read("n", p.n);
        r.read("r", p.r);
        r.read("entry_std", p.entry_std);
        r.read("noise_std", p.noise_std);
        r.read("rho", p.rho);
        r.read("delta", p.delta);
        check(p.n >= 1 && p.d >= p.n, "d", "must satisfy d >= n >= 1");
        check(p.r >= 1 && p.r <= p.n, "r", "must lie in [1, n]");
        check(p.entry_std > 0.0, "entry_std", "must be positive");
        check(p.noise_std >= 0.0, "noise_std", "must be >= 0");
        check(p.rho > -1.0 && p.rho < 1.0, "rho", "must lie in (-1, 1)");
        check(p.delta >= 0.0 && p.delta < 1.0, "delta", "must lie in [0, 1)");
        break;
    }
    case ExperimentKind::normality: {
        std::string mode = "full_rank";
        r.read("mode", mode);
        if (mode != "full_rank" && mode != "low_rank")
            throw config_error("mode: expected 'full_rank' or 'low_rank', got '" + mode + "'");
        auto &p = c.normality;
        p = NormalityParams::defaults(mode == "full_rank" ? NormalityMode::full_rank : NormalityMode::low_rank);
        r.read("d", p.d);
        r.read("n", p.n);
        r.read("r", p.r);
        r.read("noise_std", p.noise_std);
        r.read("entry_std", p.entry_std);
        r.read("rho", p.rho);
        if (p.mode == NormalityMode::full_rank && !raw.contains("r"))
            p.r = static_cast<int>(p.n);
        check(p.n >= 1 && p.d >= p.n, "d", "must satisfy d >= n >= 1");
        if (p.mode == NormalityMode::full_rank)
            check(p.r == p.n, "r", "must equal n in full_rank mode");
        else
            check(p.r >= 1 && p.r < p.n, "r", "must lie in [1, n) in low_rank mode");
        check(p.noise_std > 0.0, "noise_std", "must be positive");
        check(p.entry_std > 0.0, "entry_std", "must be positive");
        check(p.rho > -1.0 && p.rho < 1.0, "rho", "must lie in (-1, 1)");
        check(static_cast<std::size_t>(c.trials) >= normality_min_samples, "trials",
              "must be >= 100 for the normality diagnostic");
        break;
    }
    }
    r.finish();
    return c;
}

/// Complete, canonical JSON form of a config (all defaults filled in).
inline json to_json(const ExperimentConfig &c) {
    json j;
    j["kind"] = to_string(c.kind);
    j["trials"] = c.trials;
    j["horizon"] = c.horizon;
    j["mu"] = c.mu;
    j["seed"] = c.seed;
    j["recover_stride"] = c.recover_stride;
    j["out"] = c.out_dir;
    j["schedule"] = detail::schedule_to_json(c.schedule);
    switch (c.kind) {
    case ExperimentKind::str: {
        const auto &p = c.str;
        j["dim"] = p.dim;
        j["n"] = p.n;
        j["r"] = p.r;
        j["entry_std"] = p.entry_std;
        j["obs_noise_std"] = p.obs_noise_std;
        j["plant_noise_std"] = p.plant_noise_std;
        j["ref_amplitude"] = p.ref_amplitude;
        j["ref_period"] = p.ref_period;
        j["dither_halfwidth"] = p.dither_halfwidth;
        j["eps_bar"] = p.eps_bar;
        j["regulator_mu"] = p.regulator_mu;
        break;
    }
    case ExperimentKind::channel: {
        const auto &p = c.channel;
        j["d"] = p.d;
        j["n"] = p.n;
        j["num_paths"] = p.num_paths;
        j["snr_db"] = p.snr_db;
        j["carrier_hz"] = p.carrier_hz;
        j["subcarrier_spacing_hz"] = p.subcarrier_spacing_hz;
        j["distance_m"] = p.distance_m;
        j["bits_file"] = p.bits_file;
        break;
    }
    case ExperimentKind::synthetic: {
        const auto &p = c.synthetic;
        j["d"] = p.d;
        j["n"] = p.n;
        j["r"] = p.r;
        j["entry_std"] = p.entry_std;
        j["noise_std"] = p.noise_std;
        j["rho"] = p.rho;
        j["delta"] = p.delta;
        break;
    }
    case ExperimentKind::normality: {
        const auto &p = c.normality;
        j["mode"] = to_string(p.mode);
        j["d"] = p.d;
        j["n"] = p.n;
        j["r"] = p.r;
        j["noise_std"] = p.noise_std;
        j["entry_std"] = p.entry_std;
        j["rho"] = p.rho;
        break;
    }
    }
    return j;
}

/// Applies a dotted override such as "schedule.alpha=-0.2". The value is parsed
/// as JSON when possible and kept as a string otherwise.
inline void apply_override(json &raw, std::string_view assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string_view::npos || eq == 0)
        throw config_error("--set expects KEY=VALUE, got '" + std::string(assignment) + "'");
    const std::string key(assignment.substr(0, eq));
    const std::string text(assignment.substr(eq + 1));
    json value = json::parse(text, nullptr, false);
    if (value.is_discarded())
        value = text;

    json *node = &raw;
    std::size_t start = 0;
    while (true) {
        const auto dot = key.find('.', start);
        const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
        if (part.empty())
            throw config_error("--set: malformed key '" + key + "'");
        if (!node->is_object())
            throw config_error("--set: '" + key + "' descends into a non-object");
        if (dot == std::string::npos) {
            (*node)[part] = value;
            return;
        }
        node = &(*node)[part];
        if (node->is_null())
            *node = json::object();
        start = dot + 1;
    }
}

inline json load_json_file(const std::string &path) {
    std::ifstream in(path);
    if (!in)
        throw config_error("cannot open config file: " + path);
    json j = json::parse(in, nullptr, false);
    if (j.is_discarded())
        throw config_error("config file is not valid JSON: " + path);
    return j;
}

/// 64-bit FNV-1a of the canonical config, excluding the output directory.
inline std::string config_hash(const ExperimentConfig &c) {
    json j = to_json(c);
    j.erase("out");
    const std::string text = j.dump();
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : text) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << h;
    return os.str();
}

// ---------------------------------------------------------------------------
// Trials

struct TraceRow {
    std::size_t trial = 0;
    long n = 0;
    double lambda = 0.0;
    double ratio = 0.0;
    double para_err = 0.0;
    int rank_est = 0;
    std::optional<int> raw_real_rank;
};

/// Everything one trial produces: Algorithm 1 and plain RLS metrics at the
/// horizon, the per-stride trace, and the normality statistic when requested.
struct TrialOutcome {
    TrialMetrics algorithm1;
    TrialMetrics rls_only;
    int rank_algorithm1 = 0;
    int rank_rls = 0;
    int true_rank = 0;
    std::optional<int> raw_real_rank;
    std::vector<TraceRow> trace;
    std::optional<Vector> statistic;
    std::vector<std::pair<long, double>> excitation_trace;
};

namespace detail {

/// Streams (phi, y) pairs through RLS, runs the second stage every `stride`
/// steps and at the horizon. `evaluate` maps (x, rank_est) to (para_err, raw_real_rank).
template <class Next, class Evaluate>
RecoveryOutput drive(RlsState &state, const ExperimentConfig &cfg, std::size_t trial, Next &&next, Evaluate &&evaluate,
                     TrialOutcome &out) {
    const long stride = cfg.recover_stride;
    for (long k = 1; k <= cfg.horizon; ++k) {
        const Observation obs = next(k);
        state.update(obs.phi, obs.y);
        if (k % stride == 0) {
            const RecoveryOutput rec = recover(state, cfg.schedule);
            TraceRow row;
            row.trial = trial;
            row.n = k;
            row.lambda = rec.lambda_used;
            row.ratio = rec.excitation.ratio;
            std::tie(row.para_err, row.raw_real_rank) = evaluate(rec);
            row.rank_est = rec.rank_est;
            out.trace.push_back(row);
            out.excitation_trace.emplace_back(k, rec.excitation.ratio);
        }
    }
    return recover(state, cfg.schedule);
}

inline TrialMetrics real_metrics(const Matrix &x, const Matrix &theta, int rank, int true_rank) {
    const double rel = (x - theta).norm() / theta.norm();
    return {rel, static_cast<double>(std::abs(rank - true_rank)), rel * rel};
}

inline TrialOutcome run_str_trial(const ExperimentConfig &cfg, std::size_t trial, Seed seed) {
    const auto &p = cfg.str;
    StrConfig sc = StrConfig::with_dim(p.dim);
    sc.noise_std = p.plant_noise_std;
    sc.ref_amplitude = p.ref_amplitude;
    sc.ref_period = p.ref_period;
    sc.dither_halfwidth = p.dither_halfwidth;
    sc.eps_bar = p.eps_bar;
    sc.regulator_mu = p.regulator_mu;
    sc.seed = derive_seed(seed, 1);
    StrLoop loop(sc);
    const Index d = 4 * p.dim;
    const LowRankTarget target = make_lowrank_target(d, p.n, p.r, p.entry_std, derive_seed(seed, 2));
    Rng noise(derive_seed(seed, 3));

    TrialOutcome out;
    out.true_rank = p.r;
    RlsState state = RlsState::create(d, p.n, cfg.mu);
    auto next = [&](long) {
        const StrSample s = loop.step();
        return Observation{s.phi, lowrank_observe(target.theta, s.phi, p.obs_noise_std, noise)};
    };
    auto evaluate = [&](const RecoveryOutput &rec) {
        return std::pair<double, std::optional<int>>((rec.x - target.theta).norm() / target.theta.norm(), std::nullopt);
    };
    const RecoveryOutput fin = drive(state, cfg, trial, next, evaluate, out);
    out.rank_algorithm1 = fin.rank_est;
    out.rank_rls = numerical_rank(fin.svd.sigma);
    out.algorithm1 = real_metrics(fin.x, target.theta, out.rank_algorithm1, p.r);
    out.rls_only = real_metrics(state.theta(), target.theta, out.rank_rls, p.r);
    return out;
}

inline TrialOutcome run_synthetic_trial(const ExperimentConfig &cfg, std::size_t trial, Seed seed) {
    const auto &p = cfg.synthetic;
    GaussianRegressors gen(toeplitz_covariance(p.d, p.rho), p.delta, derive_seed(seed, 1));
    const LowRankTarget target = make_lowrank_target(p.d, p.n, p.r, p.entry_std, derive_seed(seed, 2));
    Rng noise(derive_seed(seed, 3));

    TrialOutcome out;
    out.true_rank = p.r;
    RlsState state = RlsState::create(p.d, p.n, cfg.mu);
    auto next = [&](long) {
        Vector phi = gen.next();
        Vector y = lowrank_observe(target.theta, phi, p.noise_std, noise);
        return Observation{std::move(phi), std::move(y)};
    };
    auto evaluate = [&](const RecoveryOutput &rec) {
        return std::pair<double, std::optional<int>>((rec.x - target.theta).norm() / target.theta.norm(), std::nullopt);
    };
    const RecoveryOutput fin = drive(state, cfg, trial, next, evaluate, out);
    out.rank_algorithm1 = fin.rank_est;
    out.rank_rls = numerical_rank(fin.svd.sigma);
    out.algorithm1 = real_metrics(fin.x, target.theta, out.rank_algorithm1, p.r);
    out.rls_only = real_metrics(state.theta(), target.theta, out.rank_rls, p.r);
    return out;
}

inline std::vector<ComplexVector> channel_pilots(const ChannelParams &p, long count, Seed seed) {
    const auto bytes_needed = static_cast<std::size_t>((2 * p.d * count + 7) / 8);
    const std::vector<std::uint8_t> bytes =
        p.bits_file.empty() ? pseudo_random_bytes(bytes_needed, seed) : read_bytes(p.bits_file);
    if (bytes.empty())
        throw std::invalid_argument("bit file is empty: " + p.bits_file);
    std::vector<ComplexVector> pilots = bits_to_qam(bytes, p.d);
    if (static_cast<long>(pilots.size()) < count)
        throw std::invalid_argument("bit stream provides " + std::to_string(pilots.size()) + " pilot vectors, " +
                                    std::to_string(count) + " needed");
    pilots.resize(static_cast<std::size_t>(count));
    return pilots;
}

inline TrialOutcome run_channel_trial(const ExperimentConfig &cfg, std::size_t trial, Seed seed) {
    const auto &p = cfg.channel;
    ChannelConfig cc;
    cc.d = p.d;
    cc.n = p.n;
    cc.num_paths = p.num_paths;
    cc.snr_db = p.snr_db;
    cc.carrier_hz = p.carrier_hz;
    cc.subcarrier_spacing_hz = p.subcarrier_spacing_hz;
    cc.common_distance_m = p.distance_m;
    cc.path_gain_seed = derive_seed(seed, 1);
    cc.angle_seed = derive_seed(seed, 2);
    const ComplexChannel ch = build_channel(cc);
    const std::vector<ComplexVector> pilots = channel_pilots(p, cfg.horizon, derive_seed(seed, 3));
    Rng noise(derive_seed(seed, 4));

    TrialOutcome out;
    out.true_rank = ch.complex_rank;
    RlsState state = RlsState::create(2 * p.d, 2 * p.n, cfg.mu);
    auto next = [&](long k) {
        const ComplexVector &x = pilots[static_cast<std::size_t>(k - 1)];
        const ComplexVector y = channel_observe(ch, x, p.snr_db, &noise);
        RealifiedPair rp = realify_system(x, y);
        return Observation{std::move(rp.phi), std::move(rp.y_real)};
    };
    const double h_norm = ch.h.norm();
    auto evaluate = [&](const RecoveryOutput &rec) {
        const ComplexEstimate est = extract_complex_estimate(rec.x);
        return std::pair<double, std::optional<int>>((est.h_hat - ch.h).norm() / h_norm, rec.rank_est);
    };
    const RecoveryOutput fin = drive(state, cfg, trial, next, evaluate, out);

    const ComplexEstimate alg = extract_complex_estimate(fin.x);
    const ComplexEstimate rls = extract_complex_estimate(state.theta());
    out.raw_real_rank = fin.rank_est;
    out.rank_algorithm1 = complex_rank_from_real(fin.rank_est);
    out.rank_rls = rls.complex_rank_est;
    auto metrics = [&](const ComplexMatrix &h_hat, int rank) {
        const double rel = (h_hat - ch.h).norm() / h_norm;
        return TrialMetrics{rel, static_cast<double>(std::abs(rank - out.true_rank)), rel * rel};
    };
    out.algorithm1 = metrics(alg.h_hat, out.rank_algorithm1);
    out.rls_only = metrics(rls.h_hat, out.rank_rls);
    return out;
}

/// Fixed Theta shared by every trial of a normality campaign.
inline LowRankTarget normality_target(const ExperimentConfig &cfg) {
    const auto &p = cfg.normality;
    return make_lowrank_target(p.d, p.n, p.r, p.entry_std, derive_seed(cfg.seed, 1000));
}

/// Plan with the theory-side quantities; in full-rank mode C_N is per trial
/// and the plan's c_n only fixes the dimension.
inline NormalityPlan normality_plan(const ExperimentConfig &cfg, const LowRankTarget &target) {
    const auto &p = cfg.normality;
    NormalityPlan plan;
    plan.mode = p.mode;
    plan.sigma2 = p.noise_std * p.noise_std;
    if (p.mode == NormalityMode::full_rank) {
        plan.c_n = Matrix::Identity(p.d, p.d);
        plan.m_mat = Matrix::Identity(p.d, p.d);
        return plan;
    }
    const Matrix cov = toeplitz_covariance(p.d, p.rho);
    const Matrix cov_half = psd_sqrt(cov);
    plan.u1 = svd_descending(target.theta).u.leftCols(p.r);
    plan.c_n = std::sqrt(static_cast<double>(cfg.horizon)) * cov_half;
    plan.m_mat = cov_half * plan.u1 * plan.u1.transpose() * cov_half.inverse();
    return plan;
}

inline TrialOutcome run_normality_trial(const ExperimentConfig &cfg, const LowRankTarget &target,
                                        const NormalityPlan &plan, std::size_t trial, Seed seed) {
    const auto &p = cfg.normality;
    GaussianRegressors gen(toeplitz_covariance(p.d, p.rho), 0.0, derive_seed(seed, 1));
    Rng noise(derive_seed(seed, 3));
    Matrix gram = Matrix::Zero(p.d, p.d);

    TrialOutcome out;
    out.true_rank = p.r;
    RlsState state = RlsState::create(p.d, p.n, cfg.mu);
    auto next = [&](long) {
        Vector phi = gen.next();
        gram.noalias() += phi * phi.transpose();
        Vector y = lowrank_observe(target.theta, phi, p.noise_std, noise);
        return Observation{std::move(phi), std::move(y)};
    };
    auto evaluate = [&](const RecoveryOutput &rec) {
        return std::pair<double, std::optional<int>>((rec.x - target.theta).norm() / target.theta.norm(), std::nullopt);
    };
    const RecoveryOutput fin = drive(state, cfg, trial, next, evaluate, out);
    out.rank_algorithm1 = fin.rank_est;
    out.rank_rls = numerical_rank(fin.svd.sigma);
    out.algorithm1 = real_metrics(fin.x, target.theta, out.rank_algorithm1, p.r);
    out.rls_only = real_metrics(state.theta(), target.theta, out.rank_rls, p.r);

    if (p.mode == NormalityMode::full_rank) {
        NormalityPlan local = plan;
        local.c_n = psd_sqrt(gram);
        out.statistic = normality_statistic(fin.x, target.theta, local);
    } else {
        out.statistic = normality_statistic(fin.x, target.theta, plan, Matrix(fin.svd.u.leftCols(p.r)));
    }
    return out;
}

} // namespace detail

/// Result of a full campaign.
struct CampaignResult {
    ExperimentConfig config;
    std::vector<TrialOutcome> trials;
    MetricsReport algorithm1;
    MetricsReport rls_only;
    std::optional<NormalityDiagnostic> normality;
};

/// Runs every trial of `cfg` with per-trial seeds cfg.seed + index on up to
/// `jobs` threads. The result does not depend on `jobs`.
inline CampaignResult run_campaign(const ExperimentConfig &cfg, unsigned jobs = 1) {
    CampaignResult res;
    res.config = cfg;
    const auto trials = static_cast<std::size_t>(cfg.trials);
    switch (cfg.kind) {
    case ExperimentKind::str:
        res.trials = run_trials(trials, cfg.seed, jobs,
                                [&](std::size_t i, Seed s) { return detail::run_str_trial(cfg, i, s); });
        break;
    case ExperimentKind::synthetic:
        res.trials = run_trials(trials, cfg.seed, jobs,
                                [&](std::size_t i, Seed s) { return detail::run_synthetic_trial(cfg, i, s); });
        break;
    case ExperimentKind::channel:
        res.trials = run_trials(trials, cfg.seed, jobs,
                                [&](std::size_t i, Seed s) { return detail::run_channel_trial(cfg, i, s); });
        break;
    case ExperimentKind::normality: {
        const LowRankTarget target = detail::normality_target(cfg);
        const NormalityPlan plan = detail::normality_plan(cfg, target);
        res.trials = run_trials(trials, cfg.seed, jobs, [&](std::size_t i, Seed s) {
            return detail::run_normality_trial(cfg, target, plan, i, s);
        });
        std::vector<Vector> samples;
        samples.reserve(res.trials.size());
        for (const auto &t : res.trials)
            samples.push_back(*t.statistic);
        res.normality = normality_check(samples, plan);
        break;
    }
    }
    std::vector<TrialMetrics> alg, rls;
    for (const auto &t : res.trials) {
        alg.push_back(t.algorithm1);
        rls.push_back(t.rls_only);
    }
    res.algorithm1 = make_report(std::move(alg));
    res.rls_only = make_report(std::move(rls));
    return res;
}

// ---------------------------------------------------------------------------
// Artifacts

inline json metrics_to_json(const MetricsReport &m) {
    json j;
    j["para_est_err"] = m.para_est_err;
    j["rank_est_error"] = m.rank_est_error;
    j["nmse"] = m.nmse;
    j["nmse_db"] = m.nmse_db;
    j["trials"] = m.trials;
    json per = json::array();
    for (const auto &t : m.per_trial)
        per.push_back({{"para_err", t.para_err}, {"rank_err", t.rank_err}, {"nmse", t.nmse}});
    j["per_trial"] = std::move(per);
    return j;
}

inline json normality_to_json(const NormalityDiagnostic &d) {
    json mean = json::array();
    for (Index i = 0; i < d.mean.size(); ++i)
        mean.push_back(d.mean(i));
    return json{{"samples", d.samples},
                {"covariance_deviation", d.cov_deviation},
                {"max_standardized_mean", d.max_std_mean},
                {"mean", std::move(mean)}};
}

/// summary.json: kind, trials, horizon, metrics{...}, config_hash.
inline json summary_json(const CampaignResult &res) {
    json metrics = metrics_to_json(res.algorithm1);
    if (res.normality)
        metrics["normality"] = normality_to_json(*res.normality);
    if (res.config.kind == ExperimentKind::channel) {
        int hits = 0;
        for (const auto &t : res.trials)
            hits += t.rank_algorithm1 == t.true_rank ? 1 : 0;
        metrics["complex_rank_hits"] = hits;
    }
    return json{{"kind", to_string(res.config.kind)},
                {"trials", res.config.trials},
                {"horizon", res.config.horizon},
                {"metrics", std::move(metrics)},
                {"config_hash", config_hash(res.config)}};
}

inline std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

/// trace.csv: trial, N, lambda, ratio, para_err, rank_est, raw_real_rank
inline std::string trace_csv(const CampaignResult &res) {
    std::ostringstream os;
    os << "trial,N,lambda,ratio,para_err,rank_est,raw_real_rank\n";
    for (const auto &t : res.trials)
        for (const auto &row : t.trace) {
            os << row.trial << ',' << row.n << ',' << format_double(row.lambda) << ',' << format_double(row.ratio)
               << ',' << format_double(row.para_err) << ',' << row.rank_est << ',';
            if (row.raw_real_rank)
                os << *row.raw_real_rank;
            os << '\n';
        }
    return os.str();
}

enum class Stage { rls_only, algorithm1 };

inline std::string to_string(Stage s) { return s == Stage::rls_only ? "rls_only" : "algorithm1"; }

struct ComparisonRow {
    Stage stage;
    MetricsReport metrics;
};

/// One row per first-stage variant: plain RLS and RLS followed by the weighted thresholding.
inline std::vector<ComparisonRow> compare_first_stage(const CampaignResult &res, const std::vector<Stage> &stages) {
    detail::require(!stages.empty(), "compare_first_stage: empty stage list");
    std::vector<ComparisonRow> rows;
    for (Stage s : stages)
        rows.push_back({s, s == Stage::rls_only ? res.rls_only : res.algorithm1});
    return rows;
}

inline std::string comparison_csv(const std::vector<ComparisonRow> &rows) {
    std::ostringstream os;
    os << "stage,para_est_err,rank_est_error,nmse,nmse_db\n";
    for (const auto &r : rows)
        os << to_string(r.stage) << ',' << format_double(r.metrics.para_est_err) << ','
           << format_double(r.metrics.rank_est_error) << ',' << format_double(r.metrics.nmse) << ','
           << format_double(r.metrics.nmse_db) << '\n';
    return os.str();
}

inline json comparison_json(const std::vector<ComparisonRow> &rows) {
    json arr = json::array();
    for (const auto &r : rows)
        arr.push_back({{"stage", to_string(r.stage)},
                       {"para_est_err", r.metrics.para_est_err},
                       {"rank_est_error", r.metrics.rank_est_error},
                       {"nmse", r.metrics.nmse},
                       {"nmse_db", r.metrics.nmse_db}});
    return arr;
}

/// Writes a set of files into `dir`; if any write fails, files written so far are removed.
class ArtifactWriter {
  public:
    explicit ArtifactWriter(std::filesystem::path dir) : dir_(std::move(dir)) {}

    void add(std::string name, std::string content) { files_.emplace_back(std::move(name), std::move(content)); }

    void commit() {
        std::vector<std::filesystem::path> written;
        try {
            std::filesystem::create_directories(dir_);
            for (const auto &[name, content] : files_) {
                const auto path = dir_ / name;
                std::ofstream out(path, std::ios::binary);
                if (!out)
                    throw std::runtime_error("cannot write " + path.string());
                written.push_back(path);
                out << content;
                if (!out)
                    throw std::runtime_error("write failed: " + path.string());
            }
        } catch (...) {
            std::error_code ec;
            for (const auto &p : written)
                std::filesystem::remove(p, ec);
            throw;
        }
    }

  private:
    std::filesystem::path dir_;
    std::vector<std::pair<std::string, std::string>> files_;
};

/// Runs a campaign and writes summary.json, trace.csv and config.resolved.json.
inline CampaignResult run_experiment(const ExperimentConfig &cfg, unsigned jobs = 1) {
    CampaignResult res = run_campaign(cfg, jobs);
    ArtifactWriter w(cfg.out_dir);
    w.add("summary.json", summary_json(res).dump(2) + "\n");
    w.add("trace.csv", trace_csv(res));
    w.add("config.resolved.json", to_json(cfg).dump(2) + "\n");
    w.commit();
    return res;
}

} // namespace lowrank
