// lowrank-online: runs recovery campaigns and the validation suites.

#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "lowrank/experiment.hpp"
#include "lowrank/validation.hpp"

namespace {

using namespace lowrank;

struct CommonFlags {
    std::string config_path;
    std::vector<std::string> overrides;
    std::optional<int> trials;
    std::optional<std::uint64_t> seed;
    unsigned jobs = 1;
    std::optional<std::string> out;
    std::optional<std::string> bits_file;
};

void add_common(CLI::App *cmd, CommonFlags &f) {
    cmd->add_option("--config", f.config_path, "JSON experiment config")->check(CLI::ExistingFile);
    cmd->add_option("--set", f.overrides, "dotted override KEY=VALUE (repeatable)");
    cmd->add_option("--trials", f.trials, "number of Monte-Carlo trials");
    cmd->add_option("--seed", f.seed, "master seed");
    cmd->add_option("--jobs", f.jobs, "worker threads")->check(CLI::PositiveNumber);
    cmd->add_option("--out", f.out, "output directory");
    cmd->add_option("--bits-file", f.bits_file, "pilot bit file (channel runs)");
}

json raw_config(const CommonFlags &f, const json &base = json::object()) {
    json raw = f.config_path.empty() ? base : load_json_file(f.config_path);
    for (const auto &[k, v] : base.items())
        if (!raw.contains(k))
            raw[k] = v;
    for (const auto &s : f.overrides)
        apply_override(raw, s);
    if (f.trials)
        raw["trials"] = *f.trials;
    if (f.seed)
        raw["seed"] = *f.seed;
    if (f.out)
        raw["out"] = *f.out;
    if (f.bits_file)
        raw["bits_file"] = *f.bits_file;
    return raw;
}

void print_metrics(const std::string &label, const MetricsReport &m) {
    std::cout << label << ": para_est_err=" << m.para_est_err << " rank_est_error=" << m.rank_est_error
              << " nmse_db=" << m.nmse_db << '\n';
}

int cmd_run(const CommonFlags &f) {
    const ExperimentConfig cfg = parse_config(raw_config(f));
    const CampaignResult res = run_experiment(cfg, f.jobs);
    print_metrics("algorithm1", res.algorithm1);
    print_metrics("rls_only", res.rls_only);
    std::cout << "wrote " << cfg.out_dir << "/{summary.json,trace.csv,config.resolved.json}\n";
    return 0;
}

int cmd_normality(const CommonFlags &f, const std::string &mode, const std::optional<long> &d,
                  const std::optional<long> &n, const std::optional<int> &r, const std::optional<long> &horizon) {
    json base{{"kind", "normality"}};
    json raw = raw_config(f, base);
    if (raw.value("kind", "") != "normality")
        throw config_error("kind: the normality command requires kind 'normality'");
    if (!mode.empty())
        raw["mode"] = mode == "full-rank" ? "full_rank" : "low_rank";
    if (d)
        raw["d"] = *d;
    if (n)
        raw["n"] = *n;
    if (r)
        raw["r"] = *r;
    if (horizon)
        raw["horizon"] = *horizon;
    const ExperimentConfig cfg = parse_config(raw);
    const CampaignResult res = run_experiment(cfg, f.jobs);
    std::cout << normality_to_json(*res.normality).dump(2) << '\n';
    return 0;
}

int cmd_compare(const CommonFlags &f, const std::vector<std::string> &stage_names) {
    std::vector<Stage> stages;
    for (const auto &s : stage_names) {
        if (s == "rls_only")
            stages.push_back(Stage::rls_only);
        else if (s == "algorithm1")
            stages.push_back(Stage::algorithm1);
        else
            throw config_error("--stages: unknown stage '" + s + "'");
    }
    const ExperimentConfig cfg = parse_config(raw_config(f));
    const CampaignResult res = run_campaign(cfg, f.jobs);
    const auto rows = compare_first_stage(res, stages);
    ArtifactWriter w(cfg.out_dir);
    w.add("comparison.csv", comparison_csv(rows));
    w.add("comparison.json", comparison_json(rows).dump(2) + "\n");
    w.commit();
    std::cout << comparison_csv(rows);
    return 0;
}

int cmd_validate(std::uint64_t seed) {
    bool ok = true;
    for (const auto &s : run_validation(seed)) {
        std::cout << (s.passed() ? "PASS " : "FAIL ") << s.name << " cases=" << s.cases
                  << " violations=" << s.violations << " worst=" << s.worst << '\n';
        ok = ok && s.passed();
    }
    return ok ? 0 : 1;
}

} // namespace

int main(int argc, char **argv) {
    CLI::App app{"Online low-rank matrix recovery: RLS plus adaptive weighted nuclear-norm thresholding"};
    app.require_subcommand(1);

    CommonFlags run_flags, norm_flags, cmp_flags;
    auto *run = app.add_subcommand("run", "run an experiment campaign and write its artifacts");
    add_common(run, run_flags);

    auto *norm = app.add_subcommand("normality", "asymptotic normality diagnostic");
    add_common(norm, norm_flags);
    std::string mode;
    std::optional<long> nd, nn, nh;
    std::optional<int> nr;
    norm->add_option("--mode", mode, "full-rank or low-rank")->check(CLI::IsMember({"full-rank", "low-rank"}));
    norm->add_option("--d", nd, "regressor dimension");
    norm->add_option("--n", nn, "output dimension");
    norm->add_option("--r", nr, "rank (low-rank mode)");
    norm->add_option("--horizon", nh, "samples per trial");

    auto *cmp = app.add_subcommand("compare", "compare plain RLS with the thresholded estimate");
    add_common(cmp, cmp_flags);
    std::vector<std::string> stages{"rls_only", "algorithm1"};
    cmp->add_option("--stages", stages, "subset of rls_only,algorithm1")->delimiter(',');

    auto *val = app.add_subcommand("validate", "run the property suites");
    std::uint64_t val_seed = 1;
    val->add_option("--seed", val_seed, "seed for the random cases");

    CLI11_PARSE(app, argc, argv);

    try {
        if (run->parsed())
            return cmd_run(run_flags);
        if (norm->parsed())
            return cmd_normality(norm_flags, mode, nd, nn, nr, nh);
        if (cmp->parsed())
            return cmd_compare(cmp_flags, stages);
        if (val->parsed())
            return cmd_validate(val_seed);
    } catch (const config_error &e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception &e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
