#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "lowrank/experiment.hpp"
#include "lowrank/validation.hpp"

using namespace lowrank;

namespace {

std::string slurp(const std::filesystem::path &p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

std::filesystem::path scratch(const std::string &name) {
    auto p = std::filesystem::path(::testing::TempDir()) / ("lowrank_" + name);
    std::filesystem::remove_all(p);
    return p;
}

std::string error_of(const json &raw) {
    try {
        parse_config(raw);
    } catch (const config_error &e) {
        return e.what();
    }
    return "";
}

} // namespace

TEST(Config, StrDefaults) {
    const ExperimentConfig c = parse_config(json{{"kind", "str"}});
    EXPECT_EQ(c.kind, ExperimentKind::str);
    EXPECT_EQ(4 * c.str.dim, 40);
    EXPECT_EQ(c.str.n, 40);
    EXPECT_EQ(c.str.r, 4);
    EXPECT_EQ(c.horizon, 4000);
    EXPECT_EQ(c.trials, 20);
    ASSERT_TRUE(std::holds_alternative<PowerSchedule>(c.schedule));
    EXPECT_EQ(std::get<PowerSchedule>(c.schedule).alpha, -0.1);
    EXPECT_NEAR(c.str.obs_noise_std * c.str.obs_noise_std, 0.5, 1e-15);
}

TEST(Config, ChannelDefaults) {
    const ExperimentConfig c = parse_config(json{{"kind", "channel"}, {"snr_db", 10}});
    EXPECT_EQ(c.channel.d, 64);
    EXPECT_EQ(c.channel.n, 16);
    EXPECT_EQ(c.channel.num_paths, 4);
    EXPECT_EQ(c.horizon, 256);
    EXPECT_EQ(std::get<PowerSchedule>(c.schedule).alpha, 0.5);
}

TEST(Config, NormalityModeDefaults) {
    const ExperimentConfig f = parse_config(json{{"kind", "normality"}});
    EXPECT_EQ(f.normality.d, 4);
    EXPECT_EQ(f.normality.n, 2);
    EXPECT_EQ(f.normality.r, 2);
    const ExperimentConfig l = parse_config(json{{"kind", "normality"}, {"mode", "low_rank"}});
    EXPECT_EQ(l.normality.d, 6);
    EXPECT_EQ(l.normality.n, 4);
    EXPECT_EQ(l.normality.r, 2);
}

TEST(Config, Errors) {
    EXPECT_NE(error_of(json{{"kind", "str"}, {"mu", 1.5}}).find("mu"), std::string::npos);
    EXPECT_NE(error_of(json::object()).find("kind"), std::string::npos);
    EXPECT_NE(error_of(json{{"kind", "str"}, {"bogus", 1}}).find("bogus: unknown key"), std::string::npos);
    EXPECT_NE(error_of(json{{"kind", "str"}, {"schedule", {{"alpha", -0.1}, {"x", 1}}}}).find("schedule.x"),
              std::string::npos);
    EXPECT_NE(error_of(json{{"kind", "str"}, {"trials", "many"}}).find("trials: expected an integer"),
              std::string::npos);
    EXPECT_NE(error_of(json{{"kind", "str"}, {"horizon", 0}}).find("horizon"), std::string::npos);
    EXPECT_NE(error_of(json{{"kind", "synthetic"}, {"schedule", {{"variant", "ratio_power"}, {"eps", 0.5}}}})
                  .find("schedule.eps"),
              std::string::npos);
    EXPECT_NE(error_of(json{{"kind", "channel"}, {"d", 4}, {"n", 8}}).find("d:"), std::string::npos);
    EXPECT_NE(error_of(json{{"kind", "warp"}}).find("unknown experiment kind"), std::string::npos);
    // keys of another kind are unknown here
    EXPECT_NE(error_of(json{{"kind", "channel"}, {"dim", 3}}).find("dim"), std::string::npos);
}

TEST(Config, OverridesAndRoundTrip) {
    json raw{{"kind", "str"}};
    apply_override(raw, "schedule.alpha=-0.2");
    apply_override(raw, "trials=3");
    apply_override(raw, "out=somewhere");
    const ExperimentConfig c = parse_config(raw);
    EXPECT_EQ(std::get<PowerSchedule>(c.schedule).alpha, -0.2);
    EXPECT_EQ(c.trials, 3);
    EXPECT_EQ(c.out_dir, "somewhere");
    const ExperimentConfig again = parse_config(to_json(c));
    EXPECT_EQ(to_json(again), to_json(c));
    EXPECT_EQ(config_hash(again), config_hash(c));
    EXPECT_THROW(apply_override(raw, "noequals"), config_error);
}

TEST(Config, SwitchingScheduleVariant) {
    json raw{{"kind", "str"}};
    apply_override(raw, "schedule.variant=ratio_power");
    const ExperimentConfig c = parse_config(raw);
    ASSERT_TRUE(std::holds_alternative<RatioPowerSchedule>(c.schedule));
    EXPECT_EQ(std::get<RatioPowerSchedule>(c.schedule).eps, 0.25);
}

TEST(Config, HashIgnoresOutputDirectory) {
    ExperimentConfig a = parse_config(json{{"kind", "synthetic"}});
    ExperimentConfig b = a;
    b.out_dir = "elsewhere";
    EXPECT_EQ(config_hash(a), config_hash(b));
    b.seed = 99;
    EXPECT_NE(config_hash(a), config_hash(b));
}

TEST(RunExperiment, ArtifactsAndTraceShape) {
    const auto dir = scratch("synthetic_small");
    ExperimentConfig c = parse_config(json{{"kind", "synthetic"}, {"trials", 3}, {"horizon", 205}, {"recover_stride", 10}});
    c.out_dir = dir.string();
    run_experiment(c);
    const json summary = json::parse(slurp(dir / "summary.json"));
    for (const char *k : {"kind", "trials", "horizon", "metrics", "config_hash"})
        EXPECT_TRUE(summary.contains(k)) << k;
    EXPECT_TRUE(summary["metrics"].contains("para_est_err"));
    EXPECT_TRUE(summary["metrics"].contains("rank_est_error"));

    std::istringstream trace(slurp(dir / "trace.csv"));
    std::string line;
    std::getline(trace, line);
    EXPECT_EQ(line, "trial,N,lambda,ratio,para_err,rank_est,raw_real_rank");
    int rows = 0;
    while (std::getline(trace, line)) {
        ++rows;
        EXPECT_EQ(line.back(), ',');
    }
    EXPECT_EQ(rows, 3 * (205 / 10));
}

TEST(RunExperiment, ResolvedConfigReproducesSummary) {
    const auto d1 = scratch("repro_a"), d2 = scratch("repro_b");
    ExperimentConfig c = parse_config(json{{"kind", "channel"}, {"trials", 3}, {"d", 16}, {"n", 4}, {"horizon", 64}});
    c.out_dir = d1.string();
    run_experiment(c, 1);
    json raw = json::parse(slurp(d1 / "config.resolved.json"));
    raw["out"] = d2.string();
    run_experiment(parse_config(raw), 3);
    EXPECT_EQ(slurp(d1 / "summary.json"), slurp(d2 / "summary.json"));
    EXPECT_EQ(slurp(d1 / "trace.csv"), slurp(d2 / "trace.csv"));
}

TEST(RunExperiment, ChannelTraceCarriesRawRealRank) {
    ExperimentConfig c = parse_config(json{{"kind", "channel"}, {"trials", 2}, {"d", 16}, {"n", 4}, {"horizon", 40}});
    const CampaignResult res = run_campaign(c);
    for (const auto &t : res.trials)
        for (const auto &row : t.trace)
            EXPECT_TRUE(row.raw_real_rank.has_value());
    EXPECT_EQ(trace_csv(res).find(",\n"), std::string::npos);
}

TEST(RunExperiment, FailureLeavesNoArtifacts) {
    const auto dir = scratch("failing");
    ExperimentConfig c = parse_config(json{{"kind", "channel"}, {"trials", 2}, {"d", 16}, {"n", 4}, {"horizon", 64}});
    c.channel.bits_file = (dir / "missing.bin").string();
    c.out_dir = dir.string();
    EXPECT_THROW(run_experiment(c), trial_error);
    EXPECT_FALSE(std::filesystem::exists(dir / "summary.json"));
    EXPECT_FALSE(std::filesystem::exists(dir / "trace.csv"));
}

TEST(RunExperiment, ShortBitFileIsReported) {
    const auto dir = scratch("shortbits");
    std::filesystem::create_directories(dir);
    {
        std::ofstream out(dir / "bits.bin", std::ios::binary);
        out << "abcd";
    }
    ExperimentConfig c = parse_config(json{{"kind", "channel"}, {"trials", 1}, {"d", 16}, {"n", 4}, {"horizon", 64}});
    c.channel.bits_file = (dir / "bits.bin").string();
    try {
        run_campaign(c);
        FAIL();
    } catch (const trial_error &e) {
        EXPECT_NE(std::string(e.what()).find("pilot vectors"), std::string::npos);
    }
}

TEST(Compare, RowsPerStage) {
    ExperimentConfig c = parse_config(json{{"kind", "synthetic"}, {"trials", 2}, {"horizon", 300}});
    const CampaignResult res = run_campaign(c);
    const auto both = compare_first_stage(res, {Stage::rls_only, Stage::algorithm1});
    ASSERT_EQ(both.size(), 2u);
    EXPECT_EQ(both[0].metrics.para_est_err, res.rls_only.para_est_err);
    EXPECT_EQ(both[1].metrics.para_est_err, res.algorithm1.para_est_err);
    EXPECT_EQ(compare_first_stage(res, {Stage::algorithm1}).size(), 1u);
    EXPECT_THROW(compare_first_stage(res, {}), std::invalid_argument);
    const std::string csv = comparison_csv(both);
    EXPECT_EQ(csv.substr(0, csv.find('\n')), "stage,para_est_err,rank_est_error,nmse,nmse_db");
    EXPECT_EQ(comparison_json(both).size(), 2u);
}

TEST(Normality, CampaignProducesDiagnostic) {
    ExperimentConfig c = parse_config(json{{"kind", "normality"}, {"trials", 100}, {"horizon", 200}});
    const CampaignResult res = run_campaign(c);
    ASSERT_TRUE(res.normality.has_value());
    EXPECT_EQ(res.normality->samples, 100u);
    EXPECT_EQ(res.normality->mean.size(), 8);
    EXPECT_TRUE(summary_json(res)["metrics"].contains("normality"));
}

TEST(Validation, AllSuitesPass) {
    for (const auto &s : run_validation(3)) {
        EXPECT_TRUE(s.passed()) << s.name;
        EXPECT_GT(s.cases, 0) << s.name;
    }
}
