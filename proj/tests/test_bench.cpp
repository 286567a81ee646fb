#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "ortho_cate/bench.hpp"

using namespace ortho_cate;

namespace {

SimConfig small_config() {
    SimConfig c;
    c.setup = 2;
    c.learners = {"dr"};
    c.metrics = {"mse"};
    c.n_per_split = 60;
    c.replications = 3;
    c.k_folds = 2;
    c.master_seed = 42;
    c.parallelism = 1;
    c.propensity_specs = {LearnerSpec::logistic(1e-2)};
    c.outcome_specs = {LearnerSpec::ridge(1e-2, 1)};
    c.second_stage_specs = {LearnerSpec::ridge(1e-2, 1)};
    return c;
}

}  // namespace

TEST_CASE("simulation is deterministic and correctly shaped", "[bench]") {
    const SimConfig config = small_config();
    const ResultTable t1 = run_simulation(config);
    const ResultTable t2 = run_simulation(config);
    REQUIRE(result_table_to_csv(t1) == result_table_to_csv(t2));
    REQUIRE(t1.size() == config.replications);
    for (const ResultRow& row : t1) {
        REQUIRE(row.learner == "dr");
        REQUIRE(row.metric == "mse");
        REQUIRE(row.status == "ok");
        REQUIRE(std::isfinite(row.value));
    }
}

TEST_CASE("simulation results do not depend on the worker count", "[bench]") {
    SimConfig config = small_config();
    config.learners = {"dr", "ipw"};
    config.parallelism = 1;
    const ResultTable serial = run_simulation(config);
    config.parallelism = 4;
    const ResultTable parallel = run_simulation(config);
    REQUIRE(result_table_to_csv(serial) == result_table_to_csv(parallel));
}

TEST_CASE("environment variable overrides the worker count", "[bench]") {
    setenv("ORTHO_CATE_THREADS", "3", 1);
    REQUIRE(detail::resolve_parallelism(1) == 3);
    unsetenv("ORTHO_CATE_THREADS");
    REQUIRE(detail::resolve_parallelism(2) == 2);
    REQUIRE(detail::resolve_parallelism(0) >= 1);
}

TEST_CASE("ps-dr is scored on the treated metric only", "[bench]") {
    SimConfig config = small_config();
    config.learners = {"ps-dr"};
    config.metrics = {"mse", "mse_treated", "mse_pow"};
    config.replications = 2;
    const ResultTable rows = run_simulation(config);
    REQUIRE(rows.size() == 2);
    for (const ResultRow& row : rows) REQUIRE(row.metric == "mse_treated");

    config.metrics = {"mse"};
    REQUIRE(run_simulation(config).empty());
}

TEST_CASE("failing learners produce error rows instead of aborting", "[bench]") {
    SimConfig config = small_config();
    config.second_stage_specs = {LearnerSpec::logistic(1.0)};  // cannot regress phi
    config.replications = 2;
    const ResultTable rows = run_simulation(config);
    REQUIRE(rows.size() == 2);
    for (const ResultRow& row : rows) {
        REQUIRE(row.status == "error");
        REQUIRE(std::isnan(row.value));
    }
}

TEST_CASE("per-replication seeds are splitmix offsets of the master seed",
          "[bench]") {
    const SimConfig config = small_config();
    const ResultTable rows = run_simulation(config);
    for (const ResultRow& row : rows)
        REQUIRE(row.seed == (config.master_seed ^ splitmix64(row.rep)));
}

TEST_CASE("result csv writes and means compute", "[bench]") {
    const SimConfig config = small_config();
    const ResultTable rows = run_simulation(config);
    const std::string path = "bench_test_results.csv";
    write_result_table(rows, path);
    std::ifstream in(path);
    std::string header;
    std::getline(in, header);
    REQUIRE(header == "rep,learner,metric,value,status,seed");
    std::filesystem::remove(path);
    REQUIRE(std::isfinite(mean_metric(rows, "dr", "mse")));
    CHECK_THROWS_AS(mean_metric(rows, "nope", "mse"), Empty);
}

TEST_CASE("config json round trip", "[bench]") {
    const nlohmann::json j = {
        {"setup", 2},
        {"learners", {"t", "ipw", "dr", "r"}},
        {"n_per_split", 100},
        {"replications", 7},
        {"K", 3},
        {"master_seed", 99},
        {"metrics", {"mse", "mse_pow"}},
        {"parallelism", 2},
        {"eps", 0.02},
        {"dgp", {{"d", 8}, {"sigma", 0.25}, {"alpha_clip", 0.15}}},
        {"propensity_specs", {"logistic{l2=0.5}"}},
        {"outcome_specs", {"ridge{l2=0.1,degree=1}", "stumps{rounds=50,lr=0.2}"}},
        {"second_stage_specs", {"ridge{l2=0.1,degree=1}"}},
    };
    const SimConfig c = sim_config_from_json(j);
    REQUIRE(c.setup == 2);
    REQUIRE(c.learners.size() == 4);
    REQUIRE(c.n_per_split == 100);
    REQUIRE(c.replications == 7);
    REQUIRE(c.k_folds == 3);
    REQUIRE(c.master_seed == 99);
    REQUIRE(c.dgp.d == 8);
    REQUIRE(c.dgp.sigma == 0.25);
    REQUIRE(c.dgp.alpha_clip.has_value());
    REQUIRE(c.outcome_specs.size() == 2);
    REQUIRE_NOTHROW(c.validate());

    SimConfig bad = c;
    bad.metrics = {"rmse"};
    CHECK_THROWS_AS(bad.validate(), InvalidParams);
    bad = c;
    bad.learners = {"banana"};
    CHECK_THROWS_AS(bad.validate(), InvalidParams);
}

TEST_CASE("learner strings parse to the right templates", "[bench]") {
    REQUIRE(parse_learner_choice("t").learner_template == LearnerTemplate::t_learner);
    REQUIRE(parse_learner_choice("ipw").learner_template == LearnerTemplate::ipw);
    REQUIRE(parse_learner_choice("dr").weight_kind.family == WeightFamily::constant);
    REQUIRE(parse_learner_choice("ps-dr").weight_kind.family ==
            WeightFamily::propensity);
    REQUIRE(parse_learner_choice("control-dr").weight_kind.family ==
            WeightFamily::one_minus_propensity);
    REQUIRE(parse_learner_choice("smoothed{alpha=0.15,steepness=20}")
                .weight_kind.steepness == 20.0);
}

TEST_CASE("analyze writes predictions and summaries", "[bench]") {
    // synthetic 100-row dataset on disk
    DgpParams params;
    params.n = 100;
    params.d = 6;
    params.seed = 8;
    const SyntheticDataset sd = generate(SetupId::setup2, params);
    const std::string csv_path = "analyze_test_input.csv";
    dataset_to_csv(sd.data, csv_path);

    SimConfig roster;
    roster.propensity_specs = {LearnerSpec::logistic(1e-2)};
    roster.outcome_specs = {LearnerSpec::ridge(1e-2, 1)};
    roster.second_stage_specs = {LearnerSpec::ridge(1e-2, 1)};

    const std::string out_dir = "analyze_test_out";
    const AnalysisOutput out =
        analyze(csv_path, {"x1", "x2"}, {"dr", "r"}, 2, 5, out_dir, roster);
    REQUIRE(out.n_test == 34);  // ceil(100 / 3)
    REQUIRE(out.summaries.size() == 2);

    std::ifstream pred(out.predictions_path);
    std::string line;
    std::getline(pred, line);
    REQUIRE(line == "row_id,learner,tau_hat,pi_hat,a");
    std::size_t rows = 0;
    while (std::getline(pred, line))
        if (!line.empty()) ++rows;
    REQUIRE(rows == 2 * 34);

    std::ifstream sum(out.summary_path);
    nlohmann::json j;
    sum >> j;
    REQUIRE(j["learners"].contains("dr"));
    REQUIRE(j["learners"].contains("r"));
    REQUIRE(j["n_test"] == 34);

    // determinism of the whole pipeline
    const AnalysisOutput again =
        analyze(csv_path, {"x1", "x2"}, {"dr", "r"}, 2, 5, out_dir, roster);
    REQUIRE(again.summaries[0].tau_mean == out.summaries[0].tau_mean);
    REQUIRE(again.summaries[1].tau_sd == out.summaries[1].tau_sd);

    // t-learner on a proper subset is rejected
    CHECK_THROWS_AS(analyze(csv_path, {"x1", "x2"}, {"t"}, 2, 5, out_dir, roster),
                    VSubsetNotSupported);

    std::filesystem::remove(csv_path);
    std::filesystem::remove_all(out_dir);
}

TEST_CASE("analyze with zero outcomes yields zero effects", "[bench]") {
    DgpParams params;
    params.n = 60;
    params.d = 6;
    params.seed = 9;
    SyntheticDataset sd = generate(SetupId::setup2, params);
    for (double& y : sd.data.y) y = 0.0;
    const std::string csv_path = "analyze_zero_input.csv";
    dataset_to_csv(sd.data, csv_path);

    SimConfig roster;
    roster.propensity_specs = {LearnerSpec::logistic(1e-2)};
    roster.outcome_specs = {LearnerSpec::ridge(1e-2, 1)};
    roster.second_stage_specs = {LearnerSpec::ridge(1e-2, 1)};
    const std::string out_dir = "analyze_zero_out";
    const AnalysisOutput out =
        analyze(csv_path, {"x1"}, {"dr"}, 2, 3, out_dir, roster);
    REQUIRE(std::abs(out.summaries[0].tau_mean) < 1e-9);

    std::filesystem::remove(csv_path);
    std::filesystem::remove_all(out_dir);
}

TEST_CASE("simulation can dump the generated data", "[bench]") {
    SimConfig config = small_config();
    config.replications = 1;
    config.dump_data_dir = "bench_dump_dir";
    run_simulation(config);
    REQUIRE(std::filesystem::exists("bench_dump_dir/rep_0_train.csv"));
    REQUIRE(std::filesystem::exists("bench_dump_dir/rep_0_test.csv"));
    std::ifstream in("bench_dump_dir/rep_0_train.csv");
    std::string header;
    std::getline(in, header);
    REQUIRE(header.find(",pi0,tau,y0,y1") != std::string::npos);
    std::filesystem::remove_all("bench_dump_dir");
}
