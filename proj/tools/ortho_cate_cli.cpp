// Command-line driver: `simulate` runs seeded Monte Carlo studies,
// `analyze` fits learners on a CSV dataset, `diagnose` evaluates the
// error-bound diagnostics on synthetic data.

#include <cstdint>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "ortho_cate/ortho_cate.hpp"

namespace {

std::vector<std::string> split_commas(const std::string& text) {
    std::vector<std::string> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!item.empty()) out.push_back(item);
    return out;
}

int run_simulate(const std::string& config_path, bool paper_protocol,
                 const std::string& out_override, const std::string& dump_dir) {
    ortho_cate::SimConfig config = ortho_cate::sim_config_from_file(config_path);
    if (paper_protocol) config.paper_protocol = true;
    if (!out_override.empty()) config.output = out_override;
    if (!dump_dir.empty()) config.dump_data_dir = dump_dir;

    const ortho_cate::ResultTable rows = ortho_cate::run_simulation(config);
    if (config.output.empty()) {
        std::cout << ortho_cate::result_table_to_csv(rows);
    } else {
        ortho_cate::write_result_table(rows, config.output);
        std::cout << "wrote " << rows.size() << " rows to " << config.output << "\n";
    }
    for (const std::string& learner : config.learners) {
        const auto choice = ortho_cate::parse_learner_choice(learner);
        for (const std::string& metric :
             ortho_cate::detail::metrics_for(choice, config.metrics)) {
            std::string shown = "n/a";
            try {
                shown = std::to_string(ortho_cate::mean_metric(rows, learner, metric));
            } catch (const ortho_cate::Empty&) {
            }
            std::cout << learner << " mean " << metric << " = " << shown << "\n";
        }
    }
    return 0;
}

int run_analyze(const std::string& data, const std::string& v_arg,
                const std::string& learners_arg, int k, std::uint64_t seed,
                const std::string& out_dir) {
    const auto result = ortho_cate::analyze(data, split_commas(v_arg),
                                            split_commas(learners_arg), k, seed,
                                            out_dir);
    std::cout << "wrote " << result.predictions_path << " and "
              << result.summary_path << " (" << result.n_test << " test rows)\n";
    for (const auto& s : result.summaries)
        std::cout << s.learner << ": tau_hat = " << s.tau_mean << " +/- " << s.tau_sd
                  << "\n";
    return 0;
}

int run_diagnose(const std::string& config_path) {
    std::ifstream in(config_path);
    if (!in) throw ortho_cate::InvalidParams("cannot open config " + config_path);
    nlohmann::json j;
    in >> j;

    const int setup = j.value("setup", 2);
    ortho_cate::DgpParams params =
        j.contains("dgp") ? ortho_cate::dgp_from_json(j["dgp"]) : ortho_cate::DgpParams{};
    params.n = j.value("n", std::size_t{5000});
    params.seed = j.value("seed", std::uint64_t{1});
    const ortho_cate::WeightKind kind =
        ortho_cate::parse_weight_kind(j.value("learner", std::string("dr")));
    const double t_star = j.value("t", 0.5);

    ortho_cate::OrthogonalFitConfig fit_config;
    fit_config.weight_kind = kind;
    fit_config.k_folds = j.value("K", 5);
    fit_config.eps = j.value("eps", 0.01);
    fit_config.seed = params.seed;
    if (j.contains("propensity_specs"))
        fit_config.propensity_specs = ortho_cate::specs_from_json(j["propensity_specs"]);
    else
        fit_config.propensity_specs = ortho_cate::default_propensity_specs();
    if (j.contains("outcome_specs"))
        fit_config.outcome_specs = ortho_cate::specs_from_json(j["outcome_specs"]);
    else
        fit_config.outcome_specs = ortho_cate::default_outcome_specs();
    if (j.contains("second_stage_specs"))
        fit_config.second_stage_specs =
            ortho_cate::specs_from_json(j["second_stage_specs"]);
    else
        fit_config.second_stage_specs = ortho_cate::default_second_stage_specs();

    const auto synth =
        ortho_cate::generate(static_cast<ortho_cate::SetupId>(setup), params);
    const auto folds = ortho_cate::detail::stratified_kfold(
        synth.data.a, fit_config.k_folds,
        ortho_cate::derive_seed(fit_config.seed, 0xF01D));
    const auto eta = ortho_cate::crossfit_nuisances(synth.data, fit_config, folds);

    // Reuse the out-of-fold nuisances for the second stage.
    ortho_cate::OrthogonalFitConfig with_eta = fit_config;
    with_eta.oracle_nuisances = eta;
    const auto model = ortho_cate::fit_orthogonal_learner(synth.data, with_eta);
    const auto v = ortho_cate::v_matrix(synth.data);
    const auto g_hat = ortho_cate::predict_cate(model, v);

    const double risk_hat =
        ortho_cate::empirical_risk(synth.data, eta, kind, g_hat);
    const double risk_star =
        ortho_cate::empirical_risk(synth.data, eta, kind, synth.tau);
    const auto rems =
        ortho_cate::remainder_terms(synth, eta, synth.tau, kind, t_star);
    const double alpha_hat = ortho_cate::estimate_alpha_hat(
        synth.data.a, eta.pi_hat, kind, v, synth.tau,
        ortho_cate::derive_seed(params.seed, 0xA1FA));
    const auto report = ortho_cate::assemble_bound_report(risk_hat - risk_star,
                                                          rems, alpha_hat);

    nlohmann::json out;
    out["setup"] = setup;
    out["n"] = params.n;
    out["seed"] = params.seed;
    out["learner"] = ortho_cate::to_string(kind);
    out["K"] = fit_config.k_folds;
    out["star_hull_t"] = t_star;
    out["r_g"] = report.r_g;
    out["rem1"] = report.rem1;
    out["rem2"] = report.rem2;
    out["rem3"] = report.rem3;
    out["alpha_hat"] = report.alpha_hat;
    out["delta1"] = report.delta1;
    out["delta2"] = report.delta2;
    out["delta3"] = report.delta3;
    out["total_bound"] = report.total_bound;

    const std::string output = j.value("output", std::string());
    if (output.empty()) {
        std::cout << out.dump(2) << "\n";
    } else {
        std::ofstream f(output);
        if (!f) throw ortho_cate::InvalidParams("cannot write " + output);
        f << out.dump(2) << "\n";
        std::cout << "wrote " << output << "\n";
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Neyman-orthogonal CATE learners: simulation and analysis"};
    app.require_subcommand(1);

    auto* sim = app.add_subcommand("simulate", "run a Monte Carlo study");
    std::string sim_config;
    bool paper_protocol = false;
    std::string sim_out, dump_dir;
    sim->add_option("--config", sim_config, "SimConfig JSON file")->required();
    sim->add_flag("--paper-protocol", paper_protocol,
                  "two-part train split (K=2), as in the study protocol");
    sim->add_option("--out", sim_out, "override the output CSV path");
    sim->add_option("--dump-data", dump_dir,
                    "dump generated datasets as CSV into this directory");

    auto* ana = app.add_subcommand("analyze", "fit learners on a CSV dataset");
    std::string data_path, v_arg, learners_arg = "dr,r", out_dir = ".";
    int k = 5;
    std::uint64_t seed = 1;
    ana->add_option("--data", data_path, "input CSV with columns y,a,<features>")
        ->required();
    ana->add_option("--v", v_arg, "comma-separated conditioning columns")->required();
    ana->add_option("--learners", learners_arg,
                    "comma-separated learners (t|ipw|dr|ps-dr|r|control-dr|smoothed{..})");
    ana->add_option("--K", k, "number of cross-fitting folds");
    ana->add_option("--seed", seed, "random seed");
    ana->add_option("--out", out_dir, "output directory");

    auto* diag = app.add_subcommand("diagnose", "error-bound diagnostics");
    std::string diag_config;
    diag->add_option("--config", diag_config, "diagnostics JSON file")->required();

    CLI11_PARSE(app, argc, argv);
    try {
        if (sim->parsed())
            return run_simulate(sim_config, paper_protocol, sim_out, dump_dir);
        if (ana->parsed())
            return run_analyze(data_path, v_arg, learners_arg, k, seed, out_dir);
        return run_diagnose(diag_config);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
