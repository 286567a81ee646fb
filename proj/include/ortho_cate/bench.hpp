#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <limits>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "ortho_cate/core.hpp"
#include "ortho_cate/dgp.hpp"
#include "ortho_cate/errors.hpp"
#include "ortho_cate/meta_learners.hpp"
#include "ortho_cate/metrics.hpp"

namespace ortho_cate {

// A learner request as it appears on the command line or in configs:
// t | ipw | dr | ps-dr | r | control-dr | smoothed{...}.
struct LearnerChoice {
    LearnerTemplate learner_template = LearnerTemplate::orthogonal;
    WeightKind weight_kind = WeightKind::constant();
    std::string name;
};

inline LearnerChoice parse_learner_choice(const std::string& text) {
    LearnerChoice c;
    c.name = text;
    if (text == "t") {
        c.learner_template = LearnerTemplate::t_learner;
    } else if (text == "ipw") {
        c.learner_template = LearnerTemplate::ipw;
    } else {
        c.learner_template = LearnerTemplate::orthogonal;
        c.weight_kind = parse_weight_kind(text);
    }
    return c;
}

inline std::vector<LearnerSpec> default_propensity_specs() {
    return {LearnerSpec::logistic(1e-3), LearnerSpec::stumps(200, 0.1)};
}
inline std::vector<LearnerSpec> default_outcome_specs() {
    return {LearnerSpec::ridge(1e-3, 2), LearnerSpec::stumps(200, 0.1)};
}
inline std::vector<LearnerSpec> default_second_stage_specs() {
    return {LearnerSpec::ridge(1e-2, 1)};
}

struct SimConfig {
    int setup = 1;
    DgpParams dgp;
    std::vector<std::string> learners;
    std::size_t n_per_split = 500;
    std::size_t replications = 1000;
    int k_folds = 5;
    bool paper_protocol = false;  // forces the two-part split, K = 2
    std::uint64_t master_seed = 1;
    std::vector<std::string> metrics{"mse", "mse_treated", "mse_pow"};
    std::string output;
    int parallelism = 0;  // 0 = hardware concurrency
    double eps = 0.01;
    std::vector<LearnerSpec> propensity_specs = default_propensity_specs();
    std::vector<LearnerSpec> outcome_specs = default_outcome_specs();
    std::vector<LearnerSpec> second_stage_specs = default_second_stage_specs();
    std::string dump_data_dir;

    int effective_k() const { return paper_protocol ? 2 : k_folds; }

    void validate() const {
        if (setup < 1 || setup > 3) throw InvalidParams("setup must be 1, 2 or 3");
        if (replications < 1) throw InvalidParams("replications must be >= 1");
        if (learners.empty()) throw InvalidParams("learners must be nonempty");
        if (n_per_split < 4) throw InvalidParams("n_per_split too small");
        if (metrics.empty()) throw InvalidParams("metrics must be nonempty");
        for (const std::string& m : metrics)
            if (m != "mse" && m != "mse_treated" && m != "mse_pow")
                throw InvalidParams("unknown metric '" + m + "'");
        for (const std::string& l : learners) parse_learner_choice(l);
    }
};

struct ResultRow {
    std::size_t rep = 0;
    std::string learner;
    std::string metric;
    double value = std::numeric_limits<double>::quiet_NaN();
    std::string status = "ok";
    std::uint64_t seed = 0;
};

using ResultTable = std::vector<ResultRow>;

namespace detail {

inline int resolve_parallelism(int requested) {
    if (const char* env = std::getenv("ORTHO_CATE_THREADS")) {
        const int v = std::atoi(env);
        if (v > 0) return v;
    }
    if (requested > 0) return requested;
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
}

inline SyntheticDataset synth_subset(const SyntheticDataset& sd,
                                     std::span<const std::size_t> rows) {
    SyntheticDataset out;
    out.setup_id = sd.setup_id;
    out.params = sd.params;
    out.data = subset(sd.data, rows);
    out.pi0 = gather<double>(sd.pi0, rows);
    out.tau = gather<double>(sd.tau, rows);
    out.y0 = gather<double>(sd.y0, rows);
    out.y1 = gather<double>(sd.y1, rows);
    out.q0_mean = gather<double>(sd.q0_mean, rows);
    out.q1_mean = gather<double>(sd.q1_mean, rows);
    return out;
}

inline OrthogonalFitConfig make_fit_config(const SimConfig& config,
                                           const LearnerChoice& choice,
                                           std::uint64_t seed) {
    OrthogonalFitConfig fc;
    fc.weight_kind = choice.weight_kind;
    fc.k_folds = config.effective_k();
    fc.propensity_specs = config.propensity_specs;
    fc.outcome_specs = config.outcome_specs;
    fc.second_stage_specs = config.second_stage_specs;
    fc.eps = config.eps;
    fc.seed = seed;
    return fc;
}

inline CateModel fit_choice(const LearnerChoice& choice, const Dataset& train,
                            const SimConfig& config, std::uint64_t seed) {
    switch (choice.learner_template) {
        case LearnerTemplate::t_learner:
            return fit_t_learner(train, config.outcome_specs, config.effective_k(),
                                 seed);
        case LearnerTemplate::ipw:
            return fit_ipw_learner(train, make_fit_config(config, choice, seed));
        case LearnerTemplate::orthogonal:
            return fit_orthogonal_learner(train,
                                          make_fit_config(config, choice, seed));
    }
    throw InvalidParams("unknown learner template");
}

// The psDR-Learner estimates the effect in the treated, so by default it is
// scored on mse_treated only.
inline std::vector<std::string> metrics_for(const LearnerChoice& choice,
                                            const std::vector<std::string>& metrics) {
    if (choice.learner_template == LearnerTemplate::orthogonal &&
        choice.weight_kind.family == WeightFamily::propensity) {
        std::vector<std::string> out;
        for (const std::string& m : metrics)
            if (m == "mse_treated") out.push_back(m);
        return out;
    }
    return metrics;
}

inline double eval_metric(const std::string& metric,
                          std::span<const double> tau_hat,
                          const SyntheticDataset& test) {
    if (metric == "mse") return mse(tau_hat, test.tau);
    if (metric == "mse_treated") return mse_treated(tau_hat, test.tau, test.data.a);
    return mse_pow(tau_hat, test.tau, test.pi0);
}

inline ResultTable run_replication(const SimConfig& config, std::size_t rep) {
    const std::uint64_t seed_r = config.master_seed ^ splitmix64(rep);
    DgpParams params = config.dgp;
    params.n = 3 * config.n_per_split;
    params.seed = seed_r;
    const SyntheticDataset all = generate(static_cast<SetupId>(config.setup), params);

    std::vector<std::size_t> train_rows(2 * config.n_per_split);
    std::vector<std::size_t> test_rows(config.n_per_split);
    for (std::size_t i = 0; i < train_rows.size(); ++i) train_rows[i] = i;
    for (std::size_t i = 0; i < test_rows.size(); ++i)
        test_rows[i] = 2 * config.n_per_split + i;
    const Dataset train = subset(all.data, train_rows);
    const SyntheticDataset test = synth_subset(all, test_rows);
    const Matrix v_test = v_matrix(test.data);

    if (!config.dump_data_dir.empty()) {
        namespace fs = std::filesystem;
        fs::create_directories(config.dump_data_dir);
        synthetic_to_csv(synth_subset(all, train_rows),
                         config.dump_data_dir + "/rep_" + std::to_string(rep) +
                             "_train.csv");
        synthetic_to_csv(test, config.dump_data_dir + "/rep_" +
                                   std::to_string(rep) + "_test.csv");
    }

    ResultTable rows;
    for (std::size_t li = 0; li < config.learners.size(); ++li) {
        const LearnerChoice choice = parse_learner_choice(config.learners[li]);
        const std::vector<std::string> wanted =
            metrics_for(choice, config.metrics);
        if (wanted.empty()) continue;
        try {
            const CateModel model = fit_choice(
                choice, train, config, derive_seed(seed_r, 0x1000 + li));
            const std::vector<double> tau_hat = predict_cate(model, v_test);
            for (const std::string& metric : wanted)
                rows.push_back({rep, choice.name, metric,
                                eval_metric(metric, tau_hat, test), "ok", seed_r});
        } catch (const Error&) {
            for (const std::string& metric : wanted)
                rows.push_back({rep, choice.name, metric,
                                std::numeric_limits<double>::quiet_NaN(), "error",
                                seed_r});
        }
    }
    return rows;
}

}  // namespace detail

// Seeded Monte Carlo study: one row per (replication, learner, metric),
// deterministic for a given config and independent of the worker count.
inline ResultTable run_simulation(const SimConfig& config) {
    config.validate();
    const std::size_t reps = config.replications;
    std::vector<ResultTable> slots(reps);
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;

    const int workers =
        std::max(1, std::min<int>(detail::resolve_parallelism(config.parallelism),
                                  static_cast<int>(reps)));
    auto body = [&]() {
        for (;;) {
            const std::size_t r = next.fetch_add(1);
            if (r >= reps) return;
            try {
                slots[r] = detail::run_replication(config, r);
            } catch (...) {
                const std::lock_guard<std::mutex> lock(failure_mutex);
                if (!failure) failure = std::current_exception();
                return;
            }
        }
    };
    if (workers == 1) {
        body();
    } else {
        std::vector<std::thread> pool;
        pool.reserve(static_cast<std::size_t>(workers));
        for (int t = 0; t < workers; ++t) pool.emplace_back(body);
        for (std::thread& t : pool) t.join();
    }
    if (failure) std::rethrow_exception(failure);

    ResultTable rows;
    for (ResultTable& slot : slots)
        for (ResultRow& row : slot) rows.push_back(std::move(row));
    std::sort(rows.begin(), rows.end(), [](const ResultRow& x, const ResultRow& y) {
        if (x.rep != y.rep) return x.rep < y.rep;
        if (x.learner != y.learner) return x.learner < y.learner;
        return x.metric < y.metric;
    });
    return rows;
}

inline std::string result_table_to_csv(const ResultTable& rows) {
    std::string out = "rep,learner,metric,value,status,seed\n";
    for (const ResultRow& r : rows) {
        out += std::to_string(r.rep);
        out += ',' + r.learner + ',' + r.metric + ',';
        out += std::isnan(r.value) ? "nan" : detail::format_double(r.value);
        out += ',' + r.status + ',' + std::to_string(r.seed) + '\n';
    }
    return out;
}

inline void write_result_table(const ResultTable& rows, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw InvalidParams("cannot open file for writing: " + path);
    out << result_table_to_csv(rows);
}

inline double mean_metric(const ResultTable& rows, const std::string& learner,
                          const std::string& metric) {
    std::vector<double> values;
    for (const ResultRow& r : rows)
        if (r.learner == learner && r.metric == metric && r.status == "ok")
            values.push_back(r.value);
    if (values.empty()) throw Empty("no rows for " + learner + "/" + metric);
    return mean(values);
}

// ---------------------------------------------------------------------------
// Real-data analysis runs (workflow shape of the empirical study).

struct AnalysisSummary {
    std::string learner;
    double tau_mean = 0.0;
    double tau_sd = 0.0;
};

struct AnalysisOutput {
    std::string predictions_path;
    std::string summary_path;
    std::vector<AnalysisSummary> summaries;
    std::size_t n_test = 0;
};

// Splits the data 2:1 into train/test, fits the requested learners with
// cross-fitting on the train part, and writes per-test-row predictions
// (row_id, learner, tau_hat, pi_hat, a) plus a summary JSON with the mean
// and sd of tau_hat per learner.
inline AnalysisOutput analyze(const std::string& data_csv,
                              const std::vector<std::string>& v_names,
                              const std::vector<std::string>& learners, int k_folds,
                              std::uint64_t seed, const std::string& output_dir,
                              const SimConfig& roster = SimConfig{}) {
    if (learners.empty()) throw InvalidParams("learners must be nonempty");
    const Dataset data = dataset_from_csv(data_csv, v_names);

    std::vector<std::size_t> order(data.n());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(derive_seed(seed, 0xA11));
    for (std::size_t i = order.size(); i-- > 1;) {
        const std::size_t j = rng.below(i + 1);
        std::swap(order[i], order[j]);
    }
    const std::size_t n_test = (data.n() + 2) / 3;  // 2:1 train:test
    const std::vector<std::size_t> test_rows(order.begin(),
                                             order.begin() + n_test);
    const std::vector<std::size_t> train_rows(order.begin() + n_test, order.end());
    const Dataset train = subset(data, train_rows);
    const Dataset test = subset(data, test_rows);
    const Matrix v_test = v_matrix(test);

    SimConfig config = roster;
    config.k_folds = k_folds;
    config.learners = learners;

    // One pooled propensity fit supplies the reported pi_hat on the test set.
    std::vector<double> a_real(train.n());
    for (std::size_t i = 0; i < train.n(); ++i)
        a_real[i] = static_cast<double>(train.a[i]);
    const std::vector<double> ones(train.n(), 1.0);
    const LearnerSpec pi_spec = detail::choose_spec(
        config.propensity_specs, train.x, a_real, ones, k_folds,
        derive_seed(seed, 0xA12));
    const PropensityModel pi_model =
        fit_propensity(pi_spec, train.x, train.a, config.eps);
    const std::vector<double> pi_hat = predict_propensity(pi_model, test.x);

    namespace fs = std::filesystem;
    fs::create_directories(output_dir);
    AnalysisOutput out;
    out.n_test = n_test;
    out.predictions_path = output_dir + "/predictions.csv";
    out.summary_path = output_dir + "/summary.json";

    std::ofstream pred(out.predictions_path);
    if (!pred) throw InvalidParams("cannot write " + out.predictions_path);
    pred << "row_id,learner,tau_hat,pi_hat,a\n";

    nlohmann::json summary = nlohmann::json::object();
    summary["seed"] = seed;
    summary["n_test"] = n_test;
    summary["learners"] = nlohmann::json::object();
    for (std::size_t li = 0; li < learners.size(); ++li) {
        const LearnerChoice choice = parse_learner_choice(learners[li]);
        const CateModel model =
            detail::fit_choice(choice, train, config, derive_seed(seed, 0xB00 + li));
        const std::vector<double> tau_hat = predict_cate(model, v_test);
        for (std::size_t r = 0; r < test_rows.size(); ++r)
            pred << test_rows[r] << ',' << choice.name << ','
                 << detail::format_double(tau_hat[r]) << ','
                 << detail::format_double(pi_hat[r]) << ',' << test.a[r] << '\n';
        const double m = mean(tau_hat);
        double ss = 0.0;
        for (double t : tau_hat) ss += (t - m) * (t - m);
        const double sd =
            tau_hat.size() > 1 ? std::sqrt(ss / static_cast<double>(tau_hat.size() - 1))
                               : 0.0;
        out.summaries.push_back({choice.name, m, sd});
        summary["learners"][choice.name] = {{"tau_mean", m}, {"tau_sd", sd}};
    }
    std::ofstream sum(out.summary_path);
    if (!sum) throw InvalidParams("cannot write " + out.summary_path);
    sum << summary.dump(2) << '\n';
    return out;
}

// ---------------------------------------------------------------------------
// JSON config parsing.

inline std::vector<LearnerSpec> specs_from_json(const nlohmann::json& j) {
    std::vector<LearnerSpec> out;
    for (const auto& item : j) out.push_back(parse_learner_spec(item.get<std::string>()));
    return out;
}

inline DgpParams dgp_from_json(const nlohmann::json& j) {
    DgpParams p;
    if (j.contains("d")) p.d = j["d"].get<std::size_t>();
    if (j.contains("sigma")) p.sigma = j["sigma"].get<double>();
    if (j.contains("alpha_clip")) p.alpha_clip = j["alpha_clip"].get<double>();
    if (j.contains("theta")) p.theta = j["theta"].get<double>();
    if (j.contains("r2_y")) p.r2_y = j["r2_y"].get<double>();
    if (j.contains("r2_d")) p.r2_d = j["r2_d"].get<double>();
    if (j.contains("n")) p.n = j["n"].get<std::size_t>();
    if (j.contains("seed")) p.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("setup1_propensity")) {
        const std::string mode = j["setup1_propensity"].get<std::string>();
        if (mode == "logistic")
            p.setup1_propensity = Setup1PropensityMode::logistic;
        else if (mode == "clamped")
            p.setup1_propensity = Setup1PropensityMode::clamped_inverse_exp;
        else
            throw InvalidParams("setup1_propensity must be 'clamped' or 'logistic'");
    }
    return p;
}

inline SimConfig sim_config_from_json(const nlohmann::json& j) {
    SimConfig c;
    if (j.contains("setup")) c.setup = j["setup"].get<int>();
    if (j.contains("dgp")) c.dgp = dgp_from_json(j["dgp"]);
    if (j.contains("learners"))
        c.learners = j["learners"].get<std::vector<std::string>>();
    if (j.contains("n_per_split")) c.n_per_split = j["n_per_split"].get<std::size_t>();
    if (j.contains("replications"))
        c.replications = j["replications"].get<std::size_t>();
    if (j.contains("K")) c.k_folds = j["K"].get<int>();
    if (j.contains("paper_protocol")) c.paper_protocol = j["paper_protocol"].get<bool>();
    if (j.contains("master_seed")) c.master_seed = j["master_seed"].get<std::uint64_t>();
    if (j.contains("metrics")) c.metrics = j["metrics"].get<std::vector<std::string>>();
    if (j.contains("output")) c.output = j["output"].get<std::string>();
    if (j.contains("parallelism")) c.parallelism = j["parallelism"].get<int>();
    if (j.contains("eps")) c.eps = j["eps"].get<double>();
    if (j.contains("propensity_specs"))
        c.propensity_specs = specs_from_json(j["propensity_specs"]);
    if (j.contains("outcome_specs")) c.outcome_specs = specs_from_json(j["outcome_specs"]);
    if (j.contains("second_stage_specs"))
        c.second_stage_specs = specs_from_json(j["second_stage_specs"]);
    if (j.contains("dump_data_dir")) c.dump_data_dir = j["dump_data_dir"].get<std::string>();
    return c;
}

inline SimConfig sim_config_from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InvalidParams("cannot open config " + path);
    nlohmann::json j;
    in >> j;
    return sim_config_from_json(j);
}

}  // namespace ortho_cate
