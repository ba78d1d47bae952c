// Command-line front end: data simulation, invariance testing, invariant
// policy learning, the two simulation experiments and the tabular pipeline.

#include <CLI11.hpp>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "ipl/csv.hpp"
#include "ipl/eval.hpp"
#include "ipl/learner.hpp"
#include "ipl/scm.hpp"
#include "ipl/tabular.hpp"

namespace fs = std::filesystem;
using ipl::json;

namespace {

constexpr const char* kVersion = "0.1.0";

std::uint64_t fnv1a64(const std::string& s) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

struct ManifestWriter {
    std::string command;
    json config;
    std::uint64_t seed = 0;
    std::vector<std::string> outputs;
    std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();

    void write(const std::string& path) {
        const double wall =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        std::ostringstream hash_src;
        hash_src << config.dump();
        json manifest{{"command", command},
                      {"config", config},
                      {"config_hash", fnv1a64(hash_src.str())},
                      {"master_seed", seed},
                      {"tool_version", kVersion},
                      {"wall_clock_sec", wall},
                      {"outputs", outputs}};
        std::ofstream f(path);
        if (!f) throw ipl::Error("cannot write manifest: " + path);
        f << manifest.dump(2) << "\n";
        outputs.push_back(path);
    }
};

std::uint64_t effective_seed(std::uint64_t cli_seed) {
    if (const char* env = std::getenv("IPL_SEED")) return std::strtoull(env, nullptr, 10);
    return cli_seed;
}

ipl::SubsetMask parse_subset(const std::string& text) {
    if (text.empty() || text == "none" || text == "{}") return ipl::SubsetMask();
    std::vector<int> idx;
    std::stringstream ss(text);
    std::string cell;
    while (std::getline(ss, cell, ',')) idx.push_back(std::stoi(cell));
    return ipl::SubsetMask(std::move(idx));
}

std::vector<int> parse_int_list(const std::string& text) {
    std::vector<int> out;
    std::stringstream ss(text);
    std::string cell;
    while (std::getline(ss, cell, ',')) out.push_back(std::stoi(cell));
    return out;
}

std::vector<double> parse_double_list(const std::string& text) {
    std::vector<double> out;
    std::stringstream ss(text);
    std::string cell;
    while (std::getline(ss, cell, ',')) out.push_back(std::stod(cell));
    return out;
}

ipl::TestMode parse_mode(const std::string& mode) {
    if (mode == "fixed") return ipl::TestMode::Fixed;
    if (mode == "per-action") return ipl::TestMode::PerAction;
    if (mode == "power-opt") return ipl::TestMode::PowerOpt;
    throw CLI::ValidationError("--mode", "expected fixed|per-action|power-opt");
}

ipl::ScmConfig load_scm(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ipl::Error("cannot open config: " + path);
    json j;
    f >> j;
    return ipl::ScmConfig::from_json(j);
}

// --- simulate ---------------------------------------------------------------

struct SimulateArgs {
    std::string config_path, envs = "", policy = "uniform", out;
    int n = 1000, warmup_n = 3000;
    std::uint64_t seed = 1;
};

int run_simulate(const SimulateArgs& args) {
    ManifestWriter manifest;
    manifest.command = "simulate";
    const std::uint64_t seed = effective_seed(args.seed);
    manifest.seed = seed;
    const ipl::ScmConfig scm = load_scm(args.config_path);
    std::vector<std::string> env_ids =
        args.envs.empty() ? scm.env_ids() : [&] {
            std::vector<std::string> ids;
            std::stringstream ss(args.envs);
            std::string cell;
            while (std::getline(ss, cell, ',')) ids.push_back(cell);
            return ids;
        }();

    ipl::Policy policy = ipl::Policy::uniform(scm.scm.k);
    if (args.policy.rfind("constant:", 0) == 0) {
        policy = ipl::Policy::constant(scm.scm.k, std::stoi(args.policy.substr(9)));
    } else if (args.policy == "initial") {
        const ipl::EnvDataset warmup = ipl::sample_pooled(
            scm, env_ids, ipl::Policy::uniform(scm.scm.k),
            std::max(1, args.warmup_n / static_cast<int>(env_ids.size())),
            ipl::derive_seed(seed, {0x3a}));
        policy = ipl::make_initial_policy(warmup);
    } else if (args.policy != "uniform") {
        throw CLI::ValidationError("--policy", "expected uniform|initial|constant:<a>");
    }

    const int per_env = std::max(1, args.n / static_cast<int>(env_ids.size()));
    const ipl::EnvDataset data =
        ipl::sample_pooled(scm, env_ids, policy, per_env, ipl::derive_seed(seed, {0xda7a}));
    ipl::write_logged_csv(args.out, data);
    manifest.config = json{{"scm", scm.to_json()},  {"envs", env_ids}, {"policy", args.policy},
                           {"n_per_env", per_env},  {"seed", seed},    {"out", args.out}};
    manifest.outputs.push_back(args.out);
    manifest.write(args.out + ".manifest.json");
    std::cout << "wrote " << data.size() << " rounds to " << args.out << "\n";
    return 0;
}

// --- test-invariance ---------------------------------------------------------

struct TestArgs {
    std::string data_path, subset, mode = "fixed", out;
    double alpha = 0.05, theta_scale = 1.0, learning_rate = 1e-3;
    int iterations = 200, k_override = 0;
    std::string resample = "distinct";
    std::uint64_t seed = 1;
};

int run_test_invariance(const TestArgs& args) {
    const std::uint64_t seed = effective_seed(args.seed);
    const ipl::EnvDataset data = ipl::read_logged_csv(args.data_path, args.k_override);
    const ipl::SubsetMask subset = parse_subset(args.subset);
    subset.check_bounds(data.d);
    const ipl::ResampleMode mode = args.resample == "replacement"
                                       ? ipl::ResampleMode::Replacement
                                       : ipl::ResampleMode::Distinct;
    ipl::TestReport report;
    switch (parse_mode(args.mode)) {
        case ipl::TestMode::Fixed:
            report = ipl::test_invariance_fixed_policy(
                data, ipl::spread_softmax_policy(data.k, subset, args.theta_scale), subset,
                ipl::sqrt_m_rule(), args.alpha, seed, mode);
            break;
        case ipl::TestMode::PerAction:
            report = ipl::test_invariance_per_action(data, subset, ipl::sqrt_m_rule(),
                                                     args.alpha, seed, mode);
            break;
        case ipl::TestMode::PowerOpt: {
            ipl::PowerOptConfig power;
            power.learning_rate = args.learning_rate;
            power.iterations = args.iterations;
            report = ipl::test_invariance_opt_policy(data, subset, ipl::sqrt_m_rule(),
                                                     args.alpha, power, seed);
            break;
        }
    }
    const std::string text = report.to_json().dump(2) + "\n";
    std::cout << text;
    if (!args.out.empty()) {
        std::ofstream f(args.out);
        f << text;
    }
    return 0;
}

// --- learn -------------------------------------------------------------------

struct LearnArgs {
    std::string data_path, mode = "fixed", out;
    double alpha = 0.05, theta_scale = 1.0, learning_rate = 1e-3;
    int iterations = 200, max_subset_size = -1, folds = 4, jobs = 1, top_k = 20, k_override = 0;
    std::uint64_t seed = 1;
};

int run_learn(const LearnArgs& args) {
    const std::uint64_t seed = effective_seed(args.seed);
    const ipl::EnvDataset data = ipl::read_logged_csv(args.data_path, args.k_override);
    ipl::LearnerConfig config;
    config.alpha = args.alpha;
    config.test_mode = parse_mode(args.mode);
    config.max_subset_size = args.max_subset_size;
    config.value_folds = args.folds;
    config.seed = seed;
    config.fixed_policy_scale = args.theta_scale;
    config.power.learning_rate = args.learning_rate;
    config.power.iterations = args.iterations;
    config.jobs = args.jobs;
    config.top_k = args.top_k;
    const ipl::LearnResult result = ipl::learn_invariant_policy(data, config);
    const std::string text = result.to_json().dump(2) + "\n";
    std::cout << text;
    if (!args.out.empty()) {
        std::ofstream f(args.out);
        f << text;
    }
    return 0;
}

// --- experiments ---------------------------------------------------------------

struct GeneralizationArgs {
    std::string out_dir = "out-generalization";
    int train_envs = 2, n = 10000, test_pairs = 20, n_mc = 100000, warmup_n = 3000, jobs = 1,
        k = 3;
    bool extreme_grid = false;
    std::uint64_t seed = 4;  // the validated frozen experiment draw
};

int run_eval_generalization(const GeneralizationArgs& args) {
    ManifestWriter manifest;
    manifest.command = "eval-generalization";
    const std::uint64_t seed = effective_seed(args.seed);
    manifest.seed = seed;
    ipl::ExperimentConfig config;
    config.seed = seed;
    config.k = args.k;
    config.train_n = args.n;
    config.test_env_pairs = args.test_pairs;
    config.n_mc = args.n_mc;
    config.warmup_n = args.warmup_n;
    config.extreme_grid = args.extreme_grid;
    config.jobs = args.jobs;
    const ipl::GeneralizationResult result =
        ipl::run_generalization_experiment(config, args.train_envs);
    fs::create_directories(args.out_dir);
    const std::string csv_path = (fs::path(args.out_dir) / "generalization.csv").string();
    {
        std::ofstream f(csv_path);
        ipl::write_generalization_csv(f, result.rows);
    }
    manifest.config = json{{"train_envs", args.train_envs}, {"n", args.n},
                           {"test_pairs", args.test_pairs}, {"n_mc", args.n_mc},
                           {"warmup_n", args.warmup_n},     {"extreme_grid", args.extreme_grid},
                           {"seed", seed},                  {"scm", result.scm.to_json()}};
    manifest.outputs.push_back(csv_path);
    manifest.write((fs::path(args.out_dir) / "manifest.json").string());
    std::cout << "wrote " << result.rows.size() << " rows to " << csv_path << "\n";
    return 0;
}

struct AcceptanceArgs {
    std::string out_dir = "out-acceptance", env_counts = "2,6", n_grid = "1000,9000,27000",
                mode = "fixed";
    int reps = 100, warmup_n = 3000, jobs = 1, k = 3;
    double alpha = 0.05, theta_scale = 1.5;
    std::uint64_t seed = 4;  // the validated frozen experiment draw
};

int run_eval_acceptance(const AcceptanceArgs& args) {
    ManifestWriter manifest;
    manifest.command = "eval-acceptance";
    const std::uint64_t seed = effective_seed(args.seed);
    manifest.seed = seed;
    ipl::ExperimentConfig config;
    config.seed = seed;
    config.k = args.k;
    config.train_env_counts = parse_int_list(args.env_counts);
    config.n_grid = parse_int_list(args.n_grid);
    config.repetitions = args.reps;
    config.warmup_n = args.warmup_n;
    config.alpha = args.alpha;
    config.test_mode = parse_mode(args.mode);
    config.fixed_policy_scale = args.theta_scale;
    config.jobs = args.jobs;
    const ipl::AcceptanceResult result = ipl::run_acceptance_experiment(config);
    fs::create_directories(args.out_dir);
    const std::string csv_path = (fs::path(args.out_dir) / "acceptance.csv").string();
    {
        std::ofstream f(csv_path);
        ipl::write_acceptance_csv(f, result.rows);
    }
    json scms = json::array();
    for (const auto& scm : result.scm_per_arm) scms.push_back(scm.to_json());
    manifest.config = json{{"env_counts", config.train_env_counts},
                           {"n_grid", config.n_grid},
                           {"reps", args.reps},
                           {"alpha", args.alpha},
                           {"mode", args.mode},
                           {"theta_scale", args.theta_scale},
                           {"warmup_n", args.warmup_n},
                           {"seed", seed},
                           {"scm_per_arm", scms}};
    manifest.outputs.push_back(csv_path);
    manifest.write((fs::path(args.out_dir) / "manifest.json").string());
    std::cout << "wrote " << result.rows.size() << " rows to " << csv_path << "\n";
    return 0;
}

// --- tabular -------------------------------------------------------------------

struct GenTabularArgs {
    std::string out = "tabular.csv", gammas = "1,-1,2,-2";
    int rows = 5700, groups = 21, envs = 4;
    bool noninvariant = false;
    std::uint64_t seed = 1;
};

int run_gen_tabular(const GenTabularArgs& args) {
    ManifestWriter manifest;
    manifest.command = "gen-tabular";
    const std::uint64_t seed = effective_seed(args.seed);
    manifest.seed = seed;
    ipl::TabularGenConfig gen;
    gen.rows = args.rows;
    gen.groups = args.groups;
    gen.n_envs = args.envs;
    gen.seed = seed;
    ipl::TabularDataset ds = ipl::generate_synthetic_tabular(gen);
    if (args.noninvariant) {
        ipl::assign_environments(ds, args.envs, ipl::derive_seed(seed, {0xc1u}));
        const std::vector<double> gammas = parse_double_list(args.gammas);
        if (static_cast<int>(gammas.size()) != args.envs)
            throw ipl::Error("--gammas must list one value per environment");
        std::map<int, double> gamma_map;
        for (int e = 0; e < args.envs; ++e) gamma_map[e] = gammas[e];
        ds = ipl::build_noninvariant_feature(
            ds, {ds.feature_index("vkorc1"), ds.feature_index("cyp2c9")}, gamma_map);
    }
    ipl::write_tabular_csv(args.out, ds);
    manifest.config = json{{"rows", args.rows},   {"groups", args.groups},
                           {"envs", args.envs},   {"noninvariant", args.noninvariant},
                           {"gammas", args.gammas}, {"seed", seed}};
    manifest.outputs.push_back(args.out);
    manifest.write(args.out + ".manifest.json");
    std::cout << "wrote " << ds.n() << " rows to " << args.out << "\n";
    return 0;
}

struct PipelineArgs {
    std::string data_path, out_dir = "out-tabular", methods = "inv,pred,all,oracle-inv",
                cluster_spec;
    double alpha = 0.05;
    int envs = 4, top_p = 20, top_v = 3, folds = 4, max_subset_size = -1, jobs = 1;
    std::uint64_t seed = 1;
};

int run_pipeline_tabular(const PipelineArgs& args) {
    ManifestWriter manifest;
    manifest.command = "pipeline-tabular";
    const std::uint64_t seed = effective_seed(args.seed);
    manifest.seed = seed;

    int k_clusters = args.envs;
    int restarts = 10;
    json cluster_json;
    if (!args.cluster_spec.empty()) {
        std::ifstream f(args.cluster_spec);
        if (!f) throw ipl::Error("cannot open cluster spec: " + args.cluster_spec);
        f >> cluster_json;
        k_clusters = cluster_json.value("k_clusters", k_clusters);
        restarts = cluster_json.value("restarts", restarts);
    }

    ipl::TabularReadResult read = ipl::read_tabular_csv(args.data_path);
    ipl::TabularDataset& ds = read.data;
    {
        auto [groups, props] = ipl::group_race_proportions(ds);
        const ipl::ClusterResult clusters =
            ipl::cluster_environments(props, k_clusters, ipl::derive_seed(seed, {0xc1u}), restarts);
        ds.env.assign(ds.n(), -1);
        for (std::size_t i = 0; i < ds.n(); ++i) {
            const auto gi =
                std::find(groups.begin(), groups.end(), ds.group[i]) - groups.begin();
            ds.env[i] = clusters.assignment[gi];
        }
    }
    const ipl::TabularBandit bandit =
        ipl::make_tabular_bandit(ds, ipl::derive_seed(seed, {0x10cu}));

    std::vector<ipl::TabularMethod> methods;
    {
        std::stringstream ss(args.methods);
        std::string cell;
        while (std::getline(ss, cell, ',')) {
            if (cell == "inv") methods.push_back(ipl::TabularMethod::Inv);
            else if (cell == "pred") methods.push_back(ipl::TabularMethod::Pred);
            else if (cell == "all") methods.push_back(ipl::TabularMethod::All);
            else if (cell == "oracle-inv") methods.push_back(ipl::TabularMethod::OracleInv);
            else throw CLI::ValidationError("--methods", "unknown method " + cell);
        }
    }
    ipl::LooConfig loo;
    loo.alpha = args.alpha;
    loo.top_p_sets = args.top_p;
    loo.top_value_sets = args.top_v;
    loo.folds = args.folds;
    loo.max_subset_size = args.max_subset_size;
    loo.seed = ipl::derive_seed(seed, {0x100u});
    loo.jobs = args.jobs;
    const std::vector<ipl::LooCell> cells = ipl::leave_one_env_out(bandit, methods, loo);

    fs::create_directories(args.out_dir);
    const std::string csv_path = (fs::path(args.out_dir) / "leave_one_out.csv").string();
    {
        std::ofstream f(csv_path);
        ipl::write_loo_csv(f, cells);
    }
    manifest.config = json{{"data", args.data_path}, {"alpha", args.alpha},
                           {"envs", k_clusters},     {"top_p", args.top_p},
                           {"top_v", args.top_v},    {"folds", args.folds},
                           {"methods", args.methods}, {"dropped_rows", read.dropped_rows},
                           {"cluster_spec", cluster_json}, {"seed", seed}};
    manifest.outputs.push_back(csv_path);
    manifest.write((fs::path(args.out_dir) / "manifest.json").string());
    std::cout << "wrote " << cells.size() << " rows to " << csv_path << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{
        "ipl - invariant policy learning for multi-environment offline contextual bandits"};
    app.require_subcommand(1);
    app.footer(
        "Defaults: alpha=0.05, resample size m_e=floor(sqrt(n_e)), learning-rate=1e-3,\n"
        "iterations=200, folds=4, reps=100, theta-scale=1.0, top-k=20.\n"
        "The IPL_SEED environment variable overrides --seed when set.");

    SimulateArgs sim;
    auto* simulate = app.add_subcommand("simulate", "Generate logged bandit data from an SCM");
    simulate->add_option("--config", sim.config_path, "SCM config JSON")->required();
    simulate->add_option("--env", sim.envs, "Environment id(s), comma-separated (default: all)");
    simulate->add_option("--n", sim.n, "Total number of rounds")->capture_default_str();
    simulate->add_option("--policy", sim.policy, "uniform|initial|constant:<a>")
        ->capture_default_str();
    simulate->add_option("--warmup-n", sim.warmup_n, "Warmup rounds for --policy initial")
        ->capture_default_str();
    simulate->add_option("--seed", sim.seed, "Master seed")->capture_default_str();
    simulate->add_option("--out", sim.out, "Output CSV path")->required();

    TestArgs test;
    auto* testcmd =
        app.add_subcommand("test-invariance", "Off-policy invariance test for one subset");
    testcmd->add_option("--data", test.data_path, "Logged data CSV")->required();
    testcmd->add_option("--subset", test.subset, "Comma-separated indices; empty for {}");
    testcmd->add_option("--mode", test.mode, "fixed|per-action|power-opt")
        ->capture_default_str();
    testcmd->add_option("--alpha", test.alpha, "Significance level")->capture_default_str();
    testcmd->add_option("--theta-scale", test.theta_scale, "Fixed softmax test policy scale")
        ->capture_default_str();
    testcmd->add_option("--learning-rate", test.learning_rate, "Power-opt SGD rate")
        ->capture_default_str();
    testcmd->add_option("--iterations", test.iterations, "Power-opt SGD iterations")
        ->capture_default_str();
    testcmd->add_option("--resample", test.resample, "distinct|replacement")
        ->capture_default_str();
    testcmd->add_option("--k", test.k_override, "Action count override (default: inferred)");
    testcmd->add_option("--seed", test.seed, "Master seed")->capture_default_str();
    testcmd->add_option("--out", test.out, "Write the TestReport JSON here too");

    LearnArgs learn;
    auto* learncmd = app.add_subcommand("learn", "Learn an optimal invariant policy");
    learncmd->add_option("--data", learn.data_path, "Logged data CSV")->required();
    learncmd->add_option("--mode", learn.mode, "fixed|per-action|power-opt")
        ->capture_default_str();
    learncmd->add_option("--alpha", learn.alpha, "Significance level")->capture_default_str();
    learncmd->add_option("--max-subset-size", learn.max_subset_size,
                         "Cap on |S| (-1 = no cap)")
        ->capture_default_str();
    learncmd->add_option("--folds", learn.folds, "Cross-fitting folds for value estimates")
        ->capture_default_str();
    learncmd->add_option("--theta-scale", learn.theta_scale, "Fixed test policy scale")
        ->capture_default_str();
    learncmd->add_option("--learning-rate", learn.learning_rate, "Power-opt SGD rate")
        ->capture_default_str();
    learncmd->add_option("--iterations", learn.iterations, "Power-opt SGD iterations")
        ->capture_default_str();
    learncmd->add_option("--top-k", learn.top_k, "Top-K sets kept by accepted_sets")
        ->capture_default_str();
    learncmd->add_option("--jobs", learn.jobs, "Worker threads")->capture_default_str();
    learncmd->add_option("--k", learn.k_override, "Action count override");
    learncmd->add_option("--seed", learn.seed, "Master seed")->capture_default_str();
    learncmd->add_option("--out", learn.out, "Write the LearnResult JSON here too");

    GeneralizationArgs gen;
    auto* gencmd = app.add_subcommand("eval-generalization",
                                      "Regret vs. environment distance experiment");
    gencmd->add_option("--train-envs", gen.train_envs, "Training environment count")
        ->capture_default_str();
    gencmd->add_option("--n", gen.n, "Pooled training rounds")->capture_default_str();
    gencmd->add_option("--test-pairs", gen.test_pairs, "Mirrored test environment pairs")
        ->capture_default_str();
    gencmd->add_option("--n-mc", gen.n_mc, "Monte Carlo rounds per value")
        ->capture_default_str();
    gencmd->add_option("--warmup-n", gen.warmup_n, "Warmup rounds for pi0")
        ->capture_default_str();
    gencmd->add_flag("--extreme-grid", gen.extreme_grid,
                     "Also evaluate on the |gamma|,|alpha| <= 6 grid");
    gencmd->add_option("--jobs", gen.jobs, "Worker threads")->capture_default_str();
    gencmd->add_option("--seed", gen.seed, "Master seed")->capture_default_str();
    gencmd->add_option("--out-dir", gen.out_dir, "Output directory")->capture_default_str();

    AcceptanceArgs acc;
    auto* acccmd =
        app.add_subcommand("eval-acceptance", "Acceptance rates vs. sample size experiment");
    acccmd->add_option("--env-counts", acc.env_counts, "Training env count arms")
        ->capture_default_str();
    acccmd->add_option("--n-grid", acc.n_grid, "Total sample sizes")->capture_default_str();
    acccmd->add_option("--reps", acc.reps, "Repetitions per cell")->capture_default_str();
    acccmd->add_option("--mode", acc.mode, "fixed|per-action|power-opt")
        ->capture_default_str();
    acccmd->add_option("--alpha", acc.alpha, "Significance level")->capture_default_str();
    acccmd->add_option("--theta-scale", acc.theta_scale, "Fixed test policy scale")
        ->capture_default_str();
    acccmd->add_option("--warmup-n", acc.warmup_n, "Warmup rounds for pi0")
        ->capture_default_str();
    acccmd->add_option("--jobs", acc.jobs, "Worker threads")->capture_default_str();
    acccmd->add_option("--seed", acc.seed, "Master seed")->capture_default_str();
    acccmd->add_option("--out-dir", acc.out_dir, "Output directory")->capture_default_str();

    GenTabularArgs gtab;
    auto* gtabcmd = app.add_subcommand("gen-tabular", "Generate a synthetic warfarin-like CSV");
    gtabcmd->add_option("--rows", gtab.rows, "Row count")->capture_default_str();
    gtabcmd->add_option("--groups", gtab.groups, "Research group count")->capture_default_str();
    gtabcmd->add_option("--envs", gtab.envs, "Environment (cluster) count")
        ->capture_default_str();
    gtabcmd->add_flag("--noninvariant", gtab.noninvariant,
                      "Replace the genetic columns by the environment-dependent predictor");
    gtabcmd->add_option("--gammas", gtab.gammas, "Per-environment gamma values")
        ->capture_default_str();
    gtabcmd->add_option("--seed", gtab.seed, "Master seed")->capture_default_str();
    gtabcmd->add_option("--out", gtab.out, "Output CSV path")->capture_default_str();

    PipelineArgs pipe;
    auto* pipecmd = app.add_subcommand("pipeline-tabular",
                                       "Leave-one-environment-out tabular study");
    pipecmd->add_option("--data", pipe.data_path, "Tabular CSV (features + dose + group)")
        ->required();
    pipecmd->add_option("--methods", pipe.methods, "Comma list of inv,pred,all,oracle-inv")
        ->capture_default_str();
    pipecmd->add_option("--alpha", pipe.alpha, "Significance level")->capture_default_str();
    pipecmd->add_option("--envs", pipe.envs, "Environment (cluster) count")
        ->capture_default_str();
    pipecmd->add_option("--cluster-spec", pipe.cluster_spec,
                        "Clustering spec JSON (keys: k_clusters, restarts)");
    pipecmd->add_option("--top-p", pipe.top_p, "Candidate sets by largest p-value")
        ->capture_default_str();
    pipecmd->add_option("--top-v", pipe.top_v, "Final sets by estimated value")
        ->capture_default_str();
    pipecmd->add_option("--folds", pipe.folds, "Cross-fitting folds")->capture_default_str();
    pipecmd->add_option("--max-subset-size", pipe.max_subset_size, "Cap on |S| (-1 = no cap)")
        ->capture_default_str();
    pipecmd->add_option("--jobs", pipe.jobs, "Worker threads")->capture_default_str();
    pipecmd->add_option("--seed", pipe.seed, "Master seed")->capture_default_str();
    pipecmd->add_option("--out-dir", pipe.out_dir, "Output directory")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_name() == "CallForHelp" || e.get_name() == "CallForAllHelp" ||
            e.get_name() == "CallForVersion") {
            return app.exit(e);
        }
        std::cerr << e.what() << "\n\n" << app.help() << std::endl;
        return 1;
    }

    try {
        if (simulate->parsed()) return run_simulate(sim);
        if (testcmd->parsed()) return run_test_invariance(test);
        if (learncmd->parsed()) return run_learn(learn);
        if (gencmd->parsed()) return run_eval_generalization(gen);
        if (acccmd->parsed()) return run_eval_acceptance(acc);
        if (gtabcmd->parsed()) return run_gen_tabular(gtab);
        if (pipecmd->parsed()) return run_pipeline_tabular(pipe);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << std::endl;
        return 2;
    }
    return 0;
}
