#pragma once

#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include "ipl/common.hpp"
#include "ipl/csv.hpp"
#include "ipl/invariance.hpp"
#include "ipl/learner.hpp"
#include "ipl/policy_opt.hpp"
#include "ipl/scm.hpp"

namespace ipl {

/// Monte Carlo mean reward of a policy over fresh simulator rounds.
inline double policy_value_true(const ScmConfig& config, const std::string& env,
                                const Policy& policy, int n_mc, std::uint64_t seed) {
    return monte_carlo_value(config, env, policy, n_mc, seed);
}

/// Regret against the per-environment oracle, with common random numbers.
inline double regret(const ScmConfig& config, const std::string& env, const Policy& policy,
                     int n_mc, std::uint64_t seed) {
    return oracle_value(config, env, n_mc, seed) -
           policy_value_true(config, env, policy, n_mc, seed);
}

// Defaults reproduce the frozen desk-scale experiment configuration: the
// (beta, gamma, alpha) parameterization is drawn once from the master seed
// and fixed across repetitions; seed 4 ships a validated benign draw and
// scale 1.5 is the validated fixed test policy.
struct ExperimentConfig {
    std::uint64_t seed = 4;
    int k = 3;
    std::vector<int> train_env_counts = {2, 6};
    std::vector<int> n_grid = {1000, 9000, 27000};
    int repetitions = 100;
    int warmup_n = 3000;         // uniform-policy rounds used to fit pi0
    int n_mc = 100000;           // Monte Carlo rounds per value estimate
    int train_n = 10000;         // pooled training rounds (generalization)
    int test_env_pairs = 20;     // mirrored (gamma, alpha) / (-gamma, alpha) pairs
    bool mirrored_test_pairs = true;
    bool extreme_grid = false;   // also evaluate on a |gamma|,|alpha| <= 6 grid
    double alpha = 0.05;
    TestMode test_mode = TestMode::Fixed;
    double fixed_policy_scale = 1.5;
    int jobs = 1;
};

struct RegretRow {
    std::string env;
    double env_distance = 0.0;
    std::string policy;
    double value = 0.0;
    double regret = 0.0;
};

struct GeneralizationResult {
    std::vector<RegretRow> rows;
    ScmConfig scm;                        // training + test environments
    std::vector<std::string> train_envs;
};

/// Figure-2 style experiment: train an invariant ({X2}) and a non-invariant
/// ({X1,X2}) greedy policy on pooled data logged under pi0, then evaluate the
/// regret on sampled unseen environments, reported against the l2 distance
/// from the mean training (gamma, alpha).
inline GeneralizationResult run_generalization_experiment(const ExperimentConfig& config,
                                                          int train_env_count) {
    ScmConfig scm = default_scm_config(derive_seed(config.seed, {0x6e}), train_env_count,
                                       config.k);
    GeneralizationResult result;
    result.train_envs = scm.env_ids();

    // test environments: mirrored pairs share alpha and |gamma|
    Rng env_rng(derive_seed(config.seed, {0x7e57}));
    std::vector<std::string> test_envs;
    for (int t = 0; t < config.test_env_pairs; ++t) {
        const double g = 2.0 * env_rng.normal();
        const double a = 2.0 * env_rng.normal();
        scm.envs.emplace_back("test" + std::to_string(t) + "+", EnvParams{g, a});
        test_envs.push_back(scm.envs.back().first);
        if (config.mirrored_test_pairs) {
            scm.envs.emplace_back("test" + std::to_string(t) + "-", EnvParams{-g, a});
            test_envs.push_back(scm.envs.back().first);
        }
    }
    if (config.extreme_grid) {
        // keep labels comma-free so CSV rows stay well formed
        for (double g : {-6.0, -3.0, 0.0, 3.0, 6.0})
            for (double a : {-6.0, -3.0, 0.0, 3.0, 6.0}) {
                scm.envs.emplace_back(
                    "grid(g" + format_double(g) + " a" + format_double(a) + ")",
                    EnvParams{g, a});
                test_envs.push_back(scm.envs.back().first);
            }
    }
    result.scm = scm;

    // logged training data under the fitted initial policy
    const int warmup_per_env = std::max(1, config.warmup_n / train_env_count);
    const EnvDataset warmup = sample_pooled(scm, result.train_envs, Policy::uniform(config.k),
                                            warmup_per_env, derive_seed(config.seed, {0x3a}));
    const Policy pi0 = make_initial_policy(warmup);
    const EnvDataset train =
        sample_pooled(scm, result.train_envs, pi0, std::max(1, config.train_n / train_env_count),
                      derive_seed(config.seed, {0x7a}));

    const Policy invariant_policy =
        greedy_policy(fit_weighted_q(train, SubsetMask(std::vector<int>{1})));
    const Policy noninvariant_policy = greedy_policy(fit_weighted_q(train, SubsetMask::full(2)));

    std::vector<EnvParams> train_params;
    for (const auto& id : result.train_envs) train_params.push_back(scm.env(id));

    result.rows.resize(test_envs.size() * 2);
    parallel_for(test_envs.size(), config.jobs, [&](std::size_t t) {
        const std::string& env = test_envs[t];
        const double dist = env_distance(train_params, scm.env(env));
        const std::uint64_t mc_seed = derive_seed(config.seed, {0xcc, t});
        const double oracle = oracle_value(scm, env, config.n_mc, mc_seed);
        const double v_inv = policy_value_true(scm, env, invariant_policy, config.n_mc, mc_seed);
        const double v_non =
            policy_value_true(scm, env, noninvariant_policy, config.n_mc, mc_seed);
        result.rows[2 * t] = {env, dist, "invariant", v_inv, oracle - v_inv};
        result.rows[2 * t + 1] = {env, dist, "noninvariant", v_non, oracle - v_non};
    });
    return result;
}

struct AcceptanceRow {
    std::string subset;
    int n = 0;
    int envs = 0;
    double accept_rate = 0.0;
    int reps = 0;
};

struct AcceptanceResult {
    std::vector<AcceptanceRow> rows;
    std::vector<ScmConfig> scm_per_arm;  // one frozen parameterization per env-count arm
};

/// Figure-3 style experiment: per repetition, generate n pooled rounds under
/// pi0 and run the configured invariance test on each subset of {X1, X2};
/// aggregate acceptance rates per (subset, n, environment count).
inline AcceptanceResult run_acceptance_experiment(const ExperimentConfig& config) {
    AcceptanceResult result;
    const std::vector<SubsetMask> subsets = enumerate_subsets(2);
    for (std::size_t arm = 0; arm < config.train_env_counts.size(); ++arm) {
        const int env_count = config.train_env_counts[arm];
        const ScmConfig scm =
            default_scm_config(derive_seed(config.seed, {0x6e}), env_count, config.k);
        result.scm_per_arm.push_back(scm);
        const std::vector<std::string> env_ids = scm.env_ids();

        const int warmup_per_env = std::max(1, config.warmup_n / env_count);
        const EnvDataset warmup =
            sample_pooled(scm, env_ids, Policy::uniform(config.k), warmup_per_env,
                          derive_seed(config.seed, {0x3a, arm}));
        const Policy pi0 = make_initial_policy(warmup);

        for (int n : config.n_grid) {
            std::vector<std::vector<int>> accepts(subsets.size(),
                                                  std::vector<int>(config.repetitions, 0));
            parallel_for(config.repetitions, config.jobs, [&](std::size_t rep) {
                const EnvDataset data =
                    sample_pooled(scm, env_ids, pi0, std::max(1, n / env_count),
                                  derive_seed(config.seed, {0xda7a, arm, static_cast<std::uint64_t>(n), rep}));
                LearnerConfig lc;
                lc.alpha = config.alpha;
                lc.test_mode = config.test_mode;
                lc.fixed_policy_scale = config.fixed_policy_scale;
                lc.seed = derive_seed(config.seed, {0x7e57, arm, static_cast<std::uint64_t>(n), rep});
                for (std::size_t s = 0; s < subsets.size(); ++s) {
                    const TestReport report = run_subset_test(
                        data, subsets[s], lc, derive_seed(lc.seed, {s}));
                    accepts[s][rep] = report.accepted && report.error.empty() ? 1 : 0;
                }
            });
            for (std::size_t s = 0; s < subsets.size(); ++s) {
                int total = 0;
                for (int rep = 0; rep < config.repetitions; ++rep) total += accepts[s][rep];
                result.rows.push_back({subsets[s].label(), n, env_count,
                                       static_cast<double>(total) / config.repetitions,
                                       config.repetitions});
            }
        }
    }
    return result;
}

inline void write_generalization_csv(std::ostream& os, const std::vector<RegretRow>& rows) {
    os << "env,distance,policy,value,regret\n";
    for (const auto& r : rows)
        os << r.env << "," << format_double(r.env_distance) << "," << r.policy << ","
           << format_double(r.value) << "," << format_double(r.regret) << "\n";
}

inline void write_acceptance_csv(std::ostream& os, const std::vector<AcceptanceRow>& rows) {
    os << "subset,n,envs,accept_rate,reps\n";
    for (const auto& r : rows)
        os << "\"" << r.subset << "\"," << r.n << "," << r.envs << ","
           << format_double(r.accept_rate) << "," << r.reps << "\n";
}

}  // namespace ipl
