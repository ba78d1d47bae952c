#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "ipl/bandit.hpp"
#include "ipl/common.hpp"
#include "ipl/numerics.hpp"
#include "ipl/resample.hpp"

namespace ipl {

/// Per-environment resample size as a function of the environment's size.
using MRule = std::function<int(std::size_t)>;

inline MRule sqrt_m_rule() {
    return [](std::size_t n) { return default_resample_size(n); };
}

struct TestReport {
    SubsetMask subset;
    double p_value = 1.0;
    bool accepted = true;
    double alpha = 0.05;
    std::string test_policy_kind;
    std::vector<std::pair<std::string, int>> m_per_env;
    std::uint64_t seed = 0;
    std::string error;  // non-empty when the test could not be run
    // Continuous ranking key for "largest p-value" orderings: the uncapped
    // Bonferroni combination for per-action tests, otherwise the p-value.
    // A capped p of 1 would tie across many subsets.
    double rank_score = 1.0;

    json to_json() const {
        json m = json::object();
        for (const auto& [env, me] : m_per_env) m[env] = me;
        json j{{"subset", subset.indices},
               {"p_value", error.empty() ? json(p_value) : json(nullptr)},
               {"accepted", accepted},
               {"alpha", alpha},
               {"test_policy_kind", test_policy_kind},
               {"m_per_env", m},
               {"seed", seed}};
        if (!error.empty()) j["error"] = error;
        return j;
    }
};

/// A fixed softmax test policy in Pi^S whose logits spread the actions along
/// every coordinate of X^S: theta_{a,j} = scale * (2a/(k-1) - 1). Degenerates
/// to the uniform policy when S is empty or k = 1.
inline Policy spread_softmax_policy(int k, const SubsetMask& subset, double scale = 1.0) {
    std::vector<std::vector<double>> weights(k, std::vector<double>(subset.indices.size(), 0.0));
    if (k > 1) {
        for (int a = 0; a < k; ++a) {
            const double u = scale * (2.0 * a / (k - 1.0) - 1.0);
            for (std::size_t j = 0; j < subset.indices.size(); ++j) weights[a][j] = u;
        }
    }
    return Policy::softmax(k, subset, std::move(weights));
}

/// Pools the resampled per-environment groups, fits E[R | X^S] by ridge-linear
/// regression (intercept-only when S is empty) and returns the Kruskal-Wallis
/// p-value of the residuals across environments.
inline double residual_invariance_pvalue(const std::vector<EnvDataset>& resampled,
                                         const SubsetMask& subset, double ridge = 1e-8) {
    if (resampled.size() < 2)
        throw Error("residual_invariance_pvalue: need at least 2 environments");
    std::vector<std::vector<double>> X;
    std::vector<double> y;
    for (const auto& env_data : resampled) {
        if (env_data.size() < 2)
            throw Error("residual_invariance_pvalue: environment with fewer than 2 rounds");
        subset.check_bounds(env_data.d);
        for (const auto& r : env_data.rounds) {
            X.push_back(restrict_context(r.context, subset));
            y.push_back(r.reward);
        }
    }
    const LinearModel fit =
        weighted_least_squares(X, y, std::vector<double>(X.size(), 1.0), ridge);

    std::vector<std::vector<double>> residual_groups;
    residual_groups.reserve(resampled.size());
    std::size_t offset = 0;
    for (const auto& env_data : resampled) {
        std::vector<double> res;
        res.reserve(env_data.size());
        for (std::size_t i = 0; i < env_data.size(); ++i, ++offset)
            res.push_back(y[offset] - fit.predict(X[offset]));
        residual_groups.push_back(std::move(res));
    }
    return kruskal_wallis(residual_groups).p_value;
}

namespace detail {

/// Splits a dataset by environment, resamples each group under the target
/// policy and returns the per-environment resampled datasets plus sizes.
inline std::pair<std::vector<EnvDataset>, std::vector<std::pair<std::string, int>>>
resample_by_env(const EnvDataset& data, const Policy& target, const SubsetMask& subset,
                const MRule& m_rule, ResampleMode mode, std::uint64_t seed) {
    const auto groups = data.indices_by_env();
    std::vector<EnvDataset> resampled;
    std::vector<std::pair<std::string, int>> m_per_env;
    resampled.reserve(groups.size());
    for (std::size_t e = 0; e < groups.size(); ++e) {
        const EnvDataset env_data = data.select(groups[e]);
        const ResamplePlan plan =
            make_resample_plan(env_data, target, subset, m_rule(env_data.size()), mode);
        Rng rng(derive_seed(seed, {e}));
        resampled.push_back(env_data.select(plan.draw(rng)));
        m_per_env.emplace_back(data.envs[e], plan.m);
    }
    return {std::move(resampled), std::move(m_per_env)};
}

}  // namespace detail

/// Off-policy invariance test for H0(S, pi^S) with a given test policy:
/// relative weights per environment, distinct resamples of size m_e, then the
/// residual Kruskal-Wallis test on the pooled fit.
inline TestReport test_invariance_fixed_policy(const EnvDataset& data, const Policy& test_policy,
                                               const SubsetMask& subset, const MRule& m_rule,
                                               double alpha, std::uint64_t seed,
                                               ResampleMode mode = ResampleMode::Distinct,
                                               double ridge = 1e-8) {
    if (data.envs.size() < 2)
        throw Error("test_invariance_fixed_policy: need at least 2 environments");
    auto [resampled, m_per_env] =
        detail::resample_by_env(data, test_policy, subset, m_rule, mode, seed);
    TestReport report;
    report.subset = subset;
    report.alpha = alpha;
    report.seed = seed;
    report.test_policy_kind = to_string(test_policy.kind());
    report.m_per_env = std::move(m_per_env);
    report.p_value = residual_invariance_pvalue(resampled, subset, ridge);
    report.rank_score = report.p_value;
    report.accepted = report.p_value >= alpha;
    return report;
}

/// Per-action variant: tests H0(S, pi_a) for every constant-action policy and
/// Bonferroni-combines the p-values. Catches mean differences that cancel
/// across actions in a mixture policy.
inline TestReport test_invariance_per_action(const EnvDataset& data, const SubsetMask& subset,
                                             const MRule& m_rule, double alpha,
                                             std::uint64_t seed,
                                             ResampleMode mode = ResampleMode::Distinct,
                                             double ridge = 1e-8) {
    if (data.envs.size() < 2)
        throw Error("test_invariance_per_action: need at least 2 environments");
    const auto groups = data.indices_by_env();
    for (std::size_t e = 0; e < groups.size(); ++e) {
        std::vector<bool> seen(data.k, false);
        for (int i : groups[e]) seen[data.rounds[i].action] = true;
        for (int a = 0; a < data.k; ++a)
            if (!seen[a])
                throw Error("test_invariance_per_action: action " + std::to_string(a) +
                            " absent from environment " + data.envs[e]);
    }
    std::vector<double> p_values;
    std::vector<std::pair<std::string, int>> m_per_env;
    for (int a = 0; a < data.k; ++a) {
        const Policy target = Policy::constant(data.k, a);
        auto [resampled, m] = detail::resample_by_env(data, target, subset, m_rule, mode,
                                                      derive_seed(seed, {static_cast<std::uint64_t>(a)}));
        if (a == 0) m_per_env = std::move(m);
        p_values.push_back(residual_invariance_pvalue(resampled, subset, ridge));
    }
    TestReport report;
    report.subset = subset;
    report.alpha = alpha;
    report.seed = seed;
    report.test_policy_kind = "per-action-bonferroni";
    report.m_per_env = std::move(m_per_env);
    report.p_value = bonferroni(p_values);
    report.rank_score =
        static_cast<double>(p_values.size()) * *std::min_element(p_values.begin(), p_values.end());
    report.accepted = report.p_value >= alpha;
    return report;
}

}  // namespace ipl
