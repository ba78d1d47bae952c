#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "ipl/bandit.hpp"
#include "ipl/common.hpp"
#include "ipl/csv.hpp"
#include "ipl/invariance.hpp"
#include "ipl/resample.hpp"

namespace ipl {

/// Parameters of the linear softmax test-policy class
/// pi_theta(a | x^S) = exp(theta_a . x^S) / sum_a' exp(theta_a' . x^S).
struct SoftmaxParams {
    std::vector<std::vector<double>> theta;  // k rows, |S| columns
    SubsetMask subset;

    static SoftmaxParams zeros(int k, SubsetMask subset) {
        SoftmaxParams p;
        p.theta.assign(k, std::vector<double>(subset.indices.size(), 0.0));
        p.subset = std::move(subset);
        return p;
    }

    int k() const { return static_cast<int>(theta.size()); }

    Policy to_policy() const { return Policy::softmax(k(), subset, theta); }
};

struct TrajectoryPoint {
    int iteration = 0;
    double p_value = 1.0;
    double grad_norm = 0.0;
};

struct DivergenceError : Error {
    DivergenceError(const std::string& msg, std::vector<TrajectoryPoint> traj)
        : Error(msg), trajectory(std::move(traj)) {}
    std::vector<TrajectoryPoint> trajectory;
};

struct PowerOptConfig {
    double learning_rate = 1e-3;
    int iterations = 200;
    double divergence_bound = 1e3;   // on max |theta| entry
    double rel_improve_stop = 0.0;   // 0 disables the optional early stop
    std::string diagnostics_path;    // trajectory CSV, written when non-empty
};

namespace detail {

inline std::vector<double> softmax_probs(const SoftmaxParams& params,
                                         const std::vector<double>& xs) {
    const int k = params.k();
    std::vector<double> logits(k);
    for (int a = 0; a < k; ++a) {
        double z = 0.0;
        for (std::size_t j = 0; j < xs.size(); ++j) z += params.theta[a][j] * xs[j];
        logits[a] = z;
    }
    const double top = *std::max_element(logits.begin(), logits.end());
    double total = 0.0;
    std::vector<double> p(k);
    for (int a = 0; a < k; ++a) {
        p[a] = std::exp(logits[a] - top);
        total += p[a];
    }
    for (double& v : p) v /= total;
    return p;
}

/// Adds c * grad_theta log pi_theta(a | xs) to acc:
/// d/dtheta_b = xs * (1[b == a] - pi_theta(b | xs)).
inline void add_score(std::vector<std::vector<double>>& acc, const std::vector<double>& probs,
                      const std::vector<double>& xs, int a, double c) {
    const int k = static_cast<int>(acc.size());
    for (int b = 0; b < k; ++b) {
        const double f = c * ((b == a ? 1.0 : 0.0) - probs[b]);
        for (std::size_t j = 0; j < xs.size(); ++j) acc[b][j] += f * xs[j];
    }
}

}  // namespace detail

struct GradientSample {
    double p_value = 1.0;
    std::vector<std::vector<double>> gradient;  // same shape as theta
};

/// One stochastic sample of the p-value objective and its score-function
/// gradient. Draws a single with-replacement resample per environment and
/// returns pv * sum_e [ sum_l grad log pi_theta(a_l | x_l^S)
///                      - m_e * grad log sum_j r_theta(D_j) ].
/// The logging-policy terms are theta-free and drop out of the score.
inline GradientSample pvalue_objective_gradient(const EnvDataset& data_half,
                                                const SoftmaxParams& params, const MRule& m_rule,
                                                Rng& rng, double ridge = 1e-8) {
    const int k = data_half.k;
    if (params.k() != k) throw Error("pvalue_objective_gradient: theta rows != k");
    params.subset.check_bounds(data_half.d);
    const auto groups = data_half.indices_by_env();

    std::vector<std::vector<double>> score(k,
                                           std::vector<double>(params.subset.indices.size(), 0.0));
    std::vector<EnvDataset> resampled;
    resampled.reserve(groups.size());
    for (const auto& group : groups) {
        const EnvDataset env_data = data_half.select(group);
        const std::size_t n = env_data.size();
        std::vector<std::vector<double>> xs(n);
        std::vector<std::vector<double>> probs(n);
        std::vector<double> weights(n);
        double weight_total = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            xs[i] = restrict_context(env_data.rounds[i].context, params.subset);
            probs[i] = detail::softmax_probs(params, xs[i]);
            weights[i] = probs[i][env_data.rounds[i].action] / env_data.rounds[i].propensity;
            weight_total += weights[i];
        }
        const int m = m_rule(n);
        const std::vector<int> idx = resample_replacement(weights, m, rng);
        for (int i : idx)
            detail::add_score(score, probs[i], xs[i], env_data.rounds[i].action, 1.0);
        // -m * grad log sum_j r_j = -m * sum_j (r_j / sum r) grad log pi(a_j|x_j)
        for (std::size_t i = 0; i < n; ++i)
            detail::add_score(score, probs[i], xs[i], env_data.rounds[i].action,
                              -static_cast<double>(m) * weights[i] / weight_total);
        resampled.push_back(env_data.select(idx));
    }

    GradientSample out;
    out.p_value = residual_invariance_pvalue(resampled, params.subset, ridge);
    out.gradient = std::move(score);
    for (auto& row : out.gradient)
        for (double& v : row) {
            v *= out.p_value;
            if (!std::isfinite(v)) throw Error("pvalue_objective_gradient: non-finite gradient");
        }
    return out;
}

/// Stochastic gradient descent on the expected p-value under with-replacement
/// resampling, theta <- theta - lr * pv * score.
inline SoftmaxParams optimize_test_policy(const EnvDataset& data_half, const SubsetMask& subset,
                                          const SoftmaxParams& init, const PowerOptConfig& config,
                                          Rng& rng, std::vector<TrajectoryPoint>* trajectory_out = nullptr,
                                          const MRule& m_rule = sqrt_m_rule()) {
    if (config.iterations < 1) throw Error("optimize_test_policy: iterations must be >= 1");
    if (config.learning_rate < 0.0)
        throw Error("optimize_test_policy: learning rate must be >= 0");
    if (!(init.subset == subset)) throw Error("optimize_test_policy: init subset mismatch");

    SoftmaxParams params = init;
    std::vector<TrajectoryPoint> trajectory;
    trajectory.reserve(config.iterations);
    double best_p = 1.0;
    for (int it = 0; it < config.iterations; ++it) {
        const GradientSample g = pvalue_objective_gradient(data_half, params, m_rule, rng);
        double norm2 = 0.0;
        double max_theta = 0.0;
        for (int a = 0; a < params.k(); ++a)
            for (std::size_t j = 0; j < g.gradient[a].size(); ++j) {
                params.theta[a][j] -= config.learning_rate * g.gradient[a][j];
                norm2 += g.gradient[a][j] * g.gradient[a][j];
                max_theta = std::max(max_theta, std::abs(params.theta[a][j]));
            }
        trajectory.push_back({it, g.p_value, std::sqrt(norm2)});
        if (max_theta > config.divergence_bound) {
            if (trajectory_out) *trajectory_out = trajectory;
            throw DivergenceError("optimize_test_policy: |theta| exceeded " +
                                      std::to_string(config.divergence_bound),
                                  std::move(trajectory));
        }
        if (config.rel_improve_stop > 0.0 && it >= 20) {
            best_p = std::min(best_p, g.p_value);
            double recent = 0.0;
            for (int l = it - 9; l <= it; ++l) recent += trajectory[l].p_value;
            recent /= 10.0;
            if (recent > best_p * (1.0 + config.rel_improve_stop)) break;
        }
    }
    if (!config.diagnostics_path.empty()) {
        std::ofstream f(config.diagnostics_path);
        f << "iteration,p_value,grad_norm\n";
        for (const auto& t : trajectory)
            f << t.iteration << "," << format_double(t.p_value) << ","
              << format_double(t.grad_norm) << "\n";
    }
    if (trajectory_out) *trajectory_out = std::move(trajectory);
    return params;
}

namespace detail {

/// Seeded shuffle split: first ceil(n/2) shuffled indices versus the rest.
inline std::pair<std::vector<int>, std::vector<int>> split_half_indices(std::size_t n, Rng& rng) {
    std::vector<int> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = static_cast<int>(i);
    for (std::size_t i = n; i > 1; --i) {
        const std::size_t j = rng.below(i);
        std::swap(idx[i - 1], idx[j]);
    }
    const std::size_t cut = (n + 1) / 2;
    return {std::vector<int>(idx.begin(), idx.begin() + cut),
            std::vector<int>(idx.begin() + cut, idx.end())};
}

}  // namespace detail

/// Algorithm: split each environment in half, optimize theta for power on the
/// first halves with with-replacement resampling, then run the level-preserving
/// distinct-resample test on the held-out halves with m_e = floor(sqrt(n_e/2)).
inline TestReport test_invariance_opt_policy(const EnvDataset& data, const SubsetMask& subset,
                                             const MRule& m_rule, double alpha,
                                             const PowerOptConfig& config, std::uint64_t seed,
                                             std::vector<TrajectoryPoint>* trajectory_out = nullptr) {
    if (data.envs.size() < 2)
        throw Error("test_invariance_opt_policy: need at least 2 environments");
    const auto groups = data.indices_by_env();
    std::vector<int> opt_idx, test_idx;
    for (std::size_t e = 0; e < groups.size(); ++e) {
        if (groups[e].size() < 4)
            throw Error("test_invariance_opt_policy: environment " + data.envs[e] +
                        " has fewer than 4 rounds");
        Rng rng(derive_seed(seed, {0xA11, e}));
        auto [first, second] = detail::split_half_indices(groups[e].size(), rng);
        for (int i : first) opt_idx.push_back(groups[e][i]);
        for (int i : second) test_idx.push_back(groups[e][i]);
    }
    const EnvDataset opt_half = data.select(opt_idx);
    const EnvDataset test_half = data.select(test_idx);

    Rng opt_rng(derive_seed(seed, {0x097}));
    const SoftmaxParams theta =
        optimize_test_policy(opt_half, subset, SoftmaxParams::zeros(data.k, subset), config,
                             opt_rng, trajectory_out, m_rule);

    TestReport report =
        test_invariance_fixed_policy(test_half, theta.to_policy(), subset, m_rule, alpha,
                                     derive_seed(seed, {0x7e5}), ResampleMode::Distinct);
    report.test_policy_kind = "power-opt-softmax";
    report.seed = seed;
    return report;
}

}  // namespace ipl
