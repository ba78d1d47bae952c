#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "ipl/bandit.hpp"
#include "ipl/common.hpp"
#include "ipl/numerics.hpp"

namespace ipl {

/// Structural parameters shared across environments:
/// R = beta1[A] * X2 + beta2[A] * U + eps_R over k actions.
/// With confounded = false, U never feeds X1 (an independent standard normal
/// takes its place), so the hidden variable is unrelated to the context.
struct ScmParams {
    int k = 3;
    std::vector<double> beta1;
    std::vector<double> beta2;
    bool confounded = true;
};

/// Per-environment parameters: X1 = gamma * U + eps, X2 = alpha + eps.
struct EnvParams {
    double gamma = 0.0;
    double alpha = 0.0;
};

struct ScmConfig {
    ScmParams scm;
    std::vector<std::pair<std::string, EnvParams>> envs;
    double noise_u = 1.0, noise_x1 = 1.0, noise_x2 = 1.0, noise_r = 1.0;

    void validate() const {
        if (scm.k < 1) throw Error("ScmConfig: k must be >= 1");
        if (static_cast<int>(scm.beta1.size()) != scm.k ||
            static_cast<int>(scm.beta2.size()) != scm.k)
            throw Error("ScmConfig: beta vectors must have length k");
        if (envs.empty()) throw Error("ScmConfig: need at least one environment");
        for (const auto& [id, p] : envs)
            if (!std::isfinite(p.gamma) || !std::isfinite(p.alpha))
                throw Error("ScmConfig: non-finite parameters for env " + id);
    }

    const EnvParams& env(const std::string& id) const {
        for (const auto& [eid, p] : envs)
            if (eid == id) return p;
        throw Error("ScmConfig: unknown environment " + id);
    }

    std::vector<std::string> env_ids() const {
        std::vector<std::string> ids;
        ids.reserve(envs.size());
        for (const auto& [id, p] : envs) ids.push_back(id);
        return ids;
    }

    json to_json() const {
        json envs_j = json::object();
        for (const auto& [id, p] : envs)
            envs_j[id] = json{{"gamma", p.gamma}, {"alpha", p.alpha}};
        return json{{"k", scm.k},
                    {"beta1", scm.beta1},
                    {"beta2", scm.beta2},
                    {"confounded", scm.confounded},
                    {"envs", envs_j},
                    {"noise_std",
                     json{{"u", noise_u}, {"x1", noise_x1}, {"x2", noise_x2}, {"r", noise_r}}}};
    }

    static ScmConfig from_json(const json& j) {
        ScmConfig c;
        c.scm.k = j.at("k").get<int>();
        c.scm.beta1 = j.at("beta1").get<std::vector<double>>();
        c.scm.beta2 = j.at("beta2").get<std::vector<double>>();
        c.scm.confounded = j.value("confounded", true);
        for (const auto& [id, p] : j.at("envs").items())
            c.envs.emplace_back(id, EnvParams{p.at("gamma").get<double>(),
                                              p.at("alpha").get<double>()});
        if (j.contains("noise_std")) {
            const auto& ns = j.at("noise_std");
            if (ns.is_number()) {
                c.noise_u = c.noise_x1 = c.noise_x2 = c.noise_r = ns.get<double>();
            } else {
                c.noise_u = ns.value("u", 1.0);
                c.noise_x1 = ns.value("x1", 1.0);
                c.noise_x2 = ns.value("x2", 1.0);
                c.noise_r = ns.value("r", 1.0);
            }
        }
        c.validate();
        return c;
    }
};

/// Default experiment parameterization: beta entries ~ N(0,1) and
/// per-environment (gamma, alpha) ~ N(0,4), frozen by the seed.
inline ScmConfig default_scm_config(std::uint64_t seed, int n_envs, int k = 3,
                                    bool confounded = true) {
    Rng rng(seed);
    ScmConfig c;
    c.scm.k = k;
    c.scm.confounded = confounded;
    c.scm.beta1.resize(k);
    c.scm.beta2.resize(k);
    for (int a = 0; a < k; ++a) c.scm.beta1[a] = rng.normal();
    for (int a = 0; a < k; ++a) c.scm.beta2[a] = rng.normal();
    for (int e = 0; e < n_envs; ++e)
        c.envs.emplace_back("e" + std::to_string(e + 1),
                            EnvParams{2.0 * rng.normal(), 2.0 * rng.normal()});
    return c;
}

namespace detail {

struct ScmDraw {
    double x1, x2, u;
};

inline ScmDraw draw_context(const ScmConfig& c, const EnvParams& p, Rng& rng) {
    ScmDraw d;
    d.u = c.noise_u * rng.normal();
    const double confounder = c.scm.confounded ? d.u : c.noise_u * rng.normal();
    d.x1 = p.gamma * confounder + c.noise_x1 * rng.normal();
    d.x2 = p.alpha + c.noise_x2 * rng.normal();
    return d;
}

}  // namespace detail

/// Draws n logged rounds from environment `env` under `policy` (d = 2).
inline EnvDataset sample_rounds(const ScmConfig& config, const std::string& env,
                                const Policy& policy, int n, std::uint64_t seed) {
    config.validate();
    if (n < 1) throw Error("sample_rounds: n must be >= 1");
    const EnvParams& p = config.env(env);
    Rng rng(seed);
    std::vector<LoggedRound> rounds;
    rounds.reserve(n);
    for (int i = 0; i < n; ++i) {
        const auto d = detail::draw_context(config, p, rng);
        const std::vector<double> x{d.x1, d.x2};
        const std::vector<double> probs = policy.probs(x);
        double u = rng.uniform();
        int a = config.scm.k - 1;
        for (int cand = 0; cand < config.scm.k; ++cand) {
            u -= probs[cand];
            if (u < 0.0) {
                a = cand;
                break;
            }
        }
        const double r =
            config.scm.beta1[a] * d.x2 + config.scm.beta2[a] * d.u + config.noise_r * rng.normal();
        rounds.push_back(LoggedRound{x, a, r, probs[a], env});
    }
    return EnvDataset::from_rounds(std::move(rounds), 2, config.scm.k);
}

/// Pooled sample across several environments, n_per_env rounds each, with
/// per-environment sub-seeds derived from the master seed.
inline EnvDataset sample_pooled(const ScmConfig& config, const std::vector<std::string>& env_ids,
                                const Policy& policy, int n_per_env, std::uint64_t seed) {
    std::vector<LoggedRound> all;
    all.reserve(static_cast<std::size_t>(n_per_env) * env_ids.size());
    for (std::size_t e = 0; e < env_ids.size(); ++e) {
        EnvDataset part = sample_rounds(config, env_ids[e], policy, n_per_env,
                                        derive_seed(seed, {e}));
        for (auto& r : part.rounds) all.push_back(std::move(r));
    }
    return EnvDataset::from_rounds(std::move(all), 2, config.scm.k);
}

/// Fits the initial policy pi0(a|x) proportional to exp(f_a(x)/2) where f_a is
/// a per-action linear regression of reward on the full context, estimated
/// from warmup data collected under a full-support (uniform) policy.
inline Policy make_initial_policy(const EnvDataset& warmup) {
    const int k = warmup.k;
    const int d = warmup.d;
    std::vector<std::vector<double>> weights(k, std::vector<double>(d, 0.0));
    std::vector<double> intercepts(k, 0.0);
    for (int a = 0; a < k; ++a) {
        std::vector<std::vector<double>> X;
        std::vector<double> y;
        for (const auto& r : warmup.rounds) {
            if (r.action != a) continue;
            X.push_back(r.context);
            y.push_back(r.reward);
        }
        if (static_cast<int>(X.size()) < d + 2)
            throw Error("make_initial_policy: action " + std::to_string(a) +
                        " observed fewer than d+2 times");
        const LinearModel f = weighted_least_squares(X, y, std::vector<double>(X.size(), 1.0));
        intercepts[a] = 0.5 * f.coefficients[0];
        for (int j = 0; j < d; ++j) weights[a][j] = 0.5 * f.coefficients[j + 1];
    }
    return Policy::softmax(k, SubsetMask::full(d), std::move(weights), std::move(intercepts));
}

/// E[U | X1 = x1] slope under the environment's parameters.
inline double posterior_confounder_slope(const ScmConfig& config, const EnvParams& p) {
    if (!config.scm.confounded) return 0.0;
    const double vu = config.noise_u * config.noise_u;
    const double vx = config.noise_x1 * config.noise_x1;
    return p.gamma * vu / (p.gamma * p.gamma * vu + vx);
}

/// The per-environment optimal policy: greedy in a over
/// beta1[a] * x2 + beta2[a] * E[U | X1 = x1].
inline Policy oracle_policy(const ScmConfig& config, const std::string& env) {
    config.validate();
    const EnvParams& p = config.env(env);
    const double slope = posterior_confounder_slope(config, p);
    std::vector<LinearModel> models;
    models.reserve(config.scm.k);
    for (int a = 0; a < config.scm.k; ++a)
        models.push_back(LinearModel{{0.0, config.scm.beta2[a] * slope, config.scm.beta1[a]}, 2});
    return Policy::linear_greedy(config.scm.k, SubsetMask::full(2), std::move(models));
}

/// Monte Carlo mean reward of `policy` over n_mc fresh rounds in `env`.
inline double monte_carlo_value(const ScmConfig& config, const std::string& env,
                                const Policy& policy, int n_mc, std::uint64_t seed) {
    config.validate();
    if (n_mc < 1) throw Error("monte_carlo_value: n_mc must be >= 1");
    const EnvParams& p = config.env(env);
    Rng rng(seed);
    double total = 0.0;
    std::vector<double> x(2);
    for (int i = 0; i < n_mc; ++i) {
        const auto d = detail::draw_context(config, p, rng);
        x[0] = d.x1;
        x[1] = d.x2;
        const std::vector<double> probs = policy.probs(x);
        double u = rng.uniform();
        int a = config.scm.k - 1;
        for (int cand = 0; cand < config.scm.k; ++cand) {
            u -= probs[cand];
            if (u < 0.0) {
                a = cand;
                break;
            }
        }
        total += config.scm.beta1[a] * d.x2 + config.scm.beta2[a] * d.u +
                 config.noise_r * rng.normal();
    }
    return total / n_mc;
}

inline double oracle_value(const ScmConfig& config, const std::string& env, int n_mc,
                           std::uint64_t seed) {
    return monte_carlo_value(config, env, oracle_policy(config, env), n_mc, seed);
}

/// l2 distance between the mean training (gamma, alpha) and the test pair.
inline double env_distance(const std::vector<EnvParams>& train, const EnvParams& test) {
    if (train.empty()) throw Error("env_distance: empty training list");
    double mg = 0.0, ma = 0.0;
    for (const auto& p : train) {
        mg += p.gamma;
        ma += p.alpha;
    }
    mg /= static_cast<double>(train.size());
    ma /= static_cast<double>(train.size());
    return std::hypot(mg - test.gamma, ma - test.alpha);
}

}  // namespace ipl
