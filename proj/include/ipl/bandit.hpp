#pragma once

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ipl/common.hpp"
#include "ipl/numerics.hpp"

namespace ipl {

using json = nlohmann::json;

constexpr double kMinPropensity = 1e-8;

/// A subset S of observed context coordinates, kept sorted and duplicate-free.
struct SubsetMask {
    std::vector<int> indices;

    SubsetMask() = default;
    explicit SubsetMask(std::vector<int> idx) : indices(std::move(idx)) {
        std::sort(indices.begin(), indices.end());
        for (std::size_t i = 0; i < indices.size(); ++i) {
            if (indices[i] < 0) throw Error("SubsetMask: negative index");
            if (i > 0 && indices[i] == indices[i - 1]) throw Error("SubsetMask: duplicate index");
        }
    }

    static SubsetMask full(int d) {
        std::vector<int> idx(d);
        for (int j = 0; j < d; ++j) idx[j] = j;
        return SubsetMask(std::move(idx));
    }

    int size() const { return static_cast<int>(indices.size()); }
    bool empty() const { return indices.empty(); }
    bool contains(int j) const {
        return std::binary_search(indices.begin(), indices.end(), j);
    }
    void check_bounds(int d) const {
        if (!indices.empty() && indices.back() >= d)
            throw Error("SubsetMask: index " + std::to_string(indices.back()) +
                        " out of bounds for d=" + std::to_string(d));
    }
    bool operator==(const SubsetMask& o) const { return indices == o.indices; }

    std::string label() const {
        std::string s = "{";
        for (std::size_t i = 0; i < indices.size(); ++i) {
            if (i) s += ",";
            s += std::to_string(indices[i]);
        }
        return s + "}";
    }
};

/// Coordinates of context at the subset indices, in subset order.
inline std::vector<double> restrict_context(std::span<const double> context,
                                            const SubsetMask& subset) {
    std::vector<double> out;
    out.reserve(subset.indices.size());
    for (int j : subset.indices) {
        if (j >= static_cast<int>(context.size()))
            throw Error("restrict_context: index out of bounds");
        out.push_back(context[j]);
    }
    return out;
}

/// One logged observation: (X_i, A_i, R_i, pi0(A_i|X_i), e_i).
struct LoggedRound {
    std::vector<double> context;
    int action = 0;
    double reward = 0.0;
    double propensity = 1.0;
    std::string env;
};

/// Per-environment collection of logged rounds. Environment identifiers are
/// ordered by first appearance; all grouping uses that order.
struct EnvDataset {
    std::vector<LoggedRound> rounds;
    int d = 0;
    int k = 0;
    std::vector<std::string> envs;

    static EnvDataset from_rounds(std::vector<LoggedRound> rounds, int d, int k) {
        if (rounds.empty()) throw Error("EnvDataset: no rounds");
        EnvDataset ds;
        ds.d = d;
        ds.k = k;
        for (const auto& r : rounds) {
            if (static_cast<int>(r.context.size()) != d)
                throw Error("EnvDataset: context length != d");
            for (double v : r.context)
                if (!std::isfinite(v)) throw Error("EnvDataset: non-finite context entry");
            if (r.action < 0 || r.action >= k)
                throw Error("EnvDataset: action out of range");
            if (!std::isfinite(r.propensity) || r.propensity <= kMinPropensity ||
                r.propensity > 1.0)
                throw Error("EnvDataset: propensity must lie in (1e-8, 1]");
            if (r.env.find_first_of(",\n\r") != std::string::npos)
                throw Error("EnvDataset: environment labels must be CSV-safe");
            if (std::find(ds.envs.begin(), ds.envs.end(), r.env) == ds.envs.end())
                ds.envs.push_back(r.env);
        }
        ds.rounds = std::move(rounds);
        return ds;
    }

    std::size_t size() const { return rounds.size(); }

    int env_index(const std::string& env) const {
        auto it = std::find(envs.begin(), envs.end(), env);
        if (it == envs.end()) throw Error("EnvDataset: unknown environment " + env);
        return static_cast<int>(it - envs.begin());
    }

    /// Round indices grouped by environment, in environment order.
    std::vector<std::vector<int>> indices_by_env() const {
        std::vector<std::vector<int>> groups(envs.size());
        for (std::size_t i = 0; i < rounds.size(); ++i)
            groups[env_index(rounds[i].env)].push_back(static_cast<int>(i));
        return groups;
    }

    EnvDataset select(const std::vector<int>& idx) const {
        std::vector<LoggedRound> out;
        out.reserve(idx.size());
        for (int i : idx) out.push_back(rounds[i]);
        return from_rounds(std::move(out), d, k);
    }
};

enum class PolicyKind { Uniform, Constant, Softmax, LinearGreedy, TabularLogged };

inline std::string to_string(PolicyKind kind) {
    switch (kind) {
        case PolicyKind::Uniform: return "uniform";
        case PolicyKind::Constant: return "constant";
        case PolicyKind::Softmax: return "softmax";
        case PolicyKind::LinearGreedy: return "greedy";
        case PolicyKind::TabularLogged: return "tabular-logged";
    }
    return "?";
}

/// Maps a context (or sub-context) to a probability vector over k actions.
///
/// Kinds: uniform, constant-action, linear softmax over X^S (optionally with
/// per-action intercepts), greedy over per-action linear models of X^S (argmax
/// ties broken by lowest action index), and tabular-logged (the policy that
/// generated a logged dataset; it can only be queried at logged context/action
/// pairs and cannot be sampled from).
class Policy {
public:
    static Policy uniform(int k) {
        Policy p(PolicyKind::Uniform, k);
        return p;
    }

    static Policy constant(int k, int action) {
        if (action < 0 || action >= k) throw Error("Policy::constant: action out of range");
        Policy p(PolicyKind::Constant, k);
        p.constant_action_ = action;
        return p;
    }

    /// pi(a|x) proportional to exp(intercept_a + weights_a . x^S).
    static Policy softmax(int k, SubsetMask subset,
                          std::vector<std::vector<double>> weights,
                          std::vector<double> intercepts = {}) {
        Policy p(PolicyKind::Softmax, k);
        if (static_cast<int>(weights.size()) != k)
            throw Error("Policy::softmax: need one weight row per action");
        for (const auto& row : weights)
            if (row.size() != subset.indices.size())
                throw Error("Policy::softmax: weight row length != |S|");
        if (intercepts.empty()) intercepts.assign(k, 0.0);
        if (static_cast<int>(intercepts.size()) != k)
            throw Error("Policy::softmax: intercept count != k");
        p.subset_ = std::move(subset);
        p.weights_ = std::move(weights);
        p.intercepts_ = std::move(intercepts);
        return p;
    }

    /// Deterministic argmax over per-action linear value models of X^S.
    static Policy linear_greedy(int k, SubsetMask subset, std::vector<LinearModel> models) {
        Policy p(PolicyKind::LinearGreedy, k);
        if (static_cast<int>(models.size()) != k)
            throw Error("Policy::linear_greedy: need one model per action");
        for (const auto& m : models)
            if (m.feature_dim != static_cast<int>(subset.indices.size()))
                throw Error("Policy::linear_greedy: model dimension != |S|");
        p.subset_ = std::move(subset);
        p.models_ = std::move(models);
        return p;
    }

    /// The logging policy of a dataset, queryable only at its logged pairs.
    static Policy tabular_logged(const EnvDataset& data) {
        Policy p(PolicyKind::TabularLogged, data.k);
        for (const auto& r : data.rounds) p.table_[{r.context, r.action}] = r.propensity;
        return p;
    }

    PolicyKind kind() const { return kind_; }
    int k() const { return k_; }
    const SubsetMask& subset() const { return subset_; }
    const std::vector<std::vector<double>>& weights() const { return weights_; }
    const std::vector<double>& intercepts() const { return intercepts_; }
    const std::vector<LinearModel>& models() const { return models_; }

    /// Full probability vector pi(.|x). Not available for tabular-logged.
    std::vector<double> probs(std::span<const double> context) const {
        switch (kind_) {
            case PolicyKind::Uniform:
                return std::vector<double>(k_, 1.0 / k_);
            case PolicyKind::Constant: {
                std::vector<double> p(k_, 0.0);
                p[constant_action_] = 1.0;
                return p;
            }
            case PolicyKind::Softmax: {
                const std::vector<double> xs = restrict_context(context, subset_);
                std::vector<double> logits(k_);
                for (int a = 0; a < k_; ++a) {
                    double z = intercepts_[a];
                    for (std::size_t j = 0; j < xs.size(); ++j) z += weights_[a][j] * xs[j];
                    logits[a] = z;
                }
                const double top = *std::max_element(logits.begin(), logits.end());
                double total = 0.0;
                std::vector<double> p(k_);
                for (int a = 0; a < k_; ++a) {
                    p[a] = std::exp(logits[a] - top);
                    total += p[a];
                }
                for (double& v : p) v /= total;
                return p;
            }
            case PolicyKind::LinearGreedy: {
                const std::vector<double> xs = restrict_context(context, subset_);
                int best = 0;
                double best_q = models_[0].predict(xs);
                for (int a = 1; a < k_; ++a) {
                    const double q = models_[a].predict(xs);
                    if (q > best_q) {  // ties keep the lowest action index
                        best_q = q;
                        best = a;
                    }
                }
                std::vector<double> p(k_, 0.0);
                p[best] = 1.0;
                return p;
            }
            case PolicyKind::TabularLogged:
                throw Error("tabular-logged policy has no full probability vector");
        }
        throw Error("unreachable");
    }

    double prob(std::span<const double> context, int action) const {
        if (action < 0 || action >= k_) throw Error("Policy::prob: action out of range");
        if (kind_ == PolicyKind::TabularLogged) {
            auto it = table_.find({std::vector<double>(context.begin(), context.end()), action});
            if (it == table_.end())
                throw Error("tabular-logged policy queried at an unlogged pair");
            return it->second;
        }
        return probs(context)[action];
    }

    double prob(std::initializer_list<double> context, int action) const {
        return prob(std::span<const double>(context.begin(), context.size()), action);
    }

    int sample(std::span<const double> context, Rng& rng) const {
        const std::vector<double> p = probs(context);
        double total = 0.0;
        for (double v : p) total += v;
        if (!(total > 0.0)) throw Error("Policy::sample: degenerate probability vector");
        double u = rng.uniform() * total;
        for (int a = 0; a < k_; ++a) {
            u -= p[a];
            if (u < 0.0) return a;
        }
        return k_ - 1;
    }

    int sample(std::initializer_list<double> context, Rng& rng) const {
        return sample(std::span<const double>(context.begin(), context.size()), rng);
    }

    json to_json() const {
        json j{{"kind", ipl::to_string(kind_)}, {"k", k_}};
        switch (kind_) {
            case PolicyKind::Constant:
                j["action"] = constant_action_;
                break;
            case PolicyKind::Softmax:
                j["subset"] = subset_.indices;
                j["weights"] = weights_;
                j["intercepts"] = intercepts_;
                break;
            case PolicyKind::LinearGreedy: {
                j["subset"] = subset_.indices;
                json models = json::array();
                for (const auto& m : models_) models.push_back(m.coefficients);
                j["models"] = models;
                break;
            }
            default:
                break;
        }
        return j;
    }

private:
    Policy(PolicyKind kind, int k) : kind_(kind), k_(k) {
        if (k <= 0) throw Error("Policy: k must be positive");
    }

    PolicyKind kind_;
    int k_;
    int constant_action_ = -1;
    SubsetMask subset_;
    std::vector<std::vector<double>> weights_;
    std::vector<double> intercepts_;
    std::vector<LinearModel> models_;
    std::map<std::pair<std::vector<double>, int>, double> table_;
};

/// pi(action | context).
inline double policy_prob(const Policy& policy, std::span<const double> context, int action) {
    return policy.prob(context, action);
}

inline double policy_prob(const Policy& policy, std::initializer_list<double> context,
                          int action) {
    return policy.prob(context, action);
}

/// Samples an action from pi(.|context); deterministic given the rng state.
inline int select_action(const Policy& policy, std::span<const double> context, Rng& rng) {
    return policy.sample(context, rng);
}

inline int select_action(const Policy& policy, std::initializer_list<double> context, Rng& rng) {
    return policy.sample(std::span<const double>(context.begin(), context.size()), rng);
}

}  // namespace ipl
