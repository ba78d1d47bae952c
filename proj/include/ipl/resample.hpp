#pragma once

#include <cmath>
#include <cstdint>
#include <unordered_set>
#include <vector>

#include "ipl/bandit.hpp"
#include "ipl/common.hpp"

namespace ipl {

enum class ResampleMode { Distinct, Replacement };

inline std::string to_string(ResampleMode mode) {
    return mode == ResampleMode::Distinct ? "distinct" : "replacement";
}

/// Default per-environment resample size, floor(sqrt(n_e)).
inline int default_resample_size(std::size_t n) {
    return static_cast<int>(std::floor(std::sqrt(static_cast<double>(n))));
}

/// Relative weights r_i = target(a_i | x_i^S) / pi0(a_i | x_i) over the
/// dataset's round order. Policies take the full context and restrict to
/// their own subset internally; the subset argument checks that the target
/// only reads coordinates of S. A tabular-logged target is the logging policy
/// itself, so its weights are identically 1.
inline std::vector<double> relative_weights(const EnvDataset& data, const Policy& target,
                                            const SubsetMask& subset) {
    subset.check_bounds(data.d);
    if (target.kind() == PolicyKind::Softmax || target.kind() == PolicyKind::LinearGreedy)
        for (int j : target.subset().indices)
            if (!subset.contains(j))
                throw Error("relative_weights: target policy reads coordinate " +
                            std::to_string(j) + " outside the tested subset");
    std::vector<double> r(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) {
        const LoggedRound& round = data.rounds[i];
        if (!(round.propensity > 0.0))
            throw Error("relative_weights: nonpositive propensity");
        r[i] = target.prob(round.context, round.action) / round.propensity;
    }
    return r;
}

/// Draws an ordered index tuple of length m distributed proportionally to the
/// product of weights over distinct tuples. Implemented by rejection from the
/// with-replacement proposal; conditioned on distinctness the proposal law is
/// exactly the target. Raises ResampleBudgetError after `budget` collisions.
inline std::vector<int> resample_distinct(const std::vector<double>& weights, int m, Rng& rng,
                                          int budget = 1000) {
    if (m < 1) throw Error("resample_distinct: m must be >= 1");
    std::size_t positive = 0;
    for (double w : weights)
        if (w > 0.0) ++positive;
    if (static_cast<std::size_t>(m) > positive)
        throw Error("resample_distinct: m exceeds the number of rounds with positive weight");
    const CategoricalSampler sampler(weights);
    std::vector<int> draw(m);
    for (int attempt = 0; attempt < budget; ++attempt) {
        std::unordered_set<int> seen;
        bool ok = true;
        for (int l = 0; l < m; ++l) {
            draw[l] = sampler.draw(rng);
            if (!seen.insert(draw[l]).second) {
                ok = false;
                break;
            }
        }
        if (ok) return draw;
    }
    throw ResampleBudgetError(
        "resample_distinct: no distinct tuple within " + std::to_string(budget) +
        " attempts; m is too large relative to the weight concentration");
}

/// Indices i.i.d. categorical proportional to the weights.
inline std::vector<int> resample_replacement(const std::vector<double>& weights, int m, Rng& rng) {
    if (m < 1) throw Error("resample_replacement: m must be >= 1");
    const CategoricalSampler sampler(weights);
    std::vector<int> draw(m);
    for (int l = 0; l < m; ++l) draw[l] = sampler.draw(rng);
    return draw;
}

/// log P(indices) under with-replacement resampling:
/// sum_l log r_{i_l} - m log sum_j r_j. Invariant to weight rescaling.
inline double log_prob_replacement(const std::vector<int>& indices,
                                   const std::vector<double>& weights) {
    if (indices.empty()) throw Error("log_prob_replacement: empty index tuple");
    double total = 0.0;
    for (double w : weights) {
        if (!(w >= 0.0)) throw Error("log_prob_replacement: negative weight");
        total += w;
    }
    if (!(total > 0.0)) throw Error("log_prob_replacement: all weights are zero");
    double lp = 0.0;
    for (int i : indices) {
        if (i < 0 || i >= static_cast<int>(weights.size()))
            throw Error("log_prob_replacement: index out of range");
        if (!(weights[i] > 0.0))
            throw Error("log_prob_replacement: indexed weight is zero");
        lp += std::log(weights[i]);
    }
    return lp - static_cast<double>(indices.size()) * std::log(total);
}

/// Per-environment resampling plan: the relative weights of one environment's
/// rounds, the target size and the sampling mode.
struct ResamplePlan {
    int m = 1;
    std::vector<double> weights;
    ResampleMode mode = ResampleMode::Distinct;

    void validate() const {
        if (m < 1) throw Error("ResamplePlan: m must be >= 1");
        bool any_positive = false;
        for (double w : weights) {
            if (!(w >= 0.0)) throw Error("ResamplePlan: negative weight");
            any_positive = any_positive || w > 0.0;
        }
        if (!any_positive) throw Error("ResamplePlan: all weights are zero");
    }

    std::vector<int> draw(Rng& rng) const {
        validate();
        return mode == ResampleMode::Distinct ? resample_distinct(weights, m, rng)
                                              : resample_replacement(weights, m, rng);
    }
};

/// Builds the plan for one environment's data under a target policy.
inline ResamplePlan make_resample_plan(const EnvDataset& env_data, const Policy& target,
                                       const SubsetMask& subset, int m,
                                       ResampleMode mode = ResampleMode::Distinct) {
    ResamplePlan plan;
    plan.m = m;
    plan.weights = relative_weights(env_data, target, subset);
    plan.mode = mode;
    plan.validate();
    return plan;
}

}  // namespace ipl
