#pragma once

#include <cstdint>
#include <vector>

#include "ipl/bandit.hpp"
#include "ipl/common.hpp"
#include "ipl/numerics.hpp"

namespace ipl {

/// Per-action importance-weighted value regression over a context subset.
struct QFunction {
    std::vector<LinearModel> models;  // one per action
    SubsetMask subset;
    int k = 0;

    double value(std::span<const double> context, int action) const {
        return models[action].predict(restrict_context(context, subset));
    }

    json to_json() const {
        json models_j = json::array();
        for (const auto& m : models) models_j.push_back(m.coefficients);
        return json{{"k", k}, {"subset", subset.indices}, {"models", models_j}};
    }
};

/// Fits, per action a, a weighted least squares of R on X^S over the rounds
/// with A = a, weighted by 1/pi0(A|X). A small ridge keeps duplicated rows
/// from resampled data solvable.
inline QFunction fit_weighted_q(const EnvDataset& data, const SubsetMask& subset,
                                double ridge = 1e-8) {
    subset.check_bounds(data.d);
    QFunction q;
    q.subset = subset;
    q.k = data.k;
    q.models.reserve(data.k);
    for (int a = 0; a < data.k; ++a) {
        std::vector<std::vector<double>> X;
        std::vector<double> y, w;
        for (const auto& r : data.rounds) {
            if (r.action != a) continue;
            X.push_back(restrict_context(r.context, subset));
            y.push_back(r.reward);
            w.push_back(1.0 / r.propensity);
        }
        if (X.empty())
            throw Error("fit_weighted_q: action " + std::to_string(a) + " never logged");
        q.models.push_back(weighted_least_squares(X, y, w, ridge));
    }
    return q;
}

/// Deterministic argmax policy over a fitted Q; ties go to the lowest action.
inline Policy greedy_policy(const QFunction& q) {
    return Policy::linear_greedy(q.k, q.subset, q.models);
}

struct OffOptResult {
    Policy policy;
    double estimated_value = 0.0;
    QFunction q;
};

namespace detail {

/// Seeded fold assignment: a shuffled partition into `folds` blocks.
inline std::vector<int> fold_assignment(std::size_t n, int folds, Rng& rng) {
    std::vector<int> fold(n);
    for (std::size_t i = 0; i < n; ++i) fold[i] = static_cast<int>(i % folds);
    for (std::size_t i = n; i > 1; --i) {
        const std::size_t j = rng.below(i);
        std::swap(fold[i - 1], fold[j]);
    }
    return fold;
}

}  // namespace detail

/// Off-policy optimization: fits the greedy policy on the full data and
/// estimates its value by 4-fold cross-fitted self-normalized importance
/// sampling (per fold: sum matched R/pi0 over sum matched 1/pi0, with the
/// policy fitted on the remaining folds; fold estimates averaged).
inline OffOptResult off_opt(const EnvDataset& data, const SubsetMask& subset, int folds = 4,
                            std::uint64_t seed = 0, double ridge = 1e-8) {
    if (folds < 2) throw Error("off_opt: need at least 2 folds");
    const std::size_t min_n =
        static_cast<std::size_t>(folds) * static_cast<std::size_t>(data.k) *
        (subset.indices.size() + 2);
    if (data.size() < min_n)
        throw Error("off_opt: too few rounds (" + std::to_string(data.size()) + " < " +
                    std::to_string(min_n) + ")");

    Rng rng(derive_seed(seed, {0x0f01d5}));
    const std::vector<int> fold = detail::fold_assignment(data.size(), folds, rng);

    double value_sum = 0.0;
    for (int f = 0; f < folds; ++f) {
        std::vector<int> train_idx;
        train_idx.reserve(data.size());
        for (std::size_t i = 0; i < data.size(); ++i)
            if (fold[i] != f) train_idx.push_back(static_cast<int>(i));
        const Policy pi = greedy_policy(fit_weighted_q(data.select(train_idx), subset, ridge));
        double num = 0.0, den = 0.0;
        for (std::size_t i = 0; i < data.size(); ++i) {
            if (fold[i] != f) continue;
            const LoggedRound& r = data.rounds[i];
            if (pi.prob(r.context, r.action) <= 0.0) continue;
            num += r.reward / r.propensity;
            den += 1.0 / r.propensity;
        }
        if (!(den > 0.0))
            throw Error("off_opt: fold " + std::to_string(f) +
                        " has no rounds matching the greedy policy");
        value_sum += num / den;
    }

    OffOptResult out{Policy::uniform(data.k), value_sum / folds, {}};
    out.q = fit_weighted_q(data, subset, ridge);
    out.policy = greedy_policy(out.q);
    return out;
}

}  // namespace ipl
