#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "ipl/bandit.hpp"
#include "ipl/common.hpp"
#include "ipl/csv.hpp"
#include "ipl/learner.hpp"
#include "ipl/numerics.hpp"
#include "ipl/policy_opt.hpp"

namespace ipl {

/// Row-oriented tabular data: named features, an outcome (optimal dose), a
/// research-group id per row and optional categorical metadata used for
/// environment clustering. env stays -1 until assigned.
struct TabularDataset {
    std::vector<std::string> feature_names;
    std::vector<std::vector<double>> X;
    std::vector<double> y;
    std::vector<std::string> group;
    std::vector<std::string> race;
    std::vector<int> env;

    std::size_t n() const { return X.size(); }
    int p() const { return static_cast<int>(feature_names.size()); }

    int feature_index(const std::string& name) const {
        for (int j = 0; j < p(); ++j)
            if (feature_names[j] == name) return j;
        return -1;
    }

    void require_envs() const {
        if (env.size() != n()) throw Error("TabularDataset: environments not assigned");
        for (int e : env)
            if (e < 0) throw Error("TabularDataset: unassigned environment label");
    }
};

/// Tercile dose buckets and their within-bucket medians.
struct BucketSpec {
    std::array<double, 2> boundaries{};
    std::array<double, 3> medians{};

    void validate() const {
        if (!(boundaries[0] <= boundaries[1])) throw Error("BucketSpec: unsorted boundaries");
        if (!(medians[0] <= boundaries[0] && boundaries[0] <= medians[1] &&
              medians[1] <= boundaries[1] && boundaries[1] <= medians[2]))
            throw Error("BucketSpec: medians do not lie within their buckets");
    }
};

namespace detail {

inline double quantile_sorted(const std::vector<double>& sorted, double q) {
    const double pos = q * (static_cast<double>(sorted.size()) - 1.0);
    const std::size_t lo = static_cast<std::size_t>(pos);
    const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return sorted[lo] * (1.0 - frac) + sorted[hi] * frac;
}

inline double median(std::vector<double> v) {
    if (v.empty()) throw Error("median of empty vector");
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace detail

inline int dose_bucket(double y, const BucketSpec& spec) {
    if (y < spec.boundaries[0]) return 0;
    if (y < spec.boundaries[1]) return 1;
    return 2;
}

/// Three equal-count buckets from the empirical terciles of the doses.
inline BucketSpec fit_bucket_spec(const std::vector<double>& y) {
    if (y.size() < 3) throw Error("fit_bucket_spec: need at least 3 doses");
    std::vector<double> sorted = y;
    std::sort(sorted.begin(), sorted.end());
    BucketSpec spec;
    spec.boundaries = {detail::quantile_sorted(sorted, 1.0 / 3.0),
                       detail::quantile_sorted(sorted, 2.0 / 3.0)};
    std::array<std::vector<double>, 3> buckets;
    for (double v : y) buckets[dose_bucket(v, spec)].push_back(v);
    for (int a = 0; a < 3; ++a) {
        if (buckets[a].empty()) throw Error("fit_bucket_spec: empty bucket");
        spec.medians[a] = detail::median(buckets[a]);
    }
    spec.validate();
    return spec;
}

/// Negated dose distance, -|y - m(a)|, so that larger is better.
inline double bucketize_and_reward(double y, int action, const BucketSpec& spec) {
    if (action < 0 || action >= 3) throw Error("bucketize_and_reward: action out of range");
    return -std::abs(y - spec.medians[action]);
}

struct ClusterResult {
    std::vector<int> assignment;
    double inertia = 0.0;
};

/// Lloyd's k-means on per-group proportion vectors, best of `restarts`
/// seeded restarts by inertia.
inline ClusterResult cluster_environments(const std::vector<std::vector<double>>& proportions,
                                          int k_clusters, std::uint64_t seed, int restarts = 10) {
    const std::size_t g = proportions.size();
    if (g < static_cast<std::size_t>(k_clusters))
        throw Error("cluster_environments: fewer groups than clusters");
    const std::size_t dim = proportions.empty() ? 0 : proportions[0].size();
    for (const auto& row : proportions) {
        if (row.size() != dim) throw Error("cluster_environments: ragged proportion rows");
        double s = 0.0;
        for (double v : row) s += v;
        if (std::abs(s - 1.0) > 1e-9)
            throw Error("cluster_environments: proportion row does not sum to 1");
    }

    auto sqdist = [&](const std::vector<double>& a, const std::vector<double>& b) {
        double s = 0.0;
        for (std::size_t j = 0; j < a.size(); ++j) s += (a[j] - b[j]) * (a[j] - b[j]);
        return s;
    };

    ClusterResult best;
    best.inertia = std::numeric_limits<double>::infinity();
    for (int restart = 0; restart < restarts; ++restart) {
        Rng rng(derive_seed(seed, {static_cast<std::uint64_t>(restart)}));
        // distinct random rows as initial centers
        std::vector<std::size_t> perm(g);
        for (std::size_t i = 0; i < g; ++i) perm[i] = i;
        for (std::size_t i = g; i > 1; --i) std::swap(perm[i - 1], perm[rng.below(i)]);
        std::vector<std::vector<double>> centers;
        for (int c = 0; c < k_clusters; ++c) centers.push_back(proportions[perm[c]]);

        std::vector<int> assign(g, -1);
        for (int iter = 0; iter < 100; ++iter) {
            bool changed = false;
            for (std::size_t i = 0; i < g; ++i) {
                int argmin = 0;
                double dmin = sqdist(proportions[i], centers[0]);
                for (int c = 1; c < k_clusters; ++c) {
                    const double d = sqdist(proportions[i], centers[c]);
                    if (d < dmin) {
                        dmin = d;
                        argmin = c;
                    }
                }
                if (assign[i] != argmin) {
                    assign[i] = argmin;
                    changed = true;
                }
            }
            for (int c = 0; c < k_clusters; ++c) {
                std::vector<double> mean(dim, 0.0);
                int count = 0;
                for (std::size_t i = 0; i < g; ++i) {
                    if (assign[i] != c) continue;
                    ++count;
                    for (std::size_t j = 0; j < dim; ++j) mean[j] += proportions[i][j];
                }
                if (count == 0) {
                    // repopulate an empty cluster with the farthest point
                    std::size_t far = 0;
                    double dmax = -1.0;
                    for (std::size_t i = 0; i < g; ++i) {
                        const double d = sqdist(proportions[i], centers[assign[i]]);
                        if (d > dmax) {
                            dmax = d;
                            far = i;
                        }
                    }
                    centers[c] = proportions[far];
                    assign[far] = c;
                    changed = true;
                    continue;
                }
                for (std::size_t j = 0; j < dim; ++j) mean[j] /= count;
                centers[c] = std::move(mean);
            }
            if (!changed) break;
        }
        double inertia = 0.0;
        for (std::size_t i = 0; i < g; ++i) inertia += sqdist(proportions[i], centers[assign[i]]);
        if (inertia < best.inertia) best = {assign, inertia};
    }
    return best;
}

/// Per-group race-category frequency matrix, groups and categories ordered by
/// first appearance. Each row sums to 1.
inline std::pair<std::vector<std::string>, std::vector<std::vector<double>>>
group_race_proportions(const TabularDataset& ds) {
    if (ds.race.size() != ds.n())
        throw Error("group_race_proportions: race metadata missing");
    std::vector<std::string> groups, races;
    for (std::size_t i = 0; i < ds.n(); ++i) {
        if (std::find(groups.begin(), groups.end(), ds.group[i]) == groups.end())
            groups.push_back(ds.group[i]);
        if (std::find(races.begin(), races.end(), ds.race[i]) == races.end())
            races.push_back(ds.race[i]);
    }
    std::vector<std::vector<double>> counts(groups.size(),
                                            std::vector<double>(races.size(), 0.0));
    for (std::size_t i = 0; i < ds.n(); ++i) {
        const auto gi = std::find(groups.begin(), groups.end(), ds.group[i]) - groups.begin();
        const auto ri = std::find(races.begin(), races.end(), ds.race[i]) - races.begin();
        counts[gi][ri] += 1.0;
    }
    for (auto& row : counts) {
        double total = 0.0;
        for (double v : row) total += v;
        for (double& v : row) v /= total;
    }
    return {groups, counts};
}

/// Clusters the research groups by race proportions and stamps the resulting
/// environment id on every row.
inline void assign_environments(TabularDataset& ds, int k_clusters, std::uint64_t seed) {
    auto [groups, props] = group_race_proportions(ds);
    const ClusterResult clusters = cluster_environments(props, k_clusters, seed);
    ds.env.assign(ds.n(), -1);
    for (std::size_t i = 0; i < ds.n(); ++i) {
        const auto gi = std::find(groups.begin(), groups.end(), ds.group[i]) - groups.begin();
        ds.env[i] = clusters.assignment[gi];
    }
}

/// Permutation feature importance of a ridge-linear regressor:
/// mean MSE after shuffling one column minus the baseline MSE.
inline std::vector<double> permutation_importance(const std::vector<std::vector<double>>& X,
                                                  const std::vector<double>& y,
                                                  double ridge, int n_permutations,
                                                  std::uint64_t seed) {
    if (X.empty()) throw Error("permutation_importance: empty data");
    const std::size_t n = X.size();
    const int p = static_cast<int>(X[0].size());
    double mean = 0.0;
    for (double v : y) mean += v;
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (double v : y) var += (v - mean) * (v - mean);
    if (!(var > 0.0)) throw Error("permutation_importance: constant outcome");

    const LinearModel fit = weighted_least_squares(X, y, std::vector<double>(n, 1.0), ridge);
    auto mse = [&](const std::vector<std::vector<double>>& rows) {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double r = y[i] - fit.predict(rows[i]);
            s += r * r;
        }
        return s / static_cast<double>(n);
    };
    const double baseline = mse(X);

    std::vector<double> importance(p, 0.0);
    std::vector<std::vector<double>> shuffled = X;
    for (int j = 0; j < p; ++j) {
        double total = 0.0;
        for (int rep = 0; rep < n_permutations; ++rep) {
            Rng rng(derive_seed(seed, {static_cast<std::uint64_t>(j),
                                       static_cast<std::uint64_t>(rep)}));
            std::vector<double> column(n);
            for (std::size_t i = 0; i < n; ++i) column[i] = X[i][j];
            for (std::size_t i = n; i > 1; --i) std::swap(column[i - 1], column[rng.below(i)]);
            for (std::size_t i = 0; i < n; ++i) shuffled[i][j] = column[i];
            total += mse(shuffled);
        }
        for (std::size_t i = 0; i < n; ++i) shuffled[i][j] = X[i][j];
        importance[j] = total / n_permutations - baseline;
    }
    return importance;
}

inline std::vector<int> top_k_features(const std::vector<double>& importance, int k) {
    std::vector<int> order(importance.size());
    for (std::size_t j = 0; j < order.size(); ++j) order[j] = static_cast<int>(j);
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return importance[a] > importance[b]; });
    order.resize(std::min<std::size_t>(order.size(), static_cast<std::size_t>(k)));
    return order;
}

/// Builds the environment-dependent predictor X^{n-inv} = gamma_e * (x^G . beta)
/// from a pooled regression of the dose on the genetic columns, then drops the
/// genetic columns and appends the new one.
inline TabularDataset build_noninvariant_feature(const TabularDataset& ds,
                                                 const std::vector<int>& genetic_cols,
                                                 const std::map<int, double>& env_gammas,
                                                 const std::string& new_name = "x_noninv") {
    ds.require_envs();
    for (int j : genetic_cols)
        if (j < 0 || j >= ds.p()) throw Error("build_noninvariant_feature: bad genetic column");
    for (std::size_t i = 0; i < ds.n(); ++i)
        if (!env_gammas.count(ds.env[i]))
            throw Error("build_noninvariant_feature: missing gamma for env " +
                        std::to_string(ds.env[i]));

    std::vector<std::vector<double>> G(ds.n());
    for (std::size_t i = 0; i < ds.n(); ++i)
        for (int j : genetic_cols) G[i].push_back(ds.X[i][j]);
    const LinearModel fit =
        weighted_least_squares(G, ds.y, std::vector<double>(ds.n(), 1.0));

    TabularDataset out;
    out.y = ds.y;
    out.group = ds.group;
    out.race = ds.race;
    out.env = ds.env;
    for (int j = 0; j < ds.p(); ++j) {
        if (std::find(genetic_cols.begin(), genetic_cols.end(), j) != genetic_cols.end())
            continue;
        out.feature_names.push_back(ds.feature_names[j]);
    }
    out.feature_names.push_back(new_name);
    out.X.resize(ds.n());
    for (std::size_t i = 0; i < ds.n(); ++i) {
        for (int j = 0; j < ds.p(); ++j) {
            if (std::find(genetic_cols.begin(), genetic_cols.end(), j) != genetic_cols.end())
                continue;
            out.X[i].push_back(ds.X[i][j]);
        }
        double projection = 0.0;  // slope part of the pooled genetic prediction
        for (std::size_t l = 0; l < genetic_cols.size(); ++l)
            projection += fit.coefficients[l + 1] * G[i][l];
        out.X[i].push_back(env_gammas.at(ds.env[i]) * projection);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Synthetic warfarin-like generator
// ---------------------------------------------------------------------------

/// Synthetic stand-in for the warfarin cohort. Outcome model (documented):
///   dose = 35 + 0.30 (weight-80) - 0.20 (age-60) + 0.60 (bmi-27) + 2 sex
///          + 3 smoker - 4 amiodarone + 4 enzyme_inducer
///          - 7 vkorc1 - 4 cyp2c9 + N(0,3),
/// with features i.i.d. across environments. Research groups carry
/// continent-specific race proportions so that clustering them by race
/// recovers the 4 latent continents.
struct TabularGenConfig {
    int rows = 5700;
    int groups = 21;
    int n_envs = 4;
    std::uint64_t seed = 1;
};

inline TabularDataset generate_synthetic_tabular(const TabularGenConfig& config) {
    Rng rng(derive_seed(config.seed, {0x7ab}));
    const int G = config.groups;
    const int E = config.n_envs;

    std::vector<int> continent(G);
    std::vector<double> group_weight(G);
    std::vector<std::array<double, 4>> race_probs(G);
    for (int g = 0; g < G; ++g) {
        continent[g] = g % E;
        group_weight[g] = 0.5 + rng.uniform();
        double total = 0.0;
        for (int r = 0; r < 4; ++r) {
            race_probs[g][r] = (r == continent[g] ? 8.0 : 0.0) + 0.5 * rng.uniform();
            total += race_probs[g][r];
        }
        for (double& v : race_probs[g]) v /= total;
    }
    const CategoricalSampler group_sampler(group_weight);
    static const char* kRaces[4] = {"asian", "black", "white", "mixed"};

    TabularDataset ds;
    ds.feature_names = {"age",   "weight",     "height",         "sex",    "bmi",
                        "smoker", "amiodarone", "enzyme_inducer", "vkorc1", "cyp2c9"};
    ds.X.reserve(config.rows);
    for (int i = 0; i < config.rows; ++i) {
        const int g = group_sampler.draw(rng);
        double u = rng.uniform();
        int race = 3;
        for (int r = 0; r < 4; ++r) {
            u -= race_probs[g][r];
            if (u < 0.0) {
                race = r;
                break;
            }
        }
        const double age = 60.0 + 15.0 * rng.normal();
        const double weight = 80.0 + 15.0 * rng.normal();
        const double height = 170.0 + 10.0 * rng.normal();
        const double sex = rng.uniform() < 0.5 ? 0.0 : 1.0;
        const double hm = std::max(1.2, height / 100.0);
        const double bmi = weight / (hm * hm);
        const double smoker = rng.uniform() < 0.25 ? 1.0 : 0.0;
        const double amiodarone = rng.uniform() < 0.10 ? 1.0 : 0.0;
        const double enzyme = rng.uniform() < 0.10 ? 1.0 : 0.0;
        auto genotype = [&](double p0, double p1) {
            const double v = rng.uniform();
            return v < p0 ? 0.0 : (v < p0 + p1 ? 1.0 : 2.0);
        };
        const double vkorc1 = genotype(0.40, 0.40);
        const double cyp2c9 = genotype(0.65, 0.25);

        const double dose = 35.0 + 0.30 * (weight - 80.0) - 0.20 * (age - 60.0) +
                            0.60 * (bmi - 27.0) + 2.0 * sex + 3.0 * smoker -
                            4.0 * amiodarone + 4.0 * enzyme - 7.0 * vkorc1 -
                            4.0 * cyp2c9 + 3.0 * rng.normal();

        ds.X.push_back({age, weight, height, sex, bmi, smoker, amiodarone, enzyme, vkorc1,
                        cyp2c9});
        ds.y.push_back(dose);
        ds.group.push_back("group" + std::to_string(g + 1));
        ds.race.push_back(kRaces[race]);
    }
    return ds;
}

// ---------------------------------------------------------------------------
// Logging and leave-one-environment-out evaluation
// ---------------------------------------------------------------------------

struct TabularLoggingConfig {
    double inv_dist_cap = 5.0;   // cap on the |f_bmi(x) - m(a)|^{-1} logit term
    double ninv_scale = 0.5;     // linear logit term on the standardized x_noninv
};

struct TabularBandit {
    TabularDataset table;
    EnvDataset logged;
    BucketSpec spec;
};

/// Logs a 3-action bandit round per row under the BMI-score initial policy
/// pi0(a|x) proportional to exp(min(cap, |f_bmi(x) - m(a)|^{-1})), extended by
/// a linear term on the standardized non-invariant predictor when present.
inline TabularBandit make_tabular_bandit(const TabularDataset& ds, std::uint64_t seed,
                                         const TabularLoggingConfig& logging = {},
                                         const std::string& noninv_name = "x_noninv") {
    ds.require_envs();
    const int bmi_col = ds.feature_index("bmi");
    if (bmi_col < 0) throw Error("make_tabular_bandit: missing bmi feature");
    const int ninv_col = ds.feature_index(noninv_name);

    TabularBandit bandit;
    bandit.table = ds;
    bandit.spec = fit_bucket_spec(ds.y);

    std::vector<std::vector<double>> bmi(ds.n());
    for (std::size_t i = 0; i < ds.n(); ++i) bmi[i] = {ds.X[i][bmi_col]};
    const LinearModel f_bmi =
        weighted_least_squares(bmi, ds.y, std::vector<double>(ds.n(), 1.0));

    double ninv_mean = 0.0, ninv_sd = 1.0;
    if (ninv_col >= 0) {
        for (std::size_t i = 0; i < ds.n(); ++i) ninv_mean += ds.X[i][ninv_col];
        ninv_mean /= static_cast<double>(ds.n());
        double var = 0.0;
        for (std::size_t i = 0; i < ds.n(); ++i) {
            const double c = ds.X[i][ninv_col] - ninv_mean;
            var += c * c;
        }
        ninv_sd = std::sqrt(std::max(var / static_cast<double>(ds.n()), 1e-12));
    }

    Rng rng(derive_seed(seed, {0x10c}));
    std::vector<LoggedRound> rounds;
    rounds.reserve(ds.n());
    static const double kActionLoad[3] = {-1.0, 0.0, 1.0};
    for (std::size_t i = 0; i < ds.n(); ++i) {
        const double score = f_bmi.predict(bmi[i]);
        std::array<double, 3> logits{};
        for (int a = 0; a < 3; ++a) {
            const double dist = std::abs(score - bandit.spec.medians[a]);
            logits[a] = std::min(logging.inv_dist_cap, 1.0 / std::max(dist, 1e-12));
            if (ninv_col >= 0)
                logits[a] += logging.ninv_scale * kActionLoad[a] *
                             (ds.X[i][ninv_col] - ninv_mean) / ninv_sd;
        }
        const double top = *std::max_element(logits.begin(), logits.end());
        std::array<double, 3> probs{};
        double total = 0.0;
        for (int a = 0; a < 3; ++a) {
            probs[a] = std::exp(logits[a] - top);
            total += probs[a];
        }
        for (double& v : probs) v /= total;
        double u = rng.uniform();
        int a = 2;
        for (int cand = 0; cand < 3; ++cand) {
            u -= probs[cand];
            if (u < 0.0) {
                a = cand;
                break;
            }
        }
        rounds.push_back(LoggedRound{ds.X[i], a, bucketize_and_reward(ds.y[i], a, bandit.spec),
                                     probs[a], "env" + std::to_string(ds.env[i])});
    }
    bandit.logged = EnvDataset::from_rounds(std::move(rounds), ds.p(), 3);
    return bandit;
}

enum class TabularMethod { Inv, Pred, All, OracleInv };

inline std::string to_string(TabularMethod m) {
    switch (m) {
        case TabularMethod::Inv: return "inv";
        case TabularMethod::Pred: return "pred";
        case TabularMethod::All: return "all";
        case TabularMethod::OracleInv: return "oracle-inv";
    }
    return "?";
}

struct LooConfig {
    double alpha = 0.05;
    int top_p_sets = 20;   // candidate invariant sets by largest p-value
    int top_value_sets = 3;
    int folds = 4;
    int max_subset_size = -1;
    std::uint64_t seed = 0;
    int jobs = 1;
    std::string noninv_name = "x_noninv";
};

struct LooCell {
    std::string env;
    std::string method;
    int policy_rank = 1;
    double value = 0.0;
    std::string error;
};

namespace detail {

/// Expected true reward of a policy on the held-out rows.
inline double true_reward_on(const TabularDataset& table, const BucketSpec& spec,
                             const std::vector<int>& rows, const Policy& policy) {
    double total = 0.0;
    for (int i : rows) {
        const std::vector<double> probs = policy.probs(table.X[i]);
        for (int a = 0; a < 3; ++a)
            total += probs[a] * bucketize_and_reward(table.y[i], a, spec);
    }
    return total / static_cast<double>(rows.size());
}

struct RankedPolicy {
    Policy policy;
    double estimated_value;
    SubsetMask subset;
};

}  // namespace detail

/// Leave-one-environment-out evaluation of the candidate methods
/// (Inv / Pred / All / Oracle-Inv). Method failures are recorded per cell.
inline std::vector<LooCell> leave_one_env_out(const TabularBandit& bandit,
                                              const std::vector<TabularMethod>& methods,
                                              const LooConfig& config) {
    bandit.table.require_envs();
    std::set<int> env_set(bandit.table.env.begin(), bandit.table.env.end());
    if (env_set.size() < 2) throw Error("leave_one_env_out: need at least 2 environments");
    const int ninv_col = bandit.table.feature_index(config.noninv_name);

    std::vector<LooCell> cells;
    for (int held_out : env_set) {
        std::vector<int> train_rows, test_rows;
        for (std::size_t i = 0; i < bandit.table.n(); ++i)
            (bandit.table.env[i] == held_out ? test_rows : train_rows)
                .push_back(static_cast<int>(i));
        const EnvDataset train = bandit.logged.select(train_rows);
        const std::string env_label = "env" + std::to_string(held_out);
        const std::uint64_t env_seed =
            derive_seed(config.seed, {static_cast<std::uint64_t>(held_out)});

        // shared off-policy values for every subset (used by Pred / Oracle-Inv)
        const std::vector<SubsetMask> subsets =
            enumerate_subsets(bandit.table.p(), config.max_subset_size);
        std::vector<std::optional<OffOptResult>> fits(subsets.size());
        const bool need_all_values =
            std::find(methods.begin(), methods.end(), TabularMethod::Pred) != methods.end() ||
            std::find(methods.begin(), methods.end(), TabularMethod::OracleInv) != methods.end();
        if (need_all_values) {
            parallel_for(subsets.size(), config.jobs, [&](std::size_t s) {
                try {
                    fits[s] = off_opt(train, subsets[s], config.folds,
                                      derive_seed(env_seed, {0x0ff, s}));
                } catch (const std::exception&) {
                    fits[s] = std::nullopt;
                }
            });
        }
        auto top_by_value = [&](const std::function<bool(const SubsetMask&)>& keep) {
            std::vector<detail::RankedPolicy> ranked;
            for (std::size_t s = 0; s < subsets.size(); ++s) {
                if (!fits[s] || !keep(subsets[s])) continue;
                ranked.push_back({fits[s]->policy, fits[s]->estimated_value, subsets[s]});
            }
            std::stable_sort(ranked.begin(), ranked.end(),
                             [](const auto& a, const auto& b) {
                                 return a.estimated_value > b.estimated_value;
                             });
            if (static_cast<int>(ranked.size()) > config.top_value_sets)
                ranked.erase(ranked.begin() + config.top_value_sets, ranked.end());
            return ranked;
        };

        for (TabularMethod method : methods) {
            try {
                std::vector<detail::RankedPolicy> ranked;
                switch (method) {
                    case TabularMethod::Inv: {
                        LearnerConfig lc;
                        lc.alpha = config.alpha;
                        lc.test_mode = TestMode::PerAction;
                        lc.max_subset_size = config.max_subset_size;
                        lc.value_folds = config.folds;
                        lc.seed = derive_seed(env_seed, {0x117});
                        lc.jobs = config.jobs;
                        const std::vector<TestReport> top_p =
                            accepted_sets(train, lc, config.top_p_sets);
                        std::vector<detail::RankedPolicy> candidates;
                        for (const auto& report : top_p) {
                            if (!report.error.empty()) continue;
                            try {
                                OffOptResult fit =
                                    off_opt(train, report.subset, config.folds,
                                            derive_seed(env_seed, {0x117, 0x0ff}));
                                candidates.push_back(
                                    {fit.policy, fit.estimated_value, report.subset});
                            } catch (const std::exception&) {
                            }
                        }
                        std::stable_sort(candidates.begin(), candidates.end(),
                                         [](const auto& a, const auto& b) {
                                             return a.estimated_value > b.estimated_value;
                                         });
                        if (static_cast<int>(candidates.size()) > config.top_value_sets)
                            candidates.erase(candidates.begin() + config.top_value_sets,
                                             candidates.end());
                        ranked = std::move(candidates);
                        break;
                    }
                    case TabularMethod::Pred:
                        ranked = top_by_value([](const SubsetMask&) { return true; });
                        break;
                    case TabularMethod::All: {
                        OffOptResult fit =
                            off_opt(train, SubsetMask::full(bandit.table.p()), config.folds,
                                    derive_seed(env_seed, {0xa11}));
                        ranked = {{fit.policy, fit.estimated_value,
                                   SubsetMask::full(bandit.table.p())}};
                        break;
                    }
                    case TabularMethod::OracleInv:
                        ranked = top_by_value([&](const SubsetMask& s) {
                            return ninv_col < 0 || !s.contains(ninv_col);
                        });
                        break;
                }
                if (ranked.empty()) throw Error("no candidate policies");
                for (std::size_t rank = 0; rank < ranked.size(); ++rank)
                    cells.push_back({env_label, to_string(method), static_cast<int>(rank + 1),
                                     detail::true_reward_on(bandit.table, bandit.spec,
                                                            test_rows, ranked[rank].policy),
                                     ""});
            } catch (const std::exception& e) {
                cells.push_back({env_label, to_string(method), 0,
                                 std::numeric_limits<double>::quiet_NaN(), e.what()});
            }
        }
    }
    return cells;
}

// ---------------------------------------------------------------------------
// Tabular CSV interface: feature columns + dose + group (+ race)
// ---------------------------------------------------------------------------

struct TabularReadResult {
    TabularDataset data;
    int dropped_rows = 0;  // rows with missing required fields
};

inline TabularReadResult read_tabular_csv(std::istream& is) {
    const CsvTable raw = read_csv_table(is);
    int dose_col = -1, group_col = -1, race_col = -1;
    std::vector<int> feature_cols;
    TabularReadResult out;
    for (std::size_t j = 0; j < raw.columns.size(); ++j) {
        if (raw.columns[j] == "dose") dose_col = static_cast<int>(j);
        else if (raw.columns[j] == "group") group_col = static_cast<int>(j);
        else if (raw.columns[j] == "race") race_col = static_cast<int>(j);
        else {
            feature_cols.push_back(static_cast<int>(j));
            out.data.feature_names.push_back(raw.columns[j]);
        }
    }
    if (dose_col < 0 || group_col < 0) throw Error("tabular CSV: need dose and group columns");
    for (const auto& row : raw.rows) {
        bool missing = row[dose_col].empty() || row[group_col].empty() ||
                       (race_col >= 0 && row[race_col].empty());
        std::vector<double> x;
        double dose = 0.0;
        if (!missing) {
            try {
                for (int j : feature_cols) {
                    if (row[j].empty() || row[j] == "NA") throw Error("missing");
                    x.push_back(std::stod(row[j]));
                }
                dose = std::stod(row[dose_col]);
            } catch (const std::exception&) {
                missing = true;
            }
        }
        if (missing) {
            ++out.dropped_rows;
            continue;
        }
        out.data.X.push_back(std::move(x));
        out.data.y.push_back(dose);
        out.data.group.push_back(row[group_col]);
        if (race_col >= 0) out.data.race.push_back(row[race_col]);
    }
    if (out.data.X.empty()) throw Error("tabular CSV: no complete rows");
    return out;
}

inline TabularReadResult read_tabular_csv(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw Error("cannot open: " + path);
    return read_tabular_csv(f);
}

inline void write_tabular_csv(std::ostream& os, const TabularDataset& ds) {
    for (const auto& name : ds.feature_names) os << name << ",";
    os << "dose,group";
    const bool has_race = ds.race.size() == ds.n();
    if (has_race) os << ",race";
    os << "\n";
    for (std::size_t i = 0; i < ds.n(); ++i) {
        for (double v : ds.X[i]) os << format_double(v) << ",";
        os << format_double(ds.y[i]) << "," << ds.group[i];
        if (has_race) os << "," << ds.race[i];
        os << "\n";
    }
}

inline void write_tabular_csv(const std::string& path, const TabularDataset& ds) {
    std::ofstream f(path);
    if (!f) throw Error("cannot open for writing: " + path);
    write_tabular_csv(f, ds);
}

inline void write_loo_csv(std::ostream& os, const std::vector<LooCell>& cells) {
    os << "env,method,policy_rank,value\n";
    for (const auto& c : cells) {
        os << c.env << "," << c.method << "," << c.policy_rank << ",";
        if (c.error.empty()) os << format_double(c.value);
        else os << "NA";
        os << "\n";
    }
}

}  // namespace ipl
