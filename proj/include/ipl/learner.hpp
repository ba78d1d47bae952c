#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <optional>
#include <vector>

#include "ipl/bandit.hpp"
#include "ipl/common.hpp"
#include "ipl/invariance.hpp"
#include "ipl/policy_opt.hpp"
#include "ipl/power_opt.hpp"

namespace ipl {

enum class TestMode { Fixed, PerAction, PowerOpt };

inline std::string to_string(TestMode mode) {
    switch (mode) {
        case TestMode::Fixed: return "fixed";
        case TestMode::PerAction: return "per-action";
        case TestMode::PowerOpt: return "power-opt";
    }
    return "?";
}

struct LearnerConfig {
    double alpha = 0.05;
    TestMode test_mode = TestMode::Fixed;
    int max_subset_size = -1;  // -1 means all of {0,...,d-1}
    int value_folds = 4;
    std::uint64_t seed = 0;
    double fixed_policy_scale = 1.0;  // spread softmax scale for Fixed mode
    ResampleMode resample_mode = ResampleMode::Distinct;
    PowerOptConfig power;
    MRule m_rule = sqrt_m_rule();
    int jobs = 1;
    int top_k = 20;
};

struct LearnResult {
    std::optional<Policy> best_policy;
    std::optional<SubsetMask> best_subset;
    std::optional<double> best_value;
    std::vector<TestReport> reports;      // enumeration order
    std::vector<SubsetMask> accepted;     // enumeration order

    json to_json() const {
        json reports_j = json::array();
        for (const auto& r : reports) reports_j.push_back(r.to_json());
        json accepted_j = json::array();
        for (const auto& s : accepted) accepted_j.push_back(s.indices);
        return json{
            {"best_subset", best_subset ? json(best_subset->indices) : json(nullptr)},
            {"best_value", best_value ? json(*best_value) : json(nullptr)},
            {"best_policy", best_policy ? best_policy->to_json() : json(nullptr)},
            {"accepted", accepted_j},
            {"reports", reports_j}};
    }
};

/// All subsets of {0,...,d-1} up to max_size, by increasing size then
/// lexicographic order.
inline std::vector<SubsetMask> enumerate_subsets(int d, int max_size = -1) {
    if (max_size < 0 || max_size > d) max_size = d;
    std::vector<SubsetMask> out;
    out.emplace_back();
    for (int size = 1; size <= max_size; ++size) {
        std::vector<int> comb(size);
        for (int j = 0; j < size; ++j) comb[j] = j;
        for (;;) {
            out.push_back(SubsetMask(comb));
            int j = size - 1;
            while (j >= 0 && comb[j] == d - size + j) --j;
            if (j < 0) break;
            ++comb[j];
            for (int l = j + 1; l < size; ++l) comb[l] = comb[l - 1] + 1;
        }
    }
    return out;
}

/// Runs the configured invariance test on one subset. Errors are captured in
/// the report (flagged, never accepted).
inline TestReport run_subset_test(const EnvDataset& data, const SubsetMask& subset,
                                  const LearnerConfig& config, std::uint64_t seed) {
    try {
        switch (config.test_mode) {
            case TestMode::Fixed: {
                const Policy pi =
                    spread_softmax_policy(data.k, subset, config.fixed_policy_scale);
                return test_invariance_fixed_policy(data, pi, subset, config.m_rule,
                                                    config.alpha, seed, config.resample_mode);
            }
            case TestMode::PerAction:
                return test_invariance_per_action(data, subset, config.m_rule, config.alpha,
                                                  seed, config.resample_mode);
            case TestMode::PowerOpt:
                return test_invariance_opt_policy(data, subset, config.m_rule, config.alpha,
                                                  config.power, seed);
        }
        throw Error("unreachable");
    } catch (const std::exception& e) {
        TestReport report;
        report.subset = subset;
        report.alpha = config.alpha;
        report.seed = seed;
        report.test_policy_kind = to_string(config.test_mode);
        report.accepted = false;
        report.p_value = std::numeric_limits<double>::quiet_NaN();
        report.error = e.what();
        return report;
    }
}

/// Tests every subset (size-then-lex order, per-subset derived seeds).
inline std::vector<TestReport> test_all_subsets(const EnvDataset& data,
                                                const LearnerConfig& config) {
    if (data.envs.size() < 2) throw Error("need at least 2 environments");
    if (data.d > 20) throw Error("full subset enumeration is capped at d <= 20");
    const std::vector<SubsetMask> subsets = enumerate_subsets(data.d, config.max_subset_size);
    std::vector<TestReport> reports(subsets.size());
    parallel_for(subsets.size(), config.jobs, [&](std::size_t rank) {
        reports[rank] =
            run_subset_test(data, subsets[rank], config, derive_seed(config.seed, {rank}));
    });
    return reports;
}

/// All tested subsets sorted by p-value descending (errored tests last),
/// truncated to the top K. The continuous rank_score orders subsets whose
/// reported p-values tie (a Bonferroni combination saturates at 1).
inline std::vector<TestReport> accepted_sets(const EnvDataset& data, const LearnerConfig& config,
                                             int top_k = -1) {
    if (top_k < 0) top_k = config.top_k;
    std::vector<TestReport> reports = test_all_subsets(data, config);
    std::stable_sort(reports.begin(), reports.end(), [](const TestReport& a, const TestReport& b) {
        const double pa = a.error.empty() ? a.rank_score : -1.0;
        const double pb = b.error.empty() ? b.rank_score : -1.0;
        return pa > pb;
    });
    if (static_cast<int>(reports.size()) > top_k)
        reports.resize(static_cast<std::size_t>(top_k));
    return reports;
}

/// End-to-end invariant policy learning: test every subset, off-policy
/// optimize within the accepted ones, return the best by estimated value
/// (null when nothing is accepted).
inline LearnResult learn_invariant_policy(const EnvDataset& data, const LearnerConfig& config) {
    LearnResult result;
    result.reports = test_all_subsets(data, config);
    const std::vector<SubsetMask> subsets = enumerate_subsets(data.d, config.max_subset_size);

    struct Candidate {
        std::size_t rank;
        OffOptResult fit;
    };
    std::vector<std::optional<Candidate>> fits(subsets.size());
    parallel_for(subsets.size(), config.jobs, [&](std::size_t rank) {
        if (!result.reports[rank].accepted) return;
        try {
            fits[rank] = Candidate{
                rank, off_opt(data, subsets[rank], config.value_folds,
                              derive_seed(config.seed, {rank, 0x0ff0}))};
        } catch (const std::exception& e) {
            result.reports[rank].accepted = false;
            result.reports[rank].error = std::string("off_opt: ") + e.what();
        }
    });

    for (std::size_t rank = 0; rank < subsets.size(); ++rank) {
        if (!fits[rank] || !result.reports[rank].accepted) continue;
        result.accepted.push_back(subsets[rank]);
        const double value = fits[rank]->fit.estimated_value;
        if (!result.best_value || value > *result.best_value) {
            result.best_value = value;
            result.best_subset = subsets[rank];
            result.best_policy = fits[rank]->fit.policy;
        }
    }
    return result;
}

/// Intersection of all accepted subsets.
inline SubsetMask intersect_accepted(const std::vector<SubsetMask>& accepted) {
    if (accepted.empty()) throw Error("intersect_accepted: empty list");
    std::vector<int> common = accepted[0].indices;
    for (std::size_t i = 1; i < accepted.size(); ++i) {
        std::vector<int> next;
        for (int j : common)
            if (accepted[i].contains(j)) next.push_back(j);
        common = std::move(next);
    }
    return SubsetMask(common);
}

/// All inclusion-minimal hitting sets of the accepted family with size up to
/// max_size, found by exhaustive enumeration by size. Returns an empty list
/// when no hitting set of the allowed size exists (e.g. the family contains
/// the empty set).
inline std::vector<SubsetMask> defining_sets(const std::vector<SubsetMask>& accepted,
                                             int max_size) {
    if (accepted.empty()) throw Error("defining_sets: empty accepted list");
    if (max_size < 1) throw Error("defining_sets: max_size must be >= 1");
    for (const auto& s : accepted)
        if (s.empty()) return {};

    std::vector<int> universe;
    for (const auto& s : accepted)
        for (int j : s.indices)
            if (std::find(universe.begin(), universe.end(), j) == universe.end())
                universe.push_back(j);
    std::sort(universe.begin(), universe.end());
    const int u = static_cast<int>(universe.size());
    max_size = std::min(max_size, u);

    std::vector<SubsetMask> found;
    auto hits_all = [&](const std::vector<int>& candidate) {
        for (const auto& s : accepted) {
            bool hit = false;
            for (int j : candidate)
                if (s.contains(j)) {
                    hit = true;
                    break;
                }
            if (!hit) return false;
        }
        return true;
    };
    auto contains_found = [&](const std::vector<int>& candidate) {
        for (const auto& f : found) {
            bool subset = true;
            for (int j : f.indices)
                if (std::find(candidate.begin(), candidate.end(), j) == candidate.end()) {
                    subset = false;
                    break;
                }
            if (subset) return true;
        }
        return false;
    };

    for (int size = 1; size <= max_size; ++size) {
        std::vector<int> comb(size);
        for (int j = 0; j < size; ++j) comb[j] = j;
        for (;;) {
            std::vector<int> candidate(size);
            for (int j = 0; j < size; ++j) candidate[j] = universe[comb[j]];
            if (!contains_found(candidate) && hits_all(candidate))
                found.push_back(SubsetMask(candidate));
            int j = size - 1;
            while (j >= 0 && comb[j] == u - size + j) --j;
            if (j < 0) break;
            ++comb[j];
            for (int l = j + 1; l < size; ++l) comb[l] = comb[l - 1] + 1;
        }
    }
    return found;
}

}  // namespace ipl
