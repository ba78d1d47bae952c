#pragma once

#include <Eigen/Dense>
#include <boost/math/special_functions/gamma.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <vector>

#include "ipl/common.hpp"

namespace ipl {

/// Affine model fitted by (weighted) least squares.
/// coefficients = [intercept, w_0, ..., w_{p-1}], so size == feature_dim + 1.
struct LinearModel {
    std::vector<double> coefficients;
    int feature_dim = 0;

    double predict(std::span<const double> x) const {
        if (static_cast<int>(x.size()) != feature_dim)
            throw Error("LinearModel::predict: feature dimension mismatch");
        double y = coefficients[0];
        for (int j = 0; j < feature_dim; ++j) y += coefficients[j + 1] * x[j];
        return y;
    }
};

/// Minimizes sum_i w_i (f(x_i) - y_i)^2 over affine f.
///
/// With ridge > 0 the slope coefficients (not the intercept) are penalized,
/// which keeps duplicated-row designs from resampling solvable. With
/// ridge == 0 a rank-deficient design raises SingularDesignError.
inline LinearModel weighted_least_squares(const std::vector<std::vector<double>>& features,
                                          const std::vector<double>& targets,
                                          const std::vector<double>& weights,
                                          double ridge = 0.0) {
    const std::size_t n = features.size();
    if (targets.size() != n || weights.size() != n)
        throw Error("weighted_least_squares: row count mismatch");
    if (n == 0) throw Error("weighted_least_squares: empty data");
    const int p = static_cast<int>(features[0].size());
    double weight_sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        if (static_cast<int>(features[i].size()) != p)
            throw Error("weighted_least_squares: ragged feature rows");
        if (!std::isfinite(weights[i]) || weights[i] < 0.0)
            throw Error("weighted_least_squares: weights must be finite and >= 0");
        weight_sum += weights[i];
    }
    if (!(weight_sum > 0.0)) throw Error("weighted_least_squares: all weights are zero");

    Eigen::MatrixXd design(n, p + 1);
    Eigen::VectorXd rhs(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double s = std::sqrt(weights[i]);
        design(i, 0) = s;
        for (int j = 0; j < p; ++j) design(i, j + 1) = s * features[i][j];
        rhs(i) = s * targets[i];
    }

    Eigen::VectorXd beta;
    if (ridge > 0.0) {
        Eigen::MatrixXd normal = design.transpose() * design;
        for (int j = 1; j <= p; ++j) normal(j, j) += ridge;
        beta = normal.ldlt().solve(design.transpose() * rhs);
    } else {
        Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(design);
        const int rank = static_cast<int>(qr.rank());
        if (rank < p + 1)
            throw SingularDesignError(
                "weighted_least_squares: singular design (rank " + std::to_string(rank) +
                    " < " + std::to_string(p + 1) + "); pass a ridge penalty for duplicated rows",
                rank, p + 1);
        beta = qr.solve(rhs);
    }

    LinearModel model;
    model.feature_dim = p;
    model.coefficients.assign(beta.data(), beta.data() + p + 1);
    return model;
}

/// Survival function of the chi-square distribution, 1 - CDF, via the
/// regularized upper incomplete gamma function.
inline double chi_square_sf(double x, int df) {
    if (df <= 0) throw Error("chi_square_sf: df must be positive");
    if (!(x >= 0.0)) throw Error("chi_square_sf: x must be >= 0");
    if (x == 0.0) return 1.0;
    return boost::math::gamma_q(0.5 * df, 0.5 * x);
}

struct KruskalWallisResult {
    double statistic = 0.0;
    double p_value = 1.0;
};

/// Kruskal-Wallis rank test on mid-ranks with the standard tie correction
/// 1 - sum(t^3 - t) / (N^3 - N). All-identical observations return p = 1.
inline KruskalWallisResult kruskal_wallis(const std::vector<std::vector<double>>& groups) {
    const std::size_t g = groups.size();
    if (g < 2) throw Error("kruskal_wallis: need at least 2 groups");
    std::size_t total = 0;
    for (const auto& grp : groups) {
        if (grp.empty()) throw Error("kruskal_wallis: empty group");
        total += grp.size();
    }
    if (total < 3) throw Error("kruskal_wallis: need at least 3 observations in total");

    struct Obs {
        double value;
        int group;
    };
    std::vector<Obs> pooled;
    pooled.reserve(total);
    for (std::size_t j = 0; j < g; ++j)
        for (double v : groups[j]) pooled.push_back({v, static_cast<int>(j)});
    std::sort(pooled.begin(), pooled.end(),
              [](const Obs& a, const Obs& b) { return a.value < b.value; });

    const double n = static_cast<double>(total);
    std::vector<double> rank_sum(g, 0.0);
    double tie_term = 0.0;
    std::size_t i = 0;
    while (i < total) {
        std::size_t j = i;
        while (j < total && pooled[j].value == pooled[i].value) ++j;
        const double t = static_cast<double>(j - i);
        const double mid_rank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j));
        for (std::size_t l = i; l < j; ++l) rank_sum[pooled[l].group] += mid_rank;
        tie_term += t * t * t - t;
        i = j;
    }

    const double correction = 1.0 - tie_term / (n * n * n - n);
    if (correction <= 0.0) return {0.0, 1.0};  // all observations identical

    double h = 0.0;
    for (std::size_t j = 0; j < g; ++j)
        h += rank_sum[j] * rank_sum[j] / static_cast<double>(groups[j].size());
    h = 12.0 / (n * (n + 1.0)) * h - 3.0 * (n + 1.0);
    h /= correction;

    return {h, chi_square_sf(h, static_cast<int>(g) - 1)};
}

/// Bonferroni combination: min(1, k * min p).
inline double bonferroni(const std::vector<double>& p_values) {
    if (p_values.empty()) throw Error("bonferroni: empty p-value list");
    double lo = 1.0;
    for (double p : p_values) {
        if (!(p >= 0.0 && p <= 1.0)) throw Error("bonferroni: p-value outside [0,1]");
        lo = std::min(lo, p);
    }
    return std::min(1.0, static_cast<double>(p_values.size()) * lo);
}

}  // namespace ipl
