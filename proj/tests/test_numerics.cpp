#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "ipl/common.hpp"
#include "ipl/numerics.hpp"

using namespace ipl;

namespace {

// Test-only oracle for the regularized upper incomplete gamma function,
// independent of the implementation path: series for x < a+1, continued
// fraction otherwise (Lentz's method).
double gammq_ref(double a, double x) {
    if (x < 0.0 || a <= 0.0) throw std::runtime_error("gammq_ref domain");
    if (x == 0.0) return 1.0;
    const double gln = std::lgamma(a);
    if (x < a + 1.0) {
        double ap = a, sum = 1.0 / a, del = sum;
        for (int i = 0; i < 500; ++i) {
            ap += 1.0;
            del *= x / ap;
            sum += del;
            if (std::abs(del) < std::abs(sum) * 1e-16) break;
        }
        return 1.0 - sum * std::exp(-x + a * std::log(x) - gln);
    }
    double b = x + 1.0 - a, c = 1e300, d = 1.0 / b, h = d;
    for (int i = 1; i <= 500; ++i) {
        const double an = -i * (i - a);
        b += 2.0;
        d = an * d + b;
        if (std::abs(d) < 1e-300) d = 1e-300;
        c = b + an / c;
        if (std::abs(c) < 1e-300) c = 1e-300;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::abs(del - 1.0) < 1e-16) break;
    }
    return std::exp(-x + a * std::log(x) - gln) * h;
}

std::vector<std::vector<double>> column(const std::vector<double>& x) {
    std::vector<std::vector<double>> out;
    for (double v : x) out.push_back({v});
    return out;
}

}  // namespace

TEST_CASE("weighted least squares on two points recovers the line", "[numerics]") {
    const LinearModel m =
        weighted_least_squares(column({0.0, 1.0}), {1.0, 3.0}, {1.0, 1.0});
    REQUIRE(m.feature_dim == 1);
    REQUIRE_THAT(m.coefficients[0], Catch::Matchers::WithinAbs(1.0, 1e-10));
    REQUIRE_THAT(m.coefficients[1], Catch::Matchers::WithinAbs(2.0, 1e-10));
}

TEST_CASE("equal weights match the unweighted fit", "[numerics]") {
    Rng rng(7);
    std::vector<std::vector<double>> X;
    std::vector<double> y;
    for (int i = 0; i < 40; ++i) {
        X.push_back({rng.normal(), rng.normal()});
        y.push_back(1.5 * X.back()[0] - 0.3 * X.back()[1] + rng.normal());
    }
    const LinearModel a = weighted_least_squares(X, y, std::vector<double>(40, 1.0));
    const LinearModel b = weighted_least_squares(X, y, std::vector<double>(40, 2.7));
    for (int j = 0; j < 3; ++j)
        REQUIRE_THAT(a.coefficients[j], Catch::Matchers::WithinAbs(b.coefficients[j], 1e-9));
}

TEST_CASE("zero weight removes a point", "[numerics]") {
    const LinearModel m = weighted_least_squares(column({0.0, 1.0, 2.0}), {0.0, 1.0, 4.0},
                                                 {1.0, 1.0, 0.0});
    REQUIRE_THAT(m.coefficients[0], Catch::Matchers::WithinAbs(0.0, 1e-10));
    REQUIRE_THAT(m.coefficients[1], Catch::Matchers::WithinAbs(1.0, 1e-10));
}

TEST_CASE("normal equations hold at the optimum", "[numerics]") {
    Rng rng(11);
    std::vector<std::vector<double>> X;
    std::vector<double> y, w;
    for (int i = 0; i < 60; ++i) {
        X.push_back({rng.normal(), rng.normal(), rng.normal()});
        y.push_back(rng.normal() * 3.0 + 1.0);
        w.push_back(0.1 + rng.uniform());
    }
    const LinearModel m = weighted_least_squares(X, y, w);
    // gradient of the objective: 2 * D^T W (D beta - y) must vanish
    double scale = 0.0;
    std::vector<double> grad(4, 0.0);
    for (int i = 0; i < 60; ++i) {
        std::vector<double> row{1.0, X[i][0], X[i][1], X[i][2]};
        const double resid = m.predict(X[i]) - y[i];
        for (int j = 0; j < 4; ++j) {
            grad[j] += w[i] * resid * row[j];
            scale += std::abs(w[i] * y[i] * row[j]);
        }
    }
    for (int j = 0; j < 4; ++j) REQUIRE(std::abs(grad[j]) <= 1e-8 * std::max(scale, 1.0));
}

TEST_CASE("singular design raises with rank information", "[numerics]") {
    // duplicated column -> rank deficiency
    std::vector<std::vector<double>> X;
    std::vector<double> y;
    Rng rng(3);
    for (int i = 0; i < 20; ++i) {
        const double v = rng.normal();
        X.push_back({v, v});
        y.push_back(v + rng.normal());
    }
    try {
        weighted_least_squares(X, y, std::vector<double>(20, 1.0));
        FAIL("expected SingularDesignError");
    } catch (const SingularDesignError& e) {
        REQUIRE(e.rank < e.needed);
        REQUIRE(e.needed == 3);
    }
    // an explicit ridge makes it solvable
    REQUIRE_NOTHROW(weighted_least_squares(X, y, std::vector<double>(20, 1.0), 1e-8));
}

TEST_CASE("weight rescaling leaves coefficients unchanged", "[numerics]") {
    Rng rng(5);
    std::vector<std::vector<double>> X;
    std::vector<double> y, w;
    for (int i = 0; i < 30; ++i) {
        X.push_back({rng.normal()});
        y.push_back(2.0 * X.back()[0] + rng.normal());
        w.push_back(0.5 + rng.uniform());
    }
    std::vector<double> w5 = w;
    for (double& v : w5) v *= 5.0;
    const LinearModel a = weighted_least_squares(X, y, w);
    const LinearModel b = weighted_least_squares(X, y, w5);
    REQUIRE_THAT(a.coefficients[0], Catch::Matchers::WithinAbs(b.coefficients[0], 1e-9));
    REQUIRE_THAT(a.coefficients[1], Catch::Matchers::WithinAbs(b.coefficients[1], 1e-9));
}

TEST_CASE("chi-square survival function", "[numerics]") {
    REQUIRE(chi_square_sf(0.0, 1) == 1.0);
    REQUIRE(chi_square_sf(0.0, 7) == 1.0);
    // df = 2 has the closed form exp(-x/2)
    REQUIRE_THAT(chi_square_sf(3.6, 2), Catch::Matchers::WithinAbs(std::exp(-1.8), 1e-12));
    // df = 1 via the erf route: sf = erfc(sqrt(x/2))
    REQUIRE_THAT(chi_square_sf(2.4, 1),
                 Catch::Matchers::WithinAbs(std::erfc(std::sqrt(1.2)), 1e-10));
    REQUIRE_THAT(chi_square_sf(2.4, 1), Catch::Matchers::WithinAbs(0.12134, 5e-6));
    REQUIRE_THROWS_AS(chi_square_sf(1.0, 0), Error);
    REQUIRE_THROWS_AS(chi_square_sf(-0.5, 2), Error);
}

TEST_CASE("chi-square survival matches series/continued-fraction oracle", "[numerics]") {
    for (int df = 1; df <= 12; ++df)
        for (double x : {0.05, 0.5, 1.0, 2.4, 3.6, 7.2, 12.0, 25.0, 50.0})
            REQUIRE_THAT(chi_square_sf(x, df),
                         Catch::Matchers::WithinAbs(gammq_ref(0.5 * df, 0.5 * x), 1e-10));
}

TEST_CASE("chi-square survival is monotone decreasing in x", "[numerics]") {
    for (int df : {1, 3, 8}) {
        double prev = 1.0;
        for (double x = 0.25; x < 30.0; x += 0.25) {
            const double s = chi_square_sf(x, df);
            REQUIRE(s < prev);
            prev = s;
        }
    }
}

TEST_CASE("Kruskal-Wallis worked examples", "[numerics]") {
    const auto r1 = kruskal_wallis({{1, 2, 3}, {4, 5, 6}, {7, 8, 9}});
    REQUIRE_THAT(r1.statistic, Catch::Matchers::WithinAbs(7.2, 1e-12));
    REQUIRE_THAT(r1.p_value, Catch::Matchers::WithinAbs(std::exp(-3.6), 1e-6));

    const auto r2 = kruskal_wallis({{1, 2}, {3, 4}});
    REQUIRE_THAT(r2.statistic, Catch::Matchers::WithinAbs(2.4, 1e-12));
    REQUIRE_THAT(r2.p_value, Catch::Matchers::WithinAbs(0.1213, 2e-4));

    const auto r3 = kruskal_wallis({{5, 5, 5}, {5, 5, 5}});
    REQUIRE(r3.p_value == 1.0);
}

TEST_CASE("Kruskal-Wallis preconditions", "[numerics]") {
    REQUIRE_THROWS_AS(kruskal_wallis({{1.0, 2.0}}), Error);
    REQUIRE_THROWS_AS(kruskal_wallis({{1.0}, {}}), Error);
    REQUIRE_THROWS_AS(kruskal_wallis({{1.0}, {2.0}}), Error);
}

TEST_CASE("Kruskal-Wallis is invariant to monotone transformations", "[numerics]") {
    Rng rng(13);
    std::vector<std::vector<double>> groups(3);
    for (auto& g : groups)
        for (int i = 0; i < 25; ++i) g.push_back(rng.normal());
    const auto base = kruskal_wallis(groups);
    for (auto& g : groups)
        for (double& v : g) v = std::exp(0.7 * v) + 2.0;  // strictly increasing
    const auto mapped = kruskal_wallis(groups);
    REQUIRE_THAT(base.statistic, Catch::Matchers::WithinAbs(mapped.statistic, 1e-12));
}

TEST_CASE("Kruskal-Wallis holds level under the null", "[numerics]") {
    Rng rng(2024);
    int rejections = 0;
    const int sims = 2000;
    for (int s = 0; s < sims; ++s) {
        std::vector<std::vector<double>> groups(3, std::vector<double>(30));
        for (auto& g : groups)
            for (double& v : g) v = rng.normal();
        if (kruskal_wallis(groups).p_value < 0.05) ++rejections;
    }
    const double rate = static_cast<double>(rejections) / sims;
    REQUIRE(rate >= 0.03);
    REQUIRE(rate <= 0.07);
}

TEST_CASE("Bonferroni combination", "[numerics]") {
    REQUIRE_THAT(bonferroni({0.02, 0.5, 0.9}), Catch::Matchers::WithinAbs(0.06, 1e-12));
    REQUIRE(bonferroni({1.0, 1.0}) == 1.0);
    REQUIRE_THAT(bonferroni({0.3}), Catch::Matchers::WithinAbs(0.3, 1e-12));
    REQUIRE_THROWS_AS(bonferroni({}), Error);
    REQUIRE_THROWS_AS(bonferroni({1.2}), Error);
}
