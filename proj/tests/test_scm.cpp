#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "ipl/scm.hpp"

using namespace ipl;

namespace {

ScmConfig two_action_example() {
    // the running two-action example: R = X2 +/- U + eps
    ScmConfig c;
    c.scm.k = 2;
    c.scm.beta1 = {1.0, 1.0};
    c.scm.beta2 = {1.0, -1.0};
    c.envs = {{"train", EnvParams{1.0, 0.0}}};
    return c;
}

}  // namespace

TEST_CASE("noiseless propagation", "[scm]") {
    ScmConfig c;
    c.scm.k = 1;
    c.scm.beta1 = {1.0};
    c.scm.beta2 = {1.0};
    c.envs = {{"e", EnvParams{2.0, 3.0}}};
    c.noise_u = c.noise_x1 = c.noise_x2 = c.noise_r = 0.0;
    const EnvDataset ds = sample_rounds(c, "e", Policy::constant(1, 0), 50, 7);
    for (const auto& r : ds.rounds) {
        REQUIRE(r.context == std::vector<double>{0.0, 3.0});  // U = 0, X2 = alpha
        REQUIRE(r.reward == 3.0);
        REQUIRE(r.action == 0);
        REQUIRE(r.propensity == 1.0);
    }
}

TEST_CASE("context means match the structural equations", "[scm]") {
    ScmConfig c = default_scm_config(3, 1);
    c.envs[0].second = EnvParams{1.7, 3.0};
    const EnvDataset ds = sample_rounds(c, "e1", Policy::uniform(3), 50000, 11);
    double m1 = 0.0, m2 = 0.0;
    for (const auto& r : ds.rounds) {
        m1 += r.context[0];
        m2 += r.context[1];
    }
    m1 /= ds.size();
    m2 /= ds.size();
    REQUIRE(std::abs(m1) <= 0.05 * (1.0 + std::abs(1.7)));  // E[X1] = gamma E[U] = 0
    REQUIRE(std::abs(m2 - 3.0) <= 0.05);                    // E[X2] = alpha
}

TEST_CASE("oracle picks the confounder-aligned action in the two-action example", "[scm]") {
    const ScmConfig c = two_action_example();
    const Policy oracle = oracle_policy(c, "train");
    // gamma > 0: action 0 (reward X2 + U) iff x1 > 0
    REQUIRE(oracle.prob({2.0, 0.0}, 0) == 1.0);
    REQUIRE(oracle.prob({-2.0, 0.0}, 1) == 1.0);
}

TEST_CASE("oracle ignores x1 when gamma is zero", "[scm]") {
    ScmConfig c = two_action_example();
    c.envs[0].second.gamma = 0.0;
    c.scm.beta1 = {1.0, -1.0};
    const Policy oracle = oracle_policy(c, "train");
    for (double x1 : {-5.0, 0.0, 5.0}) {
        REQUIRE(oracle.prob({x1, 2.0}, 0) == 1.0);   // beta1 favors action 0 at x2 > 0
        REQUIRE(oracle.prob({x1, -2.0}, 1) == 1.0);
    }
}

TEST_CASE("oracle value dominates other policies", "[scm]") {
    const ScmConfig c = default_scm_config(17, 1);
    const int n_mc = 100000;
    const double v_oracle = oracle_value(c, "e1", n_mc, 5);
    const double v_uniform = monte_carlo_value(c, "e1", Policy::uniform(3), n_mc, 5);
    // a perturbed greedy policy as a second candidate
    Policy oracle = oracle_policy(c, "e1");
    std::vector<LinearModel> models = oracle.models();
    models[0].coefficients[1] += 0.9;
    models[2].coefficients[2] -= 0.9;
    const Policy perturbed = Policy::linear_greedy(3, SubsetMask::full(2), models);
    const double v_perturbed = monte_carlo_value(c, "e1", perturbed, n_mc, 5);
    REQUIRE(v_oracle >= v_uniform - 0.03);
    REQUIRE(v_oracle >= v_perturbed - 0.03);
}

TEST_CASE("env_distance", "[scm]") {
    REQUIRE(env_distance({{1, 0}, {3, 0}}, {2, 0}) == 0.0);
    REQUIRE_THAT(env_distance({{2, 0}}, {5, 4}), Catch::Matchers::WithinAbs(5.0, 1e-12));
    REQUIRE(env_distance({{0, 0}}, {0, 0}) == 0.0);
    REQUIRE_THROWS_AS(env_distance({}, {0, 0}), Error);
}

TEST_CASE("initial policy is uniform when all rewards vanish", "[scm]") {
    std::vector<LoggedRound> rounds;
    Rng rng(4);
    for (int i = 0; i < 60; ++i)
        rounds.push_back(
            LoggedRound{{rng.normal(), rng.normal()}, i % 3, 0.0, 1.0 / 3, "e"});
    const Policy pi0 = make_initial_policy(EnvDataset::from_rounds(std::move(rounds), 2, 3));
    for (int a = 0; a < 3; ++a)
        REQUIRE_THAT(pi0.prob({0.7, -1.1}, a), Catch::Matchers::WithinAbs(1.0 / 3, 1e-9));
}

TEST_CASE("initial policy logit difference", "[scm]") {
    // both actions observe the same contexts; rewards differ by the constant c
    const double c = 1.6;
    std::vector<LoggedRound> rounds;
    Rng rng(8);
    for (int i = 0; i < 30; ++i) {
        const std::vector<double> x{rng.normal(), rng.normal()};
        const double y = 0.4 * x[0] - 1.3 * x[1];  // exactly linear, no noise
        rounds.push_back(LoggedRound{x, 0, y, 0.5, "e"});
        rounds.push_back(LoggedRound{x, 1, y + c, 0.5, "e"});
    }
    const Policy pi0 = make_initial_policy(EnvDataset::from_rounds(std::move(rounds), 2, 2));
    const double expected = 1.0 / (1.0 + std::exp(-c / 2.0));
    for (double x1 : {-2.0, 0.0, 1.5})
        REQUIRE_THAT(pi0.prob({x1, 0.3 * x1}, 1), Catch::Matchers::WithinAbs(expected, 1e-8));
}

TEST_CASE("initial policy probabilities are a strictly positive simplex", "[scm]") {
    const ScmConfig c = default_scm_config(23, 2);
    const EnvDataset warmup = sample_pooled(c, c.env_ids(), Policy::uniform(3), 800, 3);
    const Policy pi0 = make_initial_policy(warmup);
    Rng rng(5);
    for (int i = 0; i < 100; ++i) {
        const std::vector<double> x{3.0 * rng.normal(), 3.0 * rng.normal()};
        double total = 0.0;
        for (int a = 0; a < 3; ++a) {
            const double p = pi0.prob(x, a);
            REQUIRE(p > 0.0);
            total += p;
        }
        REQUIRE_THAT(total, Catch::Matchers::WithinAbs(1.0, 1e-12));
    }
}

TEST_CASE("initial policy requires enough observations per action", "[scm]") {
    std::vector<LoggedRound> rounds;
    for (int i = 0; i < 12; ++i)
        rounds.push_back(LoggedRound{{0.1 * i, 0.2 * i}, 0, 1.0, 0.5, "e"});
    rounds.push_back(LoggedRound{{1.0, 1.0}, 1, 1.0, 0.5, "e"});  // action 1 seen once
    REQUIRE_THROWS_AS(make_initial_policy(EnvDataset::from_rounds(std::move(rounds), 2, 2)),
                      Error);
}

TEST_CASE("unconfounded wiring decouples X1 from the reward residual", "[scm]") {
    ScmConfig c = default_scm_config(31, 1, 3, /*confounded=*/false);
    c.envs[0].second = EnvParams{2.0, 1.0};
    const EnvDataset ds = sample_rounds(c, "e1", Policy::uniform(3), 50000, 13);
    for (int a = 0; a < 3; ++a) {
        double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
        int n = 0;
        for (const auto& r : ds.rounds) {
            if (r.action != a) continue;
            const double x = r.context[0];
            const double y = r.reward - c.scm.beta1[a] * r.context[1];
            ++n;
            sx += x; sy += y; sxx += x * x; syy += y * y; sxy += x * y;
        }
        const double cov = sxy / n - (sx / n) * (sy / n);
        const double corr = cov / std::sqrt((sxx / n - sx / n * (sx / n)) *
                                            (syy / n - sy / n * (sy / n)));
        REQUIRE(std::abs(corr) <= 0.02);
    }
}

TEST_CASE("gamma = 0 is confounding-removing", "[scm]") {
    ScmConfig c = default_scm_config(37, 1);
    c.envs[0].second = EnvParams{0.0, 0.5};
    const EnvDataset ds = sample_rounds(c, "e1", Policy::uniform(3), 50000, 17);
    // regression of R on (X1, X2) per action: the X1 slope must vanish
    for (int a = 0; a < 3; ++a) {
        std::vector<std::vector<double>> X;
        std::vector<double> y;
        for (const auto& r : ds.rounds) {
            if (r.action != a) continue;
            X.push_back(r.context);
            y.push_back(r.reward);
        }
        const LinearModel fit =
            weighted_least_squares(X, y, std::vector<double>(X.size(), 1.0));
        REQUIRE(std::abs(fit.coefficients[1]) <= 0.03);
    }
}

TEST_CASE("same seed gives identical datasets", "[scm]") {
    const ScmConfig c = default_scm_config(41, 2);
    const EnvDataset a = sample_rounds(c, "e2", Policy::uniform(3), 500, 99);
    const EnvDataset b = sample_rounds(c, "e2", Policy::uniform(3), 500, 99);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        REQUIRE(a.rounds[i].context == b.rounds[i].context);
        REQUIRE(a.rounds[i].action == b.rounds[i].action);
        REQUIRE(a.rounds[i].reward == b.rounds[i].reward);
    }
}

TEST_CASE("ScmConfig JSON round trip", "[scm]") {
    ScmConfig c = default_scm_config(5, 3);
    c.noise_x2 = 0.7;
    const ScmConfig back = ScmConfig::from_json(c.to_json());
    REQUIRE(back.scm.k == c.scm.k);
    REQUIRE(back.scm.beta1 == c.scm.beta1);
    REQUIRE(back.scm.beta2 == c.scm.beta2);
    REQUIRE(back.noise_x2 == 0.7);
    REQUIRE(back.envs.size() == 3);
    REQUIRE(back.env("e2").gamma == c.env("e2").gamma);
    REQUIRE_THROWS_AS(ScmConfig::from_json(json{{"k", 2}}), json::exception);
}

TEST_CASE("unknown environment raises", "[scm]") {
    const ScmConfig c = default_scm_config(1, 1);
    REQUIRE_THROWS_AS(sample_rounds(c, "nope", Policy::uniform(3), 10, 1), Error);
}
