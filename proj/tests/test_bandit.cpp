#include <catch2/catch_amalgamated.hpp>

#include <sstream>

#include "ipl/bandit.hpp"
#include "ipl/csv.hpp"

using namespace ipl;

namespace {

EnvDataset tiny_dataset() {
    std::vector<LoggedRound> rounds;
    Rng rng(42);
    for (int i = 0; i < 24; ++i) {
        rounds.push_back(LoggedRound{{rng.normal(), rng.normal(), rng.normal()},
                                     i % 3, rng.normal(), 0.25 + 0.5 * rng.uniform(),
                                     i % 2 ? "b" : "a"});
    }
    return EnvDataset::from_rounds(std::move(rounds), 3, 3);
}

}  // namespace

TEST_CASE("policy_prob basics", "[bandit]") {
    const std::vector<double> x{0.3, -1.2};
    REQUIRE_THAT(policy_prob(Policy::uniform(3), x, 1), Catch::Matchers::WithinAbs(1.0 / 3, 1e-15));

    const Policy zero_softmax =
        Policy::softmax(4, SubsetMask({0, 1}), {{0, 0}, {0, 0}, {0, 0}, {0, 0}});
    for (int a = 0; a < 4; ++a)
        REQUIRE_THAT(policy_prob(zero_softmax, x, a), Catch::Matchers::WithinAbs(0.25, 1e-15));

    const Policy point = Policy::constant(3, 2);
    REQUIRE(policy_prob(point, x, 2) == 1.0);
    REQUIRE(policy_prob(point, x, 0) == 0.0);
    REQUIRE_THROWS_AS(policy_prob(point, x, 5), Error);
}

TEST_CASE("probabilities sum to one for every distribution kind", "[bandit]") {
    Rng rng(9);
    for (int trial = 0; trial < 50; ++trial) {
        const std::vector<double> x{rng.normal() * 3.0, rng.normal() * 3.0, rng.normal()};
        std::vector<Policy> policies;
        policies.push_back(Policy::uniform(4));
        policies.push_back(Policy::constant(4, trial % 4));
        std::vector<std::vector<double>> theta(4, std::vector<double>(2));
        std::vector<double> intercepts(4);
        for (auto& row : theta)
            for (double& v : row) v = 4.0 * rng.normal();
        for (double& v : intercepts) v = rng.normal();
        policies.push_back(Policy::softmax(4, SubsetMask({0, 2}), theta, intercepts));
        std::vector<LinearModel> models;
        for (int a = 0; a < 4; ++a)
            models.push_back(LinearModel{{rng.normal(), rng.normal(), rng.normal()}, 2});
        policies.push_back(Policy::linear_greedy(4, SubsetMask({0, 1}), models));
        for (const auto& pi : policies) {
            double total = 0.0;
            for (int a = 0; a < 4; ++a) {
                const double p = policy_prob(pi, x, a);
                REQUIRE(p >= 0.0);
                total += p;
            }
            REQUIRE_THAT(total, Catch::Matchers::WithinAbs(1.0, 1e-12));
        }
    }
}

TEST_CASE("select_action basics", "[bandit]") {
    Rng rng(1);
    const std::vector<double> x{0.0, 0.0};
    for (int i = 0; i < 20; ++i)
        REQUIRE(select_action(Policy::constant(4, 1), x, rng) == 1);
    for (int i = 0; i < 20; ++i) REQUIRE(select_action(Policy::uniform(1), x, rng) == 0);

    int zeros = 0;
    Rng rng2(77);
    for (int i = 0; i < 10000; ++i)
        if (select_action(Policy::uniform(2), x, rng2) == 0) ++zeros;
    const double freq = zeros / 10000.0;
    REQUIRE(freq >= 0.48);
    REQUIRE(freq <= 0.52);
}

TEST_CASE("select_action is bit-reproducible given the seed", "[bandit]") {
    const Policy pi = Policy::softmax(3, SubsetMask({0}), {{-1.0}, {0.0}, {1.0}});
    std::vector<int> first, second;
    for (int pass = 0; pass < 2; ++pass) {
        Rng rng(123456);
        auto& out = pass == 0 ? first : second;
        for (int i = 0; i < 200; ++i) out.push_back(select_action(pi, {0.3 * i - 20.0, 1.0}, rng));
    }
    REQUIRE(first == second);
}

TEST_CASE("restrict_context", "[bandit]") {
    const std::vector<double> x{5, 7, 9};
    REQUIRE(restrict_context(x, SubsetMask({0, 2})) == std::vector<double>{5, 9});
    REQUIRE(restrict_context(x, SubsetMask()).empty());
    REQUIRE(restrict_context(x, SubsetMask::full(3)) == x);
    // projection: re-restricting with the identity mask is a no-op
    const auto sub = restrict_context(x, SubsetMask({1, 2}));
    REQUIRE(restrict_context(sub, SubsetMask::full(2)) == sub);
    REQUIRE_THROWS_AS(restrict_context(x, SubsetMask({3})), Error);
}

TEST_CASE("subset mask validation", "[bandit]") {
    REQUIRE_THROWS_AS(SubsetMask({1, 1}), Error);
    REQUIRE_THROWS_AS(SubsetMask({-1}), Error);
    REQUIRE(SubsetMask({2, 0}).indices == std::vector<int>{0, 2});  // sorted on construction
    REQUIRE(SubsetMask({0, 2}).label() == "{0,2}");
}

TEST_CASE("dataset ingestion validation", "[bandit]") {
    auto make = [](double propensity, double ctx = 0.0, int action = 0) {
        return EnvDataset::from_rounds({LoggedRound{{ctx}, action, 0.0, propensity, "e"}}, 1, 2);
    };
    REQUIRE_NOTHROW(make(1.0));
    REQUIRE_THROWS_AS(make(0.0), Error);
    REQUIRE_THROWS_AS(make(1e-9), Error);   // rejected, not clipped
    REQUIRE_THROWS_AS(make(1.5), Error);
    REQUIRE_THROWS_AS(make(0.5, std::numeric_limits<double>::quiet_NaN()), Error);
    REQUIRE_THROWS_AS(make(0.5, 0.0, 2), Error);  // action >= k
    REQUIRE_THROWS_AS(
        EnvDataset::from_rounds({LoggedRound{{0.0}, 0, 0.0, 1.0, "a,b"}}, 1, 1), Error);
}

TEST_CASE("environment order follows first appearance", "[bandit]") {
    std::vector<LoggedRound> rounds;
    for (const char* env : {"z", "m", "z", "a", "m"})
        rounds.push_back(LoggedRound{{0.0}, 0, 0.0, 1.0, env});
    const EnvDataset ds = EnvDataset::from_rounds(std::move(rounds), 1, 1);
    REQUIRE(ds.envs == std::vector<std::string>{"z", "m", "a"});
    const auto groups = ds.indices_by_env();
    REQUIRE(groups[0] == std::vector<int>{0, 2});
    REQUIRE(groups[2] == std::vector<int>{3});
}

TEST_CASE("tabular-logged policy answers only logged pairs", "[bandit]") {
    const EnvDataset ds = tiny_dataset();
    const Policy logged = Policy::tabular_logged(ds);
    for (const auto& r : ds.rounds)
        REQUIRE(logged.prob(r.context, r.action) == r.propensity);
    REQUIRE_THROWS_AS(logged.prob({99.0, 99.0, 99.0}, 0), Error);
    Rng rng(1);
    REQUIRE_THROWS_AS(logged.sample({0.0, 0.0, 0.0}, rng), Error);
}

TEST_CASE("logged CSV round trip is exact", "[bandit]") {
    const EnvDataset ds = tiny_dataset();
    std::stringstream ss;
    write_logged_csv(ss, ds);
    const EnvDataset back = read_logged_csv(ss);
    REQUIRE(back.d == ds.d);
    REQUIRE(back.k == ds.k);
    REQUIRE(back.size() == ds.size());
    for (std::size_t i = 0; i < ds.size(); ++i) {
        REQUIRE(back.rounds[i].context == ds.rounds[i].context);
        REQUIRE(back.rounds[i].action == ds.rounds[i].action);
        REQUIRE(back.rounds[i].reward == ds.rounds[i].reward);
        REQUIRE(back.rounds[i].propensity == ds.rounds[i].propensity);
        REQUIRE(back.rounds[i].env == ds.rounds[i].env);
    }
}

TEST_CASE("logged CSV header is validated", "[bandit]") {
    std::stringstream ss("x0,action,reward,env\n0,0,0,e\n");
    REQUIRE_THROWS_AS(read_logged_csv(ss), Error);
}
