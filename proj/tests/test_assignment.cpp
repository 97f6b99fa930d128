#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "pipetteloc/assignment.hpp"
#include "pipetteloc/rng.hpp"

using namespace pipetteloc;

namespace {

CostMatrix make(int n, int m, std::vector<double> entries) {
    CostMatrix c;
    c.n_pred = n;
    c.n_true = m;
    c.entries = std::move(entries);
    return c;
}

CostMatrix random_matrix(int n, int m, Rng& rng, double scale = 100.0) {
    CostMatrix c;
    c.n_pred = n;
    c.n_true = m;
    c.entries.resize(static_cast<size_t>(n) * m);
    for (double& e : c.entries) e = rng.uniform() * scale;
    return c;
}

}  // namespace

TEST_CASE("cost matrix basics") {
    const std::vector<Vec2> a = {{0, 0}, {1, 2}};
    CostMatrix c = cost_matrix(a, a);
    CHECK(c.at(0, 0) == 0.0);
    CHECK(c.at(1, 1) == 0.0);

    c = cost_matrix({{0, 0}}, {{3, 4}});
    CHECK(c.at(0, 0) == doctest::Approx(5.0).epsilon(1e-15));

    c = cost_matrix({{0, 0}, {10, 0}}, {{10, 0}, {0, 0}});
    CHECK(c.at(0, 0) == 10.0);
    CHECK(c.at(0, 1) == 0.0);
    CHECK(c.at(1, 0) == 0.0);
    CHECK(c.at(1, 1) == 10.0);

    CHECK_THROWS_AS(cost_matrix({}, a), std::invalid_argument);
    CHECK_THROWS_AS(cost_matrix(a, {}), std::invalid_argument);
}

TEST_CASE("hungarian forced optimum") {
    const Assignment a = hungarian(make(2, 2, {0, 9, 9, 0}));
    CHECK(a.total_cost == 0.0);
    REQUIRE(a.pairs.size() == 2);
    CHECK(a.pairs[0] == std::pair<int, int>{0, 0});
    CHECK(a.pairs[1] == std::pair<int, int>{1, 1});
}

TEST_CASE("hungarian matches the 3x3 hand example") {
    const CostMatrix c = make(3, 3, {4, 1, 3, 2, 0, 5, 3, 2, 2});
    const Assignment h = hungarian(c);
    const Assignment b = brute_force_assignment(c);
    CHECK(h.total_cost == 5.0);
    CHECK(h.total_cost == b.total_cost);
}

TEST_CASE("rectangular matrices match min(n_pred, n_true) pairs") {
    Rng rng(7);
    const CostMatrix c = random_matrix(4, 2, rng);
    const Assignment h = hungarian(c);
    const Assignment b = brute_force_assignment(c);
    REQUIRE(h.pairs.size() == 2);
    CHECK(h.total_cost == doctest::Approx(b.total_cost).epsilon(1e-12));
    // pred indices distinct, true indices distinct
    CHECK(h.pairs[0].first != h.pairs[1].first);
    CHECK(h.pairs[0].second != h.pairs[1].second);

    const CostMatrix tall = random_matrix(2, 4, rng);
    CHECK(hungarian(tall).pairs.size() == 2);
}

TEST_CASE("optimality against the brute-force oracle, 1000 random matrices") {
    Rng rng(42);
    for (int trial = 0; trial < 1000; ++trial) {
        const int n = rng.uniform_int(1, 4);
        const int m = rng.uniform_int(1, 4);
        const CostMatrix c = random_matrix(n, m, rng);
        const Assignment h = hungarian(c);
        const Assignment b = brute_force_assignment(c);
        REQUIRE(h.total_cost == b.total_cost);
        REQUIRE(h.pairs.size() == static_cast<size_t>(std::min(n, m)));
    }
}

TEST_CASE("brute force basics and ties") {
    CHECK(brute_force_assignment(make(1, 1, {7})).total_cost == 7.0);

    // all-equal entries: total n*entry, lexicographically smallest pairing
    const Assignment t = brute_force_assignment(make(3, 3, std::vector<double>(9, 2.5)));
    CHECK(t.total_cost == 7.5);
    CHECK(t.pairs == std::vector<std::pair<int, int>>{{0, 0}, {1, 1}, {2, 2}});

    // hungarian ties agree with the documented lexicographic rule
    const Assignment h = hungarian(make(3, 3, std::vector<double>(9, 2.5)));
    CHECK(h.pairs == t.pairs);

    CostMatrix big = make(9, 9, std::vector<double>(81, 1.0));
    CHECK_THROWS_AS(brute_force_assignment(big), std::invalid_argument);
}

TEST_CASE("permutation equivariance on unique-optimum matrices") {
    Rng rng(11);
    for (int trial = 0; trial < 50; ++trial) {
        const int n = rng.uniform_int(2, 4);
        const CostMatrix c = random_matrix(n, n, rng);
        const Assignment base = hungarian(c);

        // Rotate rows by one; assigned pred indices must rotate identically.
        CostMatrix rotated = c;
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) rotated.at(i, j) = c.at((i + 1) % n, j);
        const Assignment rot = hungarian(rotated);
        CHECK(rot.total_cost == doctest::Approx(base.total_cost).epsilon(1e-12));
        std::vector<int> base_col_of(n, -1), rot_col_of(n, -1);
        for (const auto& [i, j] : base.pairs) base_col_of[i] = j;
        for (const auto& [i, j] : rot.pairs) rot_col_of[i] = j;
        for (int i = 0; i < n; ++i) CHECK(rot_col_of[i] == base_col_of[(i + 1) % n]);
    }
}

TEST_CASE("scale equivariance of the total cost") {
    Rng rng(13);
    const CostMatrix c = random_matrix(4, 4, rng);
    const Assignment base = hungarian(c);
    for (double k : {2.0, 0.5, 3.7}) {
        CostMatrix scaled = c;
        for (double& e : scaled.entries) e *= k;
        const Assignment s = hungarian(scaled);
        CHECK(s.total_cost == doctest::Approx(k * base.total_cost).epsilon(1e-12));
        CHECK(s.pairs == base.pairs);
    }
}

TEST_CASE("non-finite and empty inputs are rejected") {
    CHECK_THROWS_AS(hungarian(make(1, 1, {std::nan("")})), std::invalid_argument);
    CHECK_THROWS_AS(hungarian(make(1, 2, {1.0, std::numeric_limits<double>::infinity()})),
                    std::invalid_argument);
    CostMatrix empty;
    CHECK_THROWS_AS(hungarian(empty), std::invalid_argument);
    CHECK_THROWS_AS(brute_force_assignment(empty), std::invalid_argument);
}

TEST_CASE("total cost equals the sum of matched entries") {
    Rng rng(17);
    for (int trial = 0; trial < 20; ++trial) {
        const CostMatrix c = random_matrix(rng.uniform_int(1, 4), rng.uniform_int(1, 4), rng);
        const Assignment a = hungarian(c);
        double sum = 0.0;
        for (const auto& [i, j] : a.pairs) sum += c.at(i, j);
        CHECK(a.total_cost == sum);
    }
}
