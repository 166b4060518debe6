#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <limits>
#include <vector>

#include "wcmi/matrix.hpp"
#include "wcmi/numerics.hpp"
#include "wcmi/rng.hpp"

using namespace wcmi;

// Reference values below were computed with mpmath at 50-digit precision
// and rounded to double. They are frozen here so the suite does not share
// any code path with the implementation under test.

TEST_CASE("std_normal_cdf matches high-precision reference values") {
    CHECK(std_normal_cdf(0.0) == 0.5);
    CHECK_THAT(std_normal_cdf(1.0), Catch::Matchers::WithinAbs(0.8413447460685429, 1e-12));
    CHECK_THAT(std_normal_cdf(0.5), Catch::Matchers::WithinAbs(0.6914624612740131, 1e-12));
    CHECK_THAT(std_normal_cdf(1.5), Catch::Matchers::WithinAbs(0.9331927987311419, 1e-12));
    CHECK_THAT(std_normal_cdf(2.0), Catch::Matchers::WithinAbs(0.9772498680518208, 1e-12));
    CHECK_THAT(std_normal_cdf(-1.0), Catch::Matchers::WithinAbs(0.15865525393145705, 1e-12));
    CHECK_THAT(std_normal_cdf(-3.0), Catch::Matchers::WithinAbs(0.0013498980316300945, 1e-14));
    CHECK_THAT(std_normal_cdf(5.0), Catch::Matchers::WithinAbs(0.9999997133484281, 1e-12));
    CHECK_THAT(std_normal_cdf(-6.0), Catch::Matchers::WithinRel(9.865876450376981e-10, 1e-10));
}

TEST_CASE("std_normal_cdf agrees with the platform erfc on a dense grid") {
    for (int i = -800; i <= 800; ++i) {
        const double x = i / 100.0;
        const double reference = 0.5 * std::erfc(-x / std::sqrt(2.0));
        CHECK_THAT(std_normal_cdf(x), Catch::Matchers::WithinAbs(reference, 1e-14));
    }
}

TEST_CASE("std_normal_cdf symmetry and monotonicity") {
    double prev = -1.0;
    for (int i = -1000; i <= 1000; ++i) {
        const double x = i / 50.0;
        const double p = std_normal_cdf(x);
        CHECK(p >= 0.0);
        CHECK(p <= 1.0);
        CHECK_THAT(p + std_normal_cdf(-x), Catch::Matchers::WithinAbs(1.0, 1e-12));
        CHECK(p >= prev);
        prev = p;
    }
}

TEST_CASE("std_normal_cdf rejects non-finite input") {
    CHECK_THROWS_AS(std_normal_cdf(std::numeric_limits<double>::quiet_NaN()),
                    std::invalid_argument);
    CHECK_THROWS_AS(std_normal_cdf(std::numeric_limits<double>::infinity()),
                    std::invalid_argument);
}

TEST_CASE("binary_entropy reference values and edge cases") {
    CHECK(binary_entropy(0.0) == 0.0);
    CHECK(binary_entropy(1.0) == 0.0);
    CHECK_THAT(binary_entropy(0.5), Catch::Matchers::WithinAbs(0.6931471805599453, 1e-15));
    CHECK_THAT(binary_entropy(0.3), Catch::Matchers::WithinAbs(0.6108643020548935, 1e-13));
    CHECK_THAT(binary_entropy(0.3791), Catch::Matchers::WithinAbs(0.6636218136194783, 1e-13));
    CHECK_THROWS_AS(binary_entropy(-0.001), std::invalid_argument);
    CHECK_THROWS_AS(binary_entropy(1.001), std::invalid_argument);
    CHECK_THROWS_AS(binary_entropy(std::numeric_limits<double>::quiet_NaN()),
                    std::invalid_argument);
}

TEST_CASE("binary_entropy is symmetric about one half and concave") {
    for (int i = 0; i <= 200; ++i) {
        const double t = i / 200.0;
        CHECK_THAT(binary_entropy(t), Catch::Matchers::WithinAbs(binary_entropy(1.0 - t), 1e-14));
    }
    // midpoint concavity on interior pairs
    SeededRng rng(7);
    for (int k = 0; k < 200; ++k) {
        const double a = rng.uniform(0.0, 1.0);
        const double b = rng.uniform(0.0, 1.0);
        const double mid = binary_entropy(0.5 * (a + b));
        const double avg = 0.5 * (binary_entropy(a) + binary_entropy(b));
        CHECK(mid >= avg - 1e-12);
    }
}

TEST_CASE("discrete_mutual_information exact cases") {
    SECTION("product table with exactly representable marginals is exactly zero") {
        // all entries and marginal sums are dyadic, so every log argument is
        // exactly 1 and the sum is exactly 0
        Matrix t = Matrix::from_rows({{0.125, 0.375}, {0.125, 0.375}});
        CHECK(discrete_mutual_information(DiscreteJoint(t)) == 0.0);
    }
    SECTION("identity coupling gives ln 2") {
        Matrix t = Matrix::from_rows({{0.5, 0.0}, {0.0, 0.5}});
        CHECK_THAT(discrete_mutual_information(DiscreteJoint(t)),
                   Catch::Matchers::WithinAbs(0.6931471805599453, 1e-15));
    }
    SECTION("hand-evaluated 2x2 table") {
        Matrix t = Matrix::from_rows({{0.4, 0.1}, {0.1, 0.4}});
        CHECK_THAT(discrete_mutual_information(DiscreteJoint(t)),
                   Catch::Matchers::WithinAbs(0.19274475702175743, 1e-13));
    }
}

TEST_CASE("discrete_mutual_information is nonnegative on random tables") {
    SeededRng rng(11);
    for (int k = 0; k < 1000; ++k) {
        const std::size_t r = 2 + rng.below(3), c = 2 + rng.below(3);
        Matrix t(r, c);
        double sum = 0.0;
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) {
                t(i, j) = rng.uniform01();
                sum += t(i, j);
            }
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) t(i, j) /= sum;
        // renormalize exactly enough for the 1e-12 constructor gate
        const double mi = discrete_mutual_information(DiscreteJoint(t));
        CHECK(mi >= 0.0);
        CHECK(std::isfinite(mi));
    }
}

TEST_CASE("DiscreteJoint validates its table") {
    CHECK_THROWS_AS(DiscreteJoint(Matrix::from_rows({{0.6, -0.1}, {0.3, 0.2}})),
                    std::invalid_argument);
    CHECK_THROWS_AS(DiscreteJoint(Matrix::from_rows({{0.4, 0.4}, {0.4, 0.4}})),
                    std::invalid_argument);
}

TEST_CASE("PerturbationBudget validates and exposes the dual exponent") {
    CHECK(PerturbationBudget::l2(0.5).dual_exponent() == 2.0);
    CHECK(PerturbationBudget::linf(0.5).dual_exponent() == 1.0);
    CHECK_THROWS_AS(PerturbationBudget(3.0, 0.1), std::invalid_argument);
    CHECK_THROWS_AS(PerturbationBudget(1.0, 0.1), std::invalid_argument);
    CHECK_THROWS_AS(PerturbationBudget(2.0, -0.1), std::invalid_argument);
    CHECK_THROWS_AS(PerturbationBudget(2.0, 0.1, std::array<double, 2>{1.0, 0.0}),
                    std::invalid_argument);
}

TEST_CASE("dual_norm picks the Hölder conjugate norm") {
    CHECK(dual_norm(Vec{1.0, 0.0}, PerturbationBudget::l2(1.0)) == 1.0);
    CHECK(dual_norm(Vec{1.0, -1.0, 1.0}, PerturbationBudget::linf(1.0)) == 3.0);
    CHECK_THAT(dual_norm(Vec{3.0, 4.0}, PerturbationBudget::l2(1.0)),
               Catch::Matchers::WithinAbs(5.0, 1e-15));
    CHECK_THROWS_AS(dual_norm(Vec{}, PerturbationBudget::l2(1.0)), std::invalid_argument);
}

TEST_CASE("project_ball worked examples") {
    SECTION("l-inf coordinate clamp") {
        Vec out = project_ball({0.7}, {0.5}, PerturbationBudget::linf(0.1));
        CHECK_THAT(out[0], Catch::Matchers::WithinAbs(0.6, 1e-15));
    }
    SECTION("l2 radial rescale") {
        Vec out = project_ball({3.0, 4.0}, {0.0, 0.0}, PerturbationBudget::l2(1.0));
        CHECK_THAT(out[0], Catch::Matchers::WithinAbs(0.6, 1e-12));
        CHECK_THAT(out[1], Catch::Matchers::WithinAbs(0.8, 1e-12));
    }
    SECTION("interior points are unchanged") {
        Vec p{0.55, 0.45};
        CHECK(project_ball(p, {0.5, 0.5}, PerturbationBudget::linf(0.1)) == p);
        CHECK(project_ball(p, {0.5, 0.5}, PerturbationBudget::l2(0.5)) == p);
    }
    SECTION("domain box clamps after projection") {
        auto budget = PerturbationBudget::linf(0.2, std::array<double, 2>{0.0, 0.6});
        Vec out = project_ball({0.9}, {0.5}, budget);
        CHECK(out[0] == 0.6);
    }
    SECTION("dimension mismatch throws") {
        CHECK_THROWS_AS(project_ball({1.0, 2.0}, {0.0}, PerturbationBudget::l2(1.0)),
                        std::invalid_argument);
    }
}

TEST_CASE("project_ball is idempotent and never increases distance to center") {
    SeededRng rng(23);
    for (int k = 0; k < 400; ++k) {
        const std::size_t d = 1 + rng.below(6);
        Vec point(d), center(d);
        for (std::size_t i = 0; i < d; ++i) {
            point[i] = rng.uniform(-3.0, 3.0);
            center[i] = rng.uniform(-1.0, 1.0);
        }
        const double eps = rng.uniform(0.0, 2.0);
        auto budget = (k % 2 == 0) ? PerturbationBudget::l2(eps) : PerturbationBudget::linf(eps);
        Vec once = project_ball(point, center, budget);
        Vec twice = project_ball(once, center, budget);
        CHECK(lp_distance(once, center, budget) <= eps + 1e-9);
        CHECK(lp_distance(once, center, budget) <= lp_distance(point, center, budget) + 1e-12);
        for (std::size_t i = 0; i < d; ++i)
            CHECK_THAT(twice[i], Catch::Matchers::WithinAbs(once[i], 1e-12));
    }
}

TEST_CASE("lp_distance computes the budget norm") {
    CHECK(lp_distance(Vec{1.0, -2.0}, Vec{0.0, 0.0}, PerturbationBudget::linf(1.0)) == 2.0);
    CHECK_THAT(lp_distance(Vec{3.0, 4.0}, Vec{0.0, 0.0}, PerturbationBudget::l2(1.0)),
               Catch::Matchers::WithinAbs(5.0, 1e-15));
}

TEST_CASE("SeededRng streams are reproducible and distinct per seed") {
    SeededRng a(42), b(42), c(43);
    bool any_diff = false;
    for (int i = 0; i < 1000; ++i) {
        const double ua = a.uniform01();
        CHECK(ua == b.uniform01());
        CHECK(ua >= 0.0);
        CHECK(ua < 1.0);
        if (ua != c.uniform01()) any_diff = true;
    }
    CHECK(any_diff);

    SeededRng n1(7), n2(7);
    for (int i = 0; i < 1000; ++i) CHECK(n1.normal() == n2.normal());
}

TEST_CASE("SeededRng normal moments are sane") {
    SeededRng rng(99);
    const int n = 100000;
    double sum = 0.0, sumsq = 0.0;
    for (int i = 0; i < n; ++i) {
        const double z = rng.normal();
        sum += z;
        sumsq += z * z;
    }
    const double mean = sum / n;
    const double var = sumsq / n - mean * mean;
    CHECK_THAT(mean, Catch::Matchers::WithinAbs(0.0, 0.02));
    CHECK_THAT(var, Catch::Matchers::WithinAbs(1.0, 0.05));
}

TEST_CASE("SeededRng helpers") {
    SeededRng rng(5);
    CHECK_THROWS_AS(rng.below(0), std::invalid_argument);
    for (int i = 0; i < 200; ++i) CHECK(rng.below(7) < 7);

    auto idx = rng.sample_indices(10, 4);
    CHECK(idx.size() == 4);
    for (std::size_t v : idx) CHECK(v < 10);
    std::sort(idx.begin(), idx.end());
    CHECK(std::adjacent_find(idx.begin(), idx.end()) == idx.end());

    std::vector<int> perm{0, 1, 2, 3, 4, 5};
    SeededRng s1(3), s2(3);
    auto p1 = perm, p2 = perm;
    s1.shuffle(p1);
    s2.shuffle(p2);
    CHECK(p1 == p2);
    std::sort(p1.begin(), p1.end());
    CHECK(p1 == perm);
}

TEST_CASE("derive_seed separates stages and indices") {
    const auto s0 = derive_seed(1234, "attack", 0);
    CHECK(s0 == derive_seed(1234, "attack", 0));
    CHECK(s0 != derive_seed(1234, "attack", 1));
    CHECK(s0 != derive_seed(1234, "critic", 0));
    CHECK(s0 != derive_seed(1235, "attack", 0));
}

TEST_CASE("Matrix basics") {
    Matrix m = Matrix::from_rows({{1.0, 2.0}, {3.0, 4.0}});
    CHECK(m.rows() == 2);
    CHECK(m.cols() == 2);
    CHECK(m(1, 0) == 3.0);
    CHECK_THROWS_AS(Matrix::from_rows({{1.0}, {2.0, 3.0}}), std::invalid_argument);

    Matrix g = gather_rows(m, {1, 0, 1});
    CHECK(g.rows() == 3);
    CHECK(g(0, 1) == 4.0);
    CHECK(g(2, 0) == 3.0);

    Matrix h = hcat(m, Matrix::from_rows({{5.0, 6.0}, {7.0, 8.0}}));
    CHECK(h.cols() == 4);
    CHECK(h(0, 2) == 5.0);
    CHECK(h(1, 3) == 8.0);
}
