#include "doctest.h"
#include "random_instances.hpp"

#include "fairot/oracle.hpp"

#include <cmath>

using namespace fairot;
using namespace fairot::oracle;
using fairot::testing::random_labels;
using fairot::testing::random_matrix;

TEST_CASE("dual_ascent_entropic") {
    SUBCASE("zero cost gives the uniform plan") {
        const auto r = dual_ascent_entropic(Matrix::Zero(3, 2), {1.0});
        CHECK(r.converged);
        CHECK((r.plan - Matrix::Constant(3, 2, 1.0 / 6.0)).cwiseAbs().maxCoeff() < 1e-10);
    }
    SUBCASE("single point") {
        const auto r = dual_ascent_entropic(Matrix::Constant(1, 1, 3.0), {0.5});
        CHECK(r.converged);
        CHECK(r.plan(0, 0) == doctest::Approx(1.0).epsilon(1e-10));
    }
    SUBCASE("KKT form of the returned plan") {
        std::mt19937_64 rng(1);
        const Matrix C = random_matrix(4, 5, rng, 0, 2);
        const double eps = 0.7;
        const auto r = dual_ascent_entropic(C, {eps});
        REQUIRE(r.converged);
        for (Index i = 0; i < 4; ++i)
            for (Index j = 0; j < 5; ++j) {
                const double expected = std::exp((r.f[i] + r.g[j] - C(i, j)) / eps - 1.0);
                CHECK(std::abs(r.plan(i, j) - expected) <= 1e-10 * expected);
            }
        CHECK(r.gradNorm <= 1e-10);
    }
    CHECK_THROWS_AS(dual_ascent_entropic(Matrix::Zero(33, 2), {1.0}), std::invalid_argument);
}

TEST_CASE("dual_ascent_fair") {
    std::mt19937_64 rng(2);
    SUBCASE("one group reduces to the unconstrained dual") {
        const Matrix C = random_matrix(4, 3, rng, 0, 2);
        const auto plain = dual_ascent_entropic(C, {1.0});
        const auto fair = dual_ascent_fair(C, Matrix::Ones(1, 1), GroupLabels({0, 0, 0, 0}, 1),
                                           GroupLabels({0, 0, 0}, 1), {1.0});
        CHECK((plain.plan - fair.plan).norm() < 1e-9);
    }
    SUBCASE("inactive constraints leave multipliers at zero") {
        const Matrix C = random_matrix(5, 4, rng, 0, 2);
        const auto s = random_labels(5, 2, rng);
        const auto w = random_labels(4, 2, rng);
        const auto plain = dual_ascent_entropic(C, {1.0});
        const Matrix F = group_coupling(plain.plan, s, w);
        const auto fair = dual_ascent_fair(C, F, s, w, {1.0});
        REQUIRE(fair.converged);
        CHECK((plain.plan - fair.plan).norm() < 1e-8);
        // h is determined up to shifts absorbed by f and g; compare the gauge-free combination
        CHECK(std::abs(fair.h(0, 0) + fair.h(1, 1) - fair.h(0, 1) - fair.h(1, 0)) < 1e-6);
    }
    SUBCASE("constraints hold and KKT form") {
        const Matrix C = random_matrix(5, 5, rng, 0, 2);
        const auto s = random_labels(5, 2, rng);
        const auto w = random_labels(5, 2, rng);
        const Matrix F = s.marginal() * w.marginal().transpose();
        const double eps = 0.5;
        const auto r = dual_ascent_fair(C, F, s, w, {eps});
        REQUIRE(r.converged);
        CHECK((group_coupling(r.plan, s, w) - F).cwiseAbs().maxCoeff() < 1e-8);
        CHECK(marginal_residual(r.plan) < 1e-8);
        for (Index i = 0; i < 5; ++i)
            for (Index j = 0; j < 5; ++j) {
                const double expected = std::exp(
                    (r.f[i] + r.g[j] + r.h(s.index[i], w.index[j]) - C(i, j)) / eps - 1.0);
                CHECK(std::abs(r.plan(i, j) - expected) <= 1e-10 * expected);
            }
    }
}

TEST_CASE("finite_diff") {
    Vector x(2);
    x << 1, 2;
    const Vector g = finite_diff([](const Vector& v) { return v.squaredNorm(); }, x, 1e-5);
    CHECK(std::abs(g[0] - 2) < 1e-8);
    CHECK(std::abs(g[1] - 4) < 1e-8);

    const Vector z = finite_diff([](const Vector&) { return 3.0; }, x, 1e-3);
    CHECK(z.norm() == 0.0);

    // quadratic with a known Hessian: central differences are exact up to rounding
    std::mt19937_64 rng(3);
    const Matrix A = random_matrix(4, 4, rng, -1, 1);
    const Matrix H = A + A.transpose();
    const Vector c = random_matrix(4, 1, rng, -1, 1);
    const Vector p = random_matrix(4, 1, rng, -1, 1);
    const Vector exact = H * p + c;
    const Vector fd = finite_diff(
        [&](const Vector& v) { return 0.5 * v.dot(H * v) + c.dot(v); }, p, 1e-4);
    CHECK((fd - exact).cwiseAbs().maxCoeff() < 1e-9);

    CHECK_THROWS_AS(finite_diff([](const Vector&) { return 0.0; }, x, 0.0), std::invalid_argument);
}
