#include "doctest.h"
#include "capture_warnings.hpp"
#include "random_instances.hpp"

#include "fairot/fairness.hpp"
#include "fairot/penalized.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

using namespace fairot;
using fairot::testing::balanced_labels;
using fairot::testing::CaptureWarnings;
using fairot::testing::random_feasible_plan;
using fairot::testing::random_labels;
using fairot::testing::random_matrix;

namespace {

GcgConfig accurate(double lambda, double eps = 1.0) {
    GcgConfig cfg;
    cfg.lambda = lambda;
    cfg.sinkhorn.epsilon = eps;
    cfg.sinkhorn.tol = 1e-12;
    cfg.numInnerIterMax = 5000;
    cfg.stopThr = 1e-14;
    cfg.stopThr2 = 1e-14;
    return cfg;
}

SinkhornConfig tight(double eps) {
    SinkhornConfig cfg;
    cfg.epsilon = eps;
    cfg.tol = 1e-12;
    cfg.maxIter = 100000;
    return cfg;
}

}  // namespace

TEST_CASE("penalized_objective") {
    std::mt19937_64 rng(11);
    const Matrix C = random_matrix(4, 6, rng, 0, 2);
    const auto s = random_labels(4, 2, rng);
    const auto w = random_labels(6, 2, rng);
    const Matrix F = s.marginal() * w.marginal().transpose();
    const Matrix P = random_feasible_plan(4, 6, rng);

    SUBCASE("lambda zero is the entropic objective") {
        CHECK(penalized_objective(P, C, 0.7, 0.0, F, s, w) ==
              doctest::Approx(transport_cost(P, C) + 0.7 * entropy_term(P)).epsilon(1e-14));
    }
    SUBCASE("fair plan carries no penalty") {
        const Matrix fair = product_fair_plan(s, w, F).values();
        CHECK(penalized_objective(fair, C, 0.7, 1e5, F, s, w) ==
              doctest::Approx(transport_cost(fair, C) + 0.7 * entropy_term(fair)).epsilon(1e-12));
    }
    SUBCASE("term-wise sum") {
        double cost = 0.0, ent = 0.0;
        Matrix coupling = Matrix::Zero(2, 2);
        for (Index i = 0; i < 4; ++i)
            for (Index j = 0; j < 6; ++j) {
                cost += P(i, j) * C(i, j);
                ent += P(i, j) * std::log(P(i, j));
                coupling(s.index[i], w.index[j]) += P(i, j);
            }
        const double loss = (coupling - F).squaredNorm();
        CHECK(penalized_objective(P, C, 0.3, 12.0, F, s, w) ==
              doctest::Approx(cost + 0.3 * ent + 12.0 * loss).epsilon(1e-12));
    }
    CHECK_THROWS_AS(penalized_objective(P, Matrix::Zero(3, 3), 1, 1, F, s, w),
                    std::invalid_argument);
}

TEST_CASE("armijo_step") {
    SUBCASE("zero displacement accepts the full step") {
        const Matrix P = Matrix::Constant(2, 2, 0.25);
        int calls = 0;
        const auto r = armijo_step(
            P, P, [&](const Matrix& X) { ++calls; return X.squaredNorm(); }, 2.0 * P);
        CHECK(r.alpha == 1.0);
        CHECK(r.slope == 0.0);
        CHECK(r.satisfied);
    }
    SUBCASE("one-dimensional quadratic") {
        // f(x) = (x - 3)^2 from x = 0 towards 10; the full step overshoots
        const auto f = [](const Matrix& X) { return (X(0, 0) - 3.0) * (X(0, 0) - 3.0); };
        const Matrix x0 = Matrix::Zero(1, 1);
        const Matrix x1 = Matrix::Constant(1, 1, 10.0);
        const Matrix g = Matrix::Constant(1, 1, -6.0);
        const auto r = armijo_step(x0, x1, f, g);
        CHECK(r.alpha == 0.5);
        CHECK(r.slope == -60.0);
        const double accepted = f(Matrix::Constant(1, 1, 10.0 * r.alpha));
        CHECK(accepted == r.value);
        CHECK(accepted <= f(x0) + 1e-4 * r.alpha * r.slope);
        // the previous candidate violated the condition
        CHECK(f(x1) > f(x0) + 1e-4 * 1.0 * r.slope);
    }
    SUBCASE("no admissible step falls back to beta^kmax") {
        CaptureWarnings warnings;
        const auto f = [](const Matrix& X) { return X(0, 0); };
        const auto r = armijo_step(Matrix::Zero(1, 1), Matrix::Ones(1, 1), f,
                                   Matrix::Constant(1, 1, -1.0), {1e-4, 0.5, 10});
        CHECK_FALSE(r.satisfied);
        CHECK(r.alpha == std::pow(0.5, 10));
        CHECK(warnings.messages.size() == 1);
    }
    SUBCASE("step stays in the transport polytope") {
        std::mt19937_64 rng(12);
        for (int k = 0; k < 20; ++k) {
            const Matrix A = random_feasible_plan(3, 4, rng);
            const Matrix B = random_feasible_plan(3, 4, rng);
            const auto r = armijo_step(
                A, B, [](const Matrix& X) { return X.squaredNorm(); }, 2.0 * A);
            const Matrix next = A + r.alpha * (B - A);
            CHECK(next.minCoeff() >= 0.0);
            CHECK(marginal_residual(next) < 1e-12);
        }
    }
    CHECK_THROWS_AS(armijo_step(Matrix::Zero(2, 2), Matrix::Zero(2, 3),
                                [](const Matrix&) { return 0.0; }, Matrix::Zero(2, 2)),
                    std::invalid_argument);
}

TEST_CASE("penalized_gcg examples") {
    std::mt19937_64 rng(13);
    SUBCASE("lambda zero returns the vanilla plan") {
        const Matrix C = random_matrix(5, 4, rng, 0, 2);
        const auto s = random_labels(5, 2, rng);
        const auto w = random_labels(4, 2, rng);
        const Matrix F = s.marginal() * w.marginal().transpose();
        const auto r = penalized_gcg(C, F, s, w, accurate(0.0));
        const auto vanilla = sinkhorn(C, tight(1.0));
        CHECK((r.plan.values() - vanilla.plan.values()).norm() < 1e-9);
        CHECK(r.report.converged);
    }
    SUBCASE("large lambda approaches the exactly fair plan") {
        const Matrix C = random_matrix(5, 5, rng, 0, 2);
        const auto s = balanced_labels(5);
        const auto w = random_labels(5, 2, rng);
        const Matrix F = s.marginal() * w.marginal().transpose();
        // block shifts of order 1e4 in the linearized cost need long inner solves
        GcgConfig cfg = accurate(1e6);
        cfg.numInnerIterMax = 1000000;
        const auto r = penalized_gcg(C, F, s, w, cfg);
        const auto fair = fair_sinkhorn(C, F, s, w, tight(1.0));
        CHECK(fairness_loss(r.plan, F, s, w) <= fairness_loss(fair.plan, F, s, w) + 1e-4);
        CHECK((r.plan.values() - fair.plan.values()).norm() <= 1e-2);
    }
    SUBCASE("beats both competitor plans") {
        for (double lambda : {0.5, 5.0, 50.0, 500.0}) {
            const Matrix C = random_matrix(6, 5, rng, 0, 2);
            const auto s = random_labels(6, 2, rng);
            const auto w = random_labels(5, 2, rng);
            const Matrix F = s.marginal() * w.marginal().transpose();
            GcgConfig cfg;  // default thresholds
            cfg.lambda = lambda;
            const auto r = penalized_gcg(C, F, s, w, cfg);
            auto obj = [&](const Matrix& P) {
                return penalized_objective(P, C, 1.0, lambda, F, s, w);
            };
            const double vanilla = obj(sinkhorn(C, tight(1.0)).plan);
            const double product = obj(product_fair_plan(s, w, F));
            CHECK(obj(r.plan) <= std::min(vanilla, product) + cfg.stopThr2);
        }
    }
    SUBCASE("errors") {
        const Matrix C = random_matrix(3, 3, rng);
        const auto s = balanced_labels(3);
        const Matrix F = s.marginal() * s.marginal().transpose();
        CHECK_THROWS_AS(penalized_gcg(C, F, s, s, accurate(-1.0)), std::invalid_argument);
        GcgConfig bad = accurate(1.0);
        bad.stopThr = 0.0;
        CHECK_THROWS_AS(penalized_gcg(C, F, s, s, bad), std::invalid_argument);
        CHECK_THROWS_AS(penalized_gcg(C, Matrix::Ones(3, 1), s, s, accurate(1.0)),
                        std::invalid_argument);
    }
}

TEST_CASE("penalized_gcg properties") {
    std::mt19937_64 rng(14);
    SUBCASE("monotone descent with the Armijo bound and feasible iterates") {
        for (int k = 0; k < 10; ++k) {
            const Matrix C = random_matrix(6, 6, rng, 0, 2);
            const auto s = random_labels(6, 2, rng);
            const auto w = random_labels(6, 2, rng);
            const Matrix F = s.marginal() * w.marginal().transpose();
            GcgConfig cfg = accurate(100.0);
            const auto r = penalized_gcg(C, F, s, w, cfg);
            REQUIRE(r.trace.size() >= 2);
            for (std::size_t t = 1; t < r.trace.size(); ++t) {
                CHECK(r.trace[t].objective <= r.trace[t - 1].objective + 1e-12);
                CHECK(r.trace[t].alpha > 0.0);
                CHECK(r.trace[t].alpha <= 1.0);
            }
            CHECK(r.plan.marginal_residual() <= 1e-10);
            CHECK(r.report.objective == r.trace.back().objective);
        }
    }
    SUBCASE("trade-off is monotone in lambda") {
        const Matrix C = random_matrix(8, 6, rng, 0, 2);
        const auto s = random_labels(8, 2, rng);
        const auto w = random_labels(6, 2, rng);
        const Matrix F = s.marginal() * w.marginal().transpose();
        double prevLoss = INFINITY, prevCost = -INFINITY;
        for (double lambda : {0.0, 0.3, 1.0, 3.0, 10.0, 30.0, 100.0}) {
            const auto r = penalized_gcg(C, F, s, w, accurate(lambda));
            const double loss = fairness_loss(r.plan, F, s, w);
            const double cost = transport_cost(r.plan, C);
            CHECK(loss <= prevLoss + 1e-6);
            CHECK(cost >= prevCost - 1e-6);
            prevLoss = loss;
            prevCost = cost;
        }
    }
    SUBCASE("no random feasible plan does better") {
        for (int k = 0; k < 5; ++k) {
            const Matrix C = random_matrix(4, 4, rng, 0, 2);
            const auto s = random_labels(4, 2, rng);
            const auto w = random_labels(4, 2, rng);
            const Matrix F = s.marginal() * w.marginal().transpose();
            const double lambda = 20.0;
            const auto r = penalized_gcg(C, F, s, w, accurate(lambda));
            const double best = penalized_objective(r.plan, C, 1.0, lambda, F, s, w);
            for (int j = 0; j < 50; ++j) {
                const Matrix P = random_feasible_plan(4, 4, rng);
                CHECK(best <= penalized_objective(P, C, 1.0, lambda, F, s, w) + 1e-8);
            }
        }
    }
}

TEST_CASE("trace csv") {
    const std::vector<GcgTraceRow> trace{{0, 1.5, 1.0, 0.25, 0.0}, {1, 1.25, 1.1, 0.125, 0.5}};
    const auto path = std::filesystem::temp_directory_path() / "fairot_trace_test.csv";
    write_trace_csv(path, trace);
    std::ifstream in(path);
    std::string header, first, second;
    std::getline(in, header);
    std::getline(in, first);
    std::getline(in, second);
    CHECK(header == "iter,objective,transport_cost,fairness_loss,alpha");
    CHECK(first == "0,1.5,1,0.25,0");
    CHECK(second == "1,1.25,1.1,0.125,0.5");
    std::filesystem::remove(path);
}
