#include "doctest.h"

#include "fairot/fairness.hpp"
#include "fairot/sinkhorn.hpp"
#include "fairot/synthdata.hpp"

#include <cmath>

using namespace fairot;

namespace {

Index count_label(const LabeledDataset& d, int label) {
    return static_cast<Index>(std::count(d.labels().index.begin(), d.labels().index.end(), label));
}

bool same(const DatasetPair& a, const DatasetPair& b) {
    return a.X.points() == b.X.points() && a.Y.points() == b.Y.points() &&
           a.X.labels().index == b.X.labels().index && a.Y.labels().index == b.Y.labels().index;
}

Matrix paper_target() {
    Matrix F(2, 2);
    F << 0.20, 0.30, 0.28, 0.22;
    return F;
}

}  // namespace

TEST_CASE("gen_gaussians") {
    GenSpec spec;
    const auto d = gen_gaussians(spec);
    SUBCASE("counts and balance") {
        CHECK(d.X.size() == 250);
        CHECK(d.Y.size() == 25);
        CHECK(count_label(d.X, 0) == 125);
        CHECK(count_label(d.X, 1) == 125);
        CHECK(count_label(d.Y, 0) == 12);
        CHECK(count_label(d.Y, 1) == 13);
        CHECK(std::is_sorted(d.X.labels().index.begin(), d.X.labels().index.end()));
    }
    SUBCASE("seeded determinism") {
        CHECK(same(d, gen_gaussians(spec)));
        GenSpec other = spec;
        other.seed = 1;
        CHECK_FALSE(same(d, gen_gaussians(other)));
    }
    SUBCASE("group 1 students sit nearer group 1 schools") {
        Vector cx[2] = {Vector::Zero(2), Vector::Zero(2)}, cy[2] = {Vector::Zero(2), Vector::Zero(2)};
        for (Index i = 0; i < d.X.size(); ++i)
            cx[d.X.labels().index[i]] += d.X.points().row(i).transpose() / 125.0;
        for (Index j = 0; j < d.Y.size(); ++j)
            cy[d.Y.labels().index[j]] +=
                d.Y.points().row(j).transpose() / static_cast<double>(count_label(d.Y, d.Y.labels().index[j]));
        CHECK((cx[1] - cy[1]).norm() < (cx[1] - cy[0]).norm());
        CHECK((cx[0] - cy[0]).norm() < (cx[0] - cy[1]).norm());
    }
    SUBCASE("vanilla loss exceeds the constrained loss tenfold") {
        const Matrix F = paper_target();
        REQUIRE(validate_target(F, d.X, d.Y).valid);
        const Matrix C = squared_euclidean_cost(d.X.points(), d.Y.points()).values();
        SinkhornConfig cfg;
        const double vanilla = fairness_loss(sinkhorn(C, cfg).plan, F, d.X.labels(), d.Y.labels());
        const double fair =
            fairness_loss(fair_sinkhorn(C, F, d.X.labels(), d.Y.labels(), cfg).plan, F,
                          d.X.labels(), d.Y.labels());
        CHECK(vanilla >= 10.0 * fair);
        CHECK(vanilla > 1e-2);
    }
}

TEST_CASE("gen_circles") {
    GenSpec spec;
    spec.dataset = DatasetKind::Circles;
    SUBCASE("ring radii stay within three sigma") {
        const auto d = generate(spec);
        for (const auto* side : {&d.X, &d.Y})
            for (Index i = 0; i < side->size(); ++i)
                if (side->labels().index[i] == 1) {
                    const double r = side->points().row(i).norm();
                    CHECK(r >= 2.0 - 3 * 0.05 - 1e-12);
                    CHECK(r <= 2.0 + 3 * 0.05 + 1e-12);
                }
    }
    SUBCASE("mean ring radius") {
        GenSpec big = spec;
        big.nX = 20000;
        big.nY = 2;
        const auto d = generate(big);
        double sum = 0.0;
        Index count = 0;
        for (Index i = 0; i < d.X.size(); ++i)
            if (d.X.labels().index[i] == 1) {
                sum += d.X.points().row(i).norm();
                ++count;
            }
        CHECK(count == 10000);
        CHECK(std::abs(sum / static_cast<double>(count) - 2.0) < 1e-2);
    }
    SUBCASE("blob spread") {
        GenSpec big = spec;
        big.nX = 20000;
        const auto d = generate(big);
        double sq = 0.0;
        for (Index i = 0; i < 10000; ++i) sq += d.X.points().row(i).squaredNorm();
        // E|z|^2 = 2 * 0.3
        CHECK(std::abs(sq / 10000.0 - 0.6) < 0.03);
    }
    SUBCASE("seeded determinism") { CHECK(same(generate(spec), generate(spec))); }
}

TEST_CASE("resample") {
    GenSpec train;
    train.nX = 1000;
    train.nY = 100;
    const auto a = generate(train);
    CHECK(a.X.size() == 1000);
    CHECK(a.Y.size() == 100);
    GenSpec test = train;
    test.nX = 500;
    test.nY = 50;
    std::vector<DatasetPair> trials;
    for (std::uint64_t t = 0; t < 10; ++t) trials.push_back(resample(test, t));
    for (std::size_t t = 0; t < trials.size(); ++t) {
        CHECK(trials[t].X.size() == 500);
        CHECK(trials[t].Y.size() == 50);
        CHECK(same(trials[t], resample(test, t)));
        for (std::size_t u = t + 1; u < trials.size(); ++u) CHECK_FALSE(same(trials[t], trials[u]));
    }
    CHECK(resample(test, 0).X.points() != generate(test).X.points());
}

TEST_CASE("GenSpec validation and names") {
    GenSpec s;
    s.nX = 1;
    CHECK_THROWS_AS(generate(s), std::invalid_argument);
    s = GenSpec{};
    s.gaussianVariance = 0.0;
    CHECK_THROWS_AS(generate(s), std::invalid_argument);
    CHECK(dataset_kind_from_string("circles") == DatasetKind::Circles);
    CHECK(to_string(DatasetKind::Gaussians) == "gaussians");
    CHECK_THROWS_AS(dataset_kind_from_string("moons"), std::invalid_argument);
    CHECK(derive_seed(1, 0) != derive_seed(1, 1));
    CHECK(derive_seed(1, 0) == derive_seed(1, 0));
}
