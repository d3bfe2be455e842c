#pragma once

// Slow reference solvers for verification. Nothing here shares iteration code with the
// production solvers: the dual is maximized in long double
// by Newton-direction ascent with Armijo backtracking.

#include "fairot/domain.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace fairot::oracle {

struct DualAscentConfig {
    double epsilon = 1.0;
    double gradTol = 1e-10;
    long maxIter = 1'000'000;
};

struct DualAscentResult {
    Matrix plan;
    Vector f;
    Vector g;
    Matrix h;
    bool converged = false;
    long iterations = 0;
    double gradNorm = 0.0;  ///< infinity norm of the dual gradient at exit
};

/// Maximizes the entropic dual over (f, g). n, m <= 32.
DualAscentResult dual_ascent_entropic(const Matrix& cost, const DualAscentConfig& cfg);

/// Same dual with one extra multiplier per group pair; labels are 0-based.
DualAscentResult dual_ascent_fair(const Matrix& cost, const Matrix& F, const GroupLabels& src,
                                  const GroupLabels& dst, const DualAscentConfig& cfg);

/// Central differences, one coordinate at a time.
Vector finite_diff(const std::function<double(const Vector&)>& fn, const Vector& point,
                   double step);

/// Same, for functions of a matrix argument.
Matrix finite_diff(const std::function<double(const Matrix&)>& fn, const Matrix& point,
                   double step);

/// ||a - b|| / max(||a||, ||b||, floor)
double relative_error(const Matrix& a, const Matrix& b, double floor = 1e-12);

struct AgreementRow {
    std::string solver;  ///< "sinkhorn" or "fair_sinkhorn"
    Index n = 0;
    Index m = 0;
    double epsilon = 0.0;
    int instance = 0;
    double frobeniusGap = 0.0;
    bool oracleConverged = false;
};

struct AgreementSuite {
    std::vector<std::pair<Index, Index>> sizes{{2, 2}, {3, 5}, {5, 5}, {8, 8}};
    std::vector<double> epsilons{0.5, 1.0, 5.0};
    int instances = 50;
    std::uint64_t seed = 0;
    double threshold = 1e-5;
};

/// Runs production and oracle solvers on random instances and reports the Frobenius gaps.
std::vector<AgreementRow> run_agreement_suite(const AgreementSuite& suite);

}  // namespace fairot::oracle
