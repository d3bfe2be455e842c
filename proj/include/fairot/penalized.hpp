#pragma once

#include "fairot/domain.hpp"
#include "fairot/sinkhorn.hpp"

#include <filesystem>
#include <functional>
#include <vector>

namespace fairot {

struct ArmijoConfig {
    double c1 = 1e-4;
    double beta = 0.5;
    int kmax = 30;
};

struct ArmijoResult {
    double alpha = 1.0;
    double value = 0.0;   ///< objective at plan + alpha * (direction - plan)
    double slope = 0.0;   ///< directional derivative along direction - plan
    int trials = 0;
    bool satisfied = true;
};

/// Backtracking along plan + alpha * (direction - plan) for the largest alpha in
/// {1, beta, beta^2, ...} meeting the sufficient-decrease condition. `gradient` may hold -inf
/// where the plan vanishes; a -inf slope only asks for plain decrease. Without an admissible
/// step returns beta^kmax and warns.
ArmijoResult armijo_step(const Matrix& plan, const Matrix& direction,
                         const std::function<double(const Matrix&)>& objective,
                         const Matrix& gradient, const ArmijoConfig& cfg = {});

struct GcgConfig {
    double lambda = 1.0;
    int numIterMax = 2000;
    int numInnerIterMax = 200;
    double stopThr = 1e-9;
    double stopThr2 = 1e-9;
    /// Inner solver settings; its maxIter is replaced by numInnerIterMax.
    SinkhornConfig sinkhorn;
    ArmijoConfig armijo;
    /// Reuse the previous inner duals as the next inner starting point.
    bool warmStartInner = true;

    void validate() const;
};

struct GcgTraceRow {
    int iter = 0;
    double objective = 0.0;
    double transportCost = 0.0;
    double fairnessLoss = 0.0;
    double alpha = 0.0;
};

struct GcgResult {
    TransportPlan plan;
    SolverReport report;  ///< objective includes the penalty term
    std::vector<GcgTraceRow> trace;
};

/// Transport cost + epsilon * sum p log p + lambda * fairness loss.
double penalized_objective(const Matrix& plan, const Matrix& cost, double epsilon, double lambda,
                           const Matrix& F, const GroupLabels& src, const GroupLabels& dst);

/// Generalized conditional gradient: each direction is a vanilla entropic solve on the cost
/// linearized at the current iterate, followed by an Armijo step. Throws NumericError when an
/// inner solve fails.
GcgResult penalized_gcg(const Matrix& cost, const Matrix& F, const GroupLabels& src,
                        const GroupLabels& dst, const GcgConfig& cfg);

/// Columns iter,objective,transport_cost,fairness_loss,alpha.
void write_trace_csv(const std::filesystem::path& path, const std::vector<GcgTraceRow>& trace);

}  // namespace fairot
