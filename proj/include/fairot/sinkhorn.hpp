#pragma once

#include "fairot/domain.hpp"

#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

namespace fairot {

enum class SinkhornDomain {
    Auto,            ///< log domain when epsilon < 1, multiplicative otherwise
    Multiplicative,  ///< falls back to the log domain on overflow
    Log,
};

/// Dual potentials: the solution is P_ij = exp((f_i + g_j + h(s_i, w_j) - C_ij) / eps - 1).
struct DualPotentials {
    Vector f;
    Vector g;
    Matrix h;  ///< fairness multipliers; 1x1 zero for vanilla solves
};

struct SinkhornConfig {
    double epsilon = 1.0;
    int maxIter = 1000;
    double tol = 1e-6;
    SinkhornDomain domain = SinkhornDomain::Auto;
    std::optional<DualPotentials> warmStart;

    /// Throws std::invalid_argument.
    void validate() const;
    bool uses_log_domain() const;
};

struct SolverReport {
    bool converged = false;
    int iterations = 0;
    double finalResidual = 0.0;
    double objective = 0.0;      ///< transport cost + epsilon * entropy (+ lambda * loss when penalized)
    double transportCost = 0.0;
    double fairnessLoss = 0.0;   ///< zero for vanilla solves
    double wallTimeSeconds = 0.0;
    bool logDomain = false;
};

struct SinkhornResult {
    TransportPlan plan;
    DualPotentials potentials;
    SolverReport report;
};

/// Entropic OT with uniform marginals. Stops when the marginal residual falls to cfg.tol;
/// on reaching maxIter the last iterate is returned with converged = false.
SinkhornResult sinkhorn(const Matrix& cost, const SinkhornConfig& cfg);

/// Entropic OT whose group coupling is constrained to equal F, by alternating row, column and
/// group-block scalings. Convergence requires both the marginal residual and the largest
/// group-coupling deviation to fall to cfg.tol.
SinkhornResult fair_sinkhorn(const Matrix& cost, const Matrix& F, const GroupLabels& src,
                             const GroupLabels& dst, const SinkhornConfig& cfg);

/// Draws one column per row, in row order, from the row's normalized distribution.
std::vector<std::pair<Index, Index>> sample_matching(const Matrix& plan, std::uint64_t seed);

}  // namespace fairot
