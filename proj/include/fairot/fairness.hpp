#pragma once

#include "fairot/domain.hpp"

#include <optional>
#include <string>
#include <vector>

namespace fairot {

/// Tolerance for target marginals against empirical group marginals.
inline constexpr double kTargetTol = 1e-8;

struct TargetViolation {
    enum class Kind { Negative, RowSum, ColumnSum, Shape };
    Kind kind = Kind::Negative;
    int row = -1;  ///< -1 when the violation is column-wise
    int col = -1;  ///< -1 when the violation is row-wise
    double magnitude = 0.0;

    std::string describe() const;
};

struct TargetValidation {
    bool valid = false;
    std::vector<TargetViolation> violations;
    /// Largest violation; meaningful only when !valid.
    TargetViolation worst;
    /// Set when repair was requested and succeeded.
    std::optional<Matrix> repaired;
};

struct ValidateOptions {
    bool repair = false;
    int repairIterations = 1000;
    double repairTol = 1e-12;
};

/// Checks that F is a non-negative coupling of p and q within kTargetTol. With `repair`, an
/// invalid non-negative F is projected onto the coupling set by iterative proportional fitting.
TargetValidation validate_target(const Matrix& F, const Vector& p, const Vector& q,
                                 const ValidateOptions& opts = {});
TargetValidation validate_target(const Matrix& F, const LabeledDataset& src,
                                 const LabeledDataset& dst, const ValidateOptions& opts = {});

/// Alternating row/column rescaling of F onto couplings of (p, q).
Matrix repair_target(const Matrix& F, const Vector& p, const Vector& q, int iterations = 1000,
                     double tol = 1e-12);

/// Matrix of prescribed inter-group matching probabilities, checked against group marginals.
class FairnessTarget {
public:
    FairnessTarget() = default;
    /// Throws InfeasibleError naming the worst violation when F does not couple (p, q).
    FairnessTarget(Matrix F, const Vector& p, const Vector& q);

    const Matrix& matrix() const { return F_; }
    operator const Matrix&() const { return F_; }

private:
    Matrix F_;
};

/// 2x2 target sending a share `quota` of source group 0 to target group 1.
FairnessTarget target_from_quota(const Vector& p, const Vector& q, double quota);

/// Plan spreading F_sw uniformly over block (s, w): P_ij = F(s_i, w_j) / (n_s m_w).
TransportPlan product_fair_plan(const LabeledDataset& src, const LabeledDataset& dst,
                                const Matrix& F);
TransportPlan product_fair_plan(const GroupLabels& src, const GroupLabels& dst, const Matrix& F);

/// sum_sw (coupling_sw - F_sw)^2
double fairness_loss(const Matrix& plan, const Matrix& F, const GroupLabels& src,
                     const GroupLabels& dst);

/// Derivative of fairness_loss w.r.t. each plan entry; constant on every group-pair block.
Matrix fairness_loss_grad(const Matrix& plan, const Matrix& F, const GroupLabels& src,
                          const GroupLabels& dst);

/// Expands a K_s x K_w matrix to n x m by block lookup.
Matrix expand_blocks(const Matrix& blocks, const GroupLabels& src, const GroupLabels& dst);

}  // namespace fairot
