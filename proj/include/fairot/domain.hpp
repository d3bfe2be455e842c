#pragma once

#include <Eigen/Dense>

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace fairot {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

/// Row/column marginal tolerance applied when a plan is constructed.
inline constexpr double kMarginalTol = 1e-7;

/// A constraint cannot be met by the given data (empty group, negative quota entry, ...).
class InfeasibleError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Eigensolver breakdown, non-finite iterates, and similar numeric failures.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Group membership of one side of the matching. Indices are 0-based.
struct GroupLabels {
    std::vector<int> index;
    int groups = 1;

    GroupLabels() = default;
    GroupLabels(std::vector<int> index, int groups);

    Index size() const { return static_cast<Index>(index.size()); }
    std::vector<Index> counts() const;
    /// Empirical group marginal; sums to one.
    Vector marginal() const;
};

struct GroupPair {
    int s = 0;
    int w = 0;
};

/// Points (one per row) with a sensitive group label per point and uniform weights.
class LabeledDataset {
public:
    LabeledDataset() = default;
    LabeledDataset(Matrix points, std::vector<int> labels, int groups);

    const Matrix& points() const { return points_; }
    const GroupLabels& labels() const { return labels_; }
    Index size() const { return points_.rows(); }
    Index dim() const { return points_.cols(); }
    int groups() const { return labels_.groups; }
    Vector group_marginal() const { return labels_.marginal(); }

private:
    Matrix points_;
    GroupLabels labels_;
};

/// Finite, entrywise non-negative ground-cost matrix.
class CostMatrix {
public:
    CostMatrix() = default;
    explicit CostMatrix(Matrix values);

    const Matrix& values() const { return values_; }
    operator const Matrix&() const { return values_; }
    Index rows() const { return values_.rows(); }
    Index cols() const { return values_.cols(); }

private:
    Matrix values_;
};

/// Non-negative n x m matrix whose rows sum to 1/n and columns to 1/m.
class TransportPlan {
public:
    TransportPlan() = default;
    /// Throws std::invalid_argument when an entry is negative or a marginal is off by more than `tol`.
    explicit TransportPlan(Matrix values, double tol = kMarginalTol);

    /// Solver output that did not reach its tolerance: only finiteness and sign are checked.
    static TransportPlan unconverged(Matrix values);

    const Matrix& values() const { return values_; }
    operator const Matrix&() const { return values_; }
    Index rows() const { return values_.rows(); }
    Index cols() const { return values_.cols(); }

    /// max(|row sums - 1/n|_inf, |col sums - 1/m|_inf)
    double marginal_residual() const;

private:
    struct NoCheck {};
    TransportPlan(Matrix values, NoCheck);
    Matrix values_;
};

double marginal_residual(const Matrix& plan);

/// Induced coupling on group pairs: entry (s,w) is the plan mass between source group s and
/// target group w.
Matrix group_coupling(const Matrix& plan, const GroupLabels& src, const GroupLabels& dst);

/// Frobenius inner product <plan, cost>.
double transport_cost(const Matrix& plan, const Matrix& cost);

/// sum_ij P_ij log P_ij with 0 log 0 = 0.
double entropy_term(const Matrix& plan);

/// Squared Euclidean distances between the rows of X and the rows of Y.
CostMatrix squared_euclidean_cost(const Matrix& X, const Matrix& Y);

// CSV I/O. Dataset files carry a header `x1,...,xd,label` with 1-based labels; matrix files
// have no header.
LabeledDataset read_dataset_csv(const std::filesystem::path& path);
void write_dataset_csv(const std::filesystem::path& path, const LabeledDataset& data);
Matrix read_matrix_csv(const std::filesystem::path& path);
void write_matrix_csv(const std::filesystem::path& path, const Matrix& m);

}  // namespace fairot
