#pragma once

#include "fairot/domain.hpp"
#include "fairot/sinkhorn.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace fairot {

/// c(x, y) = (x - y)^T M (x - y) with M symmetric PSD.
struct MahalanobisModel {
    Matrix M;

    static MahalanobisModel identity(Index dim);
    Index input_dim() const { return M.rows(); }
    /// Throws std::invalid_argument unless M is square, symmetric and PSD up to round-off.
    void validate() const;
};

struct DenseLayer {
    Matrix W;  ///< out x in
    Vector b;
};

/// Fully connected ReLU network: hidden layers use ReLU, the output layer is affine.
struct Tower {
    std::vector<DenseLayer> layers;

    /// Rows of the result are the embeddings of the rows of X.
    Matrix forward(const Matrix& X) const;
};

/// c(x, y) = |phi1(x) - phi2(y)|^2 with two towers of shape d -> H -> H -> out.
struct MlpModel {
    Tower phi1;
    Tower phi2;

    static MlpModel zeros(Index dim, Index hidden = 32, Index out = 2);
    /// He-uniform weights, zero biases.
    static MlpModel random(Index dim, std::uint64_t seed, Index hidden = 32, Index out = 2);

    Index input_dim() const;
    Index parameter_count() const;
    /// Flat layout: phi1 then phi2, each layer as W (row-major) then b.
    Vector parameters() const;
    void set_parameters(const Vector& theta);
    void validate() const;
};

using CostModel = std::variant<MahalanobisModel, MlpModel>;

Index input_dim(const CostModel& model);
Vector parameters(const CostModel& model);
void set_parameters(CostModel& model, const Vector& theta);

CostMatrix mahalanobis_cost(const Matrix& M, const Matrix& X, const Matrix& Y);
/// d/dM of sum_ij Cbar_ij C_ij, i.e. sum_ij Cbar_ij (x_i - y_j)(x_i - y_j)^T.
Matrix mahalanobis_cost_vjp(const Matrix& X, const Matrix& Y, const Matrix& Cbar);

CostMatrix mlp_cost(const MlpModel& model, const Matrix& X, const Matrix& Y);
/// Flat parameter gradient of sum_ij Cbar_ij C_ij (ReLU derivative 0 at 0).
Vector mlp_cost_vjp(const MlpModel& model, const Matrix& X, const Matrix& Y, const Matrix& Cbar);

CostMatrix model_cost(const CostModel& model, const Matrix& X, const Matrix& Y);
Vector model_cost_vjp(const CostModel& model, const Matrix& X, const Matrix& Y,
                      const Matrix& Cbar);

/// Frobenius-nearest PSD matrix: symmetrize, clamp negative eigenvalues. Returns the
/// symmetrized input unchanged when it is already PSD. Throws NumericError when the
/// eigensolver fails.
Matrix psd_project(const Matrix& A);

/// Reverse pass through `iterations` Sinkhorn updates that start from the scalings encoded in
/// `start` (held constant). Returns the plan reached and d/dC of sum_ij planBar_ij P_ij.
struct UnrolledSinkhorn {
    Matrix plan;
    Matrix costBar;
    bool logDomain = false;
};
UnrolledSinkhorn unrolled_sinkhorn_vjp(const Matrix& cost, double epsilon,
                                       const DualPotentials& start, int iterations,
                                       const Matrix& planBar,
                                       SinkhornDomain domain = SinkhornDomain::Auto);
/// As above, with the plan adjoint computed from the plan reached by the forward pass.
UnrolledSinkhorn unrolled_sinkhorn_vjp(const Matrix& cost, double epsilon,
                                       const DualPotentials& start, int iterations,
                                       const std::function<Matrix(const Matrix&)>& planAdjoint,
                                       SinkhornDomain domain = SinkhornDomain::Auto);

enum class DiscrepancyNorm {
    Sum,   ///< |C - C_base|_F^2
    Mean,  ///< |C - C_base|_F^2 / (n m)
};

struct BilevelConfig {
    double lambda = 1000.0;  ///< may be +inf, which drops the discrepancy term
    SinkhornConfig inner;    ///< epsilon, tol and maxIter of the inner solve
    int outerSteps = 200;
    double learningRate = 0.1;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adamEps = 1e-8;
    int unrollLength = 200;
    DiscrepancyNorm discrepancy = DiscrepancyNorm::Mean;
    bool warmStart = true;
    double divergenceThreshold = 1e6;

    BilevelConfig();
    void validate() const;
};

struct BilevelProblem {
    Matrix X;
    Matrix Y;
    GroupLabels src;
    GroupLabels dst;
    Matrix F;
    Matrix baseCost;

    /// Baseline cost is squared Euclidean on the raw features.
    static BilevelProblem from_data(const LabeledDataset& X, const LabeledDataset& Y,
                                    const Matrix& F);
};

double discrepancy(const Matrix& cost, const Matrix& base, DiscrepancyNorm norm);

struct BilevelEval {
    double value = 0.0;
    double fairnessLoss = 0.0;
    double discrepancy = 0.0;
    Vector gradient;            ///< flat, same layout as parameters(model)
    SinkhornResult inner;       ///< forward solve
    Matrix plan;                ///< plan at the end of the differentiated iterations
    bool innerConverged = false;
};

/// Fairness loss of the inner plan plus discrepancy / lambda, with its parameter gradient
/// obtained by differentiating `unrollLength` Sinkhorn updates taken from the converged duals.
BilevelEval bilevel_objective(const CostModel& model, const BilevelProblem& problem,
                              const BilevelConfig& cfg,
                              const std::optional<DualPotentials>& warmStart = std::nullopt);

/// Adam on a flat parameter vector.
class Adam {
public:
    Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
    Vector step(const Vector& params, const Vector& grad);

private:
    double lr_, beta1_, beta2_, eps_;
    Vector m_, v_;
    long t_ = 0;
};

struct TrainingRow {
    int step = 0;
    double fairnessLoss = 0.0;
    double discrepancy = 0.0;
    double objective = 0.0;
};

struct TrainResult {
    CostModel model;
    std::vector<TrainingRow> history;
    bool aborted = false;     ///< objective diverged
    int innerFailures = 0;    ///< inner solves that hit maxIter
    std::optional<DualPotentials> duals;
    double wallTimeSeconds = 0.0;
};

/// One Adam step per inner solve; Mahalanobis iterates are projected back onto the PSD cone.
/// History row k holds the objective evaluated before update k.
TrainResult train_cost(CostModel model, const BilevelProblem& problem, const BilevelConfig& cfg);

struct PretrainConfig {
    int steps = 500;
    double learningRate = 1e-2;
    double relativeGapTol = 1e-2;
};

struct PretrainResult {
    MlpModel model;
    int steps = 0;
    double relativeGap = 0.0;  ///< |C - C_base|_F / |C_base|_F
};

/// Fits the MLP cost to the baseline cost alone.
PretrainResult pretrain_mlp(MlpModel model, const Matrix& X, const Matrix& Y,
                            const Matrix& baseCost, const PretrainConfig& cfg = {});

struct MatchResult {
    SinkhornResult solve;
    double fairnessLoss = 0.0;
};

/// Vanilla Sinkhorn on the learned cost of fresh samples.
MatchResult match_with_learned_cost(const CostModel& model, const LabeledDataset& X,
                                    const LabeledDataset& Y, const Matrix& F,
                                    const SinkhornConfig& cfg);

std::string model_to_json(const CostModel& model);
CostModel model_from_json(std::string_view text);
void save_model(const std::filesystem::path& path, const CostModel& model);
CostModel load_model(const std::filesystem::path& path);

/// Columns step,fairness_loss,discrepancy,objective.
void write_history_csv(const std::filesystem::path& path, const std::vector<TrainingRow>& rows);

}  // namespace fairot
