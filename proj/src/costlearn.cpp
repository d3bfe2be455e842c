#include "fairot/costlearn.hpp"

#include "fairot/csv.hpp"
#include "fairot/fairness.hpp"

#include <json.hpp>

#include <Eigen/Eigenvalues>

#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <limits>
#include <random>
#include <sstream>

namespace fairot {

namespace {

using json = nlohmann::json;

Matrix relu(const Matrix& z) { return z.cwiseMax(0.0); }

Matrix affine(const Matrix& H, const DenseLayer& layer) {
    return (H * layer.W.transpose()).rowwise() + layer.b.transpose();
}

void require_dims(const Matrix& X, const Matrix& Y, Index dim, const char* what) {
    if (X.cols() != dim || Y.cols() != dim) {
        std::ostringstream msg;
        msg << what << ": data dimension " << X.cols() << "/" << Y.cols()
            << " does not match model input dimension " << dim;
        throw std::invalid_argument(msg.str());
    }
}

// Pre-activations of every layer, for the reverse pass.
struct TowerTrace {
    std::vector<Matrix> inputs;  // input to each layer
    std::vector<Matrix> preact;  // affine output of each layer
};

TowerTrace trace_forward(const Tower& tower, const Matrix& X) {
    TowerTrace tr;
    Matrix H = X;
    for (std::size_t l = 0; l < tower.layers.size(); ++l) {
        tr.inputs.push_back(H);
        Matrix Z = affine(H, tower.layers[l]);
        H = l + 1 < tower.layers.size() ? relu(Z) : Z;
        tr.preact.push_back(std::move(Z));
    }
    return tr;
}

const Matrix& output(const TowerTrace& tr) { return tr.preact.back(); }

// Appends dW (row-major) and db for each layer, given the adjoint of the tower output.
void tower_backward(const Tower& tower, const TowerTrace& tr, Matrix outBar,
                    std::vector<double>& flat) {
    std::vector<std::pair<Matrix, Vector>> grads(tower.layers.size());
    Matrix Zbar = std::move(outBar);
    for (std::size_t k = tower.layers.size(); k-- > 0;) {
        const DenseLayer& layer = tower.layers[k];
        grads[k].first = Zbar.transpose() * tr.inputs[k];
        grads[k].second = Zbar.colwise().sum().transpose();
        if (k == 0) break;
        Matrix Hbar = Zbar * layer.W;
        const Matrix& Zprev = tr.preact[k - 1];
        Zbar = (Zprev.array() > 0.0).select(Hbar, 0.0);
    }
    for (const auto& [W, b] : grads) {
        for (Index i = 0; i < W.rows(); ++i)
            for (Index j = 0; j < W.cols(); ++j) flat.push_back(W(i, j));
        for (Index i = 0; i < b.size(); ++i) flat.push_back(b[i]);
    }
}

Tower make_tower(Index dim, Index hidden, Index out) {
    Tower t;
    const Index shapes[3][2] = {{hidden, dim}, {hidden, hidden}, {out, hidden}};
    for (const auto& s : shapes) t.layers.push_back({Matrix::Zero(s[0], s[1]), Vector::Zero(s[0])});
    return t;
}

template <class Fn>
void for_each_param(Tower& tower, Fn&& fn) {
    for (auto& layer : tower.layers) {
        for (Index i = 0; i < layer.W.rows(); ++i)
            for (Index j = 0; j < layer.W.cols(); ++j) fn(layer.W(i, j));
        for (Index i = 0; i < layer.b.size(); ++i) fn(layer.b[i]);
    }
}

Index tower_params(const Tower& t) {
    Index n = 0;
    for (const auto& l : t.layers) n += l.W.size() + l.b.size();
    return n;
}

double exp_scalar(double z) { return std::exp(z); }

}  // namespace

// --- models ---------------------------------------------------------------------------------

MahalanobisModel MahalanobisModel::identity(Index dim) {
    if (dim < 1) throw std::invalid_argument("MahalanobisModel: dimension must be >= 1");
    return {Matrix::Identity(dim, dim)};
}

void MahalanobisModel::validate() const {
    if (M.rows() != M.cols() || M.rows() < 1)
        throw std::invalid_argument("Mahalanobis matrix must be square and non-empty");
    if (!M.allFinite()) throw std::invalid_argument("Mahalanobis matrix has non-finite entries");
    const double scale = std::max(1.0, M.cwiseAbs().maxCoeff());
    if ((M - M.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale)
        throw std::invalid_argument("Mahalanobis matrix is not symmetric");
    Eigen::SelfAdjointEigenSolver<Matrix> es(M, Eigen::EigenvaluesOnly);
    if (es.info() != Eigen::Success) throw NumericError("Mahalanobis eigensolver failed");
    if (es.eigenvalues().minCoeff() < -1e-10 * scale)
        throw std::invalid_argument("Mahalanobis matrix is not positive semidefinite");
}

Matrix Tower::forward(const Matrix& X) const {
    Matrix H = X;
    for (std::size_t l = 0; l < layers.size(); ++l) {
        Matrix Z = affine(H, layers[l]);
        H = l + 1 < layers.size() ? relu(Z) : std::move(Z);
    }
    return H;
}

MlpModel MlpModel::zeros(Index dim, Index hidden, Index out) {
    if (dim < 1 || hidden < 1 || out < 1)
        throw std::invalid_argument("MlpModel: layer sizes must be >= 1");
    return {make_tower(dim, hidden, out), make_tower(dim, hidden, out)};
}

MlpModel MlpModel::random(Index dim, std::uint64_t seed, Index hidden, Index out) {
    MlpModel m = zeros(dim, hidden, out);
    std::mt19937_64 rng(seed);
    for (Tower* t : {&m.phi1, &m.phi2})
        for (auto& layer : t->layers) {
            const double bound = std::sqrt(6.0 / static_cast<double>(layer.W.cols()));
            std::uniform_real_distribution<double> dist(-bound, bound);
            for (Index i = 0; i < layer.W.rows(); ++i)
                for (Index j = 0; j < layer.W.cols(); ++j) layer.W(i, j) = dist(rng);
        }
    return m;
}

Index MlpModel::input_dim() const {
    return phi1.layers.empty() ? 0 : phi1.layers.front().W.cols();
}

Index MlpModel::parameter_count() const { return tower_params(phi1) + tower_params(phi2); }

Vector MlpModel::parameters() const {
    Vector theta(parameter_count());
    Index k = 0;
    MlpModel copy = *this;
    for (Tower* t : {&copy.phi1, &copy.phi2}) for_each_param(*t, [&](double& p) { theta[k++] = p; });
    return theta;
}

void MlpModel::set_parameters(const Vector& theta) {
    if (theta.size() != parameter_count())
        throw std::invalid_argument("MlpModel: parameter vector has the wrong length");
    Index k = 0;
    for (Tower* t : {&phi1, &phi2}) for_each_param(*t, [&](double& p) { p = theta[k++]; });
}

void MlpModel::validate() const {
    for (const Tower* t : {&phi1, &phi2}) {
        if (t->layers.empty()) throw std::invalid_argument("MlpModel: tower has no layers");
        for (std::size_t l = 0; l < t->layers.size(); ++l) {
            const auto& layer = t->layers[l];
            if (layer.b.size() != layer.W.rows())
                throw std::invalid_argument("MlpModel: bias length does not match layer width");
            if (l > 0 && layer.W.cols() != t->layers[l - 1].W.rows())
                throw std::invalid_argument("MlpModel: layer shapes do not chain");
            if (!layer.W.allFinite() || !layer.b.allFinite())
                throw std::invalid_argument("MlpModel: non-finite parameter");
        }
    }
    if (phi1.layers.front().W.cols() != phi2.layers.front().W.cols() ||
        phi1.layers.back().W.rows() != phi2.layers.back().W.rows())
        throw std::invalid_argument("MlpModel: towers disagree on input or output size");
}

Index input_dim(const CostModel& model) {
    return std::visit([](const auto& m) { return m.input_dim(); }, model);
}

Vector parameters(const CostModel& model) {
    if (const auto* m = std::get_if<MahalanobisModel>(&model)) {
        const Index d = m->M.rows();
        Vector theta(d * d);
        for (Index i = 0; i < d; ++i)
            for (Index j = 0; j < d; ++j) theta[i * d + j] = m->M(i, j);
        return theta;
    }
    return std::get<MlpModel>(model).parameters();
}

void set_parameters(CostModel& model, const Vector& theta) {
    if (auto* m = std::get_if<MahalanobisModel>(&model)) {
        const Index d = m->M.rows();
        if (theta.size() != d * d)
            throw std::invalid_argument("Mahalanobis: parameter vector has the wrong length");
        for (Index i = 0; i < d; ++i)
            for (Index j = 0; j < d; ++j) m->M(i, j) = theta[i * d + j];
        return;
    }
    std::get<MlpModel>(model).set_parameters(theta);
}

// --- costs ----------------------------------------------------------------------------------

CostMatrix mahalanobis_cost(const Matrix& M, const Matrix& X, const Matrix& Y) {
    MahalanobisModel{M}.validate();
    require_dims(X, Y, M.rows(), "mahalanobis_cost");
    const Matrix XM = X * M;
    const Vector xx = XM.cwiseProduct(X).rowwise().sum();
    const Vector yy = (Y * M).cwiseProduct(Y).rowwise().sum();
    Matrix C = (-2.0 * XM * Y.transpose()).colwise() + xx;
    C.rowwise() += yy.transpose();
    return CostMatrix(C.cwiseMax(0.0));
}

Matrix mahalanobis_cost_vjp(const Matrix& X, const Matrix& Y, const Matrix& Cbar) {
    if (Cbar.rows() != X.rows() || Cbar.cols() != Y.rows() || X.cols() != Y.cols())
        throw std::invalid_argument("mahalanobis_cost_vjp: shape mismatch");
    const Vector rs = Cbar.rowwise().sum();
    const Vector cs = Cbar.colwise().sum().transpose();
    const Matrix cross = X.transpose() * Cbar * Y;
    return X.transpose() * rs.asDiagonal() * X + Y.transpose() * cs.asDiagonal() * Y - cross -
           cross.transpose();
}

CostMatrix mlp_cost(const MlpModel& model, const Matrix& X, const Matrix& Y) {
    model.validate();
    require_dims(X, Y, model.input_dim(), "mlp_cost");
    const Matrix A = model.phi1.forward(X);
    const Matrix B = model.phi2.forward(Y);
    Matrix C = (-2.0 * A * B.transpose()).colwise() + A.rowwise().squaredNorm();
    C.rowwise() += B.rowwise().squaredNorm().transpose();
    return CostMatrix(C.cwiseMax(0.0));
}

Vector mlp_cost_vjp(const MlpModel& model, const Matrix& X, const Matrix& Y, const Matrix& Cbar) {
    require_dims(X, Y, model.input_dim(), "mlp_cost_vjp");
    if (Cbar.rows() != X.rows() || Cbar.cols() != Y.rows())
        throw std::invalid_argument("mlp_cost_vjp: shape mismatch");
    const TowerTrace ta = trace_forward(model.phi1, X);
    const TowerTrace tb = trace_forward(model.phi2, Y);
    const Matrix& A = output(ta);
    const Matrix& B = output(tb);
    const Vector rs = Cbar.rowwise().sum();
    const Vector cs = Cbar.colwise().sum().transpose();
    const Matrix Abar = 2.0 * (rs.asDiagonal() * A - Cbar * B);
    const Matrix Bbar = 2.0 * (cs.asDiagonal() * B - Cbar.transpose() * A);
    std::vector<double> flat;
    flat.reserve(static_cast<std::size_t>(model.parameter_count()));
    tower_backward(model.phi1, ta, Abar, flat);
    tower_backward(model.phi2, tb, Bbar, flat);
    return Eigen::Map<const Vector>(flat.data(), static_cast<Index>(flat.size()));
}

CostMatrix model_cost(const CostModel& model, const Matrix& X, const Matrix& Y) {
    if (const auto* m = std::get_if<MahalanobisModel>(&model)) return mahalanobis_cost(m->M, X, Y);
    return mlp_cost(std::get<MlpModel>(model), X, Y);
}

Vector model_cost_vjp(const CostModel& model, const Matrix& X, const Matrix& Y,
                      const Matrix& Cbar) {
    if (std::holds_alternative<MahalanobisModel>(model)) {
        const Matrix G = mahalanobis_cost_vjp(X, Y, Cbar);
        const Index d = G.rows();
        Vector theta(d * d);
        for (Index i = 0; i < d; ++i)
            for (Index j = 0; j < d; ++j) theta[i * d + j] = G(i, j);
        return theta;
    }
    return mlp_cost_vjp(std::get<MlpModel>(model), X, Y, Cbar);
}

Matrix psd_project(const Matrix& A) {
    if (A.rows() != A.cols()) throw std::invalid_argument("psd_project: matrix must be square");
    const Matrix S = 0.5 * (A + A.transpose());
    Eigen::SelfAdjointEigenSolver<Matrix> es(S);
    if (es.info() != Eigen::Success) throw NumericError("psd_project: eigensolver failed");
    if (es.eigenvalues().minCoeff() >= 0.0) return S;
    const Vector clamped = es.eigenvalues().cwiseMax(0.0);
    const Matrix P = es.eigenvectors() * clamped.asDiagonal() * es.eigenvectors().transpose();
    return 0.5 * (P + P.transpose());
}

// --- unrolled Sinkhorn ----------------------------------------------------------------------

namespace {

struct Overflow {};

using PlanAdjoint = std::function<Matrix(const Matrix&)>;

UnrolledSinkhorn unrolled_multiplicative(const Matrix& cost, double eps, const Vector& g0,
                                         int L, const PlanAdjoint& adjoint) {
    const Index n = cost.rows();
    const Index m = cost.cols();
    const double rowMass = 1.0 / static_cast<double>(n);
    const double colMass = 1.0 / static_cast<double>(m);
    const Matrix K = (-cost / eps).array().unaryExpr([](double z) { return exp_scalar(z - 1.0); });
    if (!(K.minCoeff() > 0.0)) throw Overflow{};

    Matrix U(n, L), V(m, L + 1);
    V.col(0) = g0.unaryExpr([eps](double z) { return exp_scalar(z / eps); });
    for (int t = 1; t <= L; ++t) {
        const Vector q = K * V.col(t - 1);
        U.col(t - 1) = rowMass * q.cwiseInverse();
        const Vector r = K.transpose() * U.col(t - 1);
        V.col(t) = colMass * r.cwiseInverse();
        if (!U.col(t - 1).allFinite() || !V.col(t).allFinite() || !(q.minCoeff() > 0.0) ||
            !(r.minCoeff() > 0.0))
            throw Overflow{};
    }
    const Vector uL = U.col(L - 1);
    const Vector vL = V.col(L);
    UnrolledSinkhorn out;
    out.plan = uL.asDiagonal() * K * vL.asDiagonal();
    const Matrix planBar = adjoint(out.plan);

    const Matrix PK = planBar.cwiseProduct(K);
    Matrix Kbar = planBar.cwiseProduct(uL * vL.transpose());
    Vector ubar = PK * vL;
    Vector vbar = PK.transpose() * uL;
    Matrix Rbar(m, L), Qbar(n, L);
    for (int t = L; t >= 1; --t) {
        const Vector rbar = -static_cast<double>(m) * V.col(t).cwiseAbs2().cwiseProduct(vbar);
        ubar += K * rbar;
        const Vector qbar = -static_cast<double>(n) * U.col(t - 1).cwiseAbs2().cwiseProduct(ubar);
        vbar = K.transpose() * qbar;
        ubar.setZero();
        Rbar.col(t - 1) = rbar;
        Qbar.col(t - 1) = qbar;
    }
    Kbar.noalias() += U * Rbar.transpose();
    Kbar.noalias() += Qbar * V.leftCols(L).transpose();
    out.costBar = -Kbar.cwiseProduct(K) / eps;
    if (!out.costBar.allFinite()) throw Overflow{};
    return out;
}

Vector lse_rows(const Matrix& M) {
    const Vector mx = M.rowwise().maxCoeff();
    return mx + (M.colwise() - mx).array().exp().rowwise().sum().log().matrix();
}

Vector lse_cols(const Matrix& M) {
    const Eigen::RowVectorXd mx = M.colwise().maxCoeff();
    return (mx.array() + (M.rowwise() - mx).array().exp().colwise().sum().log()).transpose();
}

UnrolledSinkhorn unrolled_log(const Matrix& cost, double eps, const Vector& g0, int L,
                              const PlanAdjoint& adjoint) {
    const Index n = cost.rows();
    const Index m = cost.cols();
    const double logN = std::log(static_cast<double>(n));
    const double logM = std::log(static_cast<double>(m));
    const Matrix logK = (-cost / eps).array() - 1.0;

    Matrix A(n, L), B(m, L + 1);
    B.col(0) = g0 / eps;
    for (int t = 1; t <= L; ++t) {
        A.col(t - 1) = -logN - lse_rows(logK.rowwise() + B.col(t - 1).transpose()).array();
        B.col(t) = -logM - lse_cols(logK.colwise() + A.col(t - 1)).array();
    }
    UnrolledSinkhorn out;
    out.logDomain = true;
    auto exp_of = [](const Matrix& z) { return Matrix(z.unaryExpr(&exp_scalar)); };
    out.plan = exp_of((logK.colwise() + A.col(L - 1)).rowwise() + B.col(L).transpose());

    const Matrix G = adjoint(out.plan).cwiseProduct(out.plan);
    Matrix logKbar = G;
    Vector abar = G.rowwise().sum();
    Vector bbar = G.colwise().sum().transpose();
    for (int t = L; t >= 1; --t) {
        // column softmax over i of logK + a_t
        const Matrix S = exp_of(((logK.colwise() + A.col(t - 1)).rowwise() +
                                 B.col(t).transpose()).array() + logM);
        logKbar -= S * bbar.asDiagonal();
        abar -= S * bbar;
        // row softmax over j of logK + b_{t-1}
        const Matrix R = exp_of(((logK.colwise() + A.col(t - 1)).rowwise() +
                                 B.col(t - 1).transpose()).array() + logN);
        logKbar -= abar.asDiagonal() * R;
        bbar = -R.transpose() * abar;
        abar.setZero();
    }
    out.costBar = -logKbar / eps;
    return out;
}

}  // namespace

UnrolledSinkhorn unrolled_sinkhorn_vjp(const Matrix& cost, double epsilon,
                                       const DualPotentials& start, int iterations,
                                       const std::function<Matrix(const Matrix&)>& planAdjoint,
                                       SinkhornDomain domain) {
    if (iterations < 1) throw std::invalid_argument("unrolled_sinkhorn_vjp: iterations must be >= 1");
    if (!(epsilon > 0.0)) throw std::invalid_argument("unrolled_sinkhorn_vjp: epsilon must be positive");
    const PlanAdjoint checked = [&](const Matrix& plan) {
        Matrix bar = planAdjoint(plan);
        if (bar.rows() != cost.rows() || bar.cols() != cost.cols())
            throw std::invalid_argument("unrolled_sinkhorn_vjp: planBar shape does not match cost");
        return bar;
    };
    const Vector g0 = start.g.size() == cost.cols() ? start.g : Vector::Zero(cost.cols());
    const bool useLog = domain == SinkhornDomain::Log ||
                        (domain == SinkhornDomain::Auto && epsilon < 1.0);
    if (!useLog) {
        try {
            return unrolled_multiplicative(cost, epsilon, g0, iterations, checked);
        } catch (const Overflow&) {
            // fall through to the stable variant
        }
    }
    return unrolled_log(cost, epsilon, g0, iterations, checked);
}

UnrolledSinkhorn unrolled_sinkhorn_vjp(const Matrix& cost, double epsilon,
                                       const DualPotentials& start, int iterations,
                                       const Matrix& planBar, SinkhornDomain domain) {
    return unrolled_sinkhorn_vjp(
        cost, epsilon, start, iterations, [&](const Matrix&) { return planBar; }, domain);
}

// --- bilevel objective ----------------------------------------------------------------------

BilevelConfig::BilevelConfig() {
    inner.epsilon = 1.0;
    inner.tol = 1e-6;
    inner.maxIter = 1000;
}

void BilevelConfig::validate() const {
    if (!(lambda > 0.0)) throw std::invalid_argument("BilevelConfig: lambda must be positive");
    if (outerSteps < 0) throw std::invalid_argument("BilevelConfig: outerSteps must be >= 0");
    if (!(learningRate >= 0.0) || !std::isfinite(learningRate))
        throw std::invalid_argument("BilevelConfig: learning rate must be finite and >= 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0) || !(adamEps > 0.0))
        throw std::invalid_argument("BilevelConfig: invalid Adam parameters");
    if (unrollLength < 1) throw std::invalid_argument("BilevelConfig: unrollLength must be >= 1");
    if (!(divergenceThreshold > 0.0))
        throw std::invalid_argument("BilevelConfig: divergence threshold must be positive");
    inner.validate();
}

BilevelProblem BilevelProblem::from_data(const LabeledDataset& X, const LabeledDataset& Y,
                                         const Matrix& F) {
    if (X.dim() != Y.dim()) throw std::invalid_argument("BilevelProblem: dimension mismatch");
    if (F.rows() != X.groups() || F.cols() != Y.groups())
        throw std::invalid_argument("BilevelProblem: target shape does not match group counts");
    return {X.points(), Y.points(), X.labels(), Y.labels(), F,
            squared_euclidean_cost(X.points(), Y.points()).values()};
}

double discrepancy(const Matrix& cost, const Matrix& base, DiscrepancyNorm norm) {
    if (cost.rows() != base.rows() || cost.cols() != base.cols())
        throw std::invalid_argument("discrepancy: shape mismatch");
    const double sum = (cost - base).squaredNorm();
    return norm == DiscrepancyNorm::Sum ? sum : sum / static_cast<double>(cost.size());
}

BilevelEval bilevel_objective(const CostModel& model, const BilevelProblem& problem,
                              const BilevelConfig& cfg,
                              const std::optional<DualPotentials>& warmStart) {
    cfg.validate();
    const Matrix C = model_cost(model, problem.X, problem.Y).values();
    if (C.rows() != problem.baseCost.rows() || C.cols() != problem.baseCost.cols())
        throw std::invalid_argument("bilevel_objective: base cost shape mismatch");

    SinkhornConfig inner = cfg.inner;
    inner.warmStart = cfg.warmStart ? warmStart : std::nullopt;
    BilevelEval out{0.0, 0.0, 0.0, Vector(), sinkhorn(C, inner), Matrix(), false};
    out.innerConverged = out.inner.report.converged;

    // differentiate a fixed number of updates taken from the solved duals
    const UnrolledSinkhorn unrolled = unrolled_sinkhorn_vjp(
        C, inner.epsilon, out.inner.potentials, cfg.unrollLength,
        [&](const Matrix& plan) {
            return fairness_loss_grad(plan, problem.F, problem.src, problem.dst);
        },
        inner.domain);
    out.plan = unrolled.plan;
    out.fairnessLoss = fairness_loss(out.plan, problem.F, problem.src, problem.dst);
    out.discrepancy = discrepancy(C, problem.baseCost, cfg.discrepancy);
    const double weight = std::isinf(cfg.lambda) ? 0.0 : 1.0 / cfg.lambda;
    out.value = out.fairnessLoss + weight * out.discrepancy;

    Matrix Cbar = unrolled.costBar;
    if (weight > 0.0) {
        const double scale = cfg.discrepancy == DiscrepancyNorm::Sum
                                 ? 2.0
                                 : 2.0 / static_cast<double>(C.size());
        Cbar += weight * scale * (C - problem.baseCost);
    }
    out.gradient = model_cost_vjp(model, problem.X, problem.Y, Cbar);
    return out;
}

// --- training -------------------------------------------------------------------------------

Adam::Adam(double lr, double beta1, double beta2, double eps)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

Vector Adam::step(const Vector& params, const Vector& grad) {
    if (params.size() != grad.size()) throw std::invalid_argument("Adam: gradient length mismatch");
    if (m_.size() != params.size()) {
        m_ = Vector::Zero(params.size());
        v_ = Vector::Zero(params.size());
        t_ = 0;
    }
    ++t_;
    m_ = beta1_ * m_ + (1.0 - beta1_) * grad;
    v_ = beta2_ * v_ + (1.0 - beta2_) * grad.cwiseAbs2();
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    const Vector mhat = m_ / c1;
    const Vector vhat = v_ / c2;
    return params - lr_ * (mhat.array() / (vhat.array().sqrt() + eps_)).matrix();
}

TrainResult train_cost(CostModel model, const BilevelProblem& problem, const BilevelConfig& cfg) {
    cfg.validate();
    if (auto* m = std::get_if<MahalanobisModel>(&model)) m->validate();
    const auto start = std::chrono::steady_clock::now();

    TrainResult res;
    Adam adam(cfg.learningRate, cfg.beta1, cfg.beta2, cfg.adamEps);
    Vector theta = parameters(model);
    Vector evaluatedAt;
    BilevelEval eval;
    for (int step = 0; step <= cfg.outerSteps; ++step) {
        // identical parameters give an identical objective; skip the re-solve
        if (evaluatedAt.size() == 0 || evaluatedAt != theta) {
            eval = bilevel_objective(model, problem, cfg, res.duals);
            evaluatedAt = theta;
            if (!eval.innerConverged) ++res.innerFailures;
            res.duals = eval.inner.potentials;
        }
        res.history.push_back({step, eval.fairnessLoss, eval.discrepancy, eval.value});
        if (!std::isfinite(eval.value) || eval.value > cfg.divergenceThreshold) {
            res.aborted = true;
            break;
        }
        if (step == cfg.outerSteps) break;
        theta = adam.step(theta, eval.gradient);
        set_parameters(model, theta);
        if (auto* m = std::get_if<MahalanobisModel>(&model)) {
            m->M = psd_project(m->M);
            theta = parameters(model);
        }
    }
    res.model = std::move(model);
    res.wallTimeSeconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return res;
}

PretrainResult pretrain_mlp(MlpModel model, const Matrix& X, const Matrix& Y,
                            const Matrix& baseCost, const PretrainConfig& cfg) {
    if (cfg.steps < 0 || !(cfg.learningRate >= 0.0) || !(cfg.relativeGapTol > 0.0))
        throw std::invalid_argument("pretrain_mlp: invalid configuration");
    const double baseNorm = std::max(baseCost.norm(), std::numeric_limits<double>::min());
    Adam adam(cfg.learningRate);
    Vector theta = model.parameters();
    PretrainResult out;
    for (int step = 0;; ++step) {
        const Matrix C = mlp_cost(model, X, Y).values();
        if (C.rows() != baseCost.rows() || C.cols() != baseCost.cols())
            throw std::invalid_argument("pretrain_mlp: base cost shape mismatch");
        out.relativeGap = (C - baseCost).norm() / baseNorm;
        out.steps = step;
        if (out.relativeGap < cfg.relativeGapTol || step == cfg.steps) break;
        const Matrix Cbar = 2.0 / static_cast<double>(C.size()) * (C - baseCost);
        theta = adam.step(theta, mlp_cost_vjp(model, X, Y, Cbar));
        model.set_parameters(theta);
    }
    out.model = std::move(model);
    return out;
}

MatchResult match_with_learned_cost(const CostModel& model, const LabeledDataset& X,
                                    const LabeledDataset& Y, const Matrix& F,
                                    const SinkhornConfig& cfg) {
    if (X.dim() != input_dim(model) || Y.dim() != input_dim(model))
        throw std::invalid_argument("match_with_learned_cost: data dimension does not match model");
    const CostMatrix C = model_cost(model, X.points(), Y.points());
    MatchResult out{sinkhorn(C, cfg), 0.0};
    out.fairnessLoss = fairness_loss(out.solve.plan, F, X.labels(), Y.labels());
    out.solve.report.fairnessLoss = out.fairnessLoss;
    return out;
}

// --- serialization --------------------------------------------------------------------------

namespace {

json matrix_rows(const Matrix& m) {
    json flat = json::array();
    for (Index i = 0; i < m.rows(); ++i)
        for (Index j = 0; j < m.cols(); ++j) flat.push_back(m(i, j));
    return flat;
}

Matrix matrix_from(const json& flat, Index rows, Index cols, const char* what) {
    if (!flat.is_array() || static_cast<Index>(flat.size()) != rows * cols)
        throw std::invalid_argument(std::string("model json: bad size for ") + what);
    Matrix m(rows, cols);
    for (Index i = 0; i < rows; ++i)
        for (Index j = 0; j < cols; ++j) m(i, j) = flat[i * cols + j].get<double>();
    return m;
}

}  // namespace

std::string model_to_json(const CostModel& model) {
    json j;
    if (const auto* m = std::get_if<MahalanobisModel>(&model)) {
        j["type"] = "mahalanobis";
        j["dim"] = m->M.rows();
        j["M"] = matrix_rows(m->M);
    } else {
        const auto& mlp = std::get<MlpModel>(model);
        j["type"] = "mlp";
        j["input_dim"] = mlp.input_dim();
        for (const Tower* t : {&mlp.phi1, &mlp.phi2}) {
            json tower = json::array();
            for (const auto& layer : t->layers) {
                tower.push_back({{"in", layer.W.cols()},
                                 {"out", layer.W.rows()},
                                 {"W", matrix_rows(layer.W)},
                                 {"b", matrix_rows(layer.b)}});
            }
            j["towers"].push_back(tower);
        }
    }
    return j.dump(2);
}

CostModel model_from_json(std::string_view text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw std::invalid_argument(std::string("model json: ") + e.what());
    }
    try {
        const std::string type = j.at("type").get<std::string>();
        if (type == "mahalanobis") {
            const Index d = j.at("dim").get<Index>();
            MahalanobisModel m{matrix_from(j.at("M"), d, d, "M")};
            m.validate();
            return m;
        }
        if (type == "mlp") {
            const auto& towers = j.at("towers");
            if (!towers.is_array() || towers.size() != 2)
                throw std::invalid_argument("model json: mlp needs two towers");
            MlpModel mlp;
            for (int k = 0; k < 2; ++k) {
                Tower& t = k == 0 ? mlp.phi1 : mlp.phi2;
                for (const auto& layer : towers[k]) {
                    const Index in = layer.at("in").get<Index>();
                    const Index out = layer.at("out").get<Index>();
                    t.layers.push_back(
                        {matrix_from(layer.at("W"), out, in, "W"), matrix_from(layer.at("b"), out, 1, "b")});
                }
            }
            mlp.validate();
            if (mlp.input_dim() != j.at("input_dim").get<Index>())
                throw std::invalid_argument("model json: input_dim does not match layers");
            return mlp;
        }
        throw std::invalid_argument("model json: unknown type '" + type + "'");
    } catch (const json::exception& e) {
        throw std::invalid_argument(std::string("model json: ") + e.what());
    }
}

void save_model(const std::filesystem::path& path, const CostModel& model) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
    out << model_to_json(model) << '\n';
}

CostModel load_model(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::stringstream buf;
    buf << in.rdbuf();
    return model_from_json(buf.str());
}

void write_history_csv(const std::filesystem::path& path, const std::vector<TrainingRow>& rows) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
    out << "step,fairness_loss,discrepancy,objective\n";
    for (const auto& r : rows)
        out << r.step << ',' << csv::format_double(r.fairnessLoss) << ','
            << csv::format_double(r.discrepancy) << ',' << csv::format_double(r.objective) << '\n';
}

}  // namespace fairot
