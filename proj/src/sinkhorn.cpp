#include "fairot/sinkhorn.hpp"

#include "fairot/fairness.hpp"
#include "fairot/log.hpp"

#include <chrono>
#include <cmath>
#include <random>
#include <sstream>

namespace fairot {

namespace {

// Target entries below this are exact zeros for the block scaling.
constexpr double kZeroTarget = 1e-15;
// exp(-745) is the last representable double above zero.
constexpr double kLogFloor = -745.0;

struct Blocks {
    const GroupLabels* src = nullptr;
    const GroupLabels* dst = nullptr;
    Matrix target;

    bool active() const { return src != nullptr; }
    int ks() const { return src->groups; }
    int kw() const { return dst->groups; }
};

struct RawSolution {
    Matrix plan;
    DualPotentials potentials;
    bool converged = false;
    int iterations = 0;
    double residual = 0.0;
};

class OverflowError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Eigen's vectorised exp flushes to the smallest normal double instead of zero,
// which hides underflow; use the scalar routine.
template <class Derived>
typename Derived::PlainObject exp_of(const Eigen::MatrixBase<Derived>& x) {
    return x.unaryExpr([](double z) { return std::exp(z); });
}

double constraint_residual(const Matrix& plan, const Blocks& blocks) {
    double r = marginal_residual(plan);
    if (blocks.active()) {
        const Matrix coupling = group_coupling(plan, *blocks.src, *blocks.dst);
        r = std::max(r, (coupling - blocks.target).cwiseAbs().maxCoeff());
    }
    return r;
}

Matrix initial_log_scaling(const SinkhornConfig& cfg, const Blocks& blocks) {
    if (!blocks.active()) return Matrix::Zero(1, 1);
    if (cfg.warmStart && cfg.warmStart->h.rows() == blocks.ks() &&
        cfg.warmStart->h.cols() == blocks.kw())
        return cfg.warmStart->h / cfg.epsilon;
    return Matrix::Zero(blocks.ks(), blocks.kw());
}

void initial_log_potentials(const SinkhornConfig& cfg, Index n, Index m, Vector& a, Vector& b) {
    a = Vector::Zero(n);
    b = Vector::Zero(m);
    if (!cfg.warmStart) return;
    if (cfg.warmStart->f.size() == n) a = cfg.warmStart->f / cfg.epsilon;
    if (cfg.warmStart->g.size() == m) b = cfg.warmStart->g / cfg.epsilon;
}

RawSolution solve_multiplicative(const Matrix& cost, const Blocks& blocks,
                                 const SinkhornConfig& cfg) {
    const Index n = cost.rows();
    const Index m = cost.cols();
    const double eps = cfg.epsilon;
    const Matrix K = exp_of((-cost.array() / eps - 1.0).matrix());

    Vector a, b;
    initial_log_potentials(cfg, n, m, a, b);
    Vector u = exp_of(a);
    Vector v = exp_of(b);
    Matrix ell = exp_of(initial_log_scaling(cfg, blocks));
    Matrix KT = blocks.active() ? Matrix(K.cwiseProduct(expand_blocks(ell, *blocks.src, *blocks.dst)))
                                : K;

    const double rowMass = 1.0 / static_cast<double>(n);
    const double colMass = 1.0 / static_cast<double>(m);
    auto require_finite = [](const auto& x, const char* what) {
        if (!x.allFinite()) throw OverflowError(what);
    };

    RawSolution out;
    Vector Kv = KT * v;
    for (int t = 0; t < cfg.maxIter; ++t) {
        if (Kv.minCoeff() <= 0.0) throw OverflowError("row scaling denominator underflow");
        u = rowMass * Kv.cwiseInverse();
        const Vector KTu = KT.transpose() * u;
        if (KTu.minCoeff() <= 0.0) throw OverflowError("column scaling denominator underflow");
        v = colMass * KTu.cwiseInverse();
        require_finite(u, "row scaling overflow");
        require_finite(v, "column scaling overflow");

        out.iterations = t + 1;
        if (blocks.active()) {
            const Matrix Phi = group_coupling(u.asDiagonal() * K * v.asDiagonal(), *blocks.src,
                                              *blocks.dst);
            for (Index s = 0; s < ell.rows(); ++s)
                for (Index w = 0; w < ell.cols(); ++w)
                    ell(s, w) = blocks.target(s, w) < kZeroTarget ? 0.0
                                                                  : blocks.target(s, w) / Phi(s, w);
            require_finite(ell, "block scaling overflow");
            KT = K.cwiseProduct(expand_blocks(ell, *blocks.src, *blocks.dst));
            const Matrix plan = u.asDiagonal() * KT * v.asDiagonal();
            out.residual = constraint_residual(plan, blocks);
            Kv = KT * v;
        } else {
            Kv = KT * v;
            const double rows = (u.cwiseProduct(Kv).array() - rowMass).abs().maxCoeff();
            const double cols = (v.cwiseProduct(KTu).array() - colMass).abs().maxCoeff();
            out.residual = std::max(rows, cols);
        }
        if (!std::isfinite(out.residual)) throw OverflowError("non-finite residual");
        if (out.residual <= cfg.tol) {
            out.converged = true;
            break;
        }
    }

    out.plan = u.asDiagonal() * KT * v.asDiagonal();
    out.potentials.f = eps * u.array().log().matrix();
    out.potentials.g = eps * v.array().log().matrix();
    out.potentials.h = eps * ell.array().log().max(kLogFloor).matrix();
    require_finite(out.plan, "non-finite plan");
    return out;
}

// Row-wise log-sum-exp of M (n x m).
Vector row_lse(const Matrix& M) {
    const Vector mx = M.rowwise().maxCoeff();
    return mx + ((M.colwise() - mx).array().exp().rowwise().sum().log()).matrix();
}

Vector col_lse(const Matrix& M) {
    const Eigen::RowVectorXd mx = M.colwise().maxCoeff();
    return (mx.array() + (M.rowwise() - mx).array().exp().colwise().sum().log()).transpose();
}

RawSolution solve_log(const Matrix& cost, const Blocks& blocks, const SinkhornConfig& cfg) {
    const Index n = cost.rows();
    const Index m = cost.cols();
    const double eps = cfg.epsilon;
    const Matrix logK = (-cost.array() / eps - 1.0).matrix();
    const double logRow = -std::log(static_cast<double>(n));
    const double logCol = -std::log(static_cast<double>(m));

    Vector a, b;
    initial_log_potentials(cfg, n, m, a, b);
    Matrix logEll = initial_log_scaling(cfg, blocks);
    Matrix logKT = blocks.active() ? Matrix(logK + expand_blocks(logEll, *blocks.src, *blocks.dst))
                                   : logK;

    RawSolution out;
    auto log_plan = [&]() -> Matrix { return (logKT.colwise() + a).rowwise() + b.transpose(); };
    for (int t = 0; t < cfg.maxIter; ++t) {
        a = logRow - row_lse(logKT.rowwise() + b.transpose()).array();
        b = logCol - col_lse(logKT.colwise() + a).array();
        out.iterations = t + 1;
        if (blocks.active()) {
            const Matrix logUKV = (logK.colwise() + a).rowwise() + b.transpose();
            // log Phi by block-wise log-sum-exp
            Matrix blockMax = Matrix::Constant(blocks.ks(), blocks.kw(),
                                               -std::numeric_limits<double>::infinity());
            for (Index j = 0; j < m; ++j)
                for (Index i = 0; i < n; ++i) {
                    double& bm = blockMax(blocks.src->index[i], blocks.dst->index[j]);
                    bm = std::max(bm, logUKV(i, j));
                }
            Matrix blockSum = Matrix::Zero(blocks.ks(), blocks.kw());
            for (Index j = 0; j < m; ++j)
                for (Index i = 0; i < n; ++i) {
                    const int s = blocks.src->index[i];
                    const int w = blocks.dst->index[j];
                    blockSum(s, w) += std::exp(logUKV(i, j) - blockMax(s, w));
                }
            for (Index s = 0; s < logEll.rows(); ++s)
                for (Index w = 0; w < logEll.cols(); ++w) {
                    const double F = blocks.target(s, w);
                    if (F < kZeroTarget || !std::isfinite(blockMax(s, w))) {
                        logEll(s, w) = kLogFloor;
                    } else {
                        const double logPhi = blockMax(s, w) + std::log(blockSum(s, w));
                        logEll(s, w) = std::max(std::log(F) - logPhi, kLogFloor);
                    }
                }
            logKT = logK + expand_blocks(logEll, *blocks.src, *blocks.dst);
        }
        const Matrix plan = exp_of(log_plan());
        out.residual = constraint_residual(plan, blocks);
        if (!std::isfinite(out.residual)) throw NumericError("sinkhorn: non-finite residual in log domain");
        if (out.residual <= cfg.tol) {
            out.converged = true;
            break;
        }
    }
    out.plan = exp_of(log_plan());
    out.potentials.f = eps * a;
    out.potentials.g = eps * b;
    out.potentials.h = eps * logEll;
    return out;
}

SinkhornResult run(const Matrix& cost, const Blocks& blocks, const SinkhornConfig& cfg) {
    cfg.validate();
    if (cost.size() == 0) throw std::invalid_argument("sinkhorn: empty cost matrix");
    if (!cost.allFinite()) throw std::invalid_argument("sinkhorn: non-finite cost entry");
    const auto start = std::chrono::steady_clock::now();

    RawSolution raw;
    bool logDomain = cfg.uses_log_domain();
    if (!logDomain) {
        try {
            raw = solve_multiplicative(cost, blocks, cfg);
        } catch (const OverflowError& e) {
            log_warning(std::string("sinkhorn: ") + e.what() + " at epsilon " +
                        std::to_string(cfg.epsilon) + "; retrying in the log domain");
            logDomain = true;
        }
    }
    if (logDomain) raw = solve_log(cost, blocks, cfg);

    SinkhornResult result{
        raw.converged ? TransportPlan(raw.plan, std::max(kMarginalTol, cfg.tol) * (1.0 + 1e-9))
                      : TransportPlan::unconverged(raw.plan),
        std::move(raw.potentials), SolverReport{}};
    auto& rep = result.report;
    rep.converged = raw.converged;
    rep.iterations = raw.iterations;
    rep.finalResidual = raw.residual;
    rep.transportCost = transport_cost(raw.plan, cost);
    rep.objective = rep.transportCost + cfg.epsilon * entropy_term(raw.plan);
    rep.fairnessLoss =
        blocks.active() ? fairness_loss(raw.plan, blocks.target, *blocks.src, *blocks.dst) : 0.0;
    rep.logDomain = logDomain;
    rep.wallTimeSeconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return result;
}

}  // namespace

void SinkhornConfig::validate() const {
    if (!(epsilon > 0.0) || !std::isfinite(epsilon))
        throw std::invalid_argument("SinkhornConfig: epsilon must be positive");
    if (!(tol > 0.0)) throw std::invalid_argument("SinkhornConfig: tol must be positive");
    if (maxIter < 1) throw std::invalid_argument("SinkhornConfig: maxIter must be >= 1");
    if (warmStart) {
        if (!warmStart->f.allFinite() || !warmStart->g.allFinite() || !warmStart->h.allFinite())
            throw std::invalid_argument("SinkhornConfig: non-finite warm-start potentials");
    }
}

bool SinkhornConfig::uses_log_domain() const {
    switch (domain) {
        case SinkhornDomain::Log: return true;
        case SinkhornDomain::Multiplicative: return false;
        case SinkhornDomain::Auto: break;
    }
    return epsilon < 1.0;
}

SinkhornResult sinkhorn(const Matrix& cost, const SinkhornConfig& cfg) {
    return run(cost, Blocks{}, cfg);
}

SinkhornResult fair_sinkhorn(const Matrix& cost, const Matrix& F, const GroupLabels& src,
                             const GroupLabels& dst, const SinkhornConfig& cfg) {
    if (src.size() != cost.rows() || dst.size() != cost.cols())
        throw std::invalid_argument("fair_sinkhorn: label lengths do not match cost dimensions");
    if (F.rows() != src.groups || F.cols() != dst.groups)
        throw std::invalid_argument("fair_sinkhorn: target shape does not match group counts");
    const auto check = validate_target(F, src.marginal(), dst.marginal());
    if (!check.valid) throw InfeasibleError("fair_sinkhorn: " + check.worst.describe());
    const auto ns = src.counts();
    const auto mw = dst.counts();
    for (Index s = 0; s < F.rows(); ++s)
        for (Index w = 0; w < F.cols(); ++w)
            if (F(s, w) >= kZeroTarget && (ns[s] == 0 || mw[w] == 0)) {
                std::ostringstream msg;
                msg << "fair_sinkhorn: group pair (" << s << "," << w << ") has target " << F(s, w)
                    << " but no members";
                throw InfeasibleError(msg.str());
            }
    return run(cost, Blocks{&src, &dst, F}, cfg);
}

std::vector<std::pair<Index, Index>> sample_matching(const Matrix& plan, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::vector<std::pair<Index, Index>> out;
    out.reserve(static_cast<std::size_t>(plan.rows()));
    std::vector<double> weights(static_cast<std::size_t>(plan.cols()));
    for (Index i = 0; i < plan.rows(); ++i) {
        double total = 0.0;
        for (Index j = 0; j < plan.cols(); ++j) {
            if (!(plan(i, j) >= 0.0)) throw std::invalid_argument("sample_matching: negative entry");
            weights[j] = plan(i, j);
            total += plan(i, j);
        }
        if (!(total > 0.0))
            throw std::invalid_argument("sample_matching: row " + std::to_string(i) +
                                        " has no mass");
        std::discrete_distribution<Index> pick(weights.begin(), weights.end());
        out.emplace_back(i, pick(rng));
    }
    return out;
}

}  // namespace fairot
