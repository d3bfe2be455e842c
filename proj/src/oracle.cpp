#include "fairot/oracle.hpp"

#include "fairot/sinkhorn.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <random>

namespace fairot::oracle {

namespace {

using Real = long double;

struct DualProblem {
    const Matrix& cost;
    Real eps;
    // Block structure; a single block when unconstrained.
    std::vector<int> rowGroup;
    std::vector<int> colGroup;
    int ks = 1;
    int kw = 1;
    std::vector<Real> target;  // ks*kw, row-major; ignored when !fair
    bool fair = false;

    Index n() const { return cost.rows(); }
    Index m() const { return cost.cols(); }
    std::size_t dim() const {
        return static_cast<std::size_t>(n() + m()) + (fair ? static_cast<std::size_t>(ks * kw) : 0);
    }

    Real entry(const std::vector<Real>& x, Index i, Index j) const {
        Real z = x[i] + x[n() + j] - static_cast<Real>(cost(i, j));
        if (fair) z += x[n() + m() + rowGroup[i] * kw + colGroup[j]];
        return std::exp(z / eps - 1.0L);
    }

    // Dual value and gradient.
    Real evaluate(const std::vector<Real>& x, std::vector<Real>* grad) const {
        const Real rowMass = 1.0L / static_cast<Real>(n());
        const Real colMass = 1.0L / static_cast<Real>(m());
        Real value = 0.0L;
        for (Index i = 0; i < n(); ++i) value += x[i] * rowMass;
        for (Index j = 0; j < m(); ++j) value += x[n() + j] * colMass;
        if (fair)
            for (int k = 0; k < ks * kw; ++k) value += x[n() + m() + k] * target[k];
        if (grad) {
            grad->assign(dim(), 0.0L);
            for (Index i = 0; i < n(); ++i) (*grad)[i] = rowMass;
            for (Index j = 0; j < m(); ++j) (*grad)[n() + j] = colMass;
            if (fair)
                for (int k = 0; k < ks * kw; ++k) (*grad)[n() + m() + k] = target[k];
        }
        Real mass = 0.0L;
        for (Index i = 0; i < n(); ++i)
            for (Index j = 0; j < m(); ++j) {
                const Real p = entry(x, i, j);
                mass += p;
                if (grad) {
                    (*grad)[i] -= p;
                    (*grad)[n() + j] -= p;
                    if (fair) (*grad)[n() + m() + rowGroup[i] * kw + colGroup[j]] -= p;
                }
            }
        return value - eps * mass;
    }
};

DualAscentResult ascend(const DualProblem& prob, const DualAscentConfig& cfg) {
    if (prob.n() > 32 || prob.m() > 32)
        throw std::invalid_argument("oracle: instances are limited to 32 x 32");
    if (!(cfg.epsilon > 0.0)) throw std::invalid_argument("oracle: epsilon must be positive");

    using RealMatrix = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic>;
    using RealVector = Eigen::Matrix<Real, Eigen::Dynamic, 1>;
    const std::size_t dim = prob.dim();
    std::vector<Real> x(dim, 0.0L);
    std::vector<Real> grad, trial(dim);
    Real value = prob.evaluate(x, &grad);
    DualAscentResult out;
    auto inf_norm = [](const std::vector<Real>& v) {
        Real r = 0.0L;
        for (Real e : v) r = std::max(r, std::fabs(e));
        return r;
    };
    Real gnorm = inf_norm(grad);
    RealMatrix curvature(dim, dim);
    RealVector rhs(dim);
    for (out.iterations = 0; out.iterations < cfg.maxIter; ++out.iterations) {
        if (gnorm <= cfg.gradTol) {
            out.converged = true;
            break;
        }
        // Negated Hessian: (1/eps) sum_ij P_ij v_ij v_ij^T, with v_ij the indicator of the
        // coordinates entry (i, j) depends on. The ridge handles the gauge directions.
        curvature.setZero();
        const Index n = prob.n();
        const Index m = prob.m();
        for (Index i = 0; i < n; ++i)
            for (Index j = 0; j < m; ++j) {
                const Real p = prob.entry(x, i, j) / prob.eps;
                std::size_t idx[3] = {static_cast<std::size_t>(i), static_cast<std::size_t>(n + j), 0};
                int count = 2;
                if (prob.fair)
                    idx[count++] = static_cast<std::size_t>(n + m) +
                                   static_cast<std::size_t>(prob.rowGroup[i] * prob.kw + prob.colGroup[j]);
                for (int a = 0; a < count; ++a)
                    for (int b = 0; b < count; ++b) curvature(idx[a], idx[b]) += p;
            }
        const Real ridge = 1e-14L * std::max(curvature.diagonal().maxCoeff(), 1.0L);
        curvature.diagonal().array() += ridge;
        for (std::size_t k = 0; k < dim; ++k) rhs[k] = grad[k];
        RealVector direction = curvature.ldlt().solve(rhs);
        Real slope = direction.dot(rhs);
        if (!std::isfinite(slope) || slope <= 0.0L) {
            direction = rhs;
            slope = rhs.squaredNorm();
        }

        // Near the optimum the value increase drops below long-double resolution, so a step
        // that shrinks the gradient is accepted as well.
        Real step = 1.0L;
        std::vector<Real> trialGrad;
        Real trialValue = value;
        while (true) {
            for (std::size_t k = 0; k < dim; ++k) trial[k] = x[k] + step * direction[k];
            trialValue = prob.evaluate(trial, &trialGrad);
            if (std::isfinite(trialValue) && (trialValue >= value + 1e-4L * step * slope ||
                                              inf_norm(trialGrad) < 0.5L * gnorm))
                break;
            step *= 0.5L;
            if (step < 1e-30L) break;
        }
        x.swap(trial);
        value = trialValue;
        grad.swap(trialGrad);
        gnorm = inf_norm(grad);
    }
    out.gradNorm = static_cast<double>(gnorm);

    const Index n = prob.n();
    const Index m = prob.m();
    out.plan.resize(n, m);
    for (Index i = 0; i < n; ++i)
        for (Index j = 0; j < m; ++j) out.plan(i, j) = static_cast<double>(prob.entry(x, i, j));
    out.f.resize(n);
    out.g.resize(m);
    for (Index i = 0; i < n; ++i) out.f[i] = static_cast<double>(x[i]);
    for (Index j = 0; j < m; ++j) out.g[j] = static_cast<double>(x[n + j]);
    out.h = Matrix::Zero(prob.ks, prob.kw);
    if (prob.fair)
        for (int s = 0; s < prob.ks; ++s)
            for (int w = 0; w < prob.kw; ++w)
                out.h(s, w) = static_cast<double>(x[n + m + s * prob.kw + w]);
    return out;
}

}  // namespace

DualAscentResult dual_ascent_entropic(const Matrix& cost, const DualAscentConfig& cfg) {
    DualProblem prob{cost, static_cast<Real>(cfg.epsilon), {}, {}, 1, 1, {}, false};
    prob.rowGroup.assign(static_cast<std::size_t>(cost.rows()), 0);
    prob.colGroup.assign(static_cast<std::size_t>(cost.cols()), 0);
    return ascend(prob, cfg);
}

DualAscentResult dual_ascent_fair(const Matrix& cost, const Matrix& F, const GroupLabels& src,
                                  const GroupLabels& dst, const DualAscentConfig& cfg) {
    if (src.size() != cost.rows() || dst.size() != cost.cols())
        throw std::invalid_argument("oracle: label lengths do not match cost dimensions");
    if (F.rows() != src.groups || F.cols() != dst.groups)
        throw std::invalid_argument("oracle: target shape does not match group counts");
    DualProblem prob{cost, static_cast<Real>(cfg.epsilon), {}, {}, 1, 1, {}, false};
    prob.rowGroup = src.index;
    prob.colGroup = dst.index;
    prob.ks = src.groups;
    prob.kw = dst.groups;
    prob.fair = true;
    for (Index s = 0; s < F.rows(); ++s)
        for (Index w = 0; w < F.cols(); ++w) prob.target.push_back(static_cast<Real>(F(s, w)));
    return ascend(prob, cfg);
}

Vector finite_diff(const std::function<double(const Vector&)>& fn, const Vector& point,
                   double step) {
    if (!(step > 0.0)) throw std::invalid_argument("finite_diff: step must be positive");
    Vector grad(point.size());
    Vector x = point;
    for (Index k = 0; k < point.size(); ++k) {
        x[k] = point[k] + step;
        const double up = fn(x);
        x[k] = point[k] - step;
        const double down = fn(x);
        x[k] = point[k];
        grad[k] = (up - down) / (2.0 * step);
    }
    return grad;
}

Matrix finite_diff(const std::function<double(const Matrix&)>& fn, const Matrix& point,
                   double step) {
    if (!(step > 0.0)) throw std::invalid_argument("finite_diff: step must be positive");
    Matrix grad(point.rows(), point.cols());
    Matrix x = point;
    for (Index j = 0; j < point.cols(); ++j)
        for (Index i = 0; i < point.rows(); ++i) {
            x(i, j) = point(i, j) + step;
            const double up = fn(x);
            x(i, j) = point(i, j) - step;
            const double down = fn(x);
            x(i, j) = point(i, j);
            grad(i, j) = (up - down) / (2.0 * step);
        }
    return grad;
}

double relative_error(const Matrix& a, const Matrix& b, double floor) {
    return (a - b).norm() / std::max({a.norm(), b.norm(), floor});
}

std::vector<AgreementRow> run_agreement_suite(const AgreementSuite& suite) {
    std::vector<AgreementRow> rows;
    std::mt19937_64 rng(suite.seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    auto random_labels = [&](Index size) {
        std::vector<int> idx(static_cast<std::size_t>(size));
        const int groups = size >= 2 ? 2 : 1;
        for (auto& l : idx) l = static_cast<int>(rng() % static_cast<std::uint64_t>(groups));
        if (groups == 2) {  // both groups present
            idx[0] = 0;
            idx[1] = 1;
            std::shuffle(idx.begin(), idx.end(), rng);
        }
        return GroupLabels(std::move(idx), groups);
    };

    for (const auto& [n, m] : suite.sizes)
        for (double eps : suite.epsilons)
            for (int inst = 0; inst < suite.instances; ++inst) {
                Matrix C(n, m);
                for (Index j = 0; j < m; ++j)
                    for (Index i = 0; i < n; ++i) C(i, j) = 2.0 * unit(rng);
                const GroupLabels src = random_labels(n);
                const GroupLabels dst = random_labels(m);
                const Matrix F = src.marginal() * dst.marginal().transpose();

                SinkhornConfig cfg;
                cfg.epsilon = eps;
                cfg.tol = 1e-12;
                cfg.maxIter = 100000;
                const DualAscentConfig ocfg{eps};

                const auto vanilla = sinkhorn(C, cfg);
                const auto vanillaRef = dual_ascent_entropic(C, ocfg);
                rows.push_back({"sinkhorn", n, m, eps, inst,
                                (vanilla.plan.values() - vanillaRef.plan).norm(),
                                vanillaRef.converged});

                const auto fair = fair_sinkhorn(C, F, src, dst, cfg);
                const auto fairRef = dual_ascent_fair(C, F, src, dst, ocfg);
                rows.push_back({"fair_sinkhorn", n, m, eps, inst,
                                (fair.plan.values() - fairRef.plan).norm(), fairRef.converged});
            }
    return rows;
}

}  // namespace fairot::oracle
