#include "fairot/penalized.hpp"

#include "fairot/csv.hpp"
#include "fairot/fairness.hpp"
#include "fairot/log.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>

namespace fairot {

namespace {

double directional_slope(const Matrix& gradient, const Matrix& delta) {
    double slope = 0.0;
    for (Index j = 0; j < delta.cols(); ++j)
        for (Index i = 0; i < delta.rows(); ++i) {
            const double d = delta(i, j);
            if (d == 0.0) continue;
            slope += gradient(i, j) * d;
        }
    return slope;
}

// Gradient of the penalized objective; -inf where the plan vanishes.
Matrix objective_gradient(const Matrix& plan, const Matrix& cost, double eps, double lambda,
                          const Matrix& F, const GroupLabels& src, const GroupLabels& dst) {
    Matrix grad = cost + lambda * fairness_loss_grad(plan, F, src, dst);
    for (Index j = 0; j < plan.cols(); ++j)
        for (Index i = 0; i < plan.rows(); ++i) {
            const double p = plan(i, j);
            grad(i, j) += p > 0.0 ? eps * (1.0 + std::log(p))
                                  : -std::numeric_limits<double>::infinity();
        }
    return grad;
}

}  // namespace

ArmijoResult armijo_step(const Matrix& plan, const Matrix& direction,
                         const std::function<double(const Matrix&)>& objective,
                         const Matrix& gradient, const ArmijoConfig& cfg) {
    if (plan.rows() != direction.rows() || plan.cols() != direction.cols() ||
        plan.rows() != gradient.rows() || plan.cols() != gradient.cols())
        throw std::invalid_argument("armijo_step: shape mismatch");
    if (!(cfg.c1 > 0.0 && cfg.c1 < 1.0) || !(cfg.beta > 0.0 && cfg.beta < 1.0) || cfg.kmax < 0)
        throw std::invalid_argument("armijo_step: invalid line-search parameters");

    const Matrix delta = direction - plan;
    ArmijoResult out;
    out.slope = directional_slope(gradient, delta);
    const double f0 = objective(plan);

    // A vanishing plan entry gives a one-sided slope of -inf; the sufficient-decrease bound is
    // then vacuous and plain decrease is required instead.
    const bool unbounded = out.slope == -std::numeric_limits<double>::infinity();
    double alpha = 1.0;
    for (int k = 0; k <= cfg.kmax; ++k) {
        const double value = objective(plan + alpha * delta);
        out.trials = k + 1;
        if (unbounded ? value < f0 : value <= f0 + cfg.c1 * alpha * out.slope) {
            out.alpha = alpha;
            out.value = value;
            return out;
        }
        if (k < cfg.kmax) alpha *= cfg.beta;
    }
    log_warning("armijo_step: no step met the sufficient-decrease condition; using beta^kmax");
    out.alpha = alpha;
    out.value = objective(plan + alpha * delta);
    out.satisfied = false;
    return out;
}

void GcgConfig::validate() const {
    if (!(lambda >= 0.0) || !std::isfinite(lambda))
        throw std::invalid_argument("penalized_gcg: lambda must be finite and >= 0");
    if (numIterMax < 0) throw std::invalid_argument("penalized_gcg: numIterMax must be >= 0");
    if (numInnerIterMax < 1)
        throw std::invalid_argument("penalized_gcg: numInnerIterMax must be >= 1");
    if (!(stopThr > 0.0) || !(stopThr2 > 0.0))
        throw std::invalid_argument("penalized_gcg: stopping thresholds must be positive");
    sinkhorn.validate();
}

double penalized_objective(const Matrix& plan, const Matrix& cost, double epsilon, double lambda,
                           const Matrix& F, const GroupLabels& src, const GroupLabels& dst) {
    return transport_cost(plan, cost) + epsilon * entropy_term(plan) +
           lambda * fairness_loss(plan, F, src, dst);
}

GcgResult penalized_gcg(const Matrix& cost, const Matrix& F, const GroupLabels& src,
                        const GroupLabels& dst, const GcgConfig& cfg) {
    cfg.validate();
    if (src.size() != cost.rows() || dst.size() != cost.cols())
        throw std::invalid_argument("penalized_gcg: label lengths do not match cost dimensions");
    if (F.rows() != src.groups || F.cols() != dst.groups)
        throw std::invalid_argument("penalized_gcg: target shape does not match group counts");
    const auto start = std::chrono::steady_clock::now();
    const double eps = cfg.sinkhorn.epsilon;
    const double lambda = cfg.lambda;

    SinkhornConfig inner = cfg.sinkhorn;
    inner.maxIter = cfg.numInnerIterMax;

    auto solve_inner = [&](const Matrix& c) {
        try {
            SinkhornResult r = sinkhorn(c, inner);
            // keep later solves in the log domain once one has needed it
            if (r.report.logDomain) inner.domain = SinkhornDomain::Log;
            return r;
        } catch (const std::exception& e) {
            throw NumericError(std::string("penalized_gcg: inner Sinkhorn failed: ") + e.what());
        }
    };
    auto objective = [&](const Matrix& P) {
        return penalized_objective(P, cost, eps, lambda, F, src, dst);
    };
    auto record = [&](int iter, const Matrix& P, double value, double alpha) {
        return GcgTraceRow{iter, value, transport_cost(P, cost), fairness_loss(P, F, src, dst),
                           alpha};
    };

    SinkhornResult first = solve_inner(cost);
    bool logDomain = first.report.logDomain;
    double innerTol = first.report.converged ? 0.0 : first.report.finalResidual;
    Matrix plan = first.plan.values();
    if (cfg.warmStartInner) inner.warmStart = first.potentials;

    GcgResult out;
    double value = objective(plan);
    out.trace.push_back(record(0, plan, value, 0.0));
    bool stopped = false;
    int t = 0;
    for (; t < cfg.numIterMax; ++t) {
        const Matrix linearized = cost + lambda * fairness_loss_grad(plan, F, src, dst);
        SinkhornResult dir = solve_inner(linearized);
        logDomain = logDomain || dir.report.logDomain;
        if (!dir.report.converged) innerTol = std::max(innerTol, dir.report.finalResidual);
        if (cfg.warmStartInner) inner.warmStart = dir.potentials;

        const Matrix grad = objective_gradient(plan, cost, eps, lambda, F, src, dst);
        if (dir.report.converged && directional_slope(grad, dir.plan.values() - plan) >= 0.0) {
            // the direction is not a descent direction: stationary up to inner-solve accuracy
            stopped = true;
            break;
        }
        const ArmijoResult step =
            armijo_step(plan, dir.plan.values(), objective, grad, cfg.armijo);
        if (!(step.value <= value)) {
            // no descent available from this direction
            stopped = true;
            break;
        }
        plan += step.alpha * (dir.plan.values() - plan);
        const double previous = value;
        value = step.value;
        out.trace.push_back(record(t + 1, plan, value, step.alpha));
        const double decrease = previous - value;
        if (decrease < cfg.stopThr2 || decrease < cfg.stopThr * std::abs(value)) {
            ++t;
            stopped = true;
            break;
        }
    }

    const double planTol = std::max({kMarginalTol, cfg.sinkhorn.tol, innerTol}) * (1.0 + 1e-9);
    out.plan = marginal_residual(plan) <= planTol ? TransportPlan(plan, planTol)
                                                  : TransportPlan::unconverged(plan);
    auto& rep = out.report;
    rep.converged = stopped;
    rep.iterations = t;
    rep.finalResidual = marginal_residual(plan);
    rep.objective = value;
    rep.transportCost = transport_cost(plan, cost);
    rep.fairnessLoss = fairness_loss(plan, F, src, dst);
    rep.logDomain = logDomain;
    rep.wallTimeSeconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return out;
}

void write_trace_csv(const std::filesystem::path& path, const std::vector<GcgTraceRow>& trace) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
    out << "iter,objective,transport_cost,fairness_loss,alpha\n";
    for (const auto& r : trace)
        out << r.iter << ',' << csv::format_double(r.objective) << ','
            << csv::format_double(r.transportCost) << ',' << csv::format_double(r.fairnessLoss)
            << ',' << csv::format_double(r.alpha) << '\n';
}

}  // namespace fairot
