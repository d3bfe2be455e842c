#include "fairot/fairness.hpp"

#include "fairot/log.hpp"

#include <cmath>
#include <limits>
#include <sstream>

namespace fairot {

std::string TargetViolation::describe() const {
    std::ostringstream out;
    switch (kind) {
        case Kind::Negative:
            out << "negative entry F(" << row << "," << col << ") = " << -magnitude;
            break;
        case Kind::RowSum:
            out << "row " << row << " sum differs from source marginal by " << magnitude;
            break;
        case Kind::ColumnSum:
            out << "column " << col << " sum differs from target marginal by " << magnitude;
            break;
        case Kind::Shape:
            out << "target shape does not match group counts";
            break;
    }
    return out.str();
}

Matrix repair_target(const Matrix& F, const Vector& p, const Vector& q, int iterations,
                     double tol) {
    Matrix G = F;
    for (int it = 0; it < iterations; ++it) {
        const Vector rows = G.rowwise().sum();
        for (Index s = 0; s < G.rows(); ++s)
            if (rows[s] > 0.0) G.row(s) *= p[s] / rows[s];
        const Vector cols = G.colwise().sum().transpose();
        for (Index w = 0; w < G.cols(); ++w)
            if (cols[w] > 0.0) G.col(w) *= q[w] / cols[w];
        const double residual =
            std::max((G.rowwise().sum() - p).cwiseAbs().maxCoeff(),
                     (G.colwise().sum().transpose() - q).cwiseAbs().maxCoeff());
        if (residual < tol) break;
    }
    return G;
}

TargetValidation validate_target(const Matrix& F, const Vector& p, const Vector& q,
                                 const ValidateOptions& opts) {
    TargetValidation result;
    auto record = [&](TargetViolation v) {
        if (result.violations.empty() || v.magnitude > result.worst.magnitude) result.worst = v;
        result.violations.push_back(v);
    };
    if (F.rows() != p.size() || F.cols() != q.size()) {
        record({TargetViolation::Kind::Shape, static_cast<int>(F.rows()),
                static_cast<int>(F.cols()), std::numeric_limits<double>::infinity()});
        return result;
    }
    bool negative = false;
    for (Index s = 0; s < F.rows(); ++s)
        for (Index w = 0; w < F.cols(); ++w)
            if (!(F(s, w) >= 0.0)) {
                negative = true;
                record({TargetViolation::Kind::Negative, static_cast<int>(s), static_cast<int>(w),
                        std::isfinite(F(s, w)) ? -F(s, w)
                                               : std::numeric_limits<double>::infinity()});
            }
    const Vector rows = F.rowwise().sum();
    for (Index s = 0; s < F.rows(); ++s) {
        const double gap = std::abs(rows[s] - p[s]);
        if (gap > kTargetTol)
            record({TargetViolation::Kind::RowSum, static_cast<int>(s), -1, gap});
    }
    const Vector cols = F.colwise().sum().transpose();
    for (Index w = 0; w < F.cols(); ++w) {
        const double gap = std::abs(cols[w] - q[w]);
        if (gap > kTargetTol)
            record({TargetViolation::Kind::ColumnSum, -1, static_cast<int>(w), gap});
    }
    result.valid = result.violations.empty();
    if (!result.valid && opts.repair && !negative) {
        Matrix G = repair_target(F, p, q, opts.repairIterations, opts.repairTol);
        const auto again = validate_target(G, p, q, {});
        if (again.valid) {
            log_warning("fairness target repaired onto empirical marginals (worst violation was " +
                        result.worst.describe() + ")");
            result.repaired = std::move(G);
        }
    }
    return result;
}

TargetValidation validate_target(const Matrix& F, const LabeledDataset& src,
                                 const LabeledDataset& dst, const ValidateOptions& opts) {
    return validate_target(F, src.group_marginal(), dst.group_marginal(), opts);
}

FairnessTarget::FairnessTarget(Matrix F, const Vector& p, const Vector& q) : F_(std::move(F)) {
    const auto check = validate_target(F_, p, q);
    if (!check.valid) throw InfeasibleError("invalid fairness target: " + check.worst.describe());
}

FairnessTarget target_from_quota(const Vector& p, const Vector& q, double quota) {
    if (p.size() != 2 || q.size() != 2)
        throw std::invalid_argument("target_from_quota: requires two groups on each side");
    if (!(quota >= 0.0 && quota <= 1.0))
        throw std::invalid_argument("target_from_quota: quota must lie in [0, 1]");
    Matrix F(2, 2);
    F << (1.0 - quota) * p[0], quota * p[0], q[0] - (1.0 - quota) * p[0], q[1] - quota * p[0];
    for (Index s = 0; s < 2; ++s)
        for (Index w = 0; w < 2; ++w)
            if (F(s, w) < 0.0) {
                std::ostringstream msg;
                msg << "target_from_quota: quota " << quota << " infeasible, entry F(" << s << ","
                    << w << ") = " << F(s, w);
                throw InfeasibleError(msg.str());
            }
    return FairnessTarget(std::move(F), p, q);
}

TransportPlan product_fair_plan(const GroupLabels& src, const GroupLabels& dst, const Matrix& F) {
    if (F.rows() != src.groups || F.cols() != dst.groups)
        throw std::invalid_argument("product_fair_plan: target shape does not match group counts");
    const FairnessTarget checked(F, src.marginal(), dst.marginal());
    const auto ns = src.counts();
    const auto mw = dst.counts();
    for (Index s = 0; s < F.rows(); ++s)
        for (Index w = 0; w < F.cols(); ++w)
            if (F(s, w) > 0.0 && (ns[s] == 0 || mw[w] == 0))
                throw InfeasibleError("product_fair_plan: group pair (" + std::to_string(s) + "," +
                                      std::to_string(w) + ") carries mass but is empty");
    Matrix P(src.size(), dst.size());
    for (Index j = 0; j < P.cols(); ++j) {
        const int w = dst.index[j];
        for (Index i = 0; i < P.rows(); ++i) {
            const int s = src.index[i];
            P(i, j) = F(s, w) / (static_cast<double>(ns[s]) * static_cast<double>(mw[w]));
        }
    }
    return TransportPlan(std::move(P));
}

TransportPlan product_fair_plan(const LabeledDataset& src, const LabeledDataset& dst,
                                const Matrix& F) {
    return product_fair_plan(src.labels(), dst.labels(), F);
}

namespace {

void require_target_shape(const Matrix& F, const GroupLabels& src, const GroupLabels& dst) {
    if (F.rows() != src.groups || F.cols() != dst.groups)
        throw std::invalid_argument("fairness target shape does not match group counts");
}

}  // namespace

double fairness_loss(const Matrix& plan, const Matrix& F, const GroupLabels& src,
                     const GroupLabels& dst) {
    require_target_shape(F, src, dst);
    return (group_coupling(plan, src, dst) - F).squaredNorm();
}

Matrix expand_blocks(const Matrix& blocks, const GroupLabels& src, const GroupLabels& dst) {
    Matrix out(src.size(), dst.size());
    for (Index j = 0; j < out.cols(); ++j) {
        const int w = dst.index[j];
        for (Index i = 0; i < out.rows(); ++i) out(i, j) = blocks(src.index[i], w);
    }
    return out;
}

Matrix fairness_loss_grad(const Matrix& plan, const Matrix& F, const GroupLabels& src,
                          const GroupLabels& dst) {
    require_target_shape(F, src, dst);
    const Matrix deviation = 2.0 * (group_coupling(plan, src, dst) - F);
    return expand_blocks(deviation, src, dst);
}

}  // namespace fairot
