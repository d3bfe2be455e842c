#include "fairot/domain.hpp"

#include "fairot/csv.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

namespace fairot {

namespace {

void require_same_shape(const Matrix& a, const Matrix& b, const char* what) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        std::ostringstream msg;
        msg << what << ": shape mismatch " << a.rows() << "x" << a.cols() << " vs " << b.rows()
            << "x" << b.cols();
        throw std::invalid_argument(msg.str());
    }
}

}  // namespace

GroupLabels::GroupLabels(std::vector<int> idx, int k) : index(std::move(idx)), groups(k) {
    if (groups < 1) throw std::invalid_argument("GroupLabels: group count must be >= 1");
    for (int label : index) {
        if (label < 0 || label >= groups)
            throw std::invalid_argument("GroupLabels: label " + std::to_string(label) +
                                        " outside [0, " + std::to_string(groups) + ")");
    }
}

std::vector<Index> GroupLabels::counts() const {
    std::vector<Index> c(groups, 0);
    for (int label : index) ++c[label];
    return c;
}

Vector GroupLabels::marginal() const {
    Vector p = Vector::Zero(groups);
    if (index.empty()) return p;
    const auto c = counts();
    for (int k = 0; k < groups; ++k)
        p[k] = static_cast<double>(c[k]) / static_cast<double>(index.size());
    return p;
}

LabeledDataset::LabeledDataset(Matrix points, std::vector<int> labels, int groups)
    : points_(std::move(points)), labels_(std::move(labels), groups) {
    if (points_.rows() < 1) throw std::invalid_argument("LabeledDataset: need at least one point");
    if (points_.cols() < 1) throw std::invalid_argument("LabeledDataset: dimension must be >= 1");
    if (labels_.size() != points_.rows())
        throw std::invalid_argument("LabeledDataset: label count does not match point count");
    if (!points_.allFinite()) throw std::invalid_argument("LabeledDataset: non-finite coordinate");
}

CostMatrix::CostMatrix(Matrix values) : values_(std::move(values)) {
    if (!values_.allFinite()) throw std::invalid_argument("CostMatrix: non-finite entry");
    if (values_.size() > 0 && values_.minCoeff() < 0.0)
        throw std::invalid_argument("CostMatrix: negative entry");
}

double marginal_residual(const Matrix& plan) {
    const double n = static_cast<double>(plan.rows());
    const double m = static_cast<double>(plan.cols());
    const double rows = (plan.rowwise().sum().array() - 1.0 / n).abs().maxCoeff();
    const double cols = (plan.colwise().sum().array() - 1.0 / m).abs().maxCoeff();
    return std::max(rows, cols);
}

TransportPlan::TransportPlan(Matrix values, double tol) : values_(std::move(values)) {
    if (values_.size() == 0) throw std::invalid_argument("TransportPlan: empty matrix");
    if (!values_.allFinite()) throw std::invalid_argument("TransportPlan: non-finite entry");
    if (values_.minCoeff() < 0.0) throw std::invalid_argument("TransportPlan: negative entry");
    const double residual = fairot::marginal_residual(values_);
    if (residual > tol) {
        std::ostringstream msg;
        msg << "TransportPlan: marginal residual " << residual << " exceeds tolerance " << tol;
        throw std::invalid_argument(msg.str());
    }
}

TransportPlan::TransportPlan(Matrix values, NoCheck) : values_(std::move(values)) {
    if (!values_.allFinite()) throw NumericError("TransportPlan: non-finite entry");
    if (values_.size() > 0 && values_.minCoeff() < 0.0)
        throw NumericError("TransportPlan: negative entry");
}

TransportPlan TransportPlan::unconverged(Matrix values) { return {std::move(values), NoCheck{}}; }

double TransportPlan::marginal_residual() const { return fairot::marginal_residual(values_); }

Matrix group_coupling(const Matrix& plan, const GroupLabels& src, const GroupLabels& dst) {
    if (src.size() != plan.rows() || dst.size() != plan.cols())
        throw std::invalid_argument("group_coupling: label lengths do not match plan dimensions");
    Matrix out = Matrix::Zero(src.groups, dst.groups);
    for (Index j = 0; j < plan.cols(); ++j) {
        const int w = dst.index[j];
        for (Index i = 0; i < plan.rows(); ++i) out(src.index[i], w) += plan(i, j);
    }
    return out;
}

double transport_cost(const Matrix& plan, const Matrix& cost) {
    require_same_shape(plan, cost, "transport_cost");
    return plan.cwiseProduct(cost).sum();
}

double entropy_term(const Matrix& plan) {
    double total = 0.0;
    for (Index j = 0; j < plan.cols(); ++j)
        for (Index i = 0; i < plan.rows(); ++i) {
            const double p = plan(i, j);
            if (p > 0.0) total += p * std::log(p);
        }
    return total;
}

CostMatrix squared_euclidean_cost(const Matrix& X, const Matrix& Y) {
    if (X.cols() != Y.cols())
        throw std::invalid_argument("squared_euclidean_cost: dimension mismatch");
    Matrix c = (-2.0 * X * Y.transpose()).colwise() + X.rowwise().squaredNorm();
    c.rowwise() += Y.rowwise().squaredNorm().transpose();
    // the expansion can dip below zero by rounding for coincident points
    return CostMatrix(c.cwiseMax(0.0));
}

LabeledDataset read_dataset_csv(const std::filesystem::path& path) {
    const auto table = csv::read(path, /*header=*/true);
    if (table.header.size() < 2 || table.header.back() != "label")
        throw std::invalid_argument(path.string() + ": expected header x1,...,xd,label");
    const Index d = static_cast<Index>(table.header.size()) - 1;
    for (Index k = 0; k < d; ++k) {
        if (table.header[k] != "x" + std::to_string(k + 1))
            throw std::invalid_argument(path.string() + ": bad column name '" + table.header[k] +
                                        "'");
    }
    Matrix pts(static_cast<Index>(table.rows.size()), d);
    std::vector<int> labels;
    labels.reserve(table.rows.size());
    int groups = 0;
    for (std::size_t r = 0; r < table.rows.size(); ++r) {
        const auto& row = table.rows[r];
        if (static_cast<Index>(row.size()) != d + 1)
            throw std::invalid_argument(path.string() + ": row " + std::to_string(r + 2) +
                                        " has the wrong number of fields");
        for (Index k = 0; k < d; ++k) pts(static_cast<Index>(r), k) = row[k];
        const double raw = row[d];
        if (raw != std::floor(raw) || raw < 1)
            throw std::invalid_argument(path.string() + ": labels must be integers >= 1");
        const int label = static_cast<int>(raw);
        groups = std::max(groups, label);
        labels.push_back(label - 1);
    }
    return {std::move(pts), std::move(labels), groups};
}

void write_dataset_csv(const std::filesystem::path& path, const LabeledDataset& data) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
    for (Index k = 0; k < data.dim(); ++k) out << 'x' << (k + 1) << ',';
    out << "label\n";
    for (Index i = 0; i < data.size(); ++i) {
        for (Index k = 0; k < data.dim(); ++k) out << csv::format_double(data.points()(i, k)) << ',';
        out << (data.labels().index[i] + 1) << '\n';
    }
}

Matrix read_matrix_csv(const std::filesystem::path& path) {
    const auto table = csv::read(path, /*header=*/false);
    if (table.rows.empty()) throw std::invalid_argument(path.string() + ": empty matrix file");
    const auto cols = table.rows.front().size();
    Matrix m(static_cast<Index>(table.rows.size()), static_cast<Index>(cols));
    for (std::size_t r = 0; r < table.rows.size(); ++r) {
        if (table.rows[r].size() != cols)
            throw std::invalid_argument(path.string() + ": ragged matrix row " +
                                        std::to_string(r + 1));
        for (std::size_t c = 0; c < cols; ++c)
            m(static_cast<Index>(r), static_cast<Index>(c)) = table.rows[r][c];
    }
    return m;
}

void write_matrix_csv(const std::filesystem::path& path, const Matrix& m) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
    for (Index i = 0; i < m.rows(); ++i) {
        for (Index j = 0; j < m.cols(); ++j) {
            if (j) out << ',';
            out << csv::format_double(m(i, j));
        }
        out << '\n';
    }
}

}  // namespace fairot
