#include "fairot/synthdata.hpp"

#include <cmath>
#include <numbers>
#include <random>

namespace fairot {

namespace {

using Rng = std::mt19937_64;

std::vector<int> balanced(Index n) {
    std::vector<int> labels(static_cast<std::size_t>(n), 1);
    std::fill(labels.begin(), labels.begin() + n / 2, 0);
    return labels;
}

Matrix gaussian_points(const std::vector<int>& labels, const double* mean0, const double* mean1,
                       double variance, Rng& rng) {
    std::normal_distribution<double> normal(0.0, std::sqrt(variance));
    Matrix pts(static_cast<Index>(labels.size()), 2);
    for (Index i = 0; i < pts.rows(); ++i) {
        const double* mean = labels[i] == 0 ? mean0 : mean1;
        pts(i, 0) = mean[0] + normal(rng);
        pts(i, 1) = mean[1] + normal(rng);
    }
    return pts;
}

Matrix circle_points(const std::vector<int>& labels, const GenSpec& spec, Rng& rng) {
    std::normal_distribution<double> blob(0.0, std::sqrt(spec.blobVariance));
    std::normal_distribution<double> radial(0.0, spec.radialSigma);
    std::uniform_real_distribution<double> angle(0.0, 2.0 * std::numbers::pi);
    Matrix pts(static_cast<Index>(labels.size()), 2);
    for (Index i = 0; i < pts.rows(); ++i) {
        if (labels[i] == 0) {
            pts(i, 0) = blob(rng);
            pts(i, 1) = blob(rng);
            continue;
        }
        double noise = radial(rng);
        while (std::abs(noise) > 3.0 * spec.radialSigma) noise = radial(rng);
        const double r = spec.radius + noise;
        const double theta = angle(rng);
        pts(i, 0) = r * std::cos(theta);
        pts(i, 1) = r * std::sin(theta);
    }
    return pts;
}

}  // namespace

std::string to_string(DatasetKind kind) {
    return kind == DatasetKind::Gaussians ? "gaussians" : "circles";
}

DatasetKind dataset_kind_from_string(const std::string& name) {
    if (name == "gaussians") return DatasetKind::Gaussians;
    if (name == "circles") return DatasetKind::Circles;
    throw std::invalid_argument("unknown dataset '" + name + "' (expected gaussians or circles)");
}

void GenSpec::validate() const {
    if (nX < 2 || nY < 2) throw std::invalid_argument("GenSpec: sample counts must be >= 2");
    if (!(gaussianVariance > 0.0) || !(blobVariance > 0.0))
        throw std::invalid_argument("GenSpec: variances must be positive");
    if (!(radius > 0.0) || !(radialSigma >= 0.0))
        throw std::invalid_argument("GenSpec: radius must be positive and noise non-negative");
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
    // splitmix64 finalizer over the combined words
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

DatasetPair gen_gaussians(const GenSpec& spec) {
    spec.validate();
    Rng rx(derive_seed(spec.seed, 0));
    Rng ry(derive_seed(spec.seed, 1));
    auto lx = balanced(spec.nX);
    auto ly = balanced(spec.nY);
    Matrix X = gaussian_points(lx, spec.xMean0, spec.xMean1, spec.gaussianVariance, rx);
    Matrix Y = gaussian_points(ly, spec.yMean0, spec.yMean1, spec.gaussianVariance, ry);
    return {LabeledDataset(std::move(X), std::move(lx), 2),
            LabeledDataset(std::move(Y), std::move(ly), 2)};
}

DatasetPair gen_circles(const GenSpec& spec) {
    spec.validate();
    Rng rx(derive_seed(spec.seed, 0));
    Rng ry(derive_seed(spec.seed, 1));
    auto lx = balanced(spec.nX);
    auto ly = balanced(spec.nY);
    Matrix X = circle_points(lx, spec, rx);
    Matrix Y = circle_points(ly, spec, ry);
    return {LabeledDataset(std::move(X), std::move(lx), 2),
            LabeledDataset(std::move(Y), std::move(ly), 2)};
}

DatasetPair generate(const GenSpec& spec) {
    return spec.dataset == DatasetKind::Gaussians ? gen_gaussians(spec) : gen_circles(spec);
}

DatasetPair resample(const GenSpec& spec, std::uint64_t trial) {
    GenSpec fresh = spec;
    fresh.seed = derive_seed(spec.seed ^ 0x5eed5eed5eed5eedULL, trial);
    return generate(fresh);
}

}  // namespace fairot
