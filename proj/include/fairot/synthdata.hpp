#pragma once

#include "fairot/domain.hpp"

#include <cstdint>
#include <string>
#include <utility>

namespace fairot {

enum class DatasetKind { Gaussians, Circles };

std::string to_string(DatasetKind kind);
/// Accepts "gaussians" or "circles"; throws std::invalid_argument otherwise.
DatasetKind dataset_kind_from_string(const std::string& name);

struct GenSpec {
    DatasetKind dataset = DatasetKind::Gaussians;
    Index nX = 250;
    Index nY = 25;
    std::uint64_t seed = 0;

    // Gaussians: group 0 centred at xMean0 / yMean0, group 1 at xMean1 / yMean1.
    double xMean0[2] = {-2.0, 0.0};
    double xMean1[2] = {2.0, 0.0};
    double yMean0[2] = {-2.0, 0.5};
    double yMean1[2] = {2.0, 0.5};
    double gaussianVariance = 0.25;

    // Circles: group 0 is a centred Gaussian blob, group 1 a noisy ring.
    double blobVariance = 0.3;
    double radius = 2.0;
    double radialSigma = 0.05;  ///< radial noise, truncated at 3 sigma

    /// Throws std::invalid_argument.
    void validate() const;
};

struct DatasetPair {
    LabeledDataset X;
    LabeledDataset Y;
};

/// Two labels per side; group 1 takes the extra point when a count is odd. Points are ordered
/// by group.
DatasetPair gen_gaussians(const GenSpec& spec);
DatasetPair gen_circles(const GenSpec& spec);
DatasetPair generate(const GenSpec& spec);

/// Fresh draw from the same law, on a seed stream derived from (spec.seed, trial).
DatasetPair resample(const GenSpec& spec, std::uint64_t trial);

/// Deterministic 64-bit mix of two seeds.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace fairot
