#pragma once

#include "fairot/costlearn.hpp"
#include "fairot/penalized.hpp"
#include "fairot/sinkhorn.hpp"
#include "fairot/synthdata.hpp"

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string_view>
#include <string>
#include <vector>

namespace fairot {

/// Malformed or inconsistent experiment configuration.
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

enum class Method { Vanilla, FairSinkhorn, Penalized, CostlearnMahalanobis, CostlearnMlp };

std::string to_string(Method method);
/// Throws ConfigError for unknown names.
Method method_from_string(const std::string& name);

/// [[0.20, 0.30], [0.28, 0.22]]: rows are student groups, columns school groups.
Matrix default_fairness_target();

/// n values 10^lo ... 10^hi, evenly spaced in the exponent (a single value 10^lo when n == 1).
std::vector<double> logspace(double lo, double hi, int n);

/// The grid holds epsilon for vanilla and fair_sinkhorn, lambda for the other methods.
struct SweepSpec {
    Method method = Method::Penalized;
    std::vector<double> grid;
    GenSpec dataset;
    Matrix target;
    /// Project the target onto the sample's group marginals when it does not couple them.
    bool repairTarget = true;
    double epsilon = 1.0;  ///< regularization of the lambda-indexed methods
    SinkhornConfig sinkhorn;
    GcgConfig gcg;
    BilevelConfig bilevel;
    PretrainConfig pretrain;
    std::uint64_t seed = 0;  ///< master seed; replaces dataset.seed
    int jobs = 1;
    std::filesystem::path outDir;  ///< empty: nothing is persisted

    SweepSpec();
    /// Throws ConfigError.
    void validate() const;
};

struct TradeoffRecord {
    std::string method;
    double gridValue = 0.0;
    /// Transport cost (under the base cost) minus that of the vanilla plan at the same epsilon.
    double transportCostGap = 0.0;
    double fairnessLoss = 0.0;
    int iterations = 0;
    double wallTimeSeconds = 0.0;
    std::uint64_t seed = 0;
    bool ok = true;
    std::string note;  ///< failure message when !ok
};

/// Columns of records.csv. Wall time is kept out of it so that reruns are byte-identical.
inline constexpr const char* kRecordsHeader =
    "method,grid_value,transport_cost_gap,fairness_loss,iterations,seed,status";

std::string format_record(const TradeoffRecord& r);
std::vector<TradeoffRecord> read_records_csv(const std::filesystem::path& path);

/// Solves one grid point. Solver failures are reported through ok/note, not thrown.
TradeoffRecord run_point(const SweepSpec& spec, double gridValue);

/// One record per grid point, in grid order. With an output directory, records are appended to
/// records.csv as soon as every earlier point is done, and points already present are reused.
/// Also writes config.json, plots/ and manifest.json. Throws ConfigError when the directory
/// holds a different configuration.
std::vector<TradeoffRecord> run_sweep(const SweepSpec& spec);

std::string spec_to_json(const SweepSpec& spec);
/// Unknown keys are rejected; missing keys keep their defaults.
SweepSpec spec_from_json(std::string_view text);
SweepSpec load_spec(const std::filesystem::path& path);

/// 64-bit FNV-1a of the file contents, as 16 hex digits.
std::string file_hash(const std::filesystem::path& path);

struct ReusabilitySpec {
    GenSpec train;  ///< defaults to 1000 / 100
    GenSpec test;   ///< defaults to 500 / 50
    int trials = 10;
    std::uint64_t seed = 0;
    Matrix target;
    double epsilon = 1.0;
    double penalizedLambda = 90.0;
    double mahalanobisLambda = 1000.0;
    double mahalanobisLearningRate = 0.1;
    double mlpLambda = 500.0;
    double mlpLearningRate = 0.05;
    int outerSteps = 200;
    std::filesystem::path outDir;

    ReusabilitySpec();
    void validate() const;
};

struct ReusabilityRecord {
    int trial = 0;
    std::string method;  ///< vanilla, penalized, costlearn_mahalanobis or costlearn_mlp
    double fairnessLoss = 0.0;
    double inferenceSeconds = 0.0;
};

struct ReusabilityResult {
    std::vector<ReusabilityRecord> records;
    CostModel mahalanobis;
    CostModel mlp;
};

/// Keys: trials, seed, epsilon, penalized_lambda, outer_steps, target, train {nX, nY},
/// test {nX, nY}, mahalanobis {lambda, learning_rate}, mlp {lambda, learning_rate}.
ReusabilitySpec reusability_spec_from_json(std::string_view text);

/// Learns both costs once on the training sample, then matches every test resample with each
/// method. Persists reusability.csv when an output directory is set.
ReusabilityResult run_reusability(const ReusabilitySpec& spec);

struct PlotSeries {
    std::string method;
    /// (cost gap, fairness loss) in record order.
    std::vector<std::pair<double, double>> points;
    /// Vertices of the SVG polyline, in pixels.
    std::vector<std::pair<double, double>> svgPoints;
};

/// Writes one CSV per method and tradeoff.svg (log-scaled fairness axis) into dir.
/// Throws std::invalid_argument for an empty record list.
std::vector<PlotSeries> emit_plot_data(const std::vector<TradeoffRecord>& records,
                                       const std::filesystem::path& dir);

}  // namespace fairot
