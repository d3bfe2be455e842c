// Acceptance run: one PASS/FAIL line per criterion. Pass criterion numbers as arguments to run a
// subset. Exit status is nonzero when any selected criterion fails.

#include "fairot/costlearn.hpp"
#include "fairot/fairness.hpp"
#include "fairot/harness.hpp"
#include "fairot/log.hpp"
#include "fairot/oracle.hpp"
#include "fairot/penalized.hpp"
#include "fairot/sinkhorn.hpp"
#include "fairot/synthdata.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <unistd.h>

using namespace fairot;
namespace fs = std::filesystem;

namespace {

// Pinned tolerances and budgets.
constexpr double kOracleGap = 1e-5;
constexpr double kOracleSeconds = 120.0;
constexpr double kFairDeviation = 1e-6;
constexpr double kFairSeconds = 30.0;
constexpr double kMonotoneSlack = 1e-6;
constexpr double kVanillaShare = 0.05;
constexpr double kPenalizedFloor = 1e-4;
constexpr double kPenalizedSeconds = 15 * 60.0;
constexpr double kBaselineFactor = 10.0;
constexpr double kDirectGradTol = 1e-5;
constexpr double kBilevelGradTol = 1e-3;
constexpr double kGradSeconds = 5 * 60.0;
constexpr double kExpressiveness = 1e-2;
constexpr double kExpressivenessSeconds = 30 * 60.0;
constexpr int kReusabilityWins = 9;
constexpr double kSlopeLo = -1.0;
constexpr double kSlopeHi = -0.25;

struct Outcome {
    bool pass = false;
    std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(double v) {
    std::ostringstream os;
    os.precision(4);
    os << v;
    return os.str();
}

double rel_err(const Matrix& a, const Matrix& b) { return oracle::relative_error(a, b, 1e-12); }

fs::path scratch_dir(const std::string& name) {
    const fs::path dir =
        fs::temp_directory_path() / ("fairot_acceptance_" + std::to_string(::getpid())) / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

SweepSpec base_sweep(Method method, DatasetKind kind, std::vector<double> grid) {
    SweepSpec s;
    s.method = method;
    s.dataset.dataset = kind;
    s.grid = std::move(grid);
    s.jobs = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
    return s;
}

std::vector<double> losses(const std::vector<TradeoffRecord>& records) {
    std::vector<double> out;
    for (const auto& r : records) out.push_back(r.fairnessLoss);
    return out;
}

bool all_ok(const std::vector<TradeoffRecord>& records) {
    return std::all_of(records.begin(), records.end(), [](const auto& r) { return r.ok; });
}

// --- 1 ---------------------------------------------------------------------------------------

Outcome oracle_equivalence() {
    const auto t0 = std::chrono::steady_clock::now();
    oracle::AgreementSuite suite;
    const auto rows = oracle::run_agreement_suite(suite);
    const double elapsed = seconds_since(t0);
    double worst = 0.0;
    int bad = 0;
    for (const auto& r : rows) {
        worst = std::max(worst, r.frobeniusGap);
        if (!(r.frobeniusGap <= kOracleGap) || !r.oracleConverged) ++bad;
    }
    const bool complete = rows.size() == 2 * 4 * 3 * 50;
    return {complete && bad == 0 && elapsed < kOracleSeconds,
            std::to_string(rows.size()) + " comparisons, worst gap " + fmt(worst) + ", " +
                std::to_string(bad) + " failures, " + fmt(elapsed) + " s"};
}

// --- 2 ---------------------------------------------------------------------------------------

Outcome exact_fairness() {
    const auto t0 = std::chrono::steady_clock::now();
    const auto data = generate(GenSpec{});
    ValidateOptions opts;
    opts.repair = true;
    const auto v = validate_target(default_fairness_target(), data.X, data.Y, opts);
    const Matrix F = v.valid ? default_fairness_target() : *v.repaired;
    const Matrix C = squared_euclidean_cost(data.X.points(), data.Y.points()).values();
    SinkhornConfig cfg;
    const auto vanilla = sinkhorn(C, cfg);
    const auto fair = fair_sinkhorn(C, F, data.X.labels(), data.Y.labels(), cfg);
    const double deviation =
        (group_coupling(fair.plan.values(), data.X.labels(), data.Y.labels()) - F).cwiseAbs().maxCoeff();
    const double fairCost = transport_cost(fair.plan.values(), C);
    const double vanillaCost = transport_cost(vanilla.plan.values(), C);
    const double elapsed = seconds_since(t0);
    return {fair.report.converged && deviation <= kFairDeviation && fairCost >= vanillaCost &&
                elapsed < kFairSeconds,
            "deviation " + fmt(deviation) + ", cost " + fmt(fairCost) + " vs vanilla " +
                fmt(vanillaCost) + ", " + fmt(elapsed) + " s"};
}

// --- 3 ---------------------------------------------------------------------------------------

Outcome penalized_interpolation() {
    const auto t0 = std::chrono::steady_clock::now();
    const auto records =
        run_sweep(base_sweep(Method::Penalized, DatasetKind::Gaussians, logspace(0, 3, 80)));
    const auto vanilla =
        run_sweep(base_sweep(Method::Vanilla, DatasetKind::Gaussians, {1.0}));
    const double elapsed = seconds_since(t0);
    double lossRise = 0.0, gapDrop = 0.0;
    for (std::size_t k = 1; k < records.size(); ++k) {
        lossRise = std::max(lossRise, records[k].fairnessLoss - records[k - 1].fairnessLoss);
        gapDrop = std::max(gapDrop, records[k - 1].transportCostGap - records[k].transportCostGap);
    }
    const double first = records.front().fairnessLoss;
    const double last = records.back().fairnessLoss;
    const double reference = vanilla.front().fairnessLoss;
    const bool nearVanilla = std::abs(first - reference) <= kVanillaShare * reference;
    return {all_ok(records) && lossRise <= kMonotoneSlack && gapDrop <= kMonotoneSlack &&
                nearVanilla && last <= kPenalizedFloor && elapsed < kPenalizedSeconds,
            "loss " + fmt(first) + " (vanilla " + fmt(reference) + ") -> " + fmt(last) +
                ", max loss rise " + fmt(lossRise) + ", max gap drop " + fmt(gapDrop) + ", " +
                fmt(elapsed) + " s"};
}

// --- 4 ---------------------------------------------------------------------------------------

Outcome vanilla_baseline() {
    std::string detail;
    bool pass = true;
    for (auto kind : {DatasetKind::Gaussians, DatasetKind::Circles}) {
        const auto vanilla = run_sweep(base_sweep(Method::Vanilla, kind, logspace(0, 2, 20)));
        const auto penalized = run_sweep(base_sweep(Method::Penalized, kind, logspace(0, 3, 80)));
        const auto lv = losses(vanilla), lp = losses(penalized);
        const double minVanilla = *std::min_element(lv.begin(), lv.end());
        const double minPenalized = *std::min_element(lp.begin(), lp.end());
        pass = pass && all_ok(vanilla) && all_ok(penalized) &&
               minVanilla >= kBaselineFactor * minPenalized;
        detail += to_string(kind) + ": vanilla min " + fmt(minVanilla) + ", penalized min " +
                  fmt(minPenalized) + "; ";
    }
    return {pass, detail};
}

// --- 5 ---------------------------------------------------------------------------------------

Matrix symmetric_fd(const std::function<double(const Matrix&)>& f, const Matrix& M, double h) {
    const Index d = M.rows();
    Matrix out(d, d);
    for (Index i = 0; i < d; ++i)
        for (Index j = i; j < d; ++j) {
            Matrix up = M, down = M;
            up(i, j) += h;
            down(i, j) -= h;
            if (i != j) {
                up(j, i) += h;
                down(j, i) -= h;
            }
            out(i, j) = out(j, i) = (f(up) - f(down)) / (2.0 * h);
        }
    return out;
}

Matrix symmetrized(const Matrix& G) {
    Matrix out = G + G.transpose();
    out.diagonal() = G.diagonal();
    return out;
}

Matrix uniform(Index rows, Index cols, std::mt19937_64& rng, double lo, double hi) {
    std::uniform_real_distribution<double> dist(lo, hi);
    Matrix m(rows, cols);
    for (Index j = 0; j < cols; ++j)
        for (Index i = 0; i < rows; ++i) m(i, j) = dist(rng);
    return m;
}

GroupLabels labels_with_both(Index size, std::mt19937_64& rng) {
    std::vector<int> idx(static_cast<std::size_t>(size));
    for (std::size_t k = 0; k < idx.size(); ++k)
        idx[k] = k < 2 ? static_cast<int>(k) : static_cast<int>(rng() % 2);
    std::shuffle(idx.begin(), idx.end(), rng);
    return {std::move(idx), 2};
}

Matrix random_psd(Index d, std::mt19937_64& rng) {
    const Matrix A = uniform(d, d, rng, -1, 1);
    return A * A.transpose() + 0.1 * Matrix::Identity(d, d);
}

MlpModel kink_free_mlp(Index d, std::uint64_t seed, Index hidden) {
    MlpModel m = MlpModel::random(d, seed, hidden);
    Vector theta = m.parameters();
    for (Index p = 0; p < theta.size(); ++p)
        if (theta[p] == 0.0) theta[p] = 0.1 * std::cos(static_cast<double>(p + seed));
    m.set_parameters(theta);
    return m;
}

BilevelConfig tight_bilevel(double lambda) {
    BilevelConfig cfg;
    cfg.lambda = lambda;
    cfg.inner.tol = 1e-13;
    cfg.inner.maxIter = 200000;
    cfg.unrollLength = 200;
    return cfg;
}

BilevelProblem shifted_problem(Index n, Index m, Index d, std::mt19937_64& rng) {
    const Matrix X = uniform(n, d, rng, -1, 1);
    const Matrix Y = uniform(m, d, rng, -1, 1);
    const auto s = labels_with_both(n, rng);
    const auto w = labels_with_both(m, rng);
    Matrix F = s.marginal() * w.marginal().transpose();
    const double shift = 0.3 * std::min(F.minCoeff(), 0.1);
    F(0, 0) += shift;
    F(1, 1) += shift;
    F(0, 1) -= shift;
    F(1, 0) -= shift;
    return {X, Y, s, w, F, squared_euclidean_cost(X, Y).values()};
}

Outcome gradient_correctness() {
    const auto t0 = std::chrono::steady_clock::now();
    std::mt19937_64 rng(5);
    constexpr int instances = 20;
    double worst[5] = {0, 0, 0, 0, 0};
    for (int k = 0; k < instances; ++k) {
        {
            const Index n = 3 + k % 4, m = 2 + k % 5;
            const auto s = labels_with_both(n, rng), w = labels_with_both(m, rng);
            const Matrix P = uniform(n, m, rng, 0, 1) / static_cast<double>(n * m);
            const Matrix F = uniform(2, 2, rng, 0, 0.5);
            const Matrix fd = oracle::finite_diff(
                [&](const Matrix& Q) { return fairness_loss(Q, F, s, w); }, P, 1e-6);
            worst[0] = std::max(worst[0], rel_err(fairness_loss_grad(P, F, s, w), fd));
        }
        const Index d = 2 + k % 2;
        const Matrix X = uniform(4, d, rng, -1, 1), Y = uniform(5, d, rng, -1, 1);
        const Matrix Cbar = uniform(4, 5, rng, -1, 1);
        {
            const Matrix M = random_psd(d, rng);
            const Matrix fd = symmetric_fd(
                [&](const Matrix& A) { return mahalanobis_cost(A, X, Y).values().cwiseProduct(Cbar).sum(); },
                M, 1e-5);
            worst[1] = std::max(worst[1], rel_err(symmetrized(mahalanobis_cost_vjp(X, Y, Cbar)), fd));
        }
        {
            const MlpModel model = kink_free_mlp(d, 40 + k, 6);
            const Vector fd = oracle::finite_diff(
                [&](const Vector& t) {
                    MlpModel copy = model;
                    copy.set_parameters(t);
                    return mlp_cost(copy, X, Y).values().cwiseProduct(Cbar).sum();
                },
                model.parameters(), 1e-6);
            worst[2] = std::max(worst[2], rel_err(mlp_cost_vjp(model, X, Y, Cbar), fd));
        }
        {
            const BilevelProblem pb = shifted_problem(3, 3, 2, rng);
            const Matrix M = random_psd(2, rng);
            const BilevelConfig cfg = tight_bilevel(5.0);
            const auto r = bilevel_objective(MahalanobisModel{M}, pb, cfg);
            const Matrix fd = symmetric_fd(
                [&](const Matrix& A) { return bilevel_objective(MahalanobisModel{A}, pb, cfg).value; },
                M, 1e-5);
            Matrix G(2, 2);
            for (Index i = 0; i < 2; ++i)
                for (Index j = 0; j < 2; ++j) G(i, j) = r.gradient[i * 2 + j];
            worst[3] = std::max(worst[3], rel_err(symmetrized(G), fd));
        }
        {
            const BilevelProblem pb = shifted_problem(4, 4, 2, rng);
            const MlpModel model = kink_free_mlp(2, 300 + k, 4);
            const BilevelConfig cfg = tight_bilevel(50.0);
            const auto r = bilevel_objective(model, pb, cfg);
            const Vector fd = oracle::finite_diff(
                [&](const Vector& t) {
                    MlpModel copy = model;
                    copy.set_parameters(t);
                    return bilevel_objective(copy, pb, cfg).value;
                },
                model.parameters(), 1e-6);
            worst[4] = std::max(worst[4], rel_err(r.gradient, fd));
        }
    }
    const double elapsed = seconds_since(t0);
    const bool pass = worst[0] < kDirectGradTol && worst[1] < kDirectGradTol &&
                      worst[2] < kDirectGradTol && worst[3] < kBilevelGradTol &&
                      worst[4] < kBilevelGradTol && elapsed < kGradSeconds;
    return {pass, "worst relative errors: fairness " + fmt(worst[0]) + ", mahalanobis " +
                      fmt(worst[1]) + ", mlp " + fmt(worst[2]) + ", bilevel mahalanobis " +
                      fmt(worst[3]) + ", bilevel mlp " + fmt(worst[4]) + ", " + fmt(elapsed) +
                      " s"};
}

// --- 6 ---------------------------------------------------------------------------------------

Outcome expressiveness_gap() {
    const auto t0 = std::chrono::steady_clock::now();
    SweepSpec maha = base_sweep(Method::CostlearnMahalanobis, DatasetKind::Circles, logspace(1, 3, 8));
    maha.bilevel.learningRate = 0.05;
    SweepSpec mlp = base_sweep(Method::CostlearnMlp, DatasetKind::Circles, logspace(0, 4, 8));
    mlp.bilevel.learningRate = 0.01;
    const auto rm = run_sweep(maha);
    const auto rn = run_sweep(mlp);
    const double elapsed = seconds_since(t0);
    const auto lm = losses(rm), ln = losses(rn);
    const double mahaMin = *std::min_element(lm.begin(), lm.end());
    const double mlpMin = *std::min_element(ln.begin(), ln.end());
    return {all_ok(rm) && all_ok(rn) && mahaMin >= kExpressiveness && mlpMin < kExpressiveness &&
                elapsed < kExpressivenessSeconds,
            "mahalanobis min loss " + fmt(mahaMin) + ", mlp min loss " + fmt(mlpMin) + ", " +
                fmt(elapsed) + " s"};
}

// --- 7 ---------------------------------------------------------------------------------------

Outcome reusability() {
    ReusabilitySpec spec;
    const auto result = run_reusability(spec);
    std::map<int, std::map<std::string, ReusabilityRecord>> byTrial;
    for (const auto& r : result.records) byTrial[r.trial][r.method] = r;
    int faster = 0, mahaWins = 0, mlpWins = 0;
    for (auto& [trial, m] : byTrial) {
        const double penalized = m["penalized"].inferenceSeconds;
        if (m["costlearn_mahalanobis"].inferenceSeconds < penalized &&
            m["costlearn_mlp"].inferenceSeconds < penalized)
            ++faster;
        const double vanilla = m["vanilla"].fairnessLoss;
        mahaWins += m["costlearn_mahalanobis"].fairnessLoss < vanilla;
        mlpWins += m["costlearn_mlp"].fairnessLoss < vanilla;
    }
    const int trials = static_cast<int>(byTrial.size());
    return {trials == spec.trials && faster == trials && mahaWins >= kReusabilityWins &&
                mlpWins >= kReusabilityWins,
            "learned inference faster on " + std::to_string(faster) + "/" +
                std::to_string(trials) + ", beats vanilla: mahalanobis " +
                std::to_string(mahaWins) + ", mlp " + std::to_string(mlpWins)};
}

// --- 8 ---------------------------------------------------------------------------------------

// Empirical optimum of the penalized problem with the KL taken relative to the product of the
// empirical measures.
double empirical_optimum(Index n, std::uint64_t seed) {
    GenSpec g;
    g.nX = n;
    g.nY = n;
    g.seed = seed;
    const auto data = generate(g);
    ValidateOptions opts;
    opts.repair = true;
    const auto v = validate_target(default_fairness_target(), data.X, data.Y, opts);
    const Matrix F = v.valid ? default_fairness_target() : *v.repaired;
    const Matrix C = squared_euclidean_cost(data.X.points(), data.Y.points()).values();
    GcgConfig cfg;
    cfg.lambda = 10.0;
    cfg.sinkhorn.epsilon = 1.0;
    const auto r = penalized_gcg(C, F, data.X.labels(), data.Y.labels(), cfg);
    return r.report.objective + cfg.sinkhorn.epsilon * std::log(static_cast<double>(n * n));
}

Outcome statistical_trend() {
    const std::vector<Index> sizes{8, 16, 32, 64, 128};
    constexpr int seeds = 20;
    auto sample = [&](Index n) {
        std::vector<double> v;
        for (int s = 0; s < seeds; ++s)
            v.push_back(empirical_optimum(n, derive_seed(static_cast<std::uint64_t>(n), s)));
        return v;
    };
    auto mean = [](const std::vector<double>& v) {
        return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    };
    auto stddev = [&](const std::vector<double>& v) {
        const double mu = mean(v);
        double s = 0.0;
        for (double x : v) s += (x - mu) * (x - mu);
        return std::sqrt(s / static_cast<double>(v.size() - 1));
    };
    const double reference = mean(sample(256));
    std::vector<double> sds, logN, logErr;
    for (Index n : sizes) {
        const auto v = sample(n);
        sds.push_back(stddev(v));
        double err = 0.0;
        for (double x : v) err += std::abs(x - reference);
        logN.push_back(std::log(static_cast<double>(n)));
        logErr.push_back(std::log(err / seeds));
    }
    bool decreasing = true;
    for (std::size_t k = 1; k < sds.size(); ++k) decreasing = decreasing && sds[k] < sds[k - 1];
    const double mx = mean(logN), my = mean(logErr);
    double sxy = 0.0, sxx = 0.0;
    for (std::size_t k = 0; k < logN.size(); ++k) {
        sxy += (logN[k] - mx) * (logErr[k] - my);
        sxx += (logN[k] - mx) * (logN[k] - mx);
    }
    const double slope = sxy / sxx;
    std::string sdText;
    for (double s : sds) sdText += fmt(s) + " ";
    return {decreasing && slope >= kSlopeLo && slope <= kSlopeHi,
            "std across seeds " + sdText + "; log-log slope " + fmt(slope)};
}

// --- 9 ---------------------------------------------------------------------------------------

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Outcome determinism() {
    std::string first;
    bool identical = true;
    for (int run = 0; run < 3; ++run) {
        SweepSpec s = base_sweep(Method::Penalized, DatasetKind::Gaussians, logspace(0, 3, 8));
        s.seed = 7;
        s.jobs = run == 0 ? 1 : 4;
        s.outDir = scratch_dir("determinism_" + std::to_string(run));
        run_sweep(s);
        const std::string text = slurp(s.outDir / "records.csv");
        if (run == 0)
            first = text;
        else
            identical = identical && text == first;
    }
    return {identical && !first.empty(), "3 runs, records.csv byte-identical: " +
                                             std::string(identical ? "yes" : "no")};
}

}  // namespace

int main(int argc, char** argv) {
    const std::map<int, std::pair<const char*, std::function<Outcome()>>> criteria{
        {1, {"oracle equivalence", oracle_equivalence}},
        {2, {"exact fairness", exact_fairness}},
        {3, {"penalized interpolation", penalized_interpolation}},
        {4, {"vanilla epsilon baseline", vanilla_baseline}},
        {5, {"gradient correctness", gradient_correctness}},
        {6, {"expressiveness gap", expressiveness_gap}},
        {7, {"reusability", reusability}},
        {8, {"statistical trend", statistical_trend}},
        {9, {"determinism", determinism}},
    };
    std::set<int> selected;
    for (int k = 1; k < argc; ++k) selected.insert(std::stoi(argv[k]));
    if (selected.empty())
        for (const auto& [id, c] : criteria) selected.insert(id);

    set_log_sink([](std::string_view) {});
    int failures = 0;
    for (int id : selected) {
        const auto it = criteria.find(id);
        if (it == criteria.end()) {
            std::cerr << "unknown criterion " << id << '\n';
            return 2;
        }
        Outcome o;
        try {
            o = it->second.second();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        failures += !o.pass;
        std::cout << "criterion " << id << " (" << it->second.first << "): "
                  << (o.pass ? "PASS" : "FAIL") << " | " << o.detail << std::endl;
    }
    fs::remove_all(fs::temp_directory_path() / ("fairot_acceptance_" + std::to_string(::getpid())));
    return failures == 0 ? 0 : 1;
}
