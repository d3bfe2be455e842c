// fairot: command-line front end for the solvers and experiment harness.
//
// Exit codes: 0 success, 1 invalid configuration, 2 solver failure, 3 verification failure.

#include "fairot/costlearn.hpp"
#include "fairot/csv.hpp"
#include "fairot/fairness.hpp"
#include "fairot/harness.hpp"
#include "fairot/oracle.hpp"
#include "fairot/penalized.hpp"
#include "fairot/sinkhorn.hpp"
#include "fairot/synthdata.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

using namespace fairot;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr int kOk = 0;
constexpr int kConfig = 1;
constexpr int kSolver = 2;
constexpr int kVerification = 3;

struct Globals {
    std::string config;
    std::string out;
    std::optional<std::uint64_t> seed;
    int jobs = 1;
};

void write_json(const fs::path& path, const json& j) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << j.dump(2) << '\n';
}

fs::path out_dir(const Globals& g, const char* fallback) {
    fs::path p = g.out.empty() ? fs::path(fallback) : fs::path(g.out);
    fs::create_directories(p);
    return p;
}

SweepSpec sweep_spec(const Globals& g) {
    SweepSpec s = g.config.empty() ? SweepSpec{} : load_spec(g.config);
    if (g.seed) s.seed = *g.seed;
    s.jobs = std::max(s.jobs, g.jobs);
    return s;
}

json report_json(const SolverReport& r) {
    return {{"converged", r.converged},
            {"iterations", r.iterations},
            {"final_residual", r.finalResidual},
            {"objective", r.objective},
            {"transport_cost", r.transportCost},
            {"fairness_loss", r.fairnessLoss},
            {"wall_time_seconds", r.wallTimeSeconds},
            {"log_domain", r.logDomain}};
}

// --- subcommands ------------------------------------------------------------------------------

struct DatagenArgs {
    std::string dataset = "gaussians";
    Index nX = 250;
    Index nY = 25;
};

int cmd_datagen(const Globals& g, const DatagenArgs& a) {
    GenSpec spec;
    spec.dataset = dataset_kind_from_string(a.dataset);
    spec.nX = a.nX;
    spec.nY = a.nY;
    spec.seed = g.seed.value_or(0);
    const auto data = generate(spec);
    const fs::path dir = out_dir(g, ".");
    write_dataset_csv(dir / "X.csv", data.X);
    write_dataset_csv(dir / "Y.csv", data.Y);
    write_json(dir / "datagen.json", {{"dataset", a.dataset},
                                      {"nX", spec.nX},
                                      {"nY", spec.nY},
                                      {"seed", spec.seed},
                                      {"files", {"X.csv", "Y.csv"}}});
    std::cout << "wrote " << (dir / "X.csv").string() << " and " << (dir / "Y.csv").string()
              << '\n';
    return kOk;
}

struct SolveArgs {
    std::string method = "vanilla";
    std::string x, y, target, model;
    double epsilon = 1.0;
    double lambda = 1.0;
    double tol = 1e-6;
    int maxIter = 1000;
};

int cmd_solve(const Globals& g, const SolveArgs& a) {
    DatasetPair data;
    if (!a.x.empty() || !a.y.empty()) {
        if (a.x.empty() || a.y.empty()) throw ConfigError("solve: --x and --y go together");
        data = {read_dataset_csv(a.x), read_dataset_csv(a.y)};
    } else {
        SweepSpec s = sweep_spec(g);
        s.dataset.seed = s.seed;
        data = generate(s.dataset);
    }
    Matrix F = a.target.empty() ? default_fairness_target() : read_matrix_csv(a.target);
    ValidateOptions opts;
    opts.repair = true;
    const auto v = validate_target(F, data.X, data.Y, opts);
    if (!v.valid) {
        if (!v.repaired) throw ConfigError("fairness target: " + v.worst.describe());
        F = *v.repaired;
    }

    SinkhornConfig sc;
    sc.epsilon = a.epsilon;
    sc.tol = a.tol;
    sc.maxIter = a.maxIter;
    const Matrix C = squared_euclidean_cost(data.X.points(), data.Y.points()).values();
    const auto& src = data.X.labels();
    const auto& dst = data.Y.labels();

    Matrix plan;
    SolverReport report;
    if (!a.model.empty()) {
        auto m = match_with_learned_cost(load_model(a.model), data.X, data.Y, F, sc);
        plan = m.solve.plan.values();
        report = m.solve.report;
    } else {
        switch (method_from_string(a.method)) {
            case Method::Vanilla: {
                auto r = sinkhorn(C, sc);
                r.report.fairnessLoss = fairness_loss(r.plan, F, src, dst);
                plan = r.plan.values();
                report = r.report;
                break;
            }
            case Method::FairSinkhorn: {
                auto r = fair_sinkhorn(C, F, src, dst, sc);
                plan = r.plan.values();
                report = r.report;
                break;
            }
            case Method::Penalized: {
                GcgConfig gc;
                gc.lambda = a.lambda;
                gc.sinkhorn = sc;
                auto r = penalized_gcg(C, F, src, dst, gc);
                plan = r.plan.values();
                report = r.report;
                break;
            }
            default:
                throw ConfigError("solve: cost-learning methods take a trained --model");
        }
    }
    const fs::path dir = out_dir(g, ".");
    write_matrix_csv(dir / "plan.csv", plan);
    json j = report_json(report);
    j["method"] = a.model.empty() ? a.method : "learned_cost";
    j["epsilon"] = a.epsilon;
    j["group_coupling"] = json::array();
    const Matrix G = group_coupling(plan, src, dst);
    for (Index s = 0; s < G.rows(); ++s) {
        json row = json::array();
        for (Index w = 0; w < G.cols(); ++w) row.push_back(G(s, w));
        j["group_coupling"].push_back(row);
    }
    write_json(dir / "plan.json", j);
    std::cout << "fairness loss " << csv::format_double(report.fairnessLoss) << ", transport cost "
              << csv::format_double(transport_cost(plan, C)) << ", "
              << (report.converged ? "converged" : "NOT converged") << " after "
              << report.iterations << " iterations\n";
    return kOk;
}

int cmd_sweep(const Globals& g) {
    if (g.config.empty()) throw ConfigError("sweep: --config is required");
    SweepSpec s = sweep_spec(g);
    s.outDir = out_dir(g, "run");
    const auto recs = run_sweep(s);
    int failed = 0;
    for (const auto& r : recs) {
        if (!r.ok) ++failed;
        std::cout << r.method << " " << csv::format_double(r.gridValue) << "  gap "
                  << csv::format_double(r.transportCostGap) << "  loss "
                  << csv::format_double(r.fairnessLoss) << (r.ok ? "" : "  FAILED") << '\n';
    }
    std::cout << recs.size() << " records in " << (s.outDir / "records.csv").string() << '\n';
    return failed ? kSolver : kOk;
}

struct CostlearnArgs {
    std::optional<double> lambda;
};

int cmd_costlearn(const Globals& g, const CostlearnArgs& a) {
    SweepSpec s = sweep_spec(g);
    if (s.method != Method::CostlearnMahalanobis && s.method != Method::CostlearnMlp)
        throw ConfigError("costlearn: method must be costlearn_mahalanobis or costlearn_mlp");
    if (!a.lambda && s.grid.empty()) throw ConfigError("costlearn: give --lambda or a grid");
    GenSpec gen = s.dataset;
    gen.seed = s.seed;
    const auto data = generate(gen);
    ValidateOptions opts;
    opts.repair = s.repairTarget;
    const auto v = validate_target(s.target, data.X, data.Y, opts);
    if (!v.valid && !v.repaired) throw ConfigError("fairness target: " + v.worst.describe());
    const Matrix F = v.valid ? s.target : *v.repaired;

    BilevelConfig cfg = s.bilevel;
    cfg.lambda = a.lambda.value_or(s.grid.front());
    cfg.inner = s.sinkhorn;
    cfg.inner.epsilon = s.epsilon;
    const auto problem = BilevelProblem::from_data(data.X, data.Y, F);
    CostModel init = MahalanobisModel::identity(data.X.dim());
    if (s.method == Method::CostlearnMlp) {
        const auto pre = pretrain_mlp(MlpModel::random(data.X.dim(), derive_seed(s.seed, 2)),
                                      problem.X, problem.Y, problem.baseCost, s.pretrain);
        std::cout << "pretraining: relative gap " << csv::format_double(pre.relativeGap)
                  << " after " << pre.steps << " steps\n";
        init = pre.model;
    }
    const auto r = train_cost(std::move(init), problem, cfg);
    const fs::path dir = out_dir(g, "costlearn");
    save_model(dir / "model.json", r.model);
    write_history_csv(dir / "history.csv", r.history);
    write_json(dir / "summary.json", {{"method", to_string(s.method)},
                                      {"lambda", cfg.lambda},
                                      {"steps", r.history.size() - 1},
                                      {"initial_fairness_loss", r.history.front().fairnessLoss},
                                      {"final_fairness_loss", r.history.back().fairnessLoss},
                                      {"aborted", r.aborted},
                                      {"inner_failures", r.innerFailures},
                                      {"wall_time_seconds", r.wallTimeSeconds}});
    std::cout << "fairness loss " << csv::format_double(r.history.front().fairnessLoss) << " -> "
              << csv::format_double(r.history.back().fairnessLoss) << " over "
              << r.history.size() - 1 << " steps\n";
    return r.aborted ? kSolver : kOk;
}

int cmd_eval(const Globals& g) {
    ReusabilitySpec s;
    if (!g.config.empty()) {
        std::ifstream in(g.config);
        if (!in) throw ConfigError("cannot read " + g.config);
        std::ostringstream ss;
        ss << in.rdbuf();
        s = reusability_spec_from_json(ss.str());
    }
    if (g.seed) s.seed = *g.seed;
    s.outDir = out_dir(g, "reusability");
    const auto r = run_reusability(s);

    auto find = [&](int trial, const std::string& method) {
        for (const auto& rec : r.records)
            if (rec.trial == trial && rec.method == method) return rec;
        throw std::logic_error("missing record");
    };
    bool fast = true;
    int beats[2] = {0, 0};
    const char* learned[2] = {"costlearn_mahalanobis", "costlearn_mlp"};
    for (int t = 0; t < s.trials; ++t) {
        const auto van = find(t, "vanilla");
        const auto pen = find(t, "penalized");
        std::cout << "trial " << t << ": vanilla " << csv::format_double(van.fairnessLoss)
                  << "  penalized " << csv::format_double(pen.fairnessLoss);
        for (int k = 0; k < 2; ++k) {
            const auto rec = find(t, learned[k]);
            fast = fast && rec.inferenceSeconds < pen.inferenceSeconds;
            if (rec.fairnessLoss < van.fairnessLoss) ++beats[k];
            std::cout << "  " << learned[k] << " " << csv::format_double(rec.fairnessLoss);
        }
        std::cout << '\n';
    }
    const int needed = (9 * s.trials + 9) / 10;
    const bool ok = fast && beats[0] >= needed && beats[1] >= needed;
    std::cout << "learned-cost inference faster than penalized on every trial: "
              << (fast ? "yes" : "no") << "\n"
              << "trials beating vanilla: mahalanobis " << beats[0] << "/" << s.trials
              << ", mlp " << beats[1] << "/" << s.trials << '\n';
    return ok ? kOk : kVerification;
}

struct OracleArgs {
    int instances = 50;
};

int cmd_oracle_check(const Globals& g, const OracleArgs& a) {
    oracle::AgreementSuite suite;
    suite.instances = a.instances;
    suite.seed = g.seed.value_or(0);
    const auto t0 = std::chrono::steady_clock::now();
    const auto rows = oracle::run_agreement_suite(suite);
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    int bad = 0;
    double worst = 0.0;
    for (const auto& r : rows) {
        worst = std::max(worst, r.frobeniusGap);
        if (!(r.frobeniusGap <= suite.threshold) || !r.oracleConverged) ++bad;
    }
    if (!g.out.empty()) {
        const fs::path dir = out_dir(g, ".");
        std::ofstream out(dir / "oracle_check.csv", std::ios::binary | std::ios::trunc);
        out << "solver,n,m,epsilon,instance,frobenius_gap,oracle_converged\n";
        for (const auto& r : rows)
            out << r.solver << ',' << r.n << ',' << r.m << ',' << csv::format_double(r.epsilon)
                << ',' << r.instance << ',' << csv::format_double(r.frobeniusGap) << ','
                << (r.oracleConverged ? 1 : 0) << '\n';
    }
    std::cout << rows.size() << " comparisons, worst Frobenius gap " << csv::format_double(worst)
              << ", " << bad << " above " << csv::format_double(suite.threshold) << " ("
              << secs << " s)\n";
    return bad ? kVerification : kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"fair optimal transport: solvers and experiments"};
    app.require_subcommand(1);
    Globals g;
    app.add_option("--config", g.config, "JSON configuration file");
    app.add_option("--out", g.out, "output directory");
    app.add_option("--seed", g.seed, "master seed");
    app.add_option("--jobs", g.jobs, "concurrent grid points")->check(CLI::PositiveNumber);

    DatagenArgs dg;
    auto* datagen = app.add_subcommand("datagen", "generate a synthetic dataset pair");
    datagen->add_option("--dataset", dg.dataset, "gaussians or circles");
    datagen->add_option("--nx", dg.nX, "number of X points");
    datagen->add_option("--ny", dg.nY, "number of Y points");

    SolveArgs sv;
    auto* solve = app.add_subcommand("solve", "solve one instance");
    solve->add_option("--method", sv.method, "vanilla, fair_sinkhorn or penalized");
    solve->add_option("--x", sv.x, "X dataset CSV");
    solve->add_option("--y", sv.y, "Y dataset CSV");
    solve->add_option("--target", sv.target, "fairness target matrix CSV");
    solve->add_option("--model", sv.model, "learned cost model JSON (vanilla OT on that cost)");
    solve->add_option("--epsilon", sv.epsilon, "entropic regularization");
    solve->add_option("--lambda", sv.lambda, "fairness penalty (penalized)");
    solve->add_option("--tol", sv.tol, "stopping tolerance");
    solve->add_option("--max-iter", sv.maxIter, "iteration cap");

    auto* sweep = app.add_subcommand("sweep", "run a trade-off sweep");

    CostlearnArgs cl;
    auto* costlearn = app.add_subcommand("costlearn", "train one cost model");
    costlearn->add_option("--lambda", cl.lambda, "trade-off weight (default: first grid value)");

    auto* eval = app.add_subcommand("eval", "reusability study of learned costs");

    OracleArgs oc;
    auto* oracleCheck = app.add_subcommand("oracle-check", "compare solvers with the reference");
    oracleCheck->add_option("--instances", oc.instances, "instances per size and epsilon");

    for (auto* sub : {datagen, solve, sweep, costlearn, eval, oracleCheck}) {
        sub->add_option("--config", g.config, "JSON configuration file");
        sub->add_option("--out", g.out, "output directory");
        sub->add_option("--seed", g.seed, "master seed");
        sub->add_option("--jobs", g.jobs, "concurrent grid points")->check(CLI::PositiveNumber);
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kConfig;
    }

    try {
        if (*datagen) return cmd_datagen(g, dg);
        if (*solve) return cmd_solve(g, sv);
        if (*sweep) return cmd_sweep(g);
        if (*costlearn) return cmd_costlearn(g, cl);
        if (*eval) return cmd_eval(g);
        if (*oracleCheck) return cmd_oracle_check(g, oc);
    } catch (const std::invalid_argument& e) {
        std::cerr << "fairot: " << e.what() << '\n';
        return kConfig;
    } catch (const std::exception& e) {
        std::cerr << "fairot: " << e.what() << '\n';
        return kSolver;
    }
    return kOk;
}
