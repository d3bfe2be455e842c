#include "fairot/harness.hpp"

#include "fairot/csv.hpp"
#include "fairot/fairness.hpp"
#include "fairot/log.hpp"

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>
#include <tuple>

#ifndef FAIROT_VERSION
#define FAIROT_VERSION "unknown"
#endif

namespace fairot {

using nlohmann::json;

namespace {

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

/// The target actually used on a sample: F itself, or its projection onto the sample's group
/// marginals.
Matrix resolve_target(const Matrix& F, const LabeledDataset& X, const LabeledDataset& Y,
                      bool repair) {
    ValidateOptions opts;
    opts.repair = repair;
    const auto v = validate_target(F, X, Y, opts);
    if (v.valid) return F;
    if (v.repaired) return *v.repaired;
    throw ConfigError("fairness target: " + v.worst.describe());
}

struct Instance {
    DatasetPair data;
    Matrix cost;
    Matrix F;
};

Instance make_instance(const SweepSpec& spec) {
    GenSpec g = spec.dataset;
    g.seed = spec.seed;
    Instance inst{generate(g), {}, {}};
    inst.cost = squared_euclidean_cost(inst.data.X.points(), inst.data.Y.points()).values();
    inst.F = resolve_target(spec.target, inst.data.X, inst.data.Y, spec.repairTarget);
    return inst;
}

SinkhornConfig with_epsilon(SinkhornConfig cfg, double eps) {
    cfg.epsilon = eps;
    cfg.warmStart.reset();
    return cfg;
}

TradeoffRecord evaluate(const SweepSpec& spec, const Instance& inst, double g) {
    TradeoffRecord rec;
    rec.method = to_string(spec.method);
    rec.gridValue = g;
    rec.seed = spec.seed;
    const auto& src = inst.data.X.labels();
    const auto& dst = inst.data.Y.labels();
    try {
        const bool epsGrid = spec.method == Method::Vanilla || spec.method == Method::FairSinkhorn;
        const SinkhornConfig sc = with_epsilon(spec.sinkhorn, epsGrid ? g : spec.epsilon);
        const auto vanilla = sinkhorn(inst.cost, sc);
        const double reference = transport_cost(vanilla.plan.values(), inst.cost);
        Matrix plan;
        const auto t0 = std::chrono::steady_clock::now();
        switch (spec.method) {
            case Method::Vanilla: {
                const auto r = sinkhorn(inst.cost, sc);
                rec.wallTimeSeconds = seconds_since(t0);
                rec.iterations = r.report.iterations;
                plan = r.plan.values();
                break;
            }
            case Method::FairSinkhorn: {
                const auto r = fair_sinkhorn(inst.cost, inst.F, src, dst, sc);
                rec.wallTimeSeconds = seconds_since(t0);
                rec.iterations = r.report.iterations;
                plan = r.plan.values();
                break;
            }
            case Method::Penalized: {
                GcgConfig gc = spec.gcg;
                gc.lambda = g;
                gc.sinkhorn = sc;
                const auto r = penalized_gcg(inst.cost, inst.F, src, dst, gc);
                rec.wallTimeSeconds = seconds_since(t0);
                rec.iterations = r.report.iterations;
                plan = r.plan.values();
                break;
            }
            case Method::CostlearnMahalanobis:
            case Method::CostlearnMlp: {
                BilevelConfig bc = spec.bilevel;
                bc.lambda = g;
                bc.inner = sc;
                const auto problem = BilevelProblem::from_data(inst.data.X, inst.data.Y, inst.F);
                CostModel init = MahalanobisModel::identity(inst.data.X.dim());
                if (spec.method == Method::CostlearnMlp)
                    init = pretrain_mlp(MlpModel::random(inst.data.X.dim(), derive_seed(spec.seed, 2)),
                                        problem.X, problem.Y, problem.baseCost, spec.pretrain)
                               .model;
                const auto trained = train_cost(std::move(init), problem, bc);
                const auto match =
                    match_with_learned_cost(trained.model, inst.data.X, inst.data.Y, inst.F, sc);
                rec.wallTimeSeconds = seconds_since(t0);
                rec.iterations = static_cast<int>(trained.history.size()) - 1;
                plan = match.solve.plan.values();
                if (trained.aborted) {
                    rec.ok = false;
                    rec.note = "training objective diverged";
                }
                break;
            }
        }
        rec.transportCostGap = transport_cost(plan, inst.cost) - reference;
        rec.fairnessLoss = fairness_loss(plan, inst.F, src, dst);
    } catch (const std::runtime_error& e) {
        rec.ok = false;
        rec.note = e.what();
        rec.transportCostGap = std::nan("");
        rec.fairnessLoss = std::nan("");
    }
    if (!rec.ok) log_warning(rec.method + " at " + csv::format_double(g) + ": " + rec.note);
    return rec;
}

// --- JSON helpers -----------------------------------------------------------------------------

void reject_unknown(const json& obj, std::initializer_list<const char*> keys, const char* where) {
    if (!obj.is_object()) throw ConfigError(std::string(where) + ": expected an object");
    const std::set<std::string> allowed(keys.begin(), keys.end());
    for (const auto& [k, v] : obj.items())
        if (!allowed.count(k)) throw ConfigError(std::string(where) + ": unknown key '" + k + "'");
}

template <class T>
void read_if(const json& obj, const char* key, T& out) {
    if (!obj.contains(key)) return;
    try {
        out = obj.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config key '") + key + "': " + e.what());
    }
}

json matrix_to_json(const Matrix& m) {
    json rows = json::array();
    for (Index i = 0; i < m.rows(); ++i) {
        json row = json::array();
        for (Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
        rows.push_back(row);
    }
    return rows;
}

Matrix matrix_from_json(const json& j, const char* where) {
    if (!j.is_array() || j.empty() || !j.front().is_array())
        throw ConfigError(std::string(where) + ": expected a non-empty array of rows");
    const auto cols = j.front().size();
    Matrix m(static_cast<Index>(j.size()), static_cast<Index>(cols));
    for (std::size_t i = 0; i < j.size(); ++i) {
        if (!j[i].is_array() || j[i].size() != cols)
            throw ConfigError(std::string(where) + ": ragged rows");
        for (std::size_t k = 0; k < cols; ++k) {
            if (!j[i][k].is_number()) throw ConfigError(std::string(where) + ": non-numeric entry");
            m(static_cast<Index>(i), static_cast<Index>(k)) = j[i][k].get<double>();
        }
    }
    return m;
}

std::string domain_name(SinkhornDomain d) {
    switch (d) {
        case SinkhornDomain::Multiplicative: return "multiplicative";
        case SinkhornDomain::Log: return "log";
        default: return "auto";
    }
}

SinkhornDomain domain_from_name(const std::string& s) {
    if (s == "auto") return SinkhornDomain::Auto;
    if (s == "multiplicative") return SinkhornDomain::Multiplicative;
    if (s == "log") return SinkhornDomain::Log;
    throw ConfigError("unknown sinkhorn domain '" + s + "'");
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << text;
}

std::string read_text(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

// --- names and grids --------------------------------------------------------------------------

std::string to_string(Method method) {
    switch (method) {
        case Method::Vanilla: return "vanilla";
        case Method::FairSinkhorn: return "fair_sinkhorn";
        case Method::Penalized: return "penalized";
        case Method::CostlearnMahalanobis: return "costlearn_mahalanobis";
        case Method::CostlearnMlp: return "costlearn_mlp";
    }
    return "unknown";
}

Method method_from_string(const std::string& name) {
    for (Method m : {Method::Vanilla, Method::FairSinkhorn, Method::Penalized,
                     Method::CostlearnMahalanobis, Method::CostlearnMlp})
        if (to_string(m) == name) return m;
    throw ConfigError("unknown method '" + name + "'");
}

Matrix default_fairness_target() {
    Matrix F(2, 2);
    F << 0.20, 0.30, 0.28, 0.22;
    return F;
}

SweepSpec::SweepSpec() : target(default_fairness_target()) {}

std::vector<double> logspace(double lo, double hi, int n) {
    if (n < 1) throw std::invalid_argument("logspace: n must be >= 1");
    std::vector<double> out(static_cast<std::size_t>(n));
    for (int k = 0; k < n; ++k) {
        const double t = n == 1 ? lo : lo + (hi - lo) * k / (n - 1);
        out[static_cast<std::size_t>(k)] = std::pow(10.0, t);
    }
    return out;
}

void SweepSpec::validate() const {
    if (grid.empty()) throw ConfigError("sweep grid is empty");
    for (std::size_t k = 0; k < grid.size(); ++k) {
        if (!(grid[k] > 0.0) || !std::isfinite(grid[k]))
            throw ConfigError("sweep grid values must be positive and finite");
        if (k > 0 && !(grid[k] > grid[k - 1]))
            throw ConfigError("sweep grid must be strictly increasing");
    }
    if (target.size() == 0) throw ConfigError("fairness target is empty");
    if (!(epsilon > 0.0)) throw ConfigError("epsilon must be positive");
    if (jobs < 1) throw ConfigError("jobs must be >= 1");
    try {
        dataset.validate();
        with_epsilon(sinkhorn, epsilon).validate();
        GcgConfig g = gcg;
        g.sinkhorn = with_epsilon(sinkhorn, epsilon);
        g.validate();
        BilevelConfig b = bilevel;
        b.inner = with_epsilon(sinkhorn, epsilon);
        b.validate();
    } catch (const ConfigError&) {
        throw;
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
}

// --- records ----------------------------------------------------------------------------------

std::string format_record(const TradeoffRecord& r) {
    return r.method + "," + csv::format_double(r.gridValue) + "," +
           csv::format_double(r.transportCostGap) + "," + csv::format_double(r.fairnessLoss) + "," +
           std::to_string(r.iterations) + "," + std::to_string(r.seed) + "," +
           (r.ok ? "ok" : "failed");
}

std::vector<TradeoffRecord> read_records_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read " + path.string());
    std::string line;
    if (!std::getline(in, line) || line != kRecordsHeader)
        throw ConfigError(path.string() + ": unexpected header");
    std::vector<TradeoffRecord> out;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto f = csv::split(line);
        if (f.size() != 7) throw ConfigError(path.string() + ": malformed record '" + line + "'");
        TradeoffRecord r;
        try {
            r.method = f[0];
            r.gridValue = std::stod(f[1]);
            r.transportCostGap = std::stod(f[2]);
            r.fairnessLoss = std::stod(f[3]);
            r.iterations = std::stoi(f[4]);
            r.seed = std::stoull(f[5]);
        } catch (const std::exception&) {
            throw ConfigError(path.string() + ": malformed record '" + line + "'");
        }
        r.ok = f[6] == "ok";
        out.push_back(std::move(r));
    }
    return out;
}

std::string file_hash(const std::filesystem::path& path) {
    const std::string bytes = read_text(path);
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    std::ostringstream ss;
    ss << std::hex << std::setw(16) << std::setfill('0') << h;
    return ss.str();
}

// --- sweeps -----------------------------------------------------------------------------------

TradeoffRecord run_point(const SweepSpec& spec, double gridValue) {
    spec.validate();
    return evaluate(spec, make_instance(spec), gridValue);
}

std::vector<TradeoffRecord> run_sweep(const SweepSpec& spec) {
    spec.validate();
    const Instance inst = make_instance(spec);
    const std::size_t n = spec.grid.size();
    std::vector<std::optional<TradeoffRecord>> results(n);

    const bool persist = !spec.outDir.empty();
    const auto recordsPath = spec.outDir / "records.csv";
    const auto timingsPath = spec.outDir / "timings.csv";
    std::size_t done = 0;
    if (persist) {
        std::filesystem::create_directories(spec.outDir / "plots");
        const auto configPath = spec.outDir / "config.json";
        const std::string config = spec_to_json(spec);
        if (std::filesystem::exists(configPath)) {
            if (read_text(configPath) != config)
                throw ConfigError(spec.outDir.string() +
                                  " holds a run with a different configuration");
        } else {
            write_text(configPath, config);
        }
        if (std::filesystem::exists(recordsPath)) {
            // an interrupted append can leave a partial last line
            const std::string text = read_text(recordsPath);
            if (!text.empty() && text.back() != '\n')
                write_text(recordsPath, text.substr(0, text.rfind('\n') + 1));
            const auto previous = read_records_csv(recordsPath);
            if (previous.size() > n) throw ConfigError("records.csv has more rows than the grid");
            std::vector<double> times;
            if (std::filesystem::exists(timingsPath)) {
                std::ifstream tin(timingsPath);
                std::string line;
                std::getline(tin, line);
                while (std::getline(tin, line))
                    if (!line.empty()) times.push_back(std::stod(csv::split(line).at(1)));
            }
            for (std::size_t k = 0; k < previous.size(); ++k) {
                if (csv::format_double(previous[k].gridValue) != csv::format_double(spec.grid[k]))
                    throw ConfigError("records.csv does not match the grid at row " +
                                      std::to_string(k + 1));
                results[k] = previous[k];
                if (k < times.size()) results[k]->wallTimeSeconds = times[k];
            }
            done = previous.size();
            std::ostringstream rewrite;
            rewrite << kRecordsHeader << '\n';
            for (std::size_t k = 0; k < done; ++k) rewrite << format_record(*results[k]) << '\n';
            write_text(recordsPath, rewrite.str());
            std::ostringstream trewrite;
            trewrite << "grid_value,wall_time_seconds\n";
            for (std::size_t k = 0; k < done; ++k)
                trewrite << csv::format_double(spec.grid[k]) << ','
                         << csv::format_double(results[k]->wallTimeSeconds) << '\n';
            write_text(timingsPath, trewrite.str());
        } else {
            write_text(recordsPath, std::string(kRecordsHeader) + "\n");
            write_text(timingsPath, "grid_value,wall_time_seconds\n");
        }
    }

    std::mutex mu;
    std::size_t nextToWrite = done;
    std::atomic<std::size_t> nextToRun{done};
    auto worker = [&] {
        for (std::size_t k = nextToRun++; k < n; k = nextToRun++) {
            TradeoffRecord rec = evaluate(spec, inst, spec.grid[k]);
            std::lock_guard lock(mu);
            results[k] = std::move(rec);
            if (!persist) continue;
            std::ofstream out(recordsPath, std::ios::app | std::ios::binary);
            std::ofstream tout(timingsPath, std::ios::app | std::ios::binary);
            while (nextToWrite < n && results[nextToWrite]) {
                out << format_record(*results[nextToWrite]) << '\n';
                tout << csv::format_double(spec.grid[nextToWrite]) << ','
                     << csv::format_double(results[nextToWrite]->wallTimeSeconds) << '\n';
                ++nextToWrite;
            }
            out.flush();
            tout.flush();
        }
    };
    const int threads = static_cast<int>(std::min<std::size_t>(spec.jobs, n - std::min(n, done)));
    if (threads <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }

    std::vector<TradeoffRecord> out;
    out.reserve(n);
    for (auto& r : results) out.push_back(std::move(*r));

    if (persist) {
        emit_plot_data(out, spec.outDir / "plots");
        json manifest = {
            {"version", FAIROT_VERSION},
            {"method", to_string(spec.method)},
            {"seed", spec.seed},
            {"dataset_seed", spec.seed},
            {"records", out.size()},
            {"config_hash", file_hash(spec.outDir / "config.json")},
            {"records_hash", file_hash(recordsPath)},
        };
        write_text(spec.outDir / "manifest.json", manifest.dump(2) + "\n");
    }
    return out;
}

// --- configuration files ----------------------------------------------------------------------

std::string spec_to_json(const SweepSpec& spec) {
    json j;
    j["method"] = to_string(spec.method);
    j["grid"] = spec.grid;
    j["dataset"] = {{"kind", to_string(spec.dataset.dataset)},
                    {"nX", spec.dataset.nX},
                    {"nY", spec.dataset.nY}};
    j["target"] = matrix_to_json(spec.target);
    j["repair_target"] = spec.repairTarget;
    j["epsilon"] = spec.epsilon;
    j["sinkhorn"] = {{"tol", spec.sinkhorn.tol},
                     {"max_iter", spec.sinkhorn.maxIter},
                     {"domain", domain_name(spec.sinkhorn.domain)}};
    j["penalized"] = {{"num_iter_max", spec.gcg.numIterMax},
                      {"num_inner_iter_max", spec.gcg.numInnerIterMax},
                      {"stop_thr", spec.gcg.stopThr},
                      {"stop_thr2", spec.gcg.stopThr2}};
    j["costlearn"] = {{"outer_steps", spec.bilevel.outerSteps},
                      {"learning_rate", spec.bilevel.learningRate},
                      {"unroll_length", spec.bilevel.unrollLength},
                      {"discrepancy",
                       spec.bilevel.discrepancy == DiscrepancyNorm::Sum ? "sum" : "mean"}};
    j["pretrain"] = {{"steps", spec.pretrain.steps},
                     {"learning_rate", spec.pretrain.learningRate},
                     {"relative_gap_tol", spec.pretrain.relativeGapTol}};
    j["seed"] = spec.seed;
    return j.dump(2) + "\n";
}

SweepSpec spec_from_json(std::string_view text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    reject_unknown(j,
                   {"method", "grid", "dataset", "target", "repair_target", "epsilon", "sinkhorn",
                    "penalized", "costlearn", "pretrain", "seed", "jobs"},
                   "config");
    SweepSpec s;
    std::string method = to_string(s.method);
    read_if(j, "method", method);
    s.method = method_from_string(method);
    if (j.contains("grid")) {
        const json& g = j["grid"];
        if (g.is_object()) {
            reject_unknown(g, {"logspace"}, "grid");
            const auto ls = g.at("logspace");
            if (!ls.is_array() || ls.size() != 3)
                throw ConfigError("grid.logspace must be [lo, hi, count]");
            s.grid = logspace(ls[0].get<double>(), ls[1].get<double>(), ls[2].get<int>());
        } else {
            read_if(j, "grid", s.grid);
        }
    }
    if (j.contains("dataset")) {
        const json& d = j["dataset"];
        reject_unknown(d, {"kind", "nX", "nY"}, "dataset");
        std::string kind = to_string(s.dataset.dataset);
        read_if(d, "kind", kind);
        try {
            s.dataset.dataset = dataset_kind_from_string(kind);
        } catch (const std::invalid_argument& e) {
            throw ConfigError(e.what());
        }
        read_if(d, "nX", s.dataset.nX);
        read_if(d, "nY", s.dataset.nY);
    }
    if (j.contains("target")) s.target = matrix_from_json(j["target"], "target");
    read_if(j, "repair_target", s.repairTarget);
    read_if(j, "epsilon", s.epsilon);
    if (j.contains("sinkhorn")) {
        const json& o = j["sinkhorn"];
        reject_unknown(o, {"tol", "max_iter", "domain"}, "sinkhorn");
        read_if(o, "tol", s.sinkhorn.tol);
        read_if(o, "max_iter", s.sinkhorn.maxIter);
        std::string dom = domain_name(s.sinkhorn.domain);
        read_if(o, "domain", dom);
        s.sinkhorn.domain = domain_from_name(dom);
    }
    if (j.contains("penalized")) {
        const json& o = j["penalized"];
        reject_unknown(o, {"num_iter_max", "num_inner_iter_max", "stop_thr", "stop_thr2"},
                       "penalized");
        read_if(o, "num_iter_max", s.gcg.numIterMax);
        read_if(o, "num_inner_iter_max", s.gcg.numInnerIterMax);
        read_if(o, "stop_thr", s.gcg.stopThr);
        read_if(o, "stop_thr2", s.gcg.stopThr2);
    }
    if (j.contains("costlearn")) {
        const json& o = j["costlearn"];
        reject_unknown(o, {"outer_steps", "learning_rate", "unroll_length", "discrepancy"},
                       "costlearn");
        read_if(o, "outer_steps", s.bilevel.outerSteps);
        read_if(o, "learning_rate", s.bilevel.learningRate);
        read_if(o, "unroll_length", s.bilevel.unrollLength);
        std::string norm = "mean";
        read_if(o, "discrepancy", norm);
        if (norm == "sum")
            s.bilevel.discrepancy = DiscrepancyNorm::Sum;
        else if (norm == "mean")
            s.bilevel.discrepancy = DiscrepancyNorm::Mean;
        else
            throw ConfigError("costlearn.discrepancy must be 'sum' or 'mean'");
    }
    if (j.contains("pretrain")) {
        const json& o = j["pretrain"];
        reject_unknown(o, {"steps", "learning_rate", "relative_gap_tol"}, "pretrain");
        read_if(o, "steps", s.pretrain.steps);
        read_if(o, "learning_rate", s.pretrain.learningRate);
        read_if(o, "relative_gap_tol", s.pretrain.relativeGapTol);
    }
    read_if(j, "seed", s.seed);
    read_if(j, "jobs", s.jobs);
    return s;
}

SweepSpec load_spec(const std::filesystem::path& path) {
    std::string text;
    try {
        text = read_text(path);
    } catch (const std::runtime_error& e) {
        throw ConfigError(e.what());
    }
    return spec_from_json(text);
}

// --- reusability ------------------------------------------------------------------------------

ReusabilitySpec::ReusabilitySpec() : target(default_fairness_target()) {
    train.nX = 1000;
    train.nY = 100;
    test.nX = 500;
    test.nY = 50;
}

void ReusabilitySpec::validate() const {
    if (trials < 1) throw ConfigError("trials must be >= 1");
    if (!(epsilon > 0.0) || !(penalizedLambda > 0.0) || !(mahalanobisLambda > 0.0) ||
        !(mlpLambda > 0.0))
        throw ConfigError("epsilon and penalties must be positive");
    if (!(mahalanobisLearningRate >= 0.0) || !(mlpLearningRate >= 0.0) || outerSteps < 0)
        throw ConfigError("learning rates and step counts must be non-negative");
    try {
        train.validate();
        test.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
}

ReusabilitySpec reusability_spec_from_json(std::string_view text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    reject_unknown(j,
                   {"trials", "seed", "epsilon", "penalized_lambda", "outer_steps", "target",
                    "train", "test", "mahalanobis", "mlp"},
                   "reusability config");
    ReusabilitySpec s;
    read_if(j, "trials", s.trials);
    read_if(j, "seed", s.seed);
    read_if(j, "epsilon", s.epsilon);
    read_if(j, "penalized_lambda", s.penalizedLambda);
    read_if(j, "outer_steps", s.outerSteps);
    if (j.contains("target")) s.target = matrix_from_json(j["target"], "target");
    for (auto [key, gen] : {std::pair{"train", &s.train}, std::pair{"test", &s.test}}) {
        if (!j.contains(key)) continue;
        reject_unknown(j[key], {"nX", "nY"}, key);
        read_if(j[key], "nX", gen->nX);
        read_if(j[key], "nY", gen->nY);
    }
    for (auto [key, lambda, lr] :
         {std::tuple{"mahalanobis", &s.mahalanobisLambda, &s.mahalanobisLearningRate},
          std::tuple{"mlp", &s.mlpLambda, &s.mlpLearningRate}}) {
        if (!j.contains(key)) continue;
        reject_unknown(j[key], {"lambda", "learning_rate"}, key);
        read_if(j[key], "lambda", *lambda);
        read_if(j[key], "learning_rate", *lr);
    }
    return s;
}

ReusabilityResult run_reusability(const ReusabilitySpec& spec) {
    spec.validate();
    SinkhornConfig sc;
    sc.epsilon = spec.epsilon;

    GenSpec trainSpec = spec.train;
    trainSpec.seed = spec.seed;
    const auto train = generate(trainSpec);
    const Matrix trainF = resolve_target(spec.target, train.X, train.Y, true);
    const auto problem = BilevelProblem::from_data(train.X, train.Y, trainF);

    BilevelConfig mc;
    mc.inner = sc;
    mc.lambda = spec.mahalanobisLambda;
    mc.learningRate = spec.mahalanobisLearningRate;
    mc.outerSteps = spec.outerSteps;
    const auto maha = train_cost(MahalanobisModel::identity(train.X.dim()), problem, mc);

    BilevelConfig nc = mc;
    nc.lambda = spec.mlpLambda;
    nc.learningRate = spec.mlpLearningRate;
    const auto pre = pretrain_mlp(MlpModel::random(train.X.dim(), derive_seed(spec.seed, 2)),
                                  problem.X, problem.Y, problem.baseCost);
    const auto mlp = train_cost(pre.model, problem, nc);

    ReusabilityResult out{{}, maha.model, mlp.model};
    GenSpec testSpec = spec.test;
    testSpec.seed = spec.seed;
    for (int t = 0; t < spec.trials; ++t) {
        const auto test = resample(testSpec, static_cast<std::uint64_t>(t));
        const Matrix F = resolve_target(spec.target, test.X, test.Y, true);
        const auto& src = test.X.labels();
        const auto& dst = test.Y.labels();

        auto t0 = std::chrono::steady_clock::now();
        const Matrix C = squared_euclidean_cost(test.X.points(), test.Y.points()).values();
        const auto vanilla = sinkhorn(C, sc);
        out.records.push_back({t, "vanilla", fairness_loss(vanilla.plan, F, src, dst), seconds_since(t0)});

        GcgConfig gc;
        gc.lambda = spec.penalizedLambda;
        gc.sinkhorn = sc;
        t0 = std::chrono::steady_clock::now();
        const Matrix Cp = squared_euclidean_cost(test.X.points(), test.Y.points()).values();
        const auto pen = penalized_gcg(Cp, F, src, dst, gc);
        out.records.push_back({t, "penalized", pen.report.fairnessLoss, seconds_since(t0)});

        for (const auto* model : {&maha.model, &mlp.model}) {
            t0 = std::chrono::steady_clock::now();
            const auto m = match_with_learned_cost(*model, test.X, test.Y, F, sc);
            const double secs = seconds_since(t0);
            out.records.push_back({t,
                                   std::holds_alternative<MahalanobisModel>(*model)
                                       ? "costlearn_mahalanobis"
                                       : "costlearn_mlp",
                                   m.fairnessLoss, secs});
        }
    }

    if (!spec.outDir.empty()) {
        std::filesystem::create_directories(spec.outDir);
        std::ostringstream ss;
        ss << "trial,method,fairness_loss,inference_seconds\n";
        for (const auto& r : out.records)
            ss << r.trial << ',' << r.method << ',' << csv::format_double(r.fairnessLoss) << ','
               << csv::format_double(r.inferenceSeconds) << '\n';
        write_text(spec.outDir / "reusability.csv", ss.str());
        save_model(spec.outDir / "mahalanobis.json", out.mahalanobis);
        save_model(spec.outDir / "mlp.json", out.mlp);
    }
    return out;
}

// --- plots ------------------------------------------------------------------------------------

std::vector<PlotSeries> emit_plot_data(const std::vector<TradeoffRecord>& records,
                                       const std::filesystem::path& dir) {
    if (records.empty()) throw std::invalid_argument("emit_plot_data: no records");
    std::vector<PlotSeries> series;
    std::vector<std::vector<const TradeoffRecord*>> members;
    for (const auto& r : records) {
        auto it = std::find_if(series.begin(), series.end(),
                               [&](const PlotSeries& s) { return s.method == r.method; });
        if (it == series.end()) {
            series.push_back({r.method, {}, {}});
            members.emplace_back();
            it = series.end() - 1;
        }
        members[static_cast<std::size_t>(it - series.begin())].push_back(&r);
        it->points.emplace_back(r.transportCostGap, r.fairnessLoss);
    }

    // plotting ranges over the finite points; the fairness axis is log10 with a floor
    constexpr double kFloor = 1e-16;
    double xmin = INFINITY, xmax = -INFINITY, ymin = INFINITY, ymax = -INFINITY;
    for (const auto& s : series)
        for (const auto& [x, y] : s.points) {
            if (!std::isfinite(x) || !std::isfinite(y)) continue;
            const double ly = std::log10(std::max(y, kFloor));
            xmin = std::min(xmin, x);
            xmax = std::max(xmax, x);
            ymin = std::min(ymin, ly);
            ymax = std::max(ymax, ly);
        }
    if (!std::isfinite(xmin)) xmin = xmax = ymin = ymax = 0.0;
    if (xmax - xmin < 1e-12) {
        xmin -= 0.5;
        xmax += 0.5;
    }
    if (ymax - ymin < 1e-12) {
        ymin -= 0.5;
        ymax += 0.5;
    }
    constexpr double W = 640, H = 480, L = 70, R = 20, T = 20, B = 50;
    auto px = [&](double x) { return L + (x - xmin) / (xmax - xmin) * (W - L - R); };
    auto py = [&](double y) {
        return T + (ymax - std::log10(std::max(y, kFloor))) / (ymax - ymin) * (H - T - B);
    };
    static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"};

    std::filesystem::create_directories(dir);
    std::ostringstream svg;
    svg << std::setprecision(6);
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
        << "\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    svg << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B
        << "\" stroke=\"black\"/>\n";
    svg << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B
        << "\" stroke=\"black\"/>\n";
    svg << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 12
        << "\" text-anchor=\"middle\" font-size=\"13\">transport cost gap</text>\n";
    svg << "<text x=\"16\" y=\"" << (T + H - B) / 2 << "\" transform=\"rotate(-90 16 "
        << (T + H - B) / 2
        << ")\" text-anchor=\"middle\" font-size=\"13\">fairness loss (log10)</text>\n";
    for (int tick = static_cast<int>(std::ceil(ymin)); tick <= static_cast<int>(std::floor(ymax));
         ++tick)
        svg << "<text x=\"" << L - 6 << "\" y=\"" << py(std::pow(10.0, tick)) + 4
            << "\" text-anchor=\"end\" font-size=\"11\">1e" << tick << "</text>\n";

    for (std::size_t s = 0; s < series.size(); ++s) {
        auto& ser = series[s];
        std::ofstream out(dir / (ser.method + ".csv"), std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot write plot data into " + dir.string());
        out << "grid_value,transport_cost_gap,fairness_loss\n";
        for (const auto* r : members[s])
            out << csv::format_double(r->gridValue) << ',' << csv::format_double(r->transportCostGap)
                << ',' << csv::format_double(r->fairnessLoss) << '\n';

        const char* color = palette[s % 5];
        for (const auto& [x, y] : ser.points)
            if (std::isfinite(x) && std::isfinite(y)) ser.svgPoints.emplace_back(px(x), py(y));
        svg << "<polyline fill=\"none\" stroke=\"" << color << "\" points=\"";
        for (const auto& [x, y] : ser.svgPoints) svg << x << ',' << y << ' ';
        svg << "\"/>\n";
        for (const auto& [x, y] : ser.svgPoints)
            svg << "<circle cx=\"" << x << "\" cy=\"" << y << "\" r=\"2.5\" fill=\"" << color
                << "\"/>\n";
        svg << "<text x=\"" << W - R - 4 << "\" y=\"" << T + 14 + 16 * static_cast<double>(s)
            << "\" text-anchor=\"end\" font-size=\"12\" fill=\"" << color << "\">" << ser.method
            << "</text>\n";
    }
    svg << "</svg>\n";
    write_text(dir / "tradeoff.svg", svg.str());
    return series;
}

}  // namespace fairot
