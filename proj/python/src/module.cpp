#include "fairot/costlearn.hpp"
#include "fairot/fairness.hpp"
#include "fairot/harness.hpp"
#include "fairot/oracle.hpp"
#include "fairot/penalized.hpp"
#include "fairot/sinkhorn.hpp"
#include "fairot/synthdata.hpp"

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <algorithm>

namespace py = pybind11;
using namespace fairot;

namespace {

// Groups default to one more than the largest label.
GroupLabels to_labels(const std::vector<int>& labels, int groups) {
    if (groups <= 0)
        groups = labels.empty() ? 1 : *std::max_element(labels.begin(), labels.end()) + 1;
    return {labels, groups};
}

SinkhornConfig sinkhorn_config(double epsilon, int maxIter, double tol, const std::string& domain) {
    SinkhornConfig cfg;
    cfg.epsilon = epsilon;
    cfg.maxIter = maxIter;
    cfg.tol = tol;
    if (domain == "auto")
        cfg.domain = SinkhornDomain::Auto;
    else if (domain == "multiplicative")
        cfg.domain = SinkhornDomain::Multiplicative;
    else if (domain == "log")
        cfg.domain = SinkhornDomain::Log;
    else
        throw std::invalid_argument("unknown sinkhorn domain '" + domain + "'");
    return cfg;
}

py::dict report_dict(const SolverReport& r) {
    py::dict d;
    d["converged"] = r.converged;
    d["iterations"] = r.iterations;
    d["final_residual"] = r.finalResidual;
    d["objective"] = r.objective;
    d["transport_cost"] = r.transportCost;
    d["fairness_loss"] = r.fairnessLoss;
    d["wall_time_seconds"] = r.wallTimeSeconds;
    d["log_domain"] = r.logDomain;
    return d;
}

py::dict sinkhorn_dict(const SinkhornResult& r) {
    py::dict d = report_dict(r.report);
    d["plan"] = r.plan.values();
    d["f"] = r.potentials.f;
    d["g"] = r.potentials.g;
    d["h"] = r.potentials.h;
    return d;
}

py::dict record_dict(const TradeoffRecord& r) {
    py::dict d;
    d["method"] = r.method;
    d["grid_value"] = r.gridValue;
    d["transport_cost_gap"] = r.transportCostGap;
    d["fairness_loss"] = r.fairnessLoss;
    d["iterations"] = r.iterations;
    d["seed"] = r.seed;
    d["ok"] = r.ok;
    d["note"] = r.note;
    return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Fairness-constrained entropic optimal transport";
    m.attr("__version__") = FAIROT_VERSION;

    py::register_exception<InfeasibleError>(m, "InfeasibleError", PyExc_RuntimeError);
    py::register_exception<NumericError>(m, "NumericError", PyExc_RuntimeError);
    py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);

    m.def("squared_euclidean_cost",
          [](const Matrix& X, const Matrix& Y) { return squared_euclidean_cost(X, Y).values(); },
          py::arg("X"), py::arg("Y"));
    m.def("group_coupling",
          [](const Matrix& plan, const std::vector<int>& src, const std::vector<int>& dst,
             int ks, int kw) { return group_coupling(plan, to_labels(src, ks), to_labels(dst, kw)); },
          py::arg("plan"), py::arg("src"), py::arg("dst"), py::arg("src_groups") = 0,
          py::arg("dst_groups") = 0);
    m.def("fairness_loss",
          [](const Matrix& plan, const Matrix& F, const std::vector<int>& src,
             const std::vector<int>& dst) {
              return fairness_loss(plan, F, to_labels(src, static_cast<int>(F.rows())),
                                   to_labels(dst, static_cast<int>(F.cols())));
          },
          py::arg("plan"), py::arg("F"), py::arg("src"), py::arg("dst"));
    m.def("fairness_loss_grad",
          [](const Matrix& plan, const Matrix& F, const std::vector<int>& src,
             const std::vector<int>& dst) {
              return fairness_loss_grad(plan, F, to_labels(src, static_cast<int>(F.rows())),
                                        to_labels(dst, static_cast<int>(F.cols())));
          },
          py::arg("plan"), py::arg("F"), py::arg("src"), py::arg("dst"));
    m.def("repair_target",
          [](const Matrix& F, const Vector& p, const Vector& q) { return repair_target(F, p, q); },
          py::arg("F"), py::arg("p"), py::arg("q"));
    m.def("default_fairness_target", &default_fairness_target);

    m.def("sinkhorn",
          [](const Matrix& C, double epsilon, int maxIter, double tol, const std::string& domain) {
              return sinkhorn_dict(sinkhorn(C, sinkhorn_config(epsilon, maxIter, tol, domain)));
          },
          py::arg("cost"), py::arg("epsilon") = 1.0, py::arg("max_iter") = 1000,
          py::arg("tol") = 1e-6, py::arg("domain") = "auto");
    m.def("fair_sinkhorn",
          [](const Matrix& C, const Matrix& F, const std::vector<int>& src,
             const std::vector<int>& dst, double epsilon, int maxIter, double tol,
             const std::string& domain) {
              return sinkhorn_dict(fair_sinkhorn(C, F, to_labels(src, static_cast<int>(F.rows())),
                                                 to_labels(dst, static_cast<int>(F.cols())),
                                                 sinkhorn_config(epsilon, maxIter, tol, domain)));
          },
          py::arg("cost"), py::arg("F"), py::arg("src"), py::arg("dst"), py::arg("epsilon") = 1.0,
          py::arg("max_iter") = 1000, py::arg("tol") = 1e-6, py::arg("domain") = "auto");
    m.def("penalized_gcg",
          [](const Matrix& C, const Matrix& F, const std::vector<int>& src,
             const std::vector<int>& dst, double lambda, double epsilon, int numIterMax,
             int numInnerIterMax, double stopThr, double stopThr2) {
              GcgConfig cfg;
              cfg.lambda = lambda;
              cfg.sinkhorn.epsilon = epsilon;
              cfg.numIterMax = numIterMax;
              cfg.numInnerIterMax = numInnerIterMax;
              cfg.stopThr = stopThr;
              cfg.stopThr2 = stopThr2;
              const auto r = penalized_gcg(C, F, to_labels(src, static_cast<int>(F.rows())),
                                           to_labels(dst, static_cast<int>(F.cols())), cfg);
              py::dict d = report_dict(r.report);
              d["plan"] = r.plan.values();
              py::list trace;
              for (const auto& row : r.trace)
                  trace.append(py::make_tuple(row.iter, row.objective, row.transportCost,
                                              row.fairnessLoss, row.alpha));
              d["trace"] = trace;
              return d;
          },
          py::arg("cost"), py::arg("F"), py::arg("src"), py::arg("dst"), py::arg("lam"),
          py::arg("epsilon") = 1.0, py::arg("num_iter_max") = 2000,
          py::arg("num_inner_iter_max") = 200, py::arg("stop_thr") = 1e-9,
          py::arg("stop_thr2") = 1e-9);

    m.def("generate",
          [](const std::string& kind, Index nX, Index nY, std::uint64_t seed) {
              GenSpec spec;
              spec.dataset = dataset_kind_from_string(kind);
              spec.nX = nX;
              spec.nY = nY;
              spec.seed = seed;
              const auto d = generate(spec);
              py::dict out;
              out["X"] = d.X.points();
              out["Y"] = d.Y.points();
              out["x_labels"] = d.X.labels().index;
              out["y_labels"] = d.Y.labels().index;
              return out;
          },
          py::arg("kind") = "gaussians", py::arg("n_x") = 250, py::arg("n_y") = 25,
          py::arg("seed") = 0);

    m.def("dual_ascent_entropic",
          [](const Matrix& C, double epsilon) {
              const auto r = oracle::dual_ascent_entropic(C, oracle::DualAscentConfig{epsilon});
              py::dict d;
              d["plan"] = r.plan;
              d["converged"] = r.converged;
              d["iterations"] = r.iterations;
              return d;
          },
          py::arg("cost"), py::arg("epsilon") = 1.0);

    m.def("mahalanobis_cost",
          [](const Matrix& M, const Matrix& X, const Matrix& Y) {
              return mahalanobis_cost(M, X, Y).values();
          },
          py::arg("M"), py::arg("X"), py::arg("Y"));
    m.def("psd_project", &psd_project, py::arg("A"));
    m.def("model_cost",
          [](const std::string& modelJson, const Matrix& X, const Matrix& Y) {
              return model_cost(model_from_json(modelJson), X, Y).values();
          },
          py::arg("model_json"), py::arg("X"), py::arg("Y"));

    m.def("run_sweep",
          [](const std::string& configJson) {
              const SweepSpec spec = spec_from_json(configJson);
              std::vector<TradeoffRecord> records;
              {
                  py::gil_scoped_release release;
                  records = run_sweep(spec);
              }
              py::list out;
              for (const auto& r : records) out.append(record_dict(r));
              return out;
          },
          py::arg("config_json"),
          "Runs a trade-off sweep described by a JSON document (same schema as the CLI).");
}
