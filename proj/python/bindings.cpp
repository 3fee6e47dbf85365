#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "multienv/cli.hpp"
#include "multienv/config.hpp"
#include "multienv/eval.hpp"
#include "multienv/predictors.hpp"
#include "multienv/weighted.hpp"

namespace py = pybind11;
using namespace multienv;

namespace {

using EnvTuple = std::tuple<std::string, Eigen::MatrixXd, Eigen::VectorXd>;

py::object to_python(const nlohmann::json& j) {
  return py::module_::import("json").attr("loads")(j.dump());
}

nlohmann::json from_python(const py::object& obj) {
  return nlohmann::json::parse(py::module_::import("json").attr("dumps")(obj).cast<std::string>());
}

// Interval -> (lo, hi); union -> list of pairs; labels -> sorted list.
py::object set_to_python(const PredictionSet& s) {
  if (const auto* iv = std::get_if<Interval>(&s)) return py::make_tuple(iv->lo, iv->hi);
  if (const auto* u = std::get_if<IntervalUnion>(&s)) {
    py::list parts;
    for (const auto& p : u->parts) parts.append(py::make_tuple(p.lo, p.hi));
    return parts;
  }
  return py::cast(std::get<LabelSet>(s).labels);
}

OutcomeKind kind_of(int num_classes) {
  return num_classes > 0 ? OutcomeKind::classification(num_classes) : OutcomeKind::regression();
}

std::vector<double> grid_or_default(std::optional<std::vector<double>> grid) {
  return grid ? *grid : default_lambda_grid();
}

FamilyBuilder family_for(const MultiEnvDataset& data, std::optional<std::vector<double>> grid) {
  if (data.outcome_kind().is_classification()) {
    return softmax_sublevel_builder(data.outcome_kind().num_classes);
  }
  return ridge_symmetric_builder(grid_or_default(std::move(grid)));
}

MultiEnvDataset make_dataset(const std::vector<EnvTuple>& envs, int num_classes) {
  std::vector<EnvironmentSample> out;
  for (const auto& [id, X, y] : envs) out.push_back({id, X, y});
  return MultiEnvDataset(std::move(out), kind_of(num_classes));
}

DiscreteDistribution make_law(const std::vector<std::pair<double, double>>& atoms) {
  std::vector<Atom> a;
  for (const auto& [loc, w] : atoms) a.push_back({loc, w});
  return DiscreteDistribution(std::move(a));
}

}  // namespace

PYBIND11_MODULE(_multienv, m) {
  m.doc() = "Multi-environment conformal prediction sets";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);

  m.def("quant_plus", [](const std::vector<double>& v, double alpha) { return quant_plus(v, alpha); },
        py::arg("values"), py::arg("alpha"));
  m.def("quant_minus", [](const std::vector<double>& v, double alpha) { return quant_minus(v, alpha); },
        py::arg("values"), py::arg("alpha"));
  m.def("left_quantile",
        [](const std::vector<std::pair<double, double>>& atoms, double alpha) {
          return left_quantile(make_law(atoms), alpha);
        },
        py::arg("atoms"), py::arg("alpha"), "atoms: list of (location, weight)");
  m.def("right_quantile",
        [](const std::vector<std::pair<double, double>>& atoms, double alpha) {
          return right_quantile(make_law(atoms), alpha);
        },
        py::arg("atoms"), py::arg("alpha"));

  py::class_<MultiEnvDataset>(m, "Dataset")
      .def(py::init(&make_dataset), py::arg("environments"), py::arg("num_classes") = 0,
           "environments: list of (env_id, X, y)")
      .def_property_readonly("num_environments", &MultiEnvDataset::num_environments)
      .def_property_readonly("dim", &MultiEnvDataset::dim)
      .def_property_readonly("total_rows", &MultiEnvDataset::total_rows)
      .def("env",
           [](const MultiEnvDataset& d, std::size_t i) {
             const auto& e = d.env(i);
             return EnvTuple{e.env_id, e.X, e.y};
           })
      .def("to_csv", [](const MultiEnvDataset& d) { return to_csv(d); })
      .def_static(
          "from_csv",
          [](const std::string& text, int num_classes) { return parse_csv(text, kind_of(num_classes)); },
          py::arg("text"), py::arg("num_classes") = 0);

  m.def(
      "generate",
      [](std::size_t m_envs, std::size_t n, int p, double env_effect_scale, double noise_scale,
         double outlier_frac, double outlier_noise_multiplier, std::uint64_t seed) {
        HierGenConfig cfg;
        cfg.m = m_envs;
        cfg.n_min = cfg.n_max = n;
        cfg.p = p;
        cfg.env_effect_scale = env_effect_scale;
        cfg.noise_scale = noise_scale;
        cfg.outlier_frac = outlier_frac;
        cfg.outlier_noise_multiplier = outlier_noise_multiplier;
        cfg.seed = seed;
        GeneratedData g = generate_hierarchical_detailed(cfg);
        return py::make_tuple(std::move(g.dataset), g.outlier);
      },
      py::arg("m") = 10, py::arg("n") = 50, py::arg("p") = 5, py::arg("env_effect_scale") = 0.5,
      py::arg("noise_scale") = 1.0, py::arg("outlier_frac") = 0.0,
      py::arg("outlier_noise_multiplier") = 1.0, py::arg("seed") = 0,
      "Hierarchical generator; returns (dataset, outlier flags).");

  py::class_<ConfidenceMapping, std::shared_ptr<ConfidenceMapping>>(m, "Mapping")
      .def("__call__", [](const ConfidenceMapping& c, const Eigen::VectorXd& x) {
        return set_to_python(c.evaluate(x));
      })
      .def("info", [](const ConfidenceMapping& c) { return to_python(c.info()); });

  m.def(
      "jackknife_minmax",
      [](const MultiEnvDataset& d, double alpha, double delta,
         std::optional<std::vector<double>> grid, int workers) -> std::shared_ptr<ConfidenceMapping> {
        return fit_jackknife_minmax(d, family_for(d, std::move(grid)), alpha, delta, workers);
      },
      py::arg("data"), py::arg("alpha"), py::arg("delta"), py::arg("lambda_grid") = py::none(),
      py::arg("workers") = 1);
  m.def(
      "split_conformal",
      [](const MultiEnvDataset& d, double alpha, double delta, double gamma, std::uint64_t seed,
         std::optional<std::vector<double>> grid) -> std::shared_ptr<ConfidenceMapping> {
        Rng rng(seed);
        return fit_split_conformal(d, family_for(d, std::move(grid)), alpha, delta, gamma, rng);
      },
      py::arg("data"), py::arg("alpha"), py::arg("delta"), py::arg("gamma") = 0.5,
      py::arg("seed") = 0, py::arg("lambda_grid") = py::none());
  m.def(
      "hier_jackknife_plus",
      [](const MultiEnvDataset& d, double alpha,
         std::optional<std::vector<double>> grid) -> std::shared_ptr<ConfidenceMapping> {
        return fit_hier_jackknife_plus(d, ridge_predictor_builder(grid_or_default(grid)), alpha);
      },
      py::arg("data"), py::arg("alpha"), py::arg("lambda_grid") = py::none());
  m.def(
      "hcp",
      [](const MultiEnvDataset& d, double alpha, double gamma, std::uint64_t seed,
         std::optional<std::vector<double>> grid) -> std::shared_ptr<ConfidenceMapping> {
        Rng rng(seed);
        return fit_hcp(d, ridge_predictor_builder(grid_or_default(grid)), alpha, gamma, rng);
      },
      py::arg("data"), py::arg("alpha"), py::arg("gamma") = 0.5, py::arg("seed") = 0,
      py::arg("lambda_grid") = py::none());
  m.def(
      "jackknife_plus_quantile",
      [](const MultiEnvDataset& d, double alpha, double delta,
         std::optional<std::vector<double>> grid) -> std::shared_ptr<ConfidenceMapping> {
        return fit_jackknife_plus_quantile(d, ridge_predictor_builder(grid_or_default(grid)), alpha,
                                           delta);
      },
      py::arg("data"), py::arg("alpha"), py::arg("delta"), py::arg("lambda_grid") = py::none());
  m.def(
      "resized_split_conformal",
      [](const MultiEnvDataset& d, const Eigen::MatrixXd& X_labeled,
         const Eigen::VectorXd& y_labeled, double alpha, double delta, double gamma, double alpha0,
         std::uint64_t seed,
         std::optional<std::vector<double>> grid) -> std::shared_ptr<ConfidenceMapping> {
        Rng rng(seed);
        const EnvironmentSample labeled{"test", X_labeled, y_labeled};
        return fit_resized_split_conformal(d, labeled, family_for(d, std::move(grid)), alpha, delta,
                                           gamma, alpha0, rng);
      },
      py::arg("data"), py::arg("X_labeled"), py::arg("y_labeled"), py::arg("alpha"),
      py::arg("delta"), py::arg("gamma") = 0.5, py::arg("alpha0") = 0.05, py::arg("seed") = 0,
      py::arg("lambda_grid") = py::none());

  m.def(
      "weighted_threshold",
      [](const Eigen::VectorXd& scores, const Eigen::MatrixXd& features, double delta,
         double ridge_weight) {
        WeightedOptions opts;
        opts.ridge_weight = ridge_weight;
        return weighted_threshold(scores, features, delta, opts);
      },
      py::arg("scores"), py::arg("features"), py::arg("delta"), py::arg("ridge_weight") = 0.0,
      "features has one row per score plus a final row for the test environment.");
  m.def(
      "dual_eta",
      [](const Eigen::VectorXd& scores, const Eigen::MatrixXd& features, double delta,
         double ridge_weight, double s) { return dual_eta(scores, features, delta, ridge_weight, s).eta; },
      py::arg("scores"), py::arg("features"), py::arg("delta"), py::arg("ridge_weight"),
      py::arg("s"));

  m.def(
      "evaluate",
      [](const ConfidenceMapping& mapping, const std::vector<EnvTuple>& envs, double alpha,
         const std::string& rule) {
        std::vector<EnvironmentSample> tests;
        for (const auto& [id, X, y] : envs) tests.push_back({id, X, y});
        return to_python(
            evaluate_mapping(mapping, tests, alpha, std::nullopt, parse_rule(rule)).to_json());
      },
      py::arg("mapping"), py::arg("test_envs"), py::arg("alpha"), py::arg("rule") = "conformal");
  m.def(
      "run_trials",
      [](const py::object& config) {
        const TrialPlan plan = make_plan(parse_run_config(from_python(config)));
        TrialRun run;
        {
          py::gil_scoped_release release;
          run = run_trials(plan);
        }
        return to_python(run.report.to_json());
      },
      py::arg("config"), "Monte Carlo trials from a run configuration dict.");
  m.def(
      "run_cli",
      [](std::vector<std::string> args) {
        args.insert(args.begin(), "multienv");
        std::vector<const char*> argv;
        for (const auto& a : args) argv.push_back(a.c_str());
        std::ostringstream out, err;
        const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Runs the command-line tool in process; returns (code, stdout, stderr).");
}
