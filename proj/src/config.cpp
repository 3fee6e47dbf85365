#include "multienv/config.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "multienv/predictors.hpp"

namespace multienv {
namespace {

using nlohmann::json;

void check_keys(const json& j, const char* section, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw ConfigError(std::string(section) + ": expected an object");
  const std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [key, value] : j.items()) {
    if (!ok.count(key)) throw ConfigError(std::string(section) + ": unknown key '" + key + "'");
  }
}

template <class T>
T get_or(const json& j, const char* key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad value for '") + key + "': " + e.what());
  }
}

std::size_t count_or(const json& j, const char* key, std::size_t fallback) {
  if (!j.contains(key)) return fallback;
  const json& v = j.at(key);
  if (!v.is_number_integer() || v.get<long long>() < 0) {
    throw ConfigError(std::string("'") + key + "' must be a nonnegative integer");
  }
  return v.get<std::size_t>();
}

std::vector<double> reals_or(const json& j, const char* key, std::vector<double> fallback) {
  if (!j.contains(key)) return fallback;
  const json& v = j.at(key);
  if (!v.is_array()) throw ConfigError(std::string("'") + key + "' must be an array");
  std::vector<double> out;
  for (const auto& x : v) {
    if (!x.is_number()) throw ConfigError(std::string("'") + key + "' must hold numbers");
    out.push_back(x.get<double>());
  }
  return out;
}

template <class F>
auto rethrow_as_config(F&& f) {
  try {
    return f();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

}  // namespace

HierGenConfig parse_generator(const json& j) {
  check_keys(j, "generator",
             {"m", "n", "n_min", "n_max", "p", "beta", "env_effect_scale", "noise_scale",
              "outlier_frac", "outlier_noise_multiplier"});
  HierGenConfig cfg;
  cfg.m = count_or(j, "m", cfg.m);
  const std::size_t n = count_or(j, "n", cfg.n_min);
  if (j.contains("n") && (j.contains("n_min") || j.contains("n_max"))) {
    throw ConfigError("generator: give either 'n' or 'n_min'/'n_max'");
  }
  cfg.n_min = count_or(j, "n_min", n);
  cfg.n_max = count_or(j, "n_max", j.contains("n_min") ? cfg.n_min : n);
  cfg.p = static_cast<int>(count_or(j, "p", static_cast<std::size_t>(cfg.p)));
  cfg.beta = reals_or(j, "beta", {});
  cfg.env_effect_scale = get_or(j, "env_effect_scale", cfg.env_effect_scale);
  cfg.noise_scale = get_or(j, "noise_scale", cfg.noise_scale);
  cfg.outlier_frac = get_or(j, "outlier_frac", cfg.outlier_frac);
  cfg.outlier_noise_multiplier = get_or(j, "outlier_noise_multiplier", cfg.outlier_noise_multiplier);
  rethrow_as_config([&] {
    cfg.validate();
    return 0;
  });
  return cfg;
}

MethodSpec parse_method_spec(const json& j) {
  check_keys(j, "method",
             {"algorithm", "alpha", "delta", "gamma", "alpha0", "labeled", "lambda_grid",
              "family", "band_lower", "band_upper", "softmax_l2", "feature_map", "ridge_weight",
              "randomized"});
  MethodSpec s;
  if (j.contains("algorithm")) {
    s.method = rethrow_as_config([&] { return parse_method(get_or<std::string>(j, "algorithm", "")); });
  }
  s.alpha = get_or(j, "alpha", s.alpha);
  s.delta = get_or(j, "delta", s.delta);
  s.gamma = get_or(j, "gamma", s.gamma);
  s.alpha0 = get_or(j, "alpha0", s.alpha0);
  s.labeled = count_or(j, "labeled", s.labeled);
  s.lambda_grid = reals_or(j, "lambda_grid", {});
  s.family = get_or<std::string>(j, "family", s.family);
  s.band_lower = get_or(j, "band_lower", s.band_lower);
  s.band_upper = get_or(j, "band_upper", s.band_upper);
  s.softmax_l2 = get_or(j, "softmax_l2", s.softmax_l2);
  s.feature_map = get_or<std::string>(j, "feature_map", s.feature_map);
  s.ridge_weight = get_or(j, "ridge_weight", s.ridge_weight);
  s.randomized = get_or(j, "randomized", s.randomized);
  rethrow_as_config([&] {
    s.validate();
    return 0;
  });
  return s;
}

RunConfig parse_run_config(const json& j) {
  check_keys(j, "config", {"seed", "workers", "data", "method", "trials", "sweep", "compare", "output"});
  RunConfig cfg;
  cfg.seed = get_or<std::uint64_t>(j, "seed", 0);
  cfg.workers = get_or(j, "workers", 1);
  if (cfg.workers < 1) throw ConfigError("workers must be at least 1");

  if (!j.contains("data")) throw ConfigError("config: missing 'data' section");
  const json& data = j.at("data");
  check_keys(data, "data", {"generator", "csv", "outcome", "num_classes"});
  if (data.contains("generator") == data.contains("csv")) {
    throw ConfigError("data: give exactly one of 'generator' or 'csv'");
  }
  if (data.contains("generator")) {
    if (data.contains("outcome") || data.contains("num_classes")) {
      throw ConfigError("data: the generator only produces regression outcomes");
    }
    cfg.generator = parse_generator(data.at("generator"));
  } else {
    cfg.csv_path = get_or<std::string>(data, "csv", "");
    const auto outcome = get_or<std::string>(data, "outcome", "regression");
    if (outcome == "regression") {
      cfg.outcome = OutcomeKind::regression();
    } else if (outcome == "classification") {
      const auto k = count_or(data, "num_classes", 0);
      if (k < 2) throw ConfigError("data: classification needs num_classes >= 2");
      cfg.outcome = OutcomeKind::classification(static_cast<int>(k));
    } else {
      throw ConfigError("data: outcome must be 'regression' or 'classification'");
    }
  }

  cfg.method = parse_method_spec(j.value("method", json::object()));

  if (j.contains("trials")) {
    const json& t = j.at("trials");
    check_keys(t, "trials", {"count", "train_envs", "test_envs", "rule", "clip"});
    cfg.trials = count_or(t, "count", cfg.trials);
    cfg.train_envs = count_or(t, "train_envs", cfg.train_envs);
    cfg.test_envs = count_or(t, "test_envs", cfg.test_envs);
    if (t.contains("rule")) {
      cfg.rule = rethrow_as_config([&] { return parse_rule(get_or<std::string>(t, "rule", "")); });
    }
    if (t.contains("clip")) {
      const auto c = reals_or(t, "clip", {});
      if (c.size() != 2 || !(c[0] < c[1])) throw ConfigError("trials.clip must be [lo, hi] with lo < hi");
      cfg.clip = ClipRange{c[0], c[1]};
    }
  }

  if (j.contains("sweep")) {
    const json& s = j.at("sweep");
    check_keys(s, "sweep", {"param", "values"});
    SweepSpec sweep{get_or<std::string>(s, "param", ""), reals_or(s, "values", {})};
    if (sweep.values.empty()) throw ConfigError("sweep: values must be non-empty");
    for (double v : sweep.values) {
      MethodSpec probe = cfg.method;
      rethrow_as_config([&] {
        apply_param(probe, sweep.param, v);
        probe.validate();
        return 0;
      });
    }
    cfg.sweep = std::move(sweep);
  }

  if (j.contains("compare")) {
    const json& c = j.at("compare");
    check_keys(c, "compare", {"method_b", "delta_grid"});
    if (!c.contains("method_b")) throw ConfigError("compare: missing 'method_b'");
    CompareSpec cmp{parse_method_spec(c.at("method_b")), reals_or(c, "delta_grid", {})};
    if (cmp.delta_grid.empty()) throw ConfigError("compare: delta_grid must be non-empty");
    for (std::size_t i = 0; i < cmp.delta_grid.size(); ++i) {
      const double d = cmp.delta_grid[i];
      if (!(d > 0 && d < 1)) throw ConfigError("compare: delta_grid values must lie in (0, 1)");
      if (i > 0 && !(cmp.delta_grid[i - 1] <= d)) {
        throw ConfigError("compare: delta_grid must be ascending");
      }
    }
    cfg.compare = std::move(cmp);
  }

  if (j.contains("output")) {
    const json& o = j.at("output");
    check_keys(o, "output", {"report", "sweep_csv", "dataset"});
    cfg.output.report = get_or<std::string>(o, "report", "");
    cfg.output.sweep_csv = get_or<std::string>(o, "sweep_csv", "");
    cfg.output.dataset = get_or<std::string>(o, "dataset", "");
  }
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config file '" + path + "' is not valid JSON: " + e.what());
  }
  return parse_run_config(j);
}

void apply_param(MethodSpec& spec, const std::string& param, double value) {
  if (param == "alpha") {
    spec.alpha = value;
  } else if (param == "delta") {
    spec.delta = value;
  } else if (param == "gamma") {
    spec.gamma = value;
  } else if (param == "alpha0") {
    spec.alpha0 = value;
  } else if (param == "ridge_weight") {
    spec.ridge_weight = value;
  } else if (param == "labeled") {
    if (!(value >= 1) || value != std::floor(value)) {
      throw ConfigError("sweep: labeled values must be positive integers");
    }
    spec.labeled = static_cast<std::size_t>(value);
  } else {
    throw ConfigError("unknown sweep parameter '" + param + "'");
  }
}

json to_json(const HierGenConfig& cfg) {
  return {{"m", cfg.m},
          {"n_min", cfg.n_min},
          {"n_max", cfg.n_max},
          {"p", cfg.p},
          {"beta", cfg.beta},
          {"env_effect_scale", cfg.env_effect_scale},
          {"noise_scale", cfg.noise_scale},
          {"outlier_frac", cfg.outlier_frac},
          {"outlier_noise_multiplier", cfg.outlier_noise_multiplier}};
}

json to_json(const MethodSpec& s) {
  return {{"algorithm", method_name(s.method)},
          {"alpha", s.alpha},
          {"delta", s.delta},
          {"gamma", s.gamma},
          {"alpha0", s.alpha0},
          {"labeled", s.labeled},
          {"lambda_grid", s.lambda_grid.empty() ? default_lambda_grid() : s.lambda_grid},
          {"family", s.family},
          {"band_lower", s.band_lower},
          {"band_upper", s.band_upper},
          {"softmax_l2", s.softmax_l2},
          {"feature_map", s.feature_map},
          {"ridge_weight", s.ridge_weight},
          {"randomized", s.randomized}};
}

json to_json(const RunConfig& cfg) {
  json data;
  if (cfg.generator) {
    data["generator"] = to_json(*cfg.generator);
  } else {
    data["csv"] = cfg.csv_path.value_or("");
    data["outcome"] = cfg.outcome.is_classification() ? "classification" : "regression";
    if (cfg.outcome.is_classification()) data["num_classes"] = cfg.outcome.num_classes;
  }
  json trials{{"count", cfg.trials},
              {"train_envs", cfg.train_envs},
              {"test_envs", cfg.test_envs},
              {"rule", rule_name(cfg.rule)}};
  if (cfg.clip) trials["clip"] = {cfg.clip->lo, cfg.clip->hi};
  json out{{"seed", cfg.seed}, {"data", data}, {"method", to_json(cfg.method)}, {"trials", trials}};
  if (cfg.sweep) out["sweep"] = {{"param", cfg.sweep->param}, {"values", cfg.sweep->values}};
  if (cfg.compare) {
    out["compare"] = {{"method_b", to_json(cfg.compare->method_b)},
                      {"delta_grid", cfg.compare->delta_grid}};
  }
  return out;
}

TrialPlan make_plan(const RunConfig& cfg) {
  TrialPlan plan;
  plan.generator = cfg.generator;
  if (cfg.csv_path) {
    plan.dataset = std::make_shared<const MultiEnvDataset>(load_csv(*cfg.csv_path, cfg.outcome));
  }
  plan.train_envs = cfg.train_envs;
  plan.test_envs = cfg.test_envs;
  plan.method = cfg.method;
  plan.trials = cfg.trials;
  plan.seed = cfg.seed;
  plan.clip = cfg.clip;
  plan.rule = cfg.rule;
  plan.workers = cfg.workers;
  return plan;
}

}  // namespace multienv
