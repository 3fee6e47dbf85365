#include "multienv/cli.hpp"

#include <charconv>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "multienv/config.hpp"
#include "multienv/data.hpp"
#include "multienv/eval.hpp"

namespace multienv {
namespace {

using nlohmann::json;

struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<int> workers;
  std::optional<std::size_t> trials;
  std::optional<std::string> algorithm;
  std::optional<double> alpha;
  std::optional<double> delta;
  std::optional<double> gamma;
  std::optional<std::string> report;
  std::optional<std::string> sweep_csv;
  std::optional<std::string> dataset;
};

class RuntimeFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string number(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

json read_config_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config file '" + path + "' is not valid JSON: " + e.what());
  }
}

RunConfig load_with_overrides(const std::string& path, const Overrides& o) {
  json j = read_config_json(path);
  if (!j.is_object()) throw ConfigError("config: expected a JSON object");
  if (o.seed) j["seed"] = *o.seed;
  if (o.workers) j["workers"] = *o.workers;
  if (o.trials) j["trials"]["count"] = *o.trials;
  if (o.algorithm) j["method"]["algorithm"] = *o.algorithm;
  if (o.alpha) j["method"]["alpha"] = *o.alpha;
  if (o.delta) j["method"]["delta"] = *o.delta;
  if (o.gamma) j["method"]["gamma"] = *o.gamma;
  if (o.report) j["output"]["report"] = *o.report;
  if (o.sweep_csv) j["output"]["sweep_csv"] = *o.sweep_csv;
  if (o.dataset) j["output"]["dataset"] = *o.dataset;
  return parse_run_config(j);
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RuntimeFailure("cannot open '" + path + "' for writing");
  out << text;
  if (!out) throw RuntimeFailure("failed writing '" + path + "'");
}

void emit(const std::string& path, const json& report, std::ostream& out) {
  const std::string text = report.dump(2) + "\n";
  if (path.empty()) {
    out << text;
  } else {
    write_file(path, text);
  }
}

TrialPlan checked_plan(const RunConfig& cfg) {
  TrialPlan plan;
  try {
    plan = make_plan(cfg);
    plan.validate();
  } catch (const ParseError& e) {
    throw ConfigError(std::string("dataset: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  } catch (const std::runtime_error& e) {
    throw ConfigError(e.what());
  }
  return plan;
}

json logs_json(const std::vector<TrialLog>& logs) {
  json out = json::array();
  for (const auto& l : logs) {
    out.push_back({{"trial", l.trial},
                   {"data_seed", l.seeds.data},
                   {"algorithm_seed", l.seeds.algorithm},
                   {"mapping", l.mapping}});
  }
  return out;
}

std::string csv_row(const std::string& param, double value, const CoverageAggregates& a) {
  std::string row = param + "," + number(value) + "," + number(a.emp_one_minus_delta) + ",";
  if (a.emp_one_minus_alpha) row += number(*a.emp_one_minus_alpha);
  row += "," + number(a.emp_set_length) + "\n";
  return row;
}

constexpr const char* kCsvHeader =
    "param,value,emp_one_minus_delta,emp_one_minus_alpha,emp_set_length\n";

int cmd_simulate(const RunConfig& cfg, std::ostream& out) {
  if (!cfg.generator) throw ConfigError("simulate needs data.generator");
  if (cfg.output.dataset.empty()) throw ConfigError("simulate needs output.dataset or --out");
  HierGenConfig gen = *cfg.generator;
  gen.seed = cfg.seed;
  const MultiEnvDataset data = generate_hierarchical(gen);
  write_file(cfg.output.dataset, to_csv(data));
  out << json{{"dataset", cfg.output.dataset},
              {"environments", data.num_environments()},
              {"rows", data.total_rows()}}
             .dump()
      << "\n";
  return kExitOk;
}

int cmd_run(const RunConfig& cfg, std::ostream& out) {
  TrialPlan plan = checked_plan(cfg);
  json report{{"config", to_json(cfg)}};
  std::string csv = kCsvHeader;
  if (cfg.sweep) {
    json sweep = json::array();
    for (double v : cfg.sweep->values) {
      plan.method = cfg.method;
      apply_param(plan.method, cfg.sweep->param, v);
      const TrialRun run = run_trials(plan);
      csv += csv_row(cfg.sweep->param, v, run.report.aggregates);
      sweep.push_back({{"value", v}, {"report", run.report.to_json()}, {"trials", logs_json(run.logs)}});
    }
    report["sweep"] = std::move(sweep);
  } else {
    const TrialRun run = run_trials(plan);
    csv += csv_row("delta", cfg.method.delta, run.report.aggregates);
    report["report"] = run.report.to_json();
    report["trials"] = logs_json(run.logs);
  }
  if (!cfg.output.sweep_csv.empty()) write_file(cfg.output.sweep_csv, csv);
  emit(cfg.output.report, report, out);
  return kExitOk;
}

int cmd_compare(const RunConfig& cfg, std::ostream& out) {
  if (!cfg.compare) throw ConfigError("compare needs a 'compare' section");
  TrialPlan plan = checked_plan(cfg);
  {
    TrialPlan probe = plan;
    probe.method = cfg.compare->method_b;
    try {
      probe.validate();
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("method_b: ") + e.what());
    }
  }
  const MatchRun mr = match_delta(cfg.method, cfg.compare->method_b, cfg.compare->delta_grid, plan);

  bool paired = true;
  json runs_a = json::array();
  std::string csv = kCsvHeader;
  for (std::size_t g = 0; g < mr.runs_a.size(); ++g) {
    const TrialRun& ra = mr.runs_a[g];
    for (std::size_t k = 0; k < ra.logs.size(); ++k) {
      paired = paired && ra.logs[k].seeds.data == mr.run_b.logs[k].seeds.data;
    }
    csv += csv_row("delta", cfg.compare->delta_grid[g], ra.report.aggregates);
    runs_a.push_back({{"delta", cfg.compare->delta_grid[g]},
                      {"report", ra.report.to_json()},
                      {"trials", logs_json(ra.logs)}});
  }
  json report{{"config", to_json(cfg)},
              {"match",
               {{"delta", mr.result.delta},
                {"found", mr.result.found},
                {"fractions_a", mr.result.fractions_a},
                {"fraction_b", mr.result.fraction_b}}},
              {"paired_data_seeds", paired},
              {"method_a", runs_a},
              {"method_b",
               {{"report", mr.run_b.report.to_json()}, {"trials", logs_json(mr.run_b.logs)}}}};
  if (!cfg.output.sweep_csv.empty()) write_file(cfg.output.sweep_csv, csv);
  emit(cfg.output.report, report, out);
  return kExitOk;
}

void error_record(std::ostream& err, const char* kind, const std::string& message) {
  err << json{{"error", {{"kind", kind}, {"message", message}}}}.dump() << "\n";
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multi-environment distribution-free predictive inference"};
  app.require_subcommand(1);
  Overrides o;
  std::string config_path;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("config", config_path, "JSON run configuration")->required();
    sub->add_option("--seed", o.seed, "Master seed");
    sub->add_option("--workers", o.workers, "Trial worker threads");
  };
  auto add_run_flags = [&](CLI::App* sub) {
    sub->add_option("--trials", o.trials, "Trial count");
    sub->add_option("--algorithm", o.algorithm, "Algorithm name");
    sub->add_option("--alpha", o.alpha, "Within-environment level");
    sub->add_option("--delta", o.delta, "Environment-level level");
    sub->add_option("--gamma", o.gamma, "Split fraction");
    sub->add_option("--report", o.report, "Report JSON path (stdout if empty)");
    sub->add_option("--sweep-csv", o.sweep_csv, "Sweep CSV path");
  };

  CLI::App* simulate = app.add_subcommand("simulate", "Write a generated dataset as CSV");
  add_common(simulate);
  simulate->add_option("--out", o.dataset, "Dataset CSV path");
  CLI::App* run = app.add_subcommand("run", "Run Monte Carlo trials of one algorithm");
  add_common(run);
  add_run_flags(run);
  CLI::App* compare = app.add_subcommand("compare", "Match delta between two methods");
  add_common(compare);
  add_run_flags(compare);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    error_record(err, "usage", e.what());
    return kExitUsage;
  }

  try {
    const RunConfig cfg = load_with_overrides(config_path, o);
    if (simulate->parsed()) return cmd_simulate(cfg, out);
    if (run->parsed()) return cmd_run(cfg, out);
    return cmd_compare(cfg, out);
  } catch (const ConfigError& e) {
    error_record(err, "config", e.what());
    return kExitUsage;
  } catch (const std::exception& e) {
    error_record(err, "runtime", e.what());
    return kExitRuntime;
  }
}

}  // namespace multienv
