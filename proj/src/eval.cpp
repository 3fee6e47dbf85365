#include "multienv/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "multienv/predictors.hpp"
#include "multienv/weighted.hpp"
#include "parallel.hpp"

namespace multienv {

std::string rule_name(CoverageRule rule) {
  switch (rule) {
    case CoverageRule::kConformalCount: return "conformal";
    case CoverageRule::kFraction: return "fraction";
    case CoverageRule::kScore: return "score";
  }
  return "conformal";
}

CoverageRule parse_rule(const std::string& name) {
  if (name == "conformal") return CoverageRule::kConformalCount;
  if (name == "fraction") return CoverageRule::kFraction;
  if (name == "score") return CoverageRule::kScore;
  throw std::invalid_argument("unknown coverage rule '" + name + "'");
}

std::size_t required_count(std::size_t n, double alpha, CoverageRule rule) {
  switch (rule) {
    case CoverageRule::kConformalCount: return upper_rank(alpha, n);
    case CoverageRule::kFraction: {
      const double t = (1.0 - alpha) * static_cast<double>(n);
      const double r = std::round(t);
      if (std::abs(t - r) <= 1e-10 * std::max(1.0, t)) return static_cast<std::size_t>(r);
      return static_cast<std::size_t>(std::ceil(t));
    }
    case CoverageRule::kScore: return env_score_rank(n, alpha);
  }
  return upper_rank(alpha, n);
}

CoverageAggregates aggregate(std::span<const EnvRecord> records) {
  CoverageAggregates a;
  std::size_t covered_env_points = 0;
  std::size_t covered_env_hits = 0;
  double length = 0.0;
  for (const auto& r : records) {
    ++a.pairs;
    a.points += r.n;
    a.covered_points += r.covered;
    length += r.mean_measure;
    if (r.env_covered) {
      ++a.covered_pairs;
      covered_env_points += r.n;
      covered_env_hits += r.covered;
    }
  }
  if (a.pairs > 0) {
    a.emp_one_minus_delta = static_cast<double>(a.covered_pairs) / static_cast<double>(a.pairs);
    a.emp_set_length = length / static_cast<double>(a.pairs);
  }
  if (a.points > 0) {
    a.marginal_coverage = static_cast<double>(a.covered_points) / static_cast<double>(a.points);
  }
  if (covered_env_points > 0) {
    a.emp_one_minus_alpha =
        static_cast<double>(covered_env_hits) / static_cast<double>(covered_env_points);
  }
  return a;
}

CoverageReport make_report(std::vector<EnvRecord> records, double alpha, CoverageRule rule) {
  CoverageReport rep;
  rep.alpha = alpha;
  rep.rule = rule;
  rep.records = std::move(records);
  rep.aggregates = aggregate(rep.records);
  return rep;
}

nlohmann::json CoverageReport::to_json() const {
  nlohmann::json agg{
      {"pairs", aggregates.pairs},
      {"covered_pairs", aggregates.covered_pairs},
      {"points", aggregates.points},
      {"covered_points", aggregates.covered_points},
      {"emp_one_minus_delta", aggregates.emp_one_minus_delta},
      {"emp_one_minus_alpha", aggregates.emp_one_minus_alpha
                                  ? nlohmann::json(*aggregates.emp_one_minus_alpha)
                                  : nlohmann::json(nullptr)},
      {"emp_set_length", encode_real(aggregates.emp_set_length)},
      {"marginal_coverage", aggregates.marginal_coverage},
  };
  nlohmann::json recs = nlohmann::json::array();
  for (const auto& r : records) {
    nlohmann::json j{{"trial", r.trial},
                     {"env_id", r.env_id},
                     {"n", r.n},
                     {"covered", r.covered},
                     {"env_covered", r.env_covered},
                     {"mean_measure", encode_real(r.mean_measure)}};
    if (r.group >= 0) j["group"] = r.group;
    recs.push_back(std::move(j));
  }
  return {{"alpha", alpha}, {"rule", rule_name(rule)}, {"aggregates", agg}, {"records", recs}};
}

EnvRecord evaluate_env(const ConfidenceMapping& mapping, const EnvironmentSample& env,
                       double alpha, std::optional<ClipRange> clip, CoverageRule rule,
                       std::size_t trial) {
  if (env.size() == 0) throw std::invalid_argument("evaluate: empty test environment");
  EnvRecord rec;
  rec.trial = trial;
  rec.env_id = env.env_id;
  rec.n = env.size();
  double total = 0.0;
  for (Eigen::Index j = 0; j < env.y.size(); ++j) {
    const PredictionSet set = mapping.evaluate(env.X.row(j).transpose());
    if (contains(set, env.y(j))) ++rec.covered;
    total += measure(set, clip);
  }
  rec.mean_measure = total / static_cast<double>(rec.n);
  rec.env_covered = rec.covered >= required_count(rec.n, alpha, rule);
  return rec;
}

CoverageReport evaluate_mapping(const ConfidenceMapping& mapping,
                                std::span<const EnvironmentSample> test_envs, double alpha,
                                std::optional<ClipRange> clip, CoverageRule rule) {
  std::vector<EnvRecord> records;
  for (const auto& env : test_envs) records.push_back(evaluate_env(mapping, env, alpha, clip, rule));
  return make_report(std::move(records), alpha, rule);
}

// ---------------------------------------------------------------------------

namespace {

struct MethodEntry {
  Method method;
  const char* name;
};

constexpr MethodEntry kMethods[] = {
    {Method::kJackknifeMinmax, "jackknife_minmax"},
    {Method::kSplitConformal, "split_conformal"},
    {Method::kHierJackknifePlus, "hier_jackknife_plus"},
    {Method::kHcp, "hcp"},
    {Method::kResizedSplitConformal, "resized_split_conformal"},
    {Method::kJackknifePlusQuantile, "jackknife_plus_quantile"},
    {Method::kWeighted, "weighted"},
};

bool in_unit(double v) { return v > 0 && v < 1; }

std::vector<double> grid_of(const MethodSpec& spec) {
  return spec.lambda_grid.empty() ? default_lambda_grid() : spec.lambda_grid;
}

FamilyBuilder family_builder(const MethodSpec& spec, const OutcomeKind& kind) {
  if (kind.is_classification()) return softmax_sublevel_builder(kind.num_classes, spec.softmax_l2);
  if (spec.family == "band") return pinball_band_builder(spec.band_lower, spec.band_upper);
  return ridge_symmetric_builder(grid_of(spec));
}

}  // namespace

std::string method_name(Method m) {
  for (const auto& e : kMethods) {
    if (e.method == m) return e.name;
  }
  return "unknown";
}

Method parse_method(const std::string& name) {
  for (const auto& e : kMethods) {
    if (name == e.name) return e.method;
  }
  throw std::invalid_argument("unknown algorithm '" + name + "'");
}

void MethodSpec::validate() const {
  if (!in_unit(alpha)) throw std::invalid_argument("alpha must lie in (0, 1)");
  if (!in_unit(delta)) throw std::invalid_argument("delta must lie in (0, 1)");
  if (!in_unit(gamma)) throw std::invalid_argument("gamma must lie in (0, 1)");
  if (!in_unit(alpha0)) throw std::invalid_argument("alpha0 must lie in (0, 1)");
  if (labeled < 1) throw std::invalid_argument("labeled must be at least 1");
  for (double l : lambda_grid) {
    if (!(l >= 0) || !std::isfinite(l)) throw std::invalid_argument("lambda grid must be >= 0");
  }
  if (family != "symmetric" && family != "band") {
    throw std::invalid_argument("family must be 'symmetric' or 'band'");
  }
  if (!(band_lower > 0 && band_lower < band_upper && band_upper < 1)) {
    throw std::invalid_argument("band levels need 0 < lower < upper < 1");
  }
  if (!(softmax_l2 >= 0)) throw std::invalid_argument("softmax l2 must be >= 0");
  if (feature_map != "constant" && feature_map != "outlier") {
    throw std::invalid_argument("feature map must be 'constant' or 'outlier'");
  }
  if (!(ridge_weight >= 0) || !std::isfinite(ridge_weight)) {
    throw std::invalid_argument("ridge weight must be finite and >= 0");
  }
}

void TrialPlan::validate() const {
  method.validate();
  if (generator.has_value() == (dataset != nullptr)) {
    throw std::invalid_argument("exactly one data source (generator or dataset) is required");
  }
  if (trials < 1) throw std::invalid_argument("trial count must be at least 1");
  if (train_envs < 2) throw std::invalid_argument("need at least 2 training environments");
  if (test_envs < 1) throw std::invalid_argument("need at least 1 test environment");
  if (workers < 1) throw std::invalid_argument("workers must be at least 1");
  if (generator) {
    HierGenConfig cfg = *generator;
    cfg.m = train_envs + test_envs;
    cfg.validate();
  } else if (dataset->num_environments() < train_envs + test_envs) {
    throw std::invalid_argument("dataset has fewer environments than train + test");
  }
  if (method.feature_map == "outlier" && !generator) {
    throw std::invalid_argument("the outlier feature map needs the generator");
  }
  const bool classification =
      dataset ? dataset->outcome_kind().is_classification() : false;
  if (classification) {
    switch (method.method) {
      case Method::kHierJackknifePlus:
      case Method::kHcp:
      case Method::kJackknifePlusQuantile:
        throw std::invalid_argument(method_name(method.method) + " needs a regression outcome");
      default:
        break;
    }
  }
  const bool needs_split = method.method == Method::kSplitConformal ||
                           method.method == Method::kHcp ||
                           method.method == Method::kResizedSplitConformal ||
                           method.method == Method::kWeighted;
  if (needs_split) {
    const std::size_t d1 = split_size(train_envs, method.gamma);
    if (d1 < 1 || d1 >= train_envs) {
      throw std::invalid_argument("gamma leaves one side of the environment split empty");
    }
  }
}

TrialSeeds trial_seeds(std::uint64_t master, std::size_t trial) {
  std::seed_seq seq{static_cast<std::uint32_t>(master), static_cast<std::uint32_t>(master >> 32),
                    static_cast<std::uint32_t>(trial),
                    static_cast<std::uint32_t>(static_cast<std::uint64_t>(trial) >> 32)};
  std::uint32_t out[4];
  seq.generate(out, out + 4);
  return {(static_cast<std::uint64_t>(out[0]) << 32) | out[1],
          (static_cast<std::uint64_t>(out[2]) << 32) | out[3]};
}

std::vector<EnvRecord> run_trial(const TrialPlan& plan, std::size_t trial, TrialLog* log) {
  const TrialSeeds seeds = trial_seeds(plan.seed, trial);
  const MethodSpec& spec = plan.method;
  try {
    std::vector<EnvironmentSample> train_envs;
    std::vector<EnvironmentSample> test_envs;
    std::vector<int> train_groups;
    std::vector<int> test_groups;
    OutcomeKind kind;
    const std::size_t total = plan.train_envs + plan.test_envs;
    if (plan.generator) {
      HierGenConfig cfg = *plan.generator;
      cfg.m = total;
      cfg.seed = seeds.data;
      GeneratedData g = generate_hierarchical_detailed(cfg);
      kind = g.dataset.outcome_kind();
      for (std::size_t i = 0; i < total; ++i) {
        auto& envs = i < plan.train_envs ? train_envs : test_envs;
        auto& groups = i < plan.train_envs ? train_groups : test_groups;
        envs.push_back(g.dataset.env(i));
        groups.push_back(g.outlier[i] ? 1 : 0);
      }
    } else {
      kind = plan.dataset->outcome_kind();
      std::vector<std::size_t> order(plan.dataset->num_environments());
      std::iota(order.begin(), order.end(), std::size_t{0});
      Rng shuffle_rng(seeds.data);
      std::shuffle(order.begin(), order.end(), shuffle_rng);
      for (std::size_t i = 0; i < total; ++i) {
        auto& envs = i < plan.train_envs ? train_envs : test_envs;
        auto& groups = i < plan.train_envs ? train_groups : test_groups;
        envs.push_back(plan.dataset->env(order[i]));
        groups.push_back(-1);
      }
    }
    const MultiEnvDataset train(std::move(train_envs), kind);
    Rng rng(seeds.algorithm);
    const FamilyBuilder builder = family_builder(spec, kind);
    const PredictorBuilder predictor = ridge_predictor_builder(grid_of(spec));

    std::vector<EnvRecord> records;
    nlohmann::json info;
    auto record = [&](const ConfidenceMapping& mapping, const EnvironmentSample& env,
                      std::size_t t) {
      EnvRecord r = evaluate_env(mapping, env, spec.alpha, plan.clip, plan.rule, trial);
      r.group = test_groups[t];
      if (info.is_null()) info = mapping.info();
      records.push_back(std::move(r));
    };
    auto evaluate_all = [&](const ConfidenceMapping& mapping) {
      for (std::size_t t = 0; t < test_envs.size(); ++t) record(mapping, test_envs[t], t);
    };

    switch (spec.method) {
      case Method::kJackknifeMinmax:
        evaluate_all(*fit_jackknife_minmax(train, builder, spec.alpha, spec.delta));
        break;
      case Method::kSplitConformal:
        evaluate_all(*fit_split_conformal(train, builder, spec.alpha, spec.delta, spec.gamma, rng));
        break;
      case Method::kHierJackknifePlus:
        evaluate_all(*fit_hier_jackknife_plus(train, predictor, spec.alpha));
        break;
      case Method::kHcp:
        evaluate_all(*fit_hcp(train, predictor, spec.alpha, spec.gamma, rng));
        break;
      case Method::kJackknifePlusQuantile:
        evaluate_all(*fit_jackknife_plus_quantile(train, predictor, spec.alpha, spec.delta));
        break;
      case Method::kResizedSplitConformal: {
        const EnvSplit split = split_environments(train.num_environments(), spec.gamma, rng);
        auto cal = std::make_shared<const ResizedCalibration>(calibrate_resized(
            train, builder, spec.alpha, spec.delta, spec.alpha0, spec.labeled, split, rng));
        for (std::size_t t = 0; t < test_envs.size(); ++t) {
          const Holdout h = holdout_labels(test_envs[t].size(), spec.labeled, rng);
          const auto mapping = resized_for_test(cal, test_envs[t].subset(h.labeled));
          record(*mapping, test_envs[t].subset(h.remainder), t);
        }
        break;
      }
      case Method::kWeighted: {
        const EnvSplit split = split_environments(train.num_environments(), spec.gamma, rng);
        EnvFeatureMap train_features = constant_features();
        EnvFeatureMap test_features = constant_features();
        if (spec.feature_map == "outlier") {
          std::vector<bool> tr;
          std::vector<bool> te;
          for (int g : train_groups) tr.push_back(g == 1);
          for (int g : test_groups) te.push_back(g == 1);
          train_features = indicator_features(std::move(tr));
          test_features = indicator_features(std::move(te));
        }
        WeightedOptions opts;
        opts.ridge_weight = spec.ridge_weight;
        auto cal = std::make_shared<const WeightedCalibration>(calibrate_weighted(
            train, builder, spec.alpha, spec.delta, split, train_features, opts));
        std::uniform_real_distribution<double> unif(0.0, 1.0);
        for (std::size_t t = 0; t < test_envs.size(); ++t) {
          std::optional<double> u;
          if (spec.randomized) u = unif(rng);
          const WeightedMapping mapping(cal, test_features(t), u);
          record(mapping, test_envs[t], t);
        }
        break;
      }
    }
    if (log) *log = TrialLog{trial, seeds, std::move(info)};
    return records;
  } catch (const TrialError&) {
    throw;
  } catch (const std::exception& e) {
    throw TrialError(trial, e.what());
  }
}

TrialRun run_trials(const TrialPlan& plan) {
  plan.validate();
  std::vector<std::vector<EnvRecord>> per_trial(plan.trials);
  std::vector<TrialLog> logs(plan.trials);
  detail::parallel_for(plan.trials, plan.workers, [&](std::size_t k) {
    per_trial[k] = run_trial(plan, k, &logs[k]);
  });
  std::vector<EnvRecord> records;
  for (auto& r : per_trial) {
    records.insert(records.end(), std::make_move_iterator(r.begin()),
                   std::make_move_iterator(r.end()));
  }
  return {make_report(std::move(records), plan.method.alpha, plan.rule), std::move(logs)};
}

// ---------------------------------------------------------------------------

MatchResult match_delta_from_fractions(std::span<const double> grid,
                                       std::span<const double> fractions_a, double fraction_b) {
  if (grid.empty()) throw std::invalid_argument("match_delta: empty delta grid");
  if (fractions_a.size() != grid.size()) {
    throw std::invalid_argument("match_delta: one fraction per grid value required");
  }
  if (!std::is_sorted(grid.begin(), grid.end())) {
    throw std::invalid_argument("match_delta: delta grid must be ascending");
  }
  MatchResult out;
  out.fractions_a.assign(fractions_a.begin(), fractions_a.end());
  out.fraction_b = fraction_b;
  out.delta = grid.front();
  for (std::size_t i = grid.size(); i-- > 0;) {
    if (fractions_a[i] >= fraction_b) {
      out.delta = grid[i];
      out.found = true;
      break;
    }
  }
  return out;
}

MatchRun match_delta(const MethodSpec& a, const MethodSpec& b, std::span<const double> delta_grid,
                     const TrialPlan& plan) {
  if (delta_grid.empty()) throw std::invalid_argument("match_delta: empty delta grid");
  if (!std::is_sorted(delta_grid.begin(), delta_grid.end())) {
    throw std::invalid_argument("match_delta: delta grid must be ascending");
  }
  MatchRun out;
  std::vector<double> fa;
  for (double d : delta_grid) {
    TrialPlan pa = plan;
    pa.method = a;
    pa.method.delta = d;
    out.runs_a.push_back(run_trials(pa));
    fa.push_back(out.runs_a.back().report.aggregates.marginal_coverage);
  }
  TrialPlan pb = plan;
  pb.method = b;
  out.run_b = run_trials(pb);
  out.result =
      match_delta_from_fractions(delta_grid, fa, out.run_b.report.aggregates.marginal_coverage);
  return out;
}

}  // namespace multienv
