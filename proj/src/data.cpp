#include "multienv/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <unordered_map>

namespace multienv {

EnvironmentSample EnvironmentSample::subset(std::span<const std::size_t> rows) const {
  EnvironmentSample out;
  out.env_id = env_id;
  out.X.resize(static_cast<Eigen::Index>(rows.size()), X.cols());
  out.y.resize(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto src = static_cast<Eigen::Index>(rows[r]);
    if (src >= y.size()) throw std::out_of_range("EnvironmentSample::subset: row index");
    out.X.row(static_cast<Eigen::Index>(r)) = X.row(src);
    out.y(static_cast<Eigen::Index>(r)) = y(src);
  }
  return out;
}

MultiEnvDataset::MultiEnvDataset(std::vector<EnvironmentSample> environments,
                                 OutcomeKind kind)
    : envs_(std::move(environments)), kind_(kind) {
  if (envs_.size() < 2) {
    throw std::invalid_argument("MultiEnvDataset: need at least 2 environments");
  }
  if (kind_.is_classification() && kind_.num_classes < 2) {
    throw std::invalid_argument("MultiEnvDataset: classification needs k >= 2");
  }
  p_ = static_cast<int>(envs_.front().X.cols());
  for (const auto& e : envs_) {
    if (e.y.size() < 1) {
      throw std::invalid_argument("environment '" + e.env_id + "' is empty");
    }
    if (e.X.rows() != e.y.size() || e.X.cols() != p_) {
      throw std::invalid_argument("environment '" + e.env_id + "' has inconsistent shape");
    }
    if (!e.X.allFinite() || !e.y.allFinite()) {
      throw std::invalid_argument("environment '" + e.env_id + "' has non-finite values");
    }
    if (kind_.is_classification()) {
      for (double v : e.y) {
        if (v != std::floor(v) || v < 0 || v >= kind_.num_classes) {
          throw std::invalid_argument("environment '" + e.env_id + "' has an invalid label");
        }
      }
    }
  }
}

std::size_t MultiEnvDataset::total_rows() const {
  std::size_t n = 0;
  for (const auto& e : envs_) n += e.size();
  return n;
}

MultiEnvDataset MultiEnvDataset::select(std::span<const std::size_t> env_indices) const {
  std::vector<EnvironmentSample> picked;
  picked.reserve(env_indices.size());
  for (std::size_t i : env_indices) picked.push_back(envs_.at(i));
  return MultiEnvDataset(std::move(picked), kind_);
}

Samples pool(std::span<const EnvironmentSample> envs) {
  Eigen::Index rows = 0;
  Eigen::Index cols = envs.empty() ? 0 : envs.front().X.cols();
  for (const auto& e : envs) rows += e.y.size();
  Samples out{Eigen::MatrixXd(rows, cols), Eigen::VectorXd(rows)};
  Eigen::Index at = 0;
  for (const auto& e : envs) {
    out.X.middleRows(at, e.y.size()) = e.X;
    out.y.segment(at, e.y.size()) = e.y;
    at += e.y.size();
  }
  return out;
}

Samples pool(const MultiEnvDataset& data, std::span<const std::size_t> env_indices) {
  std::vector<EnvironmentSample> picked;
  picked.reserve(env_indices.size());
  for (std::size_t i : env_indices) picked.push_back(data.env(i));
  return pool(picked);
}

Samples pool_except(const MultiEnvDataset& data, std::size_t excluded) {
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < data.num_environments(); ++i) {
    if (i != excluded) keep.push_back(i);
  }
  return pool(data, keep);
}

// ---------------------------------------------------------------------------
// CSV

namespace {

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) {
    s.remove_suffix(1);
  }
  return s;
}

double parse_number(std::string_view field, std::size_t line) {
  field = trim(field);
  if (!field.empty() && field.front() == '+') field.remove_prefix(1);
  double value = 0.0;
  const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), value);
  if (field.empty() || ec != std::errc() || ptr != field.data() + field.size() ||
      !std::isfinite(value)) {
    throw ParseError(line, "non-numeric field '" + std::string(field) + "'");
  }
  return value;
}

void append_number(std::string& out, double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  out.append(buf, ptr);
}

}  // namespace

MultiEnvDataset parse_csv(std::string_view text, OutcomeKind kind) {
  std::size_t line_no = 0;
  std::size_t pos = 0;
  auto next_line = [&](std::string_view& line) {
    if (pos >= text.size()) return false;
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    return true;
  };

  std::string_view header;
  if (!next_line(header)) throw ParseError(1, "missing header");
  if (header.size() >= 3 && header.substr(0, 3) == "\xEF\xBB\xBF") header.remove_prefix(3);
  const auto columns = split_fields(header);
  if (columns.size() < 2 || trim(columns[0]) != "env_id" || trim(columns[1]) != "y") {
    throw ParseError(1, "header must start with env_id,y");
  }
  for (std::size_t c = 2; c < columns.size(); ++c) {
    if (trim(columns[c]) != "x_" + std::to_string(c - 1)) {
      throw ParseError(1, "expected column x_" + std::to_string(c - 1));
    }
  }
  const std::size_t p = columns.size() - 2;

  std::vector<std::string> order;
  std::unordered_map<std::string, std::size_t> slot;
  std::vector<std::vector<double>> ys;
  std::vector<std::vector<double>> xs;  // row-major per environment

  std::string_view line;
  while (next_line(line)) {
    if (trim(line).empty()) continue;
    const auto fields = split_fields(line);
    if (fields.size() != columns.size()) {
      throw ParseError(line_no, "expected " + std::to_string(columns.size()) +
                                    " columns, found " + std::to_string(fields.size()));
    }
    std::string id(trim(fields[0]));
    if (id.empty()) throw ParseError(line_no, "empty env_id");
    const double y = parse_number(fields[1], line_no);
    if (kind.is_classification() &&
        (y != std::floor(y) || y < 0 || y >= kind.num_classes)) {
      throw ParseError(line_no, "unknown class label '" + std::string(trim(fields[1])) + "'");
    }
    auto [it, inserted] = slot.try_emplace(id, order.size());
    if (inserted) {
      order.push_back(id);
      ys.emplace_back();
      xs.emplace_back();
    }
    ys[it->second].push_back(y);
    for (std::size_t c = 0; c < p; ++c) {
      xs[it->second].push_back(parse_number(fields[c + 2], line_no));
    }
  }

  std::vector<EnvironmentSample> envs;
  envs.reserve(order.size());
  for (std::size_t e = 0; e < order.size(); ++e) {
    const auto n = static_cast<Eigen::Index>(ys[e].size());
    EnvironmentSample s;
    s.env_id = order[e];
    s.y = Eigen::Map<const Eigen::VectorXd>(ys[e].data(), n);
    s.X = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
        xs[e].data(), n, static_cast<Eigen::Index>(p));
    envs.push_back(std::move(s));
  }
  if (envs.size() < 2) throw ParseError(line_no, "need rows from at least 2 environments");
  return MultiEnvDataset(std::move(envs), kind);
}

MultiEnvDataset load_csv(const std::filesystem::path& path, OutcomeKind kind) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_csv(buf.str(), kind);
}

std::string to_csv(const MultiEnvDataset& data) {
  std::string out = "env_id,y";
  for (int c = 1; c <= data.dim(); ++c) out += ",x_" + std::to_string(c);
  out += '\n';
  for (const auto& e : data.environments()) {
    for (Eigen::Index r = 0; r < e.y.size(); ++r) {
      out += e.env_id;
      out += ',';
      append_number(out, e.y(r));
      for (Eigen::Index c = 0; c < e.X.cols(); ++c) {
        out += ',';
        append_number(out, e.X(r, c));
      }
      out += '\n';
    }
  }
  return out;
}

void write_csv(const MultiEnvDataset& data, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << to_csv(data);
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

// ---------------------------------------------------------------------------
// Synthetic hierarchical generator

void HierGenConfig::validate() const {
  if (m < 2) throw std::invalid_argument("generator: m must be >= 2");
  if (n_min < 1 || n_max < n_min) throw std::invalid_argument("generator: bad n range");
  if (p < 1) throw std::invalid_argument("generator: p must be >= 1");
  if (!beta.empty() && beta.size() != static_cast<std::size_t>(p)) {
    throw std::invalid_argument("generator: beta must have p entries");
  }
  if (!(env_effect_scale >= 0) || !(noise_scale >= 0)) {
    throw std::invalid_argument("generator: scales must be nonnegative");
  }
  if (!(outlier_frac >= 0 && outlier_frac <= 1)) {
    throw std::invalid_argument("generator: outlier_frac must lie in [0, 1]");
  }
  if (!(outlier_noise_multiplier >= 1)) {
    throw std::invalid_argument("generator: outlier_noise_multiplier must be >= 1");
  }
}

Eigen::VectorXd HierGenConfig::beta_vector() const {
  if (beta.empty()) return Eigen::VectorXd::Ones(p);
  return Eigen::Map<const Eigen::VectorXd>(beta.data(), p);
}

GeneratedData generate_hierarchical_detailed(const HierGenConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> size_dist(cfg.n_min, cfg.n_max);
  const Eigen::VectorXd beta = cfg.beta_vector();

  std::vector<EnvironmentSample> envs;
  std::vector<Eigen::VectorXd> effects;
  std::vector<bool> outlier;
  envs.reserve(cfg.m);
  for (std::size_t i = 0; i < cfg.m; ++i) {
    Eigen::VectorXd theta(cfg.p);
    for (int c = 0; c < cfg.p; ++c) theta(c) = cfg.env_effect_scale * normal(rng);
    const bool is_outlier = unif(rng) < cfg.outlier_frac;
    const std::size_t n = cfg.n_min == cfg.n_max ? cfg.n_min : size_dist(rng);
    const double sigma = cfg.noise_scale * (is_outlier ? cfg.outlier_noise_multiplier : 1.0);

    EnvironmentSample env;
    env.env_id = "env" + std::to_string(i);
    env.X.resize(static_cast<Eigen::Index>(n), cfg.p);
    env.y.resize(static_cast<Eigen::Index>(n));
    const Eigen::VectorXd coef = beta + theta;
    for (Eigen::Index r = 0; r < env.X.rows(); ++r) {
      for (int c = 0; c < cfg.p; ++c) env.X(r, c) = normal(rng);
      env.y(r) = env.X.row(r).dot(coef) + sigma * normal(rng);
    }
    envs.push_back(std::move(env));
    effects.push_back(std::move(theta));
    outlier.push_back(is_outlier);
  }
  return {MultiEnvDataset(std::move(envs), OutcomeKind::regression()), std::move(effects),
          std::move(outlier)};
}

MultiEnvDataset generate_hierarchical(const HierGenConfig& cfg) {
  return generate_hierarchical_detailed(cfg).dataset;
}

// ---------------------------------------------------------------------------
// Random partitions

std::size_t split_size(std::size_t m, double gamma) {
  if (!(gamma > 0 && gamma < 1)) throw std::invalid_argument("gamma must lie in (0, 1)");
  return static_cast<std::size_t>(std::floor(gamma * static_cast<double>(m) + 0.5));
}

EnvSplit split_environments(std::size_t m, double gamma, Rng& rng) {
  const std::size_t k = split_size(m, gamma);
  if (m < 2 || k < 1 || k > m - 1) {
    throw std::invalid_argument("split_environments: degenerate split (|D1| = " +
                                std::to_string(k) + " of " + std::to_string(m) + ")");
  }
  std::vector<std::size_t> idx(m);
  std::iota(idx.begin(), idx.end(), 0);
  std::shuffle(idx.begin(), idx.end(), rng);
  EnvSplit split{{idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k)},
                 {idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end()}};
  std::sort(split.d1.begin(), split.d1.end());
  std::sort(split.d2.begin(), split.d2.end());
  return split;
}

Holdout holdout_labels(std::size_t n, std::size_t L, Rng& rng) {
  if (L < 1 || L >= n) {
    throw std::invalid_argument("holdout_labels: need 1 <= L < n (L = " + std::to_string(L) +
                                ", n = " + std::to_string(n) + ")");
  }
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::shuffle(idx.begin(), idx.end(), rng);
  Holdout h{{idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(L)},
            {idx.begin() + static_cast<std::ptrdiff_t>(L), idx.end()}};
  std::sort(h.labeled.begin(), h.labeled.end());
  std::sort(h.remainder.begin(), h.remainder.end());
  return h;
}

}  // namespace multienv
