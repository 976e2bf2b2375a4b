#include "robustpref/sweep.hpp"

#include <algorithm>
#include <atomic>
#include <bit>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <limits>
#include <map>
#include <mutex>
#include <numbers>
#include <set>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "robustpref/errors.hpp"
#include "robustpref/rng.hpp"

namespace robustpref {

namespace {

constexpr std::uint64_t kStreamEnvGen = 0x656e7667ULL;     // "envg"
constexpr std::uint64_t kStreamCellData = 0x63656c6cULL;   // "cell"
constexpr std::uint64_t kStreamCellFlip = 0x666c7063ULL;   // "flpc"
constexpr std::uint64_t kStreamCellEps = 0x63657073ULL;    // "ceps"
constexpr std::uint64_t kStreamHoldout = 0x686f6c64ULL;    // "hold"
constexpr std::uint64_t kStreamBootstrap = 0x626f6f74ULL;  // "boot"

double next_gaussian(SplitMix64& rng) {
  // Box-Muller; u1 in (0, 1] keeps the log finite.
  double u1 = 1.0 - rng.next_double();
  double u2 = rng.next_double();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi_v<double> * u2);
}

std::uint64_t cell_stream_seed(std::uint64_t seed, std::uint64_t stream, std::uint64_t n,
                               double eps_true) {
  std::uint64_t eps_bits = std::bit_cast<std::uint64_t>(eps_true);
  return substream_seed(substream_seed(seed, stream, n), kStreamCellEps, eps_bits);
}

nlohmann::json parse_json_or_throw(const std::string& text, const char* what) {
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw InvalidInputError(std::string(what) + ": " + e.what());
  }
}

}  // namespace

std::string to_string(EnvKind k) {
  return k == EnvKind::Tabular ? "tabular" : "loglinear";
}

EnvKind env_kind_from_string(const std::string& s) {
  if (s == "tabular") return EnvKind::Tabular;
  if (s == "loglinear") return EnvKind::LogLinear;
  throw InvalidInputError("unknown env kind '" + s + "' (expected tabular or loglinear)");
}

DiscreteEnv generate_env(const EnvGenConfig& cfg) {
  if (cfg.prompts < 1) throw InvalidInputError("generate_env: prompts must be >= 1");
  if (cfg.actions < 2) throw InvalidInputError("generate_env: actions must be >= 2");
  if (!(cfg.beta > 0.0) || !std::isfinite(cfg.beta))
    throw InvalidInputError("generate_env: beta must be positive and finite");
  if (!(cfg.reward_scale > 0.0) || !std::isfinite(cfg.reward_scale))
    throw InvalidInputError("generate_env: reward_scale must be positive and finite");

  const Eigen::Index S = cfg.prompts;
  const Eigen::Index A = cfg.actions;
  const Eigen::Index d = cfg.kind == EnvKind::Tabular ? S * A : cfg.dim;
  if (d < 2) throw InvalidInputError("generate_env: dim must be >= 2");

  SplitMix64 rng(substream_seed(cfg.seed, kStreamEnvGen, 0));

  DiscreteEnv env;
  env.beta = cfg.beta;
  env.pref_model = cfg.pref_model;
  env.prompt_weights = Eigen::VectorXd::Constant(S, 1.0 / static_cast<double>(S));
  // Force an exact unit sum; validate() checks it to 1e-12.
  env.prompt_weights(S - 1) = 1.0 - env.prompt_weights.head(S - 1).sum();
  env.theta_sft = Eigen::VectorXd::Zero(d);

  env.features.reserve(static_cast<std::size_t>(S));
  for (Eigen::Index s = 0; s < S; ++s) {
    Eigen::MatrixXd F(A, d);
    if (cfg.kind == EnvKind::Tabular) {
      F.setZero();
      for (Eigen::Index a = 0; a < A; ++a) F(a, s * A + a) = 1.0;
    } else {
      for (Eigen::Index a = 0; a < A; ++a) {
        Eigen::VectorXd row(d);
        for (Eigen::Index j = 0; j < d; ++j) row(j) = next_gaussian(rng);
        double norm = row.norm();
        if (norm < 1e-12) {
          row.setZero();
          row(a % d) = 1.0;
          norm = 1.0;
        }
        F.row(a) = row.transpose() / norm;
      }
    }
    env.features.push_back(std::move(F));
  }

  Eigen::VectorXd theta_star;
  for (int attempt = 0; attempt < 64; ++attempt) {
    Eigen::VectorXd z(d);
    for (Eigen::Index j = 0; j < d; ++j) z(j) = next_gaussian(rng);
    z.array() -= z.mean();
    double max_abs = 0.0;
    for (Eigen::Index s = 0; s < S; ++s)
      max_abs = std::max(max_abs, (env.features[static_cast<std::size_t>(s)] * z).cwiseAbs().maxCoeff());
    if (max_abs > 1e-9) {
      theta_star = z * (cfg.reward_scale / max_abs);
      break;
    }
    if (attempt == 63)
      throw NumericRangeError("generate_env: could not draw a non-degenerate theta_star");
  }

  // Orient so max r* >= -min r*: the reward range is then at most twice the
  // largest reward, which is what the regret chain assumes.
  double rmax = -std::numeric_limits<double>::infinity();
  double rmin = std::numeric_limits<double>::infinity();
  for (Eigen::Index s = 0; s < S; ++s) {
    Eigen::VectorXd r = env.features[static_cast<std::size_t>(s)] * theta_star;
    rmax = std::max(rmax, r.maxCoeff());
    rmin = std::min(rmin, r.minCoeff());
  }
  if (rmax < -rmin) theta_star = -theta_star;

  env.theta_star = theta_star;
  env.latent_reward.clear();
  env.latent_reward.reserve(static_cast<std::size_t>(S));
  for (Eigen::Index s = 0; s < S; ++s)
    env.latent_reward.push_back(env.features[static_cast<std::size_t>(s)] * theta_star);

  env.validate();
  return env;
}

TrainConfig TrainOptions::to_train_config(const LossSpec& loss, std::uint64_t seed) const {
  TrainConfig cfg;
  cfg.loss = loss;
  cfg.bound_B = bound_B;
  cfg.steps = steps;
  cfg.lr_mode = lr_mode;
  cfg.eta = eta;
  cfg.inv_c = inv_c;
  cfg.inv_lambda = inv_lambda;
  cfg.batch = batch;
  cfg.seed = seed;
  cfg.tol = tol;
  return cfg;
}

TrainResult train_on_dataset(const DiscreteEnv& env, const PreferenceDataset& ds,
                             const TrainConfig& cfg) {
  if (ds.kind == DatasetKind::Pair) {
    if (cfg.loss.is_ranking())
      throw KindMismatchError("loss family " + to_string(cfg.loss.family) +
                              " needs ranking data but the dataset holds pairs");
    auto obs = ds.observed_pairs();
    return cfg.batch == BatchMode::Full ? train_full_batch(env, obs, cfg)
                                        : train_sgd(env, obs, cfg);
  }
  if (!cfg.loss.is_ranking())
    throw KindMismatchError("loss family " + to_string(cfg.loss.family) +
                            " needs pair data but the dataset holds rankings");
  auto obs = ds.observed_rankings();
  return cfg.batch == BatchMode::Full ? train_full_batch(env, obs, cfg)
                                      : train_sgd(env, obs, cfg);
}

MetricsReport run_cell(const DiscreteEnv& env, const MethodSpec& method, double eps_true,
                       std::uint64_t n, std::uint64_t seed, const SweepConfig& cfg) {
  method.loss.validate();
  const bool rank_kind = cfg.kind == DatasetKind::Rank;
  if (method.loss.is_ranking() != rank_kind)
    throw KindMismatchError("method '" + method.name + "' does not match sweep kind '" +
                            to_string(cfg.kind) + "'");

  const std::uint64_t data_seed = cell_stream_seed(seed, kStreamCellData, n, eps_true);
  const std::uint64_t flip_seed = cell_stream_seed(seed, kStreamCellFlip, n, eps_true);

  PreferenceDataset train;
  if (rank_kind) {
    train = sample_rankings(env, static_cast<std::size_t>(n), cfg.rank_k, data_seed);
    if (eps_true > 0.0) train = perturb_rankings(train, eps_true, flip_seed);
  } else {
    train = sample_pairs(env, static_cast<std::size_t>(n), data_seed);
    if (eps_true > 0.0) train = flip_pairs(train, eps_true, flip_seed);
  }
  PreferenceDataset holdout =
      sample_pairs(env, cfg.holdout_n, substream_seed(seed, kStreamHoldout, 0));

  TrainConfig tc = cfg.train.to_train_config(method.loss, seed);
  TrainResult res = train_on_dataset(env, train, tc);

  const Eigen::VectorXd& theta = res.params.theta;
  const double nan = std::numeric_limits<double>::quiet_NaN();

  MetricsReport r;
  r.method = method.name;
  r.family = to_string(method.loss.family);
  r.link = to_string(method.loss.link);
  r.eps_true = eps_true;
  r.eps_assumed = method.loss.eps_assumed;
  r.n = n;
  r.seed = seed;
  r.lambda = cfg.lambda > 0.0 ? cfg.lambda
                              : default_metrics_lambda(env.dim(), static_cast<std::size_t>(n));

  if (env.theta_star.has_value()) {
    Eigen::VectorXd target = optimal_policy_params(env);
    if (rank_kind) {
      r.l2_error = (theta - target).norm();
      r.seminorm_error = nan;
    } else {
      Eigen::MatrixXd sigma = sample_cov_diff(train, env);
      EstimationError err = estimation_error(theta, target, sigma, r.lambda);
      r.l2_error = err.l2;
      r.seminorm_error = err.seminorm;
    }
    r.margin_gap = margin_and_gap(env, theta, target).gap;
  } else {
    r.l2_error = nan;
    r.seminorm_error = nan;
    r.margin_gap = nan;
  }
  r.subopt_gap = subopt_gap(env, theta);
  r.eval_accuracy = eval_accuracy(env, theta, holdout);
  try {
    r.kappa_rel_bound = kappa_rel_bound(env);
  } catch (const CoverageError&) {
    r.kappa_rel_bound = nan;
  }
  r.gamma = gamma_const(env.beta, env.feature_bound() * cfg.train.bound_B);
  // Sweep rows are a reproducibility contract: re-running a cell must give a
  // bit-identical row, so no wall-clock numbers here. Timing lives in the
  // train subcommand and the benchmark targets.
  r.wall_ms = 0;
  return r;
}

namespace {

struct Cell {
  double eps_true;
  std::uint64_t n;
  std::uint64_t seed;
  MethodSpec method;
};

bool family_has_noise_knob(LossFamily f) {
  return f == LossFamily::Cdpo || f == LossFamily::Rdpo || f == LossFamily::Ipo ||
         f == LossFamily::Slic || f == LossFamily::PlRobust;
}

}  // namespace

std::vector<MetricsReport> run_sweep(const DiscreteEnv& env, const SweepConfig& cfg) {
  if (cfg.methods.empty()) throw InvalidInputError("sweep: no methods given");
  if (cfg.n_grid.empty()) throw InvalidInputError("sweep: empty n grid");
  if (cfg.seeds.empty()) throw InvalidInputError("sweep: empty seed list");
  if (cfg.holdout_n == 0) throw InvalidInputError("sweep: holdout_n must be positive");
  if (cfg.jobs < 1) throw InvalidInputError("sweep: jobs must be >= 1");
  for (std::uint64_t n : cfg.n_grid)
    if (n == 0) throw InvalidInputError("sweep: n grid values must be positive");
  for (double e : cfg.eps_true_grid) {
    if (cfg.kind == DatasetKind::Pair) {
      if (!(e >= 0.0 && e < 0.5))
        throw InvalidRateError("sweep: pairwise eps_true must lie in [0, 0.5)");
    } else {
      double N = static_cast<double>(factorial(cfg.rank_k));
      if (!(e >= 0.0) || !((1.0 - e) * N - 1.0 > 0.0))
        throw InvalidRateError("sweep: ranking eps_true must satisfy (1 - eps) K! - 1 > 0");
    }
  }

  // eps_assumed overrides apply to families with a noise knob; dpo and pl
  // run once at their required eps of zero.
  std::vector<MethodSpec> methods;
  if (cfg.eps_assumed_grid.empty()) {
    methods = cfg.methods;
  } else {
    for (const MethodSpec& m : cfg.methods) {
      if (!family_has_noise_knob(m.loss.family)) {
        methods.push_back(m);
        continue;
      }
      for (double e : cfg.eps_assumed_grid) {
        MethodSpec mm = m;
        mm.loss.eps_assumed = e;
        mm.loss.validate();
        methods.push_back(mm);
      }
    }
  }
  for (const MethodSpec& m : methods) m.loss.validate();

  std::vector<Cell> cells;
  for (double et : cfg.eps_true_grid)
    for (std::uint64_t n : cfg.n_grid)
      for (std::uint64_t seed : cfg.seeds)
        for (const MethodSpec& m : methods) cells.push_back(Cell{et, n, seed, m});

  std::vector<MetricsReport> rows(cells.size());
  const std::size_t jobs =
      std::min<std::size_t>(static_cast<std::size_t>(cfg.jobs), std::max<std::size_t>(cells.size(), 1));

  if (jobs <= 1) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      const Cell& c = cells[i];
      rows[i] = run_cell(env, c.method, c.eps_true, c.n, c.seed, cfg);
    }
    return rows;
  }

  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::mutex err_mu;
  std::exception_ptr first_err;
  auto work = [&]() {
    while (!failed.load(std::memory_order_relaxed)) {
      std::size_t i = next.fetch_add(1);
      if (i >= cells.size()) break;
      try {
        const Cell& c = cells[i];
        rows[i] = run_cell(env, c.method, c.eps_true, c.n, c.seed, cfg);
      } catch (...) {
        std::lock_guard<std::mutex> lock(err_mu);
        if (!first_err) first_err = std::current_exception();
        failed.store(true, std::memory_order_relaxed);
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(jobs);
  for (std::size_t t = 0; t < jobs; ++t) pool.emplace_back(work);
  for (std::thread& t : pool) t.join();
  if (first_err) std::rethrow_exception(first_err);
  return rows;
}

// ---- CSV ----

const char* const kMetricsCsvHeader =
    "method,family,link,eps_true,eps_assumed,n,seed,l2_error,seminorm_error,lambda,"
    "subopt_gap,margin_gap,eval_accuracy,kappa_rel_bound,gamma,wall_ms";

std::string csv_format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0.0 ? "inf" : "-inf";
  return nlohmann::json(v).dump();
}

namespace {

std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    out += c;
    if (c == '"') out += '"';
  }
  out += '"';
  return out;
}

// RFC 4180 line splitter; `line` has its trailing CR already stripped.
std::vector<std::string> csv_split(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  fields.push_back(cur);
  return fields;
}

double parse_csv_double(const std::string& s, std::size_t line_no) {
  try {
    std::size_t pos = 0;
    double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw InvalidInputError("metrics csv: bad numeric field '" + s + "' on line " +
                            std::to_string(line_no));
  }
}

std::uint64_t parse_csv_u64(const std::string& s, std::size_t line_no) {
  try {
    std::size_t pos = 0;
    unsigned long long v = std::stoull(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return static_cast<std::uint64_t>(v);
  } catch (const std::exception&) {
    throw InvalidInputError("metrics csv: bad integer field '" + s + "' on line " +
                            std::to_string(line_no));
  }
}

}  // namespace

std::string metrics_csv_row(const MetricsReport& r) {
  std::ostringstream os;
  os << csv_escape(r.method) << ',' << csv_escape(r.family) << ',' << csv_escape(r.link) << ','
     << csv_format_double(r.eps_true) << ',' << csv_format_double(r.eps_assumed) << ',' << r.n
     << ',' << r.seed << ',' << csv_format_double(r.l2_error) << ','
     << csv_format_double(r.seminorm_error) << ',' << csv_format_double(r.lambda) << ','
     << csv_format_double(r.subopt_gap) << ',' << csv_format_double(r.margin_gap) << ','
     << csv_format_double(r.eval_accuracy) << ',' << csv_format_double(r.kappa_rel_bound) << ','
     << csv_format_double(r.gamma) << ',' << r.wall_ms;
  return os.str();
}

void write_metrics_csv(const std::string& path, const std::vector<MetricsReport>& rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InvalidInputError("cannot open '" + path + "' for writing");
  out << kMetricsCsvHeader << "\r\n";
  for (const MetricsReport& r : rows) out << metrics_csv_row(r) << "\r\n";
  if (!out) throw InvalidInputError("failed while writing '" + path + "'");
}

std::vector<MetricsReport> read_metrics_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidInputError("cannot open '" + path + "'");
  std::string line;
  std::size_t line_no = 0;
  std::vector<MetricsReport> rows;
  bool saw_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (!saw_header) {
      if (line != kMetricsCsvHeader)
        throw InvalidInputError("metrics csv: unexpected header in '" + path + "'");
      saw_header = true;
      continue;
    }
    std::vector<std::string> f = csv_split(line);
    if (f.size() != 16)
      throw InvalidInputError("metrics csv: expected 16 fields on line " +
                              std::to_string(line_no) + ", got " + std::to_string(f.size()));
    MetricsReport r;
    r.method = f[0];
    r.family = f[1];
    r.link = f[2];
    r.eps_true = parse_csv_double(f[3], line_no);
    r.eps_assumed = parse_csv_double(f[4], line_no);
    r.n = parse_csv_u64(f[5], line_no);
    r.seed = parse_csv_u64(f[6], line_no);
    r.l2_error = parse_csv_double(f[7], line_no);
    r.seminorm_error = parse_csv_double(f[8], line_no);
    r.lambda = parse_csv_double(f[9], line_no);
    r.subopt_gap = parse_csv_double(f[10], line_no);
    r.margin_gap = parse_csv_double(f[11], line_no);
    r.eval_accuracy = parse_csv_double(f[12], line_no);
    r.kappa_rel_bound = parse_csv_double(f[13], line_no);
    r.gamma = parse_csv_double(f[14], line_no);
    r.wall_ms = static_cast<std::int64_t>(parse_csv_u64(f[15], line_no));
    rows.push_back(std::move(r));
  }
  if (!saw_header) throw InvalidInputError("metrics csv: '" + path + "' is empty");
  return rows;
}

// ---- epsilon tuning ----

TuneEpsResult tune_eps(const DiscreteEnv& env, const PreferenceDataset& train,
                       const PreferenceDataset& holdout, std::vector<double> grid,
                       const TrainOptions& opts, std::uint64_t seed) {
  if (grid.empty()) throw InvalidInputError("tune-eps: empty grid");
  if (train.kind != DatasetKind::Pair)
    throw KindMismatchError("tune-eps expects a pairwise training set");
  if (holdout.kind != DatasetKind::Pair)
    throw KindMismatchError("tune-eps expects a pairwise holdout set");
  std::sort(grid.begin(), grid.end());

  TuneEpsResult out;
  out.grid = grid;
  out.accuracy.reserve(grid.size());
  double best_acc = -1.0;
  for (double e : grid) {
    LossSpec ls;
    ls.family = LossFamily::Rdpo;
    ls.link = Link::Logistic;
    ls.eps_assumed = e;
    ls.validate();
    TrainConfig tc = opts.to_train_config(ls, seed);
    TrainResult res = train_on_dataset(env, train, tc);
    double acc = eval_accuracy(env, res.params.theta, holdout);
    out.accuracy.push_back(acc);
    // Strict improvement on an ascending grid: exact ties keep the smaller eps.
    if (acc > best_acc) {
      best_acc = acc;
      out.best_eps = e;
    }
  }
  return out;
}

// ---- scaling-law slope ----

namespace {

double metric_column(const MetricsReport& r, const std::string& col) {
  if (col == "l2_error") return r.l2_error;
  if (col == "seminorm_error") return r.seminorm_error;
  if (col == "subopt_gap") return r.subopt_gap;
  if (col == "margin_gap") return r.margin_gap;
  if (col == "eval_accuracy") return r.eval_accuracy;
  throw InvalidInputError("slope: unknown metric column '" + col + "'");
}

double median_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  std::size_t m = v.size();
  return m % 2 == 1 ? v[m / 2] : 0.5 * (v[m / 2 - 1] + v[m / 2]);
}

struct OlsFit {
  double slope;
  double intercept;
};

OlsFit ols(const std::vector<double>& x, const std::vector<double>& y) {
  double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  OlsFit f;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  return f;
}

double percentile(const std::vector<double>& sorted, double q) {
  if (sorted.size() == 1) return sorted[0];
  double pos = q * static_cast<double>(sorted.size() - 1);
  std::size_t lo = static_cast<std::size_t>(std::floor(pos));
  std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  double frac = pos - static_cast<double>(lo);
  return sorted[lo] * (1.0 - frac) + sorted[hi] * frac;
}

}  // namespace

SlopeFit fit_error_slope(const std::vector<MetricsReport>& rows, const std::string& y_column,
                         std::size_t resamples, std::uint64_t bootstrap_seed) {
  if (rows.empty()) throw InvalidInputError("slope: no rows");
  std::map<std::uint64_t, std::map<std::uint64_t, std::vector<double>>> by_n_seed;
  std::set<std::uint64_t> seed_set;
  for (const MetricsReport& r : rows) {
    double y = metric_column(r, y_column);
    if (!std::isfinite(y) || !(y > 0.0))
      throw InvalidInputError("slope: " + y_column +
                              " must be positive and finite for a log-log fit");
    by_n_seed[r.n][r.seed].push_back(y);
    seed_set.insert(r.seed);
  }
  if (by_n_seed.size() < 3)
    throw InvalidInputError("slope: need at least three distinct n values");

  std::vector<double> xs, ys;
  for (const auto& [n, per_seed] : by_n_seed) {
    std::vector<double> all;
    for (const auto& [seed, vals] : per_seed) all.insert(all.end(), vals.begin(), vals.end());
    xs.push_back(std::log(static_cast<double>(n)));
    ys.push_back(std::log(median_of(std::move(all))));
  }
  OlsFit point = ols(xs, ys);

  SlopeFit fit;
  fit.slope = point.slope;
  fit.intercept = point.intercept;
  fit.points = xs.size();
  fit.ci_lo = point.slope;
  fit.ci_hi = point.slope;

  std::vector<std::uint64_t> seeds(seed_set.begin(), seed_set.end());
  if (seeds.size() < 2 || resamples == 0) return fit;

  std::vector<double> slopes;
  slopes.reserve(resamples);
  for (std::size_t b = 0; b < resamples; ++b) {
    SplitMix64 rng(substream_seed(bootstrap_seed, kStreamBootstrap, b));
    std::vector<std::uint64_t> draw(seeds.size());
    for (std::size_t i = 0; i < seeds.size(); ++i)
      draw[i] = seeds[rng.uniform_index(seeds.size())];
    std::vector<double> bx, by;
    for (const auto& [n, per_seed] : by_n_seed) {
      std::vector<double> vals;
      for (std::uint64_t s : draw) {
        auto it = per_seed.find(s);
        if (it != per_seed.end()) vals.insert(vals.end(), it->second.begin(), it->second.end());
      }
      if (vals.empty()) continue;
      bx.push_back(std::log(static_cast<double>(n)));
      by.push_back(std::log(median_of(std::move(vals))));
    }
    if (bx.size() < 2) continue;
    slopes.push_back(ols(bx, by).slope);
  }
  if (!slopes.empty()) {
    std::sort(slopes.begin(), slopes.end());
    fit.ci_lo = percentile(slopes, 0.025);
    fit.ci_hi = percentile(slopes, 0.975);
  }
  return fit;
}

// ---- JSON config plumbing ----

namespace {

void check_keys(const nlohmann::json& j, const std::set<std::string>& allowed, const char* what) {
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!allowed.count(it.key()))
      throw InvalidInputError(std::string(what) + ": unknown key '" + it.key() + "'");
}

TrainOptions train_options_from_json(const nlohmann::json& j) {
  check_keys(j, {"bound_B", "steps", "lr_mode", "eta", "inv_c", "inv_lambda", "batch", "tol"},
             "train options");
  TrainOptions o;
  if (j.contains("bound_B")) o.bound_B = j.at("bound_B").get<double>();
  if (j.contains("steps")) o.steps = j.at("steps").get<std::int64_t>();
  if (j.contains("lr_mode")) o.lr_mode = lr_mode_from_string(j.at("lr_mode").get<std::string>());
  if (j.contains("eta")) o.eta = j.at("eta").get<double>();
  if (j.contains("inv_c")) o.inv_c = j.at("inv_c").get<double>();
  if (j.contains("inv_lambda")) o.inv_lambda = j.at("inv_lambda").get<double>();
  if (j.contains("batch")) o.batch = batch_mode_from_string(j.at("batch").get<std::string>());
  if (j.contains("tol")) o.tol = j.at("tol").get<double>();
  return o;
}

MethodSpec method_from_json(const nlohmann::json& j) {
  check_keys(j, {"name", "family", "link", "eps"}, "method");
  if (!j.contains("family")) throw InvalidInputError("method: missing 'family'");
  MethodSpec m;
  m.loss.family = loss_family_from_string(j.at("family").get<std::string>());
  if (j.contains("link")) m.loss.link = link_from_string(j.at("link").get<std::string>());
  if (j.contains("eps")) m.loss.eps_assumed = j.at("eps").get<double>();
  m.name = j.contains("name") ? j.at("name").get<std::string>() : to_string(m.loss.family);
  m.loss.validate();
  return m;
}

}  // namespace

TrainOptions train_options_from_json_text(const std::string& text) {
  nlohmann::json j = parse_json_or_throw(text, "train options");
  if (!j.is_object()) throw InvalidInputError("train options: expected a JSON object");
  return train_options_from_json(j);
}

SweepConfig sweep_config_from_json_text(const std::string& text, std::string* env_path,
                                        std::string* output_path) {
  nlohmann::json j = parse_json_or_throw(text, "sweep config");
  if (!j.is_object()) throw InvalidInputError("sweep config: expected a JSON object");
  check_keys(j,
             {"env", "output", "methods", "eps_true", "eps_assumed", "n", "seeds", "lambda",
              "kind", "rank_k", "holdout_n", "train", "jobs"},
             "sweep config");

  if (env_path) *env_path = j.contains("env") ? j.at("env").get<std::string>() : "";
  if (output_path) *output_path = j.contains("output") ? j.at("output").get<std::string>() : "";

  SweepConfig cfg;
  if (!j.contains("methods") || !j.at("methods").is_array() || j.at("methods").empty())
    throw InvalidInputError("sweep config: 'methods' must be a non-empty array");
  for (const auto& mj : j.at("methods")) cfg.methods.push_back(method_from_json(mj));

  if (j.contains("eps_true")) cfg.eps_true_grid = j.at("eps_true").get<std::vector<double>>();
  if (j.contains("eps_assumed"))
    cfg.eps_assumed_grid = j.at("eps_assumed").get<std::vector<double>>();
  if (j.contains("n")) cfg.n_grid = j.at("n").get<std::vector<std::uint64_t>>();
  if (j.contains("seeds")) cfg.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
  if (j.contains("lambda")) cfg.lambda = j.at("lambda").get<double>();
  if (j.contains("kind")) cfg.kind = dataset_kind_from_string(j.at("kind").get<std::string>());
  if (j.contains("rank_k")) cfg.rank_k = j.at("rank_k").get<std::size_t>();
  if (j.contains("holdout_n")) cfg.holdout_n = j.at("holdout_n").get<std::size_t>();
  if (j.contains("train")) cfg.train = train_options_from_json(j.at("train"));
  if (j.contains("jobs")) cfg.jobs = j.at("jobs").get<int>();
  return cfg;
}

std::string tune_eps_result_to_json_text(const TuneEpsResult& r) {
  nlohmann::ordered_json j;
  j["best_eps"] = r.best_eps;
  j["grid"] = r.grid;
  j["accuracy"] = r.accuracy;
  return j.dump(2) + "\n";
}

std::string slope_fit_to_json_text(const SlopeFit& f) {
  nlohmann::ordered_json j;
  j["slope"] = f.slope;
  j["intercept"] = f.intercept;
  j["ci_lo"] = f.ci_lo;
  j["ci_hi"] = f.ci_hi;
  j["points"] = f.points;
  return j.dump(2) + "\n";
}

}  // namespace robustpref
