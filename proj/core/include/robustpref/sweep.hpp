#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "robustpref/dataset.hpp"
#include "robustpref/env.hpp"
#include "robustpref/metrics.hpp"
#include "robustpref/optim.hpp"

namespace robustpref {

// ---- random environment generation ----

enum class EnvKind { Tabular, LogLinear };

std::string to_string(EnvKind k);
EnvKind env_kind_from_string(const std::string& s);

struct EnvGenConfig {
  EnvKind kind = EnvKind::Tabular;
  Eigen::Index prompts = 1;
  Eigen::Index actions = 8;
  Eigen::Index dim = 8;  // ignored for tabular (forced to prompts * actions)
  double beta = 1.0;
  PrefModel pref_model = PrefModel::Btl;
  double reward_scale = 1.0;
  std::uint64_t seed = 0;
};

// Deterministic in the seed. theta_star is mean-centered and its sign is
// chosen so max r* >= -min r*, the orientation the reward-range bounds use.
DiscreteEnv generate_env(const EnvGenConfig& cfg);

// ---- experiment cells and sweeps ----

struct MethodSpec {
  std::string name;
  LossSpec loss;
};

struct TrainOptions {
  double bound_B = 4.0;
  std::int64_t steps = 5000;
  LrMode lr_mode = LrMode::Constant;
  double eta = 0.0;
  double inv_c = 1.0;
  double inv_lambda = 0.0;
  BatchMode batch = BatchMode::Full;
  double tol = 1e-10;

  TrainConfig to_train_config(const LossSpec& loss, std::uint64_t seed) const;
};

struct SweepConfig {
  std::vector<MethodSpec> methods;
  std::vector<double> eps_true_grid{0.0};
  std::vector<double> eps_assumed_grid;  // empty: keep each method's own eps
  std::vector<std::uint64_t> n_grid{1024};
  std::vector<std::uint64_t> seeds{1};
  double lambda = 0.0;  // <= 0: sqrt(d ln(4d) / n)
  DatasetKind kind = DatasetKind::Pair;
  std::size_t rank_k = 3;
  std::size_t holdout_n = 4096;
  TrainOptions train;
  int jobs = 1;
};

// Batch-mode dispatch over a dataset's observed view.
TrainResult train_on_dataset(const DiscreteEnv& env, const PreferenceDataset& ds,
                             const TrainConfig& cfg);

// One train/eval cell. The training set depends only on (env, n, eps_true,
// seed), so methods inside a cell see identical data.
MetricsReport run_cell(const DiscreteEnv& env, const MethodSpec& method, double eps_true,
                       std::uint64_t n, std::uint64_t seed, const SweepConfig& cfg);

// Full grid; row order is the deterministic cell order regardless of
// cfg.jobs, so parallel and serial runs emit identical files.
std::vector<MetricsReport> run_sweep(const DiscreteEnv& env, const SweepConfig& cfg);

// ---- CSV ----

extern const char* const kMetricsCsvHeader;

std::string csv_format_double(double v);
std::string metrics_csv_row(const MetricsReport& r);
void write_metrics_csv(const std::string& path, const std::vector<MetricsReport>& rows);
std::vector<MetricsReport> read_metrics_csv(const std::string& path);

// ---- epsilon tuning ----

struct TuneEpsResult {
  double best_eps = 0.0;
  std::vector<double> grid;
  std::vector<double> accuracy;  // holdout accuracy per grid value
};

// Trains the de-biased objective at every grid value on the observed data
// and keeps the best holdout accuracy; exact ties resolve to the smaller eps.
TuneEpsResult tune_eps(const DiscreteEnv& env, const PreferenceDataset& train,
                       const PreferenceDataset& holdout, std::vector<double> grid,
                       const TrainOptions& opts, std::uint64_t seed);

// ---- scaling-law slope ----

struct SlopeFit {
  double slope = 0.0;
  double intercept = 0.0;
  double ci_lo = 0.0;
  double ci_hi = 0.0;
  std::size_t points = 0;
};

// OLS of ln(median-over-seeds y) on ln n; the confidence interval is a seed
// bootstrap with `resamples` draws.
SlopeFit fit_error_slope(const std::vector<MetricsReport>& rows, const std::string& y_column,
                         std::size_t resamples = 1000, std::uint64_t bootstrap_seed = 0);

// ---- JSON config plumbing for the CLI ----

TrainOptions train_options_from_json_text(const std::string& text);
SweepConfig sweep_config_from_json_text(const std::string& text, std::string* env_path,
                                        std::string* output_path);
std::string tune_eps_result_to_json_text(const TuneEpsResult& r);
std::string slope_fit_to_json_text(const SlopeFit& f);

}  // namespace robustpref
