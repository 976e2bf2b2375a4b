#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "robustpref/dataset.hpp"
#include "robustpref/env.hpp"
#include "robustpref/losses.hpp"

namespace robustpref {

enum class LrMode { Constant, Inverse };
enum class BatchMode { Full, PerSample };

std::string to_string(LrMode m);
std::string to_string(BatchMode m);
LrMode lr_mode_from_string(const std::string& s);
BatchMode batch_mode_from_string(const std::string& s);

struct TrainConfig {
  LossSpec loss;
  double bound_B = 1.0;
  std::int64_t steps = 5000;  // 0 is allowed: return the projected init
  LrMode lr_mode = LrMode::Constant;
  double eta = 0.0;        // constant step; <= 0 selects 1/M from a smoothness bound
  double inv_c = 1.0;      // inverse schedule: eta_t = inv_c / (lambda * t)
  double inv_lambda = 0.0; // <= 0 selects gamma * beta^2 * (1 - 2 eps) * kappa_cov
  BatchMode batch = BatchMode::Full;
  std::optional<Eigen::VectorXd> init;  // projected before use; default 0
  std::uint64_t seed = 0;
  double tol = 1e-10;  // stop when the projected-gradient norm falls below

  void validate() const;
};

struct TraceRow {
  std::int64_t step = 0;
  double loss = 0.0;
  double grad_norm = 0.0;  // projected-gradient mapping norm
};

struct TrainResult {
  PolicyParams params;
  std::vector<TraceRow> trace;
};

// Euclidean projection onto {sum(theta) = 0} intersected with the B-ball:
// mean-center, then rescale radially if the norm exceeds B. The hyperplane
// passes through the ball's center, so the two stages compose exactly.
Eigen::VectorXd project(const Eigen::VectorXd& theta, double B);

// Deterministic full-batch projected gradient descent on the empirical loss.
// Identical records are folded into weighted groups; the reduction order is
// fixed, so reruns are bit-identical.
TrainResult train_full_batch(const DiscreteEnv& env, const std::vector<ObservedPair>& data,
                             const TrainConfig& cfg);
TrainResult train_full_batch(const DiscreteEnv& env, const std::vector<ObservedRanking>& data,
                             const TrainConfig& cfg);

// Projected SGD: one record per step, visited in a seed-shuffled order that
// reshuffles each pass. tol is ignored; exactly cfg.steps steps run.
TrainResult train_sgd(const DiscreteEnv& env, const std::vector<ObservedPair>& data,
                      const TrainConfig& cfg);
TrainResult train_sgd(const DiscreteEnv& env, const std::vector<ObservedRanking>& data,
                      const TrainConfig& cfg);

// gamma(beta, alpha0) = 1 / (2 + e^{-4 beta alpha0} + e^{4 beta alpha0}).
// When 4 beta alpha0 > 700 the positive exponential overflows; the result
// underflows to zero and *underflow (if given) is set.
double gamma_const(double beta, double alpha0, bool* underflow = nullptr);

// Population smallest eigenvalue of the feature-difference covariance under
// pi_sft, restricted to the zero-sum subspace. Feeds the inverse schedule.
double population_kappa_cov(const DiscreteEnv& env);

}  // namespace robustpref
