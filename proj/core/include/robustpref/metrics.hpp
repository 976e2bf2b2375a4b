#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "robustpref/dataset.hpp"
#include "robustpref/env.hpp"

namespace robustpref {

// Empirical feature-difference second moment (1/n) sum x x^T over the clean
// orientation x = phi(s, clean_winner) - phi(s, clean_loser).
Eigen::MatrixXd sample_cov_diff(const PreferenceDataset& ds, const DiscreteEnv& env);

// Covariance of phi under s ~ rho, a ~ policy(.|s), jointly over both draws.
Eigen::MatrixXd pop_cov(const DiscreteEnv& env, const std::vector<Eigen::VectorXd>& policy);

// Extremal eigenvalues of a symmetric matrix restricted to the zero-sum
// subspace {x : sum x_i = 0}. One-hot feature maps place the all-ones
// direction in every covariance kernel; the policy class never leaves the
// zero-sum set, so this restriction is the meaningful spectrum.
double zero_sum_lambda_min(const Eigen::MatrixXd& M);
double zero_sum_lambda_max(const Eigen::MatrixXd& M);

// kappa-bar = L^2 / lambda_min(Sigma_sft) on the zero-sum subspace.
// Singular coverage raises CoverageError.
double kappa_rel_bound(const DiscreteEnv& env);

// Relative condition number of a policy's covariance against pi_sft's.
double kappa_rel(const DiscreteEnv& env, const std::vector<Eigen::VectorXd>& policy);

struct EstimationError {
  double seminorm = 0.0;  // || . ||_{Sigma_hat + lambda I}
  double l2 = 0.0;
};
EstimationError estimation_error(const Eigen::VectorXd& theta_hat,
                                 const Eigen::VectorXd& theta_target,
                                 const Eigen::MatrixXd& sigma_hat, double lambda);

// Ridge weight sqrt(d ln(4d) / n) used when no lambda is supplied.
double default_metrics_lambda(Eigen::Index d, std::size_t n);

// E_rho[ E_{pi*}[r*] - E_{pi_theta}[r*] ].
double subopt_gap(const DiscreteEnv& env, const Eigen::VectorXd& theta);

// Preference margin of theta's implicit reward against the sampling policy,
// and the gap to the optimal parameter's margin.
struct MarginGap {
  double margin = 0.0;
  double gap = 0.0;
};
MarginGap margin_and_gap(const DiscreteEnv& env, const Eigen::VectorXd& theta,
                         const Eigen::VectorXd& theta_opt);

// Fraction of clean comparisons the implicit reward orders strictly
// correctly; ties score zero.
double eval_accuracy(const DiscreteEnv& env, const Eigen::VectorXd& theta,
                     const PreferenceDataset& test);

// E_rho KL(pi_a(.|s) || pi_b(.|s)).
double expected_kl(const DiscreteEnv& env, const Eigen::VectorXd& theta_a,
                   const Eigen::VectorXd& theta_b);

// ceil( kappa d / (Delta^2 gamma^2 beta^2 (1 - 2 eps)^2) ), snapping values
// within 1e-9 relative of an integer before the ceil.
std::uint64_t sample_complexity(double kappa, Eigen::Index d, double delta, double gamma,
                                double beta, double eps);

// One experiment cell's outcome; the sweep writer turns these into CSV rows.
struct MetricsReport {
  std::string method;
  std::string family;
  std::string link;
  double eps_true = 0.0;
  double eps_assumed = 0.0;
  std::uint64_t n = 0;
  std::uint64_t seed = 0;
  double l2_error = 0.0;
  double seminorm_error = 0.0;
  double lambda = 0.0;
  double subopt_gap = 0.0;
  double margin_gap = 0.0;
  double eval_accuracy = 0.0;
  double kappa_rel_bound = 0.0;
  double gamma = 0.0;
  std::int64_t wall_ms = 0;
};

}  // namespace robustpref
