#include "robustpref/metrics.hpp"

#include <cmath>

#include <Eigen/Eigenvalues>

#include "robustpref/numeric.hpp"

namespace robustpref {

namespace {

// Orthonormal basis of {x : sum x_i = 0} via the Householder reflector that
// maps e_1 to the normalized all-ones vector; columns 2..d span the subspace.
Eigen::MatrixXd zero_sum_basis(Eigen::Index d) {
  if (d < 2) throw InvalidInputError("zero-sum subspace needs dimension >= 2");
  Eigen::VectorXd u = Eigen::VectorXd::Constant(d, 1.0 / std::sqrt(static_cast<double>(d)));
  Eigen::VectorXd v = u - Eigen::VectorXd::Unit(d, 0);
  const double vn2 = v.squaredNorm();
  Eigen::MatrixXd H = Eigen::MatrixXd::Identity(d, d);
  if (vn2 > 0.0) H -= (2.0 / vn2) * (v * v.transpose());
  return H.rightCols(d - 1);
}

Eigen::VectorXd zero_sum_spectrum(const Eigen::MatrixXd& M) {
  if (M.rows() != M.cols()) throw InvalidInputError("expected a square matrix");
  const Eigen::MatrixXd Q = zero_sum_basis(M.rows());
  const Eigen::MatrixXd R = Q.transpose() * M.selfadjointView<Eigen::Lower>() * Q;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (R + R.transpose()),
                                                    Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success)
    throw NumericRangeError("eigendecomposition failed on the restricted matrix");
  return es.eigenvalues();
}

void check_policy_table(const DiscreteEnv& env, const std::vector<Eigen::VectorXd>& policy) {
  if (static_cast<Eigen::Index>(policy.size()) != env.num_prompts())
    throw InvalidPolicyError("policy table: outer size must match prompt count");
  for (Eigen::Index s = 0; s < env.num_prompts(); ++s) {
    const auto& row = policy[static_cast<std::size_t>(s)];
    if (row.size() != env.num_actions(s))
      throw InvalidPolicyError("policy table: row " + std::to_string(s) +
                               " size must match the action count");
    double total = 0.0;
    for (Eigen::Index a = 0; a < row.size(); ++a) {
      if (!(std::isfinite(row[a]) && row[a] >= -1e-12))
        throw InvalidPolicyError("policy table: negative or non-finite probability at prompt " +
                                 std::to_string(s));
      total += row[a];
    }
    if (std::abs(total - 1.0) > 1e-9)
      throw InvalidPolicyError("policy table: row " + std::to_string(s) +
                               " does not sum to 1 within 1e-9");
  }
}

}  // namespace

Eigen::MatrixXd sample_cov_diff(const PreferenceDataset& ds, const DiscreteEnv& env) {
  if (ds.kind != DatasetKind::Pair)
    throw KindMismatchError("sample_cov_diff: dataset kind is not \"pair\"");
  if (ds.pairs.empty()) throw InvalidInputError("sample_cov_diff: dataset is empty");
  ds.validate_indices(env);
  const Eigen::Index d = env.dim();
  Eigen::MatrixXd sigma = Eigen::MatrixXd::Zero(d, d);
  for (const auto& p : ds.pairs) {
    const auto& F = env.features[p.prompt];
    const Eigen::VectorXd x = (F.row(static_cast<Eigen::Index>(p.clean_winner)) -
                               F.row(static_cast<Eigen::Index>(p.clean_loser())))
                                  .transpose();
    sigma.noalias() += x * x.transpose();
  }
  return sigma / static_cast<double>(ds.pairs.size());
}

Eigen::MatrixXd pop_cov(const DiscreteEnv& env, const std::vector<Eigen::VectorXd>& policy) {
  check_policy_table(env, policy);
  const Eigen::Index d = env.dim();
  Eigen::MatrixXd second = Eigen::MatrixXd::Zero(d, d);
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(d);
  for (Eigen::Index s = 0; s < env.num_prompts(); ++s) {
    const double rho = env.prompt_weights[s];
    if (rho == 0.0) continue;
    const auto& F = env.features[static_cast<std::size_t>(s)];
    const auto& pi = policy[static_cast<std::size_t>(s)];
    for (Eigen::Index a = 0; a < F.rows(); ++a) {
      const double w = rho * pi[a];
      if (w == 0.0) continue;
      const Eigen::VectorXd phi = F.row(a).transpose();
      second.noalias() += w * (phi * phi.transpose());
      mean.noalias() += w * phi;
    }
  }
  return second - mean * mean.transpose();
}

double zero_sum_lambda_min(const Eigen::MatrixXd& M) { return zero_sum_spectrum(M).minCoeff(); }

double zero_sum_lambda_max(const Eigen::MatrixXd& M) { return zero_sum_spectrum(M).maxCoeff(); }

double kappa_rel_bound(const DiscreteEnv& env) {
  const Eigen::MatrixXd sigma = pop_cov(env, sft_policy(env));
  const double lmin = zero_sum_lambda_min(sigma);
  const double lmax = zero_sum_lambda_max(sigma);
  if (lmin <= 1e-12 * std::max(1.0, lmax))
    throw CoverageError("kappa_rel_bound: Sigma_sft is singular on the zero-sum subspace");
  const double L = env.feature_bound();
  return L * L / lmin;
}

double kappa_rel(const DiscreteEnv& env, const std::vector<Eigen::VectorXd>& policy) {
  const Eigen::MatrixXd sigma_sft = pop_cov(env, sft_policy(env));
  const double lmin = zero_sum_lambda_min(sigma_sft);
  const double lmax_sft = zero_sum_lambda_max(sigma_sft);
  if (lmin <= 1e-12 * std::max(1.0, lmax_sft))
    throw CoverageError("kappa_rel: Sigma_sft is singular on the zero-sum subspace");
  return zero_sum_lambda_max(pop_cov(env, policy)) / lmin;
}

EstimationError estimation_error(const Eigen::VectorXd& theta_hat,
                                 const Eigen::VectorXd& theta_target,
                                 const Eigen::MatrixXd& sigma_hat, double lambda) {
  if (theta_hat.size() != theta_target.size())
    throw InvalidInputError("estimation_error: parameter dimensions differ");
  if (sigma_hat.rows() != sigma_hat.cols() || sigma_hat.rows() != theta_hat.size())
    throw InvalidInputError("estimation_error: Sigma_hat shape mismatch");
  if (!(std::isfinite(lambda) && lambda >= 0.0))
    throw InvalidInputError("estimation_error: lambda must be finite and >= 0");
  const Eigen::VectorXd delta = theta_hat - theta_target;
  double quad = delta.dot(sigma_hat.selfadjointView<Eigen::Lower>() * delta) +
                lambda * delta.squaredNorm();
  quad = std::max(quad, 0.0);
  return {std::sqrt(quad), delta.norm()};
}

double default_metrics_lambda(Eigen::Index d, std::size_t n) {
  if (d < 1 || n < 1) throw InvalidInputError("default_metrics_lambda: need d >= 1 and n >= 1");
  return std::sqrt(static_cast<double>(d) * std::log(4.0 * static_cast<double>(d)) /
                   static_cast<double>(n));
}

double subopt_gap(const DiscreteEnv& env, const Eigen::VectorXd& theta) {
  const auto star = optimal_policy(env);
  const auto hat = policy_table(env, theta);
  double gap = 0.0;
  for (Eigen::Index s = 0; s < env.num_prompts(); ++s) {
    const auto& r = env.latent_reward[static_cast<std::size_t>(s)];
    gap += env.prompt_weights[s] *
           (star[static_cast<std::size_t>(s)] - hat[static_cast<std::size_t>(s)]).dot(r);
  }
  return gap;
}

MarginGap margin_and_gap(const DiscreteEnv& env, const Eigen::VectorXd& theta,
                         const Eigen::VectorXd& theta_opt) {
  const auto margin_of = [&](const Eigen::VectorXd& t) {
    const auto sft = sft_policy(env);
    double m = 0.0;
    for (Eigen::Index s = 0; s < env.num_prompts(); ++s) {
      const double rho = env.prompt_weights[s];
      if (rho == 0.0) continue;
      const Eigen::VectorXd lp = policy_log_probs(env, t, s);
      const Eigen::VectorXd lp0 = policy_log_probs(env, env.theta_sft, s);
      const Eigen::VectorXd rhat = lp - lp0;
      const auto& pi = sft[static_cast<std::size_t>(s)];
      for (Eigen::Index a = 0; a < pi.size(); ++a)
        for (Eigen::Index b = 0; b < pi.size(); ++b) {
          if (a == b) continue;
          m += rho * pi[a] * pi[b] * true_pref_prob(env, s, a, b) * (rhat[a] - rhat[b]);
        }
    }
    return m;
  };
  const double margin = margin_of(theta);
  return {margin, margin_of(theta_opt) - margin};
}

double eval_accuracy(const DiscreteEnv& env, const Eigen::VectorXd& theta,
                     const PreferenceDataset& test) {
  if (test.kind != DatasetKind::Pair)
    throw KindMismatchError("eval_accuracy: dataset kind is not \"pair\"");
  if (test.pairs.empty()) throw InvalidInputError("eval_accuracy: dataset is empty");
  test.validate_indices(env);

  std::vector<Eigen::VectorXd> rhat(static_cast<std::size_t>(env.num_prompts()));
  std::vector<bool> ready(static_cast<std::size_t>(env.num_prompts()), false);
  std::size_t correct = 0;
  for (const auto& p : test.pairs) {
    if (!ready[p.prompt]) {
      rhat[p.prompt] = policy_log_probs(env, theta, static_cast<Eigen::Index>(p.prompt)) -
                       policy_log_probs(env, env.theta_sft, static_cast<Eigen::Index>(p.prompt));
      ready[p.prompt] = true;
    }
    const auto& r = rhat[p.prompt];
    if (r[static_cast<Eigen::Index>(p.clean_winner)] >
        r[static_cast<Eigen::Index>(p.clean_loser())])
      ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(test.pairs.size());
}

double expected_kl(const DiscreteEnv& env, const Eigen::VectorXd& theta_a,
                   const Eigen::VectorXd& theta_b) {
  double kl = 0.0;
  for (Eigen::Index s = 0; s < env.num_prompts(); ++s) {
    const double rho = env.prompt_weights[s];
    if (rho == 0.0) continue;
    const Eigen::VectorXd la = policy_log_probs(env, theta_a, s);
    const Eigen::VectorXd lb = policy_log_probs(env, theta_b, s);
    kl += rho * (la.array().exp() * (la - lb).array()).sum();
  }
  return kl;
}

std::uint64_t sample_complexity(double kappa, Eigen::Index d, double delta, double gamma,
                                double beta, double eps) {
  if (!(std::isfinite(kappa) && kappa > 0.0)) throw InvalidInputError("sample_complexity: kappa must be > 0");
  if (d < 1) throw InvalidInputError("sample_complexity: d must be >= 1");
  if (!(std::isfinite(delta) && delta > 0.0)) throw InvalidInputError("sample_complexity: Delta must be > 0");
  if (!(std::isfinite(gamma) && gamma > 0.0)) throw InvalidInputError("sample_complexity: gamma must be > 0");
  if (!(std::isfinite(beta) && beta > 0.0)) throw InvalidInputError("sample_complexity: beta must be > 0");
  if (!(std::isfinite(eps) && eps >= 0.0 && eps < 0.5))
    throw InvalidRateError("sample_complexity: eps must lie in [0, 0.5)");
  const double denom = delta * delta * gamma * gamma * beta * beta * (1.0 - 2.0 * eps) *
                       (1.0 - 2.0 * eps);
  double v = kappa * static_cast<double>(d) / denom;
  const double r = std::round(v);
  if (std::abs(v - r) <= 1e-9 * std::max(1.0, std::abs(v))) v = r;
  return static_cast<std::uint64_t>(std::ceil(v));
}

}  // namespace robustpref
