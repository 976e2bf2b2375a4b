#pragma once

#include <cmath>
#include <vector>

#include <Eigen/Dense>

#include "robustpref/env.hpp"
#include "robustpref/rng.hpp"
#include "robustpref/sweep.hpp"

namespace testutil {

// Single prompt, identity features, uniform SFT.
inline robustpref::DiscreteEnv tabular_env(const std::vector<double>& rewards,
                                           double beta = 1.0, bool realizable = false) {
  robustpref::DiscreteEnv env;
  const Eigen::Index A = static_cast<Eigen::Index>(rewards.size());
  env.prompt_weights = Eigen::VectorXd::Ones(1);
  env.features = {Eigen::MatrixXd::Identity(A, A)};
  Eigen::VectorXd r(A);
  for (Eigen::Index a = 0; a < A; ++a) r(a) = rewards[static_cast<std::size_t>(a)];
  env.latent_reward = {r};
  if (realizable) env.theta_star = r;  // identity features: induced reward is r itself
  env.theta_sft = Eigen::VectorXd::Zero(A);
  env.beta = beta;
  env.validate();
  return env;
}

inline Eigen::VectorXd zero_sum(std::initializer_list<double> v) {
  Eigen::VectorXd x(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double q : v) x(i++) = q;
  x.array() -= x.mean();
  return x;
}

inline Eigen::VectorXd random_zero_sum(robustpref::SplitMix64& rng, Eigen::Index d,
                                       double max_norm) {
  Eigen::VectorXd z(d);
  for (Eigen::Index j = 0; j < d; ++j) z(j) = rng.next_double() * 2.0 - 1.0;
  z.array() -= z.mean();
  double n = z.norm();
  if (n < 1e-12) return Eigen::VectorXd::Zero(d);
  return z * (max_norm * rng.next_double() / n);
}

inline robustpref::DiscreteEnv small_random_env(robustpref::SplitMix64& rng,
                                                Eigen::Index min_actions = 2) {
  robustpref::EnvGenConfig c;
  c.kind = rng.bernoulli(0.5) ? robustpref::EnvKind::Tabular : robustpref::EnvKind::LogLinear;
  c.prompts = static_cast<Eigen::Index>(1 + rng.uniform_index(2));
  c.actions = min_actions + static_cast<Eigen::Index>(rng.uniform_index(3));
  c.dim = std::min(static_cast<Eigen::Index>(3 + rng.uniform_index(3)),
                   c.prompts * c.actions);
  c.beta = 0.25 + 0.75 * rng.next_double();
  c.reward_scale = 0.5 + rng.next_double();
  c.seed = rng.next_u64();
  return robustpref::generate_env(c);
}

}  // namespace testutil
