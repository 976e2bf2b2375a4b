#pragma once

#include <vector>

#include <Eigen/Dense>

#include "robustpref/dataset.hpp"
#include "robustpref/env.hpp"
#include "robustpref/optim.hpp"

namespace robustpref {

// Explicit reward model r(s, a) = xi . phi(s, a); zero-sum, norm-bounded.
struct RewardParams {
  Eigen::VectorXd xi;
  double bound_B = 1.0;

  RewardParams() = default;
  RewardParams(Eigen::VectorXd x, double B);
};

// De-biased logistic comparison loss on raw reward differences (unit scale:
// no beta enters). eps = 0 gives the vanilla fit.
struct RewardLossEval {
  double loss = 0.0;
  Eigen::VectorXd grad;
};
RewardLossEval reward_pair_loss(const Eigen::VectorXd& xi, const DiscreteEnv& env,
                                const ObservedPair& pair, double eps);

// Projected gradient fit of xi. cfg.loss.family selects dpo (vanilla), cdpo,
// or rdpo applied to reward differences; link must be logistic. Internally
// this is the policy trainer run on the env with beta = 1 and theta_sft = 0,
// which reproduces the reward objective exactly.
RewardParams train_reward(const DiscreteEnv& env, const std::vector<ObservedPair>& data,
                          const TrainConfig& cfg);

// Exact extraction of the KL-regularized optimal policy for a fitted reward:
// pi(.|s) proportional to pi_sft(.|s) exp(xi . phi(s, .) / beta).
std::vector<Eigen::VectorXd> policy_from_reward(const DiscreteEnv& env, const Eigen::VectorXd& xi,
                                                double beta);

}  // namespace robustpref
