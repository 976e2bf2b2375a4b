#include "robustpref/reward.hpp"

#include <cmath>

#include "robustpref/losses.hpp"
#include "robustpref/numeric.hpp"

namespace robustpref {

RewardParams::RewardParams(Eigen::VectorXd x, double B) : xi(std::move(x)), bound_B(B) {
  if (!(std::isfinite(B) && B > 0.0))
    throw InvalidInputError("RewardParams: bound_B must be finite and > 0");
  if (xi.size() < 1 || !xi.allFinite())
    throw InvalidInputError("RewardParams: xi must be non-empty and finite");
  if (std::abs(xi.sum()) > 1e-9)
    throw InvalidInputError("RewardParams: xi must be zero-sum within 1e-9");
  if (xi.norm() > B + 1e-9)
    throw InvalidInputError("RewardParams: ||xi|| exceeds bound_B + 1e-9");
}

RewardLossEval reward_pair_loss(const Eigen::VectorXd& xi, const DiscreteEnv& env,
                                const ObservedPair& pair, double eps) {
  if (!(std::isfinite(eps) && eps >= 0.0 && eps < 0.5))
    throw InvalidRateError("reward_pair_loss: eps must lie in [0, 0.5)");
  if (xi.size() != env.dim()) throw InvalidInputError("reward_pair_loss: xi dimension mismatch");
  if (pair.prompt >= static_cast<std::uint32_t>(env.num_prompts()))
    throw IndexError("reward_pair_loss: prompt index out of range");
  const auto& F = env.features[pair.prompt];
  if (static_cast<Eigen::Index>(pair.winner) >= F.rows() ||
      static_cast<Eigen::Index>(pair.loser) >= F.rows())
    throw IndexError("reward_pair_loss: action index out of range");
  if (pair.winner == pair.loser) throw DegeneratePairError("reward_pair_loss: winner equals loser");

  const Eigen::VectorXd x = (F.row(static_cast<Eigen::Index>(pair.winner)) -
                             F.row(static_cast<Eigen::Index>(pair.loser)))
                                .transpose();
  const double u = xi.dot(x);
  const double scale = 1.0 - 2.0 * eps;
  RewardLossEval out;
  out.loss = ((1.0 - eps) * neg_log_sigmoid(u) - eps * neg_log_sigmoid(-u)) / scale;
  const double d = (-(1.0 - eps) * sigmoid(-u) - eps * sigmoid(u)) / scale;
  out.grad = d * x;
  return out;
}

RewardParams train_reward(const DiscreteEnv& env, const std::vector<ObservedPair>& data,
                          const TrainConfig& cfg) {
  if (cfg.loss.is_ranking() || cfg.loss.family == LossFamily::Ipo ||
      cfg.loss.family == LossFamily::Slic)
    throw KindMismatchError("train_reward: family must be dpo, cdpo, or rdpo");
  if (cfg.loss.link != Link::Logistic)
    throw InvalidInputError("train_reward: reward fitting uses the logistic link");

  DiscreteEnv unit = env;
  unit.beta = 1.0;
  unit.theta_sft = Eigen::VectorXd::Zero(env.dim());
  unit.validate();

  const TrainResult res = cfg.batch == BatchMode::Full ? train_full_batch(unit, data, cfg)
                                                       : train_sgd(unit, data, cfg);
  return RewardParams(res.params.theta, cfg.bound_B);
}

std::vector<Eigen::VectorXd> policy_from_reward(const DiscreteEnv& env, const Eigen::VectorXd& xi,
                                                double beta) {
  if (!(std::isfinite(beta) && beta > 0.0))
    throw InvalidInputError("policy_from_reward: beta must be finite and > 0");
  if (xi.size() != env.dim())
    throw InvalidInputError("policy_from_reward: xi dimension mismatch");
  if (!xi.allFinite()) throw InvalidInputError("policy_from_reward: xi must be finite");

  std::vector<Eigen::VectorXd> table;
  table.reserve(static_cast<std::size_t>(env.num_prompts()));
  for (Eigen::Index s = 0; s < env.num_prompts(); ++s) {
    const Eigen::VectorXd lp0 = policy_log_probs(env, env.theta_sft, s);
    const Eigen::VectorXd tilted =
        lp0 + (env.features[static_cast<std::size_t>(s)] * xi) / beta;
    if (!tilted.allFinite())
      throw NumericRangeError("policy_from_reward: reward/beta overflowed at prompt " +
                              std::to_string(s));
    table.push_back(log_softmax(tilted).array().exp().matrix());
  }
  return table;
}

}  // namespace robustpref
