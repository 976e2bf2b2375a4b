#pragma once

#include <string>

#include <Eigen/Dense>

#include "robustpref/dataset.hpp"
#include "robustpref/env.hpp"

namespace robustpref {

enum class LossFamily { Dpo, Cdpo, Rdpo, Ipo, Slic, Pl, PlRobust };
enum class Link { Logistic, Probit };

std::string to_string(LossFamily f);
std::string to_string(Link l);
LossFamily loss_family_from_string(const std::string& s);
Link link_from_string(const std::string& s);

// Pairwise families ipo and slic act as their de-biased variants whenever
// eps_assumed > 0 and collapse to the vanilla objectives at eps_assumed = 0.
// dpo and pl take no noise parameter, so they require eps_assumed = 0.
struct LossSpec {
  LossFamily family = LossFamily::Dpo;
  Link link = Link::Logistic;
  double eps_assumed = 0.0;

  bool is_ranking() const {
    return family == LossFamily::Pl || family == LossFamily::PlRobust;
  }
  void validate() const;
};

LossSpec loss_spec_from_json_text(const std::string& text);
std::string loss_spec_to_json_text(const LossSpec& spec);

// -log link(x) and its derivative in x.
double bce_loss(Link link, double x);
double bce_dloss(Link link, double x);

// Per-comparison loss as a function of x = beta * h(winner, loser), and its
// derivative in x. Gradients in theta are beta * dloss * (phi_w - phi_l).
double pair_loss_from_score(const LossSpec& spec, double beta_h);
double pair_dloss_from_score(const LossSpec& spec, double beta_h);

double pair_loss(const LossSpec& spec, const DiscreteEnv& env, const Eigen::VectorXd& theta,
                 const ObservedPair& pair);
Eigen::VectorXd pair_loss_grad(const LossSpec& spec, const DiscreteEnv& env,
                               const Eigen::VectorXd& theta, const ObservedPair& pair);

// Logistic-link gradient weights at the observed pair:
//   zeta     = sigma(beta h(l, w))                      (clean objective)
//   zeta_bar = (1-e) sigma(beta h(l,w)) - e sigma(beta h(w,l))
//   zeta_hat = [(1-e) sigma(beta h(l,w)) + e sigma(beta h(w,l))] / (1-2e)
struct GradientWeights {
  double zeta = 0.0;
  double zeta_bar = 0.0;
  double zeta_hat = 0.0;
};
GradientWeights gradient_weights(const DiscreteEnv& env, const Eigen::VectorXd& theta,
                                 const ObservedPair& pair, double eps);

// Flip-distribution variance of the un-normalized de-biased loss around the
// clean orientation: eps (1 - eps) [L(w,l) - L(l,w)]^2.
double rdpo_variance_closed_form(const DiscreteEnv& env, const Eigen::VectorXd& theta,
                                 const PreferencePair& pair, double eps,
                                 Link link = Link::Logistic);

// Exact two-outcome expectation of the normalized de-biased loss under the
// flip distribution, plus the matching un-normalized variance.
struct FlipExpectation {
  double mean = 0.0;
  double variance_unnormalized = 0.0;
};
FlipExpectation rdpo_flip_expectation(const DiscreteEnv& env, const Eigen::VectorXd& theta,
                                      const PreferencePair& pair, double eps,
                                      Link link = Link::Logistic);

// Listwise losses. Scores are beta-scaled implicit rewards, so K = 2
// reproduces the pairwise objectives exactly.
double ranking_loss(const LossSpec& spec, const DiscreteEnv& env, const Eigen::VectorXd& theta,
                    const ObservedRanking& ranking);
Eigen::VectorXd ranking_loss_grad(const LossSpec& spec, const DiscreteEnv& env,
                                  const Eigen::VectorXd& theta, const ObservedRanking& ranking);

// Score-space kernels shared by the trainers; u holds the candidates'
// beta-scaled scores in observed rank order (best first).
double pl_loss_from_scores(const Eigen::VectorXd& u);
Eigen::VectorXd pl_grad_from_scores(const Eigen::VectorXd& u);
double pl_robust_loss_from_scores(const Eigen::VectorXd& u, double eps);
Eigen::VectorXd pl_robust_grad_from_scores(const Eigen::VectorXd& u, double eps);

}  // namespace robustpref
