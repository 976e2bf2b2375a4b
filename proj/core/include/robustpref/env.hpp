#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "robustpref/errors.hpp"

namespace robustpref {

enum class PrefModel { Btl, Probit };

std::string to_string(PrefModel m);
PrefModel pref_model_from_string(const std::string& s);

// Finite preference environment: S prompts, per-prompt action sets, linear
// feature map, latent reward, softmax sampling policy parameterized by
// theta over theta^T phi(s, a).
struct DiscreteEnv {
  Eigen::VectorXd prompt_weights;               // rho, size S
  std::vector<Eigen::MatrixXd> features;        // per prompt: A_s x d, rows = actions
  std::vector<Eigen::VectorXd> latent_reward;   // per prompt: r*(s, .), size A_s
  std::optional<Eigen::VectorXd> theta_star;    // set when r* = theta*^T phi
  Eigen::VectorXd theta_sft;                    // reference parameter theta_0
  double beta = 1.0;
  PrefModel pref_model = PrefModel::Btl;

  Eigen::Index num_prompts() const { return prompt_weights.size(); }
  Eigen::Index num_actions(Eigen::Index s) const { return features[static_cast<std::size_t>(s)].rows(); }
  Eigen::Index dim() const { return theta_sft.size(); }

  // L = max_{s,a} ||phi(s,a)||_2, cached by validate().
  double feature_bound() const { return feature_bound_; }

  // Checks every structural invariant, throws InvalidInputError describing
  // the first violation, and caches the feature bound. Call after any
  // manual mutation; the loader and generator call it for you.
  void validate();

 private:
  double feature_bound_ = 0.0;
};

// Validated policy parameter: zero-sum within 1e-9 and ||theta|| <= B + 1e-9.
struct PolicyParams {
  Eigen::VectorXd theta;
  double bound_B = 1.0;

  PolicyParams() = default;
  PolicyParams(Eigen::VectorXd t, double B);
};

// log pi_theta(. | s) for the softmax policy; log-sum-exp normalized.
Eigen::VectorXd policy_log_probs(const DiscreteEnv& env, const Eigen::VectorXd& theta,
                                 Eigen::Index prompt);

// Full probability table for theta; rows sum to 1 within 1e-12.
std::vector<Eigen::VectorXd> policy_table(const DiscreteEnv& env, const Eigen::VectorXd& theta);

std::vector<Eigen::VectorXd> sft_policy(const DiscreteEnv& env);

// r_hat(s, a) = log pi_theta(a|s) - log pi_sft(a|s).
double implicit_reward(const DiscreteEnv& env, const Eigen::VectorXd& theta,
                       Eigen::Index prompt, Eigen::Index action);

// h_theta(s, a, a') = r_hat(s, a) - r_hat(s, a'). Degenerate pair a == a' throws.
double preference_score(const DiscreteEnv& env, const Eigen::VectorXd& theta,
                        Eigen::Index prompt, Eigen::Index a, Eigen::Index a_prime);

// P*[a beats a' | s] under the env's comparison model (logistic or probit
// link on the latent reward difference).
double true_pref_prob(const DiscreteEnv& env, Eigen::Index prompt, Eigen::Index a,
                      Eigen::Index a_prime);

// Model preference probability: link(beta * h_theta). Link matches pref_model.
double predicted_pref_prob(const DiscreteEnv& env, const Eigen::VectorXd& theta,
                           Eigen::Index prompt, Eigen::Index a, Eigen::Index a_prime);

// pi*(.|s) proportional to pi_sft exp(r*/beta), computed in log space.
std::vector<Eigen::VectorXd> optimal_policy(const DiscreteEnv& env);

// Parameter realizing pi*: theta_sft + theta*/beta. Requires theta_star.
Eigen::VectorXd optimal_policy_params(const DiscreteEnv& env);

// JSON file I/O. Loading validates and, when the latent reward is given via
// theta_star, mean-centers theta_star before inducing r* (the zero-sum
// representative; reward differences are unchanged for tabular features).
DiscreteEnv load_env(const std::string& path);
void save_env(const DiscreteEnv& env, const std::string& path);

DiscreteEnv env_from_json_text(const std::string& text);
std::string env_to_json_text(const DiscreteEnv& env);

// FNV-1a 64 over the env file bytes, lowercase hex.
std::string env_hash_of_file(const std::string& path);
std::string env_hash_of_text(const std::string& text);

}  // namespace robustpref
