#include "robustpref/env.hpp"

#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "robustpref/numeric.hpp"

namespace robustpref {

using nlohmann::json;

namespace {

void require(bool cond, const std::string& msg) {
  if (!cond) throw InvalidInputError(msg);
}

void check_prompt(const DiscreteEnv& env, Eigen::Index s) {
  if (s < 0 || s >= env.num_prompts())
    throw IndexError("prompt index " + std::to_string(s) + " out of range [0, " +
                     std::to_string(env.num_prompts()) + ")");
}

void check_action(const DiscreteEnv& env, Eigen::Index s, Eigen::Index a) {
  if (a < 0 || a >= env.num_actions(s))
    throw IndexError("action index " + std::to_string(a) + " out of range [0, " +
                     std::to_string(env.num_actions(s)) + ") for prompt " + std::to_string(s));
}

void check_pair(const DiscreteEnv& env, Eigen::Index s, Eigen::Index a, Eigen::Index b) {
  check_prompt(env, s);
  check_action(env, s, a);
  check_action(env, s, b);
  if (a == b)
    throw DegeneratePairError("degenerate pair: a == a' == " + std::to_string(a) +
                              " at prompt " + std::to_string(s));
}

double link_prob(PrefModel m, double z) {
  return m == PrefModel::Btl ? sigmoid(z) : normal_cdf(z);
}

}  // namespace

std::string to_string(PrefModel m) { return m == PrefModel::Btl ? "btl" : "probit"; }

PrefModel pref_model_from_string(const std::string& s) {
  if (s == "btl") return PrefModel::Btl;
  if (s == "probit") return PrefModel::Probit;
  throw InvalidInputError("pref_model must be \"btl\" or \"probit\", got \"" + s + "\"");
}

void DiscreteEnv::validate() {
  const Eigen::Index S = prompt_weights.size();
  require(S >= 1, "prompt_weights: need at least one prompt");
  double total = 0.0;
  for (Eigen::Index s = 0; s < S; ++s) {
    const double w = prompt_weights[s];
    require(std::isfinite(w) && w >= 0.0,
            "prompt_weights[" + std::to_string(s) + "]: must be finite and >= 0");
    total += w;
  }
  require(std::abs(total - 1.0) <= 1e-12, "prompt_weights: must sum to 1 within 1e-12");

  require(theta_sft.size() >= 1, "theta_sft: dimension must be >= 1");
  const Eigen::Index d = theta_sft.size();
  require(theta_sft.allFinite(), "theta_sft: entries must be finite");

  require(static_cast<Eigen::Index>(features.size()) == S,
          "features: outer size must match prompt count");
  require(static_cast<Eigen::Index>(latent_reward.size()) == S,
          "latent_reward: outer size must match prompt count");

  feature_bound_ = 0.0;
  for (Eigen::Index s = 0; s < S; ++s) {
    const auto& F = features[static_cast<std::size_t>(s)];
    require(F.rows() >= 2, "features[" + std::to_string(s) + "]: every prompt needs >= 2 actions");
    require(F.cols() == d,
            "features[" + std::to_string(s) + "]: feature dimension must match theta_sft");
    require(F.allFinite(), "features[" + std::to_string(s) + "]: entries must be finite");
    const auto& r = latent_reward[static_cast<std::size_t>(s)];
    require(r.size() == F.rows(),
            "latent_reward[" + std::to_string(s) + "]: size must match the action count");
    require(r.allFinite(), "latent_reward[" + std::to_string(s) + "]: entries must be finite");
    for (Eigen::Index a = 0; a < F.rows(); ++a)
      feature_bound_ = std::max(feature_bound_, F.row(a).norm());
  }

  if (theta_star.has_value()) {
    require(theta_star->size() == d, "theta_star: dimension must match theta_sft");
    require(theta_star->allFinite(), "theta_star: entries must be finite");
    for (Eigen::Index s = 0; s < S; ++s) {
      const Eigen::VectorXd induced = features[static_cast<std::size_t>(s)] * (*theta_star);
      const double gap =
          (induced - latent_reward[static_cast<std::size_t>(s)]).cwiseAbs().maxCoeff();
      require(gap <= 1e-9, "theta_star: induced reward disagrees with latent_reward at prompt " +
                               std::to_string(s));
    }
  }

  require(std::isfinite(beta) && beta > 0.0, "beta: must be finite and > 0");
}

PolicyParams::PolicyParams(Eigen::VectorXd t, double B) : theta(std::move(t)), bound_B(B) {
  if (!std::isfinite(B) || B <= 0.0)
    throw InvalidPolicyError("PolicyParams: bound_B must be finite and > 0");
  if (theta.size() < 1 || !theta.allFinite())
    throw InvalidPolicyError("PolicyParams: theta must be non-empty and finite");
  const double s = theta.sum();
  if (std::abs(s) > 1e-9)
    throw InvalidPolicyError("PolicyParams: theta must be zero-sum within 1e-9, sum = " +
                             std::to_string(s));
  if (theta.norm() > B + 1e-9)
    throw InvalidPolicyError("PolicyParams: ||theta|| exceeds bound_B + 1e-9");
}

Eigen::VectorXd policy_log_probs(const DiscreteEnv& env, const Eigen::VectorXd& theta,
                                 Eigen::Index prompt) {
  check_prompt(env, prompt);
  if (theta.size() != env.dim())
    throw InvalidInputError("policy_log_probs: theta dimension mismatch");
  return log_softmax(env.features[static_cast<std::size_t>(prompt)] * theta);
}

std::vector<Eigen::VectorXd> policy_table(const DiscreteEnv& env, const Eigen::VectorXd& theta) {
  std::vector<Eigen::VectorXd> table;
  table.reserve(static_cast<std::size_t>(env.num_prompts()));
  for (Eigen::Index s = 0; s < env.num_prompts(); ++s)
    table.push_back(policy_log_probs(env, theta, s).array().exp().matrix());
  return table;
}

std::vector<Eigen::VectorXd> sft_policy(const DiscreteEnv& env) {
  return policy_table(env, env.theta_sft);
}

double implicit_reward(const DiscreteEnv& env, const Eigen::VectorXd& theta, Eigen::Index prompt,
                       Eigen::Index action) {
  check_prompt(env, prompt);
  check_action(env, prompt, action);
  const Eigen::VectorXd lp = policy_log_probs(env, theta, prompt);
  const Eigen::VectorXd lp0 = policy_log_probs(env, env.theta_sft, prompt);
  return lp[action] - lp0[action];
}

double preference_score(const DiscreteEnv& env, const Eigen::VectorXd& theta, Eigen::Index prompt,
                        Eigen::Index a, Eigen::Index a_prime) {
  check_pair(env, prompt, a, a_prime);
  const Eigen::VectorXd lp = policy_log_probs(env, theta, prompt);
  const Eigen::VectorXd lp0 = policy_log_probs(env, env.theta_sft, prompt);
  return (lp[a] - lp0[a]) - (lp[a_prime] - lp0[a_prime]);
}

double true_pref_prob(const DiscreteEnv& env, Eigen::Index prompt, Eigen::Index a,
                      Eigen::Index a_prime) {
  check_pair(env, prompt, a, a_prime);
  const auto& r = env.latent_reward[static_cast<std::size_t>(prompt)];
  return link_prob(env.pref_model, r[a] - r[a_prime]);
}

double predicted_pref_prob(const DiscreteEnv& env, const Eigen::VectorXd& theta,
                           Eigen::Index prompt, Eigen::Index a, Eigen::Index a_prime) {
  const double h = preference_score(env, theta, prompt, a, a_prime);
  return link_prob(env.pref_model, env.beta * h);
}

std::vector<Eigen::VectorXd> optimal_policy(const DiscreteEnv& env) {
  std::vector<Eigen::VectorXd> table;
  table.reserve(static_cast<std::size_t>(env.num_prompts()));
  for (Eigen::Index s = 0; s < env.num_prompts(); ++s) {
    const Eigen::VectorXd lp0 = policy_log_probs(env, env.theta_sft, s);
    const Eigen::VectorXd tilted =
        lp0 + env.latent_reward[static_cast<std::size_t>(s)] / env.beta;
    if (!tilted.allFinite())
      throw NumericRangeError("optimal_policy: r*/beta overflowed at prompt " +
                              std::to_string(s));
    table.push_back(log_softmax(tilted).array().exp().matrix());
  }
  return table;
}

Eigen::VectorXd optimal_policy_params(const DiscreteEnv& env) {
  if (!env.theta_star.has_value())
    throw InvalidInputError("optimal_policy_params: env has no theta_star");
  Eigen::VectorXd out = env.theta_sft + (*env.theta_star) / env.beta;
  if (!out.allFinite()) throw NumericRangeError("optimal_policy_params: theta*/beta overflowed");
  return out;
}

namespace {

Eigen::VectorXd vector_from_json(const json& j, const std::string& field) {
  if (!j.is_array()) throw InvalidInputError(field + ": expected an array");
  Eigen::VectorXd v(j.size());
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) throw InvalidInputError(field + ": entries must be numbers");
    v[static_cast<Eigen::Index>(i)] = j[i].get<double>();
  }
  return v;
}

json vector_to_json(const Eigen::VectorXd& v) {
  json j = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) j.push_back(v[i]);
  return j;
}

}  // namespace

DiscreteEnv env_from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw InvalidInputError(std::string("env file: JSON parse error: ") + e.what());
  }
  if (!j.is_object()) throw InvalidInputError("env file: top level must be an object");
  for (const std::string key : {"prompt_weights", "features", "latent_reward", "beta"})
    if (!j.contains(key)) throw InvalidInputError("env file: missing required key \"" + key + "\"");

  DiscreteEnv env;
  env.prompt_weights = vector_from_json(j["prompt_weights"], "prompt_weights");

  const json& jf = j["features"];
  if (!jf.is_array() || jf.empty()) throw InvalidInputError("features: expected a non-empty array");
  Eigen::Index d = -1;
  for (std::size_t s = 0; s < jf.size(); ++s) {
    const json& rows = jf[s];
    if (!rows.is_array() || rows.empty())
      throw InvalidInputError("features[" + std::to_string(s) + "]: expected a non-empty array");
    Eigen::MatrixXd F(rows.size(), rows[0].is_array() ? rows[0].size() : 0);
    for (std::size_t a = 0; a < rows.size(); ++a) {
      const Eigen::VectorXd row =
          vector_from_json(rows[a], "features[" + std::to_string(s) + "][" + std::to_string(a) + "]");
      if (d < 0) d = row.size();
      if (row.size() != d)
        throw InvalidInputError("features: inconsistent feature dimension at prompt " +
                                std::to_string(s));
      if (F.cols() != d) F.resize(static_cast<Eigen::Index>(rows.size()), d);
      F.row(static_cast<Eigen::Index>(a)) = row.transpose();
    }
    env.features.push_back(std::move(F));
  }

  if (j.contains("theta_sft"))
    env.theta_sft = vector_from_json(j["theta_sft"], "theta_sft");
  else
    env.theta_sft = Eigen::VectorXd::Zero(d);

  env.beta = [&] {
    if (!j["beta"].is_number()) throw InvalidInputError("beta: must be a number");
    return j["beta"].get<double>();
  }();
  env.pref_model =
      j.contains("pref_model") ? pref_model_from_string(j["pref_model"].get<std::string>())
                               : PrefModel::Btl;

  const json& jr = j["latent_reward"];
  if (jr.is_object()) {
    if (!jr.contains("theta_star"))
      throw InvalidInputError("latent_reward: object form must hold key \"theta_star\"");
    Eigen::VectorXd ts = vector_from_json(jr["theta_star"], "latent_reward.theta_star");
    if (ts.size() != d) throw InvalidInputError("theta_star: dimension must match features");
    // Zero-sum representative of the reward parameter. Skip the shift when the
    // mean is already at float-residual level so save/load/save is byte-stable.
    const double mean = ts.mean();
    const double scale = std::max(1.0, ts.cwiseAbs().maxCoeff());
    if (std::abs(mean) > 1e-14 * scale) ts.array() -= mean;
    env.theta_star = ts;
    for (const auto& F : env.features) env.latent_reward.push_back(F * ts);
  } else if (jr.is_array()) {
    for (std::size_t s = 0; s < jr.size(); ++s)
      env.latent_reward.push_back(
          vector_from_json(jr[s], "latent_reward[" + std::to_string(s) + "]"));
  } else {
    throw InvalidInputError("latent_reward: expected an array of arrays or {\"theta_star\": [...]}");
  }

  env.validate();
  return env;
}

std::string env_to_json_text(const DiscreteEnv& env) {
  json j;
  j["prompt_weights"] = vector_to_json(env.prompt_weights);
  json jf = json::array();
  for (const auto& F : env.features) {
    json rows = json::array();
    for (Eigen::Index a = 0; a < F.rows(); ++a) rows.push_back(vector_to_json(F.row(a)));
    jf.push_back(rows);
  }
  j["features"] = jf;
  if (env.theta_star.has_value()) {
    j["latent_reward"] = json{{"theta_star", vector_to_json(*env.theta_star)}};
  } else {
    json jr = json::array();
    for (const auto& r : env.latent_reward) jr.push_back(vector_to_json(r));
    j["latent_reward"] = jr;
  }
  j["theta_sft"] = vector_to_json(env.theta_sft);
  j["beta"] = env.beta;
  j["pref_model"] = to_string(env.pref_model);
  return j.dump(2) + "\n";
}

DiscreteEnv load_env(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidInputError("cannot open env file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return env_from_json_text(ss.str());
}

void save_env(const DiscreteEnv& env, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InvalidInputError("cannot write env file: " + path);
  out << env_to_json_text(env);
}

std::string env_hash_of_text(const std::string& text) {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : text) {
    h ^= static_cast<std::uint64_t>(c);
    h *= 1099511628211ULL;
  }
  static const char* hex = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = hex[h & 0xf];
    h >>= 4;
  }
  return out;
}

std::string env_hash_of_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidInputError("cannot open env file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return env_hash_of_text(ss.str());
}

}  // namespace robustpref
