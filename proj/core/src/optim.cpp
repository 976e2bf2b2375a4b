#include "robustpref/optim.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <memory>
#include <numeric>
#include <tuple>

#include "robustpref/metrics.hpp"
#include "robustpref/numeric.hpp"
#include "robustpref/rng.hpp"

namespace robustpref {

namespace {

constexpr std::uint64_t kStreamSgdShuffle = 0x73676473;  // "sgds"

struct Objective {
  std::size_t record_count = 0;
  std::function<void(const Eigen::VectorXd&, double*, Eigen::VectorXd*)> eval_full;
  std::function<void(std::size_t, const Eigen::VectorXd&, double*, Eigen::VectorXd*)> eval_record;
  double smoothness = 0.0;  // M with grad Lipschitz constant <= M
};

double pairwise_smoothness_coeff(const LossSpec& spec) {
  const double e = spec.eps_assumed;
  switch (spec.family) {
    case LossFamily::Dpo:
    case LossFamily::Cdpo:
      return spec.link == Link::Logistic ? 0.25 : 1.0;
    case LossFamily::Rdpo:
      return spec.link == Link::Logistic ? 0.25 : 1.0 / (1.0 - 2.0 * e);
    case LossFamily::Ipo:
      return 2.0;
    case LossFamily::Slic:
      return 0.25;  // piecewise linear; this only sets the default step scale
    default:
      throw KindMismatchError("pairwise smoothness undefined for ranking families");
  }
}

double ranking_coeff_mass(const LossSpec& spec, std::size_t K) {
  if (spec.family == LossFamily::Pl) return 1.0;
  const double N = static_cast<double>(factorial(K));
  const double denom = (1.0 - spec.eps_assumed) * N - 1.0;
  if (!(denom > 0.0))
    throw InvalidRateError("ranking de-bias: need (1 - eps) * N - 1 > 0");
  const double a = (N - 1.0 - spec.eps_assumed) / denom;
  const double b = spec.eps_assumed / denom;
  return a + b * (N - 1.0);
}

Objective make_pair_objective(const DiscreteEnv& env, const std::vector<ObservedPair>& data,
                              const LossSpec& spec) {
  if (data.empty()) throw InvalidInputError("train: empty dataset");
  if (spec.is_ranking())
    throw KindMismatchError("train: ranking loss family given pairwise data");

  const Eigen::Index d = env.dim();
  struct Rec {
    Eigen::VectorXd x;
    double offset;  // theta_sft . x
  };
  auto make_rec = [&](const ObservedPair& p) {
    if (p.prompt >= static_cast<std::uint32_t>(env.num_prompts()))
      throw IndexError("train: prompt index out of range");
    const auto& F = env.features[p.prompt];
    if (static_cast<Eigen::Index>(p.winner) >= F.rows() ||
        static_cast<Eigen::Index>(p.loser) >= F.rows())
      throw IndexError("train: action index out of range");
    if (p.winner == p.loser) throw DegeneratePairError("train: winner equals loser");
    Rec r;
    r.x = (F.row(static_cast<Eigen::Index>(p.winner)) - F.row(static_cast<Eigen::Index>(p.loser)))
              .transpose();
    r.offset = env.theta_sft.dot(r.x);
    return r;
  };

  // Weighted fold of identical (s, w, l) triples; deterministic order.
  std::map<std::tuple<std::uint32_t, std::uint32_t, std::uint32_t>, double> counts;
  for (const auto& p : data) counts[{p.prompt, p.winner, p.loser}] += 1.0;
  auto groups = std::make_shared<std::vector<Rec>>();
  auto weights = std::make_shared<std::vector<double>>();
  double max_x2 = 0.0;
  const double inv_n = 1.0 / static_cast<double>(data.size());
  for (const auto& [key, count] : counts) {
    ObservedPair p{std::get<0>(key), std::get<1>(key), std::get<2>(key)};
    groups->push_back(make_rec(p));
    weights->push_back(count * inv_n);
    max_x2 = std::max(max_x2, groups->back().x.squaredNorm());
  }

  auto records = std::make_shared<std::vector<Rec>>();
  records->reserve(data.size());
  for (const auto& p : data) records->push_back(make_rec(p));

  const double beta = env.beta;
  Objective obj;
  obj.record_count = data.size();
  obj.smoothness = pairwise_smoothness_coeff(spec) * beta * beta * max_x2;
  obj.eval_full = [groups, weights, spec, beta, d](const Eigen::VectorXd& theta, double* loss,
                                                   Eigen::VectorXd* grad) {
    double acc = 0.0;
    Eigen::VectorXd g = Eigen::VectorXd::Zero(d);
    for (std::size_t i = 0; i < groups->size(); ++i) {
      const auto& r = (*groups)[i];
      const double bh = beta * (theta.dot(r.x) - r.offset);
      const double w = (*weights)[i];
      acc += w * pair_loss_from_score(spec, bh);
      g.noalias() += (w * beta * pair_dloss_from_score(spec, bh)) * r.x;
    }
    *loss = acc;
    *grad = std::move(g);
  };
  obj.eval_record = [records, spec, beta](std::size_t i, const Eigen::VectorXd& theta,
                                          double* loss, Eigen::VectorXd* grad) {
    const auto& r = (*records)[i];
    const double bh = beta * (theta.dot(r.x) - r.offset);
    *loss = pair_loss_from_score(spec, bh);
    *grad = (beta * pair_dloss_from_score(spec, bh)) * r.x;
  };
  return obj;
}

Objective make_rank_objective(const DiscreteEnv& env, const std::vector<ObservedRanking>& data,
                              const LossSpec& spec) {
  if (data.empty()) throw InvalidInputError("train: empty dataset");
  if (!spec.is_ranking())
    throw KindMismatchError("train: pairwise loss family given ranking data");

  const Eigen::Index d = env.dim();
  struct Rec {
    Eigen::MatrixXd Fc;     // K x d candidate features in rank order
    Eigen::VectorXd u0;     // beta * Fc theta_sft
  };
  std::size_t max_k = 2;
  auto make_rec = [&](const ObservedRanking& rk) {
    const std::size_t K = rk.ranking.size();
    if (K < 2 || K > 5) throw MalformedRankingError("train: K must lie in [2, 5]");
    if (rk.prompt >= static_cast<std::uint32_t>(env.num_prompts()))
      throw IndexError("train: prompt index out of range");
    const auto& F = env.features[rk.prompt];
    Rec r;
    r.Fc.resize(static_cast<Eigen::Index>(K), d);
    for (std::size_t j = 0; j < K; ++j) {
      if (static_cast<Eigen::Index>(rk.ranking[j]) >= F.rows())
        throw IndexError("train: action index out of range");
      r.Fc.row(static_cast<Eigen::Index>(j)) = F.row(static_cast<Eigen::Index>(rk.ranking[j]));
    }
    r.u0 = env.beta * (r.Fc * env.theta_sft);
    max_k = std::max(max_k, K);
    return r;
  };

  std::map<std::pair<std::uint32_t, std::vector<std::uint32_t>>, double> counts;
  for (const auto& rk : data) counts[{rk.prompt, rk.ranking}] += 1.0;
  auto groups = std::make_shared<std::vector<Rec>>();
  auto weights = std::make_shared<std::vector<double>>();
  const double inv_n = 1.0 / static_cast<double>(data.size());
  for (const auto& [key, count] : counts) {
    ObservedRanking rk{key.first, key.second, factorial(key.second.size())};
    groups->push_back(make_rec(rk));
    weights->push_back(count * inv_n);
  }

  auto records = std::make_shared<std::vector<Rec>>();
  records->reserve(data.size());
  for (const auto& rk : data) records->push_back(make_rec(rk));

  const double beta = env.beta;
  const double eps = spec.eps_assumed;
  const bool robust = spec.family == LossFamily::PlRobust;
  const double L = env.feature_bound();
  Objective obj;
  obj.record_count = data.size();
  obj.smoothness = ranking_coeff_mass(spec, max_k) * static_cast<double>(max_k - 1) * beta *
                   beta * L * L;

  auto eval_one = [robust, eps, beta](const Rec& r, const Eigen::VectorXd& theta, double* loss,
                                      Eigen::VectorXd* grad) {
    const Eigen::VectorXd u = beta * (r.Fc * theta) - r.u0;
    *loss = robust ? pl_robust_loss_from_scores(u, eps) : pl_loss_from_scores(u);
    const Eigen::VectorXd g =
        robust ? pl_robust_grad_from_scores(u, eps) : pl_grad_from_scores(u);
    *grad = beta * (r.Fc.transpose() * g);
  };
  obj.eval_full = [groups, weights, eval_one, d](const Eigen::VectorXd& theta, double* loss,
                                                 Eigen::VectorXd* grad) {
    double acc = 0.0;
    Eigen::VectorXd g = Eigen::VectorXd::Zero(d);
    double l_i = 0.0;
    Eigen::VectorXd g_i(d);
    for (std::size_t i = 0; i < groups->size(); ++i) {
      eval_one((*groups)[i], theta, &l_i, &g_i);
      acc += (*weights)[i] * l_i;
      g.noalias() += (*weights)[i] * g_i;
    }
    *loss = acc;
    *grad = std::move(g);
  };
  obj.eval_record = [records, eval_one](std::size_t i, const Eigen::VectorXd& theta, double* loss,
                                        Eigen::VectorXd* grad) {
    eval_one((*records)[i], theta, loss, grad);
  };
  return obj;
}

double resolve_inverse_lambda(const DiscreteEnv& env, const TrainConfig& cfg) {
  if (cfg.inv_lambda > 0.0) return cfg.inv_lambda;
  bool underflow = false;
  const double gamma = gamma_const(env.beta, env.feature_bound() * cfg.bound_B, &underflow);
  const double kappa_cov = population_kappa_cov(env);
  const double lambda =
      gamma * env.beta * env.beta * (1.0 - 2.0 * cfg.loss.eps_assumed) * kappa_cov;
  if (!(std::isfinite(lambda) && lambda > 0.0))
    throw CoverageError(
        "inverse schedule: default lambda is non-positive (gamma underflow or singular "
        "coverage); supply lambda explicitly or use constant mode");
  return lambda;
}

Eigen::VectorXd initial_point(const DiscreteEnv& env, const TrainConfig& cfg) {
  if (cfg.init.has_value()) {
    if (cfg.init->size() != env.dim())
      throw InvalidInputError("train: init dimension does not match the env");
    if (!cfg.init->allFinite()) throw InvalidInputError("train: init must be finite");
    return project(*cfg.init, cfg.bound_B);
  }
  return Eigen::VectorXd::Zero(env.dim());
}

TrainResult run_full_batch(const DiscreteEnv& env, const Objective& obj, const TrainConfig& cfg) {
  cfg.validate();
  Eigen::VectorXd theta = initial_point(env, cfg);
  const double eta_const =
      cfg.eta > 0.0 ? cfg.eta : (obj.smoothness > 0.0 ? 1.0 / obj.smoothness : 1.0);
  const double lambda =
      cfg.lr_mode == LrMode::Inverse ? resolve_inverse_lambda(env, cfg) : 0.0;

  TrainResult out;
  out.trace.reserve(static_cast<std::size_t>(std::min<std::int64_t>(cfg.steps, 1 << 20)));
  double loss = 0.0;
  Eigen::VectorXd grad(env.dim());
  for (std::int64_t t = 1; t <= cfg.steps; ++t) {
    obj.eval_full(theta, &loss, &grad);
    if (!std::isfinite(loss) || !grad.allFinite())
      throw DivergedError("train_full_batch: non-finite loss or gradient at step " +
                          std::to_string(t));
    const double eta = cfg.lr_mode == LrMode::Constant
                           ? eta_const
                           : cfg.inv_c / (lambda * static_cast<double>(t));
    const Eigen::VectorXd next = project(theta - eta * grad, cfg.bound_B);
    const double pg_norm = (theta - next).norm() / eta;
    out.trace.push_back({t, loss, pg_norm});
    theta = next;
    if (cfg.tol > 0.0 && pg_norm <= cfg.tol) break;
  }
  out.params = PolicyParams(theta, cfg.bound_B);
  return out;
}

TrainResult run_sgd(const DiscreteEnv& env, const Objective& obj, const TrainConfig& cfg) {
  cfg.validate();
  Eigen::VectorXd theta = initial_point(env, cfg);
  const double eta_const =
      cfg.eta > 0.0 ? cfg.eta : (obj.smoothness > 0.0 ? 1.0 / obj.smoothness : 1.0);
  const double lambda =
      cfg.lr_mode == LrMode::Inverse ? resolve_inverse_lambda(env, cfg) : 0.0;

  const std::size_t n = obj.record_count;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);

  TrainResult out;
  out.trace.reserve(static_cast<std::size_t>(std::min<std::int64_t>(cfg.steps, 1 << 20)));
  double loss = 0.0;
  Eigen::VectorXd grad(env.dim());
  for (std::int64_t t = 1; t <= cfg.steps; ++t) {
    const std::size_t pos = static_cast<std::size_t>(t - 1) % n;
    if (pos == 0) {
      const std::uint64_t epoch = static_cast<std::uint64_t>(t - 1) / n;
      SplitMix64 rng(substream_seed(cfg.seed, kStreamSgdShuffle, epoch));
      for (std::size_t i = n; i > 1; --i)
        std::swap(order[i - 1], order[rng.uniform_index(i)]);
    }
    obj.eval_record(order[pos], theta, &loss, &grad);
    if (!std::isfinite(loss) || !grad.allFinite())
      throw DivergedError("train_sgd: non-finite loss or gradient at step " + std::to_string(t));
    const double eta = cfg.lr_mode == LrMode::Constant
                           ? eta_const
                           : cfg.inv_c / (lambda * static_cast<double>(t));
    const Eigen::VectorXd next = project(theta - eta * grad, cfg.bound_B);
    out.trace.push_back({t, loss, (theta - next).norm() / eta});
    theta = next;
  }
  out.params = PolicyParams(theta, cfg.bound_B);
  return out;
}

}  // namespace

std::string to_string(LrMode m) { return m == LrMode::Constant ? "constant" : "inverse"; }
std::string to_string(BatchMode m) { return m == BatchMode::Full ? "full" : "per-sample"; }

LrMode lr_mode_from_string(const std::string& s) {
  if (s == "constant") return LrMode::Constant;
  if (s == "inverse") return LrMode::Inverse;
  throw InvalidInputError("lr_mode must be \"constant\" or \"inverse\", got \"" + s + "\"");
}

BatchMode batch_mode_from_string(const std::string& s) {
  if (s == "full") return BatchMode::Full;
  if (s == "per-sample") return BatchMode::PerSample;
  throw InvalidInputError("batch must be \"full\" or \"per-sample\", got \"" + s + "\"");
}

void TrainConfig::validate() const {
  loss.validate();
  if (!(std::isfinite(bound_B) && bound_B > 0.0))
    throw InvalidInputError("TrainConfig: bound_B must be finite and > 0");
  if (steps < 0) throw InvalidInputError("TrainConfig: steps must be >= 0");
  if (!(std::isfinite(tol) && tol >= 0.0))
    throw InvalidInputError("TrainConfig: tol must be finite and >= 0");
  if (!std::isfinite(eta)) throw InvalidInputError("TrainConfig: eta must be finite");
  if (!(std::isfinite(inv_c) && inv_c > 0.0))
    throw InvalidInputError("TrainConfig: c must be finite and > 0");
}

Eigen::VectorXd project(const Eigen::VectorXd& theta, double B) {
  if (!(std::isfinite(B) && B > 0.0)) throw InvalidInputError("project: B must be finite and > 0");
  if (theta.size() < 1) throw InvalidInputError("project: empty vector");
  if (!theta.allFinite()) throw NumericRangeError("project: theta must be finite");
  Eigen::VectorXd v = (theta.array() - theta.mean()).matrix();
  const double norm = v.norm();
  if (norm > B) v *= B / norm;
  return v;
}

TrainResult train_full_batch(const DiscreteEnv& env, const std::vector<ObservedPair>& data,
                             const TrainConfig& cfg) {
  return run_full_batch(env, make_pair_objective(env, data, cfg.loss), cfg);
}

TrainResult train_full_batch(const DiscreteEnv& env, const std::vector<ObservedRanking>& data,
                             const TrainConfig& cfg) {
  return run_full_batch(env, make_rank_objective(env, data, cfg.loss), cfg);
}

TrainResult train_sgd(const DiscreteEnv& env, const std::vector<ObservedPair>& data,
                      const TrainConfig& cfg) {
  return run_sgd(env, make_pair_objective(env, data, cfg.loss), cfg);
}

TrainResult train_sgd(const DiscreteEnv& env, const std::vector<ObservedRanking>& data,
                      const TrainConfig& cfg) {
  return run_sgd(env, make_rank_objective(env, data, cfg.loss), cfg);
}

double gamma_const(double beta, double alpha0, bool* underflow) {
  if (!(std::isfinite(beta) && beta > 0.0))
    throw InvalidInputError("gamma_const: beta must be finite and > 0");
  if (!(std::isfinite(alpha0) && alpha0 >= 0.0))
    throw InvalidInputError("gamma_const: alpha0 must be finite and >= 0");
  const double z = 4.0 * beta * alpha0;
  if (underflow != nullptr) *underflow = z > 700.0;
  if (z > 700.0) return 0.0;
  return 1.0 / (2.0 + std::exp(-z) + std::exp(z));
}

double population_kappa_cov(const DiscreteEnv& env) {
  const Eigen::MatrixXd sigma = 2.0 * pop_cov(env, sft_policy(env));
  return std::max(zero_sum_lambda_min(sigma), 0.0);
}

}  // namespace robustpref
