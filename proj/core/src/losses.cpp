#include "robustpref/losses.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include <nlohmann/json.hpp>

#include "robustpref/numeric.hpp"

namespace robustpref {

using nlohmann::json;

std::string to_string(LossFamily f) {
  switch (f) {
    case LossFamily::Dpo: return "dpo";
    case LossFamily::Cdpo: return "cdpo";
    case LossFamily::Rdpo: return "rdpo";
    case LossFamily::Ipo: return "ipo";
    case LossFamily::Slic: return "slic";
    case LossFamily::Pl: return "pl";
    case LossFamily::PlRobust: return "pl-robust";
  }
  return "?";
}

std::string to_string(Link l) { return l == Link::Logistic ? "logistic" : "probit"; }

LossFamily loss_family_from_string(const std::string& s) {
  if (s == "dpo") return LossFamily::Dpo;
  if (s == "cdpo") return LossFamily::Cdpo;
  if (s == "rdpo") return LossFamily::Rdpo;
  if (s == "ipo") return LossFamily::Ipo;
  if (s == "slic") return LossFamily::Slic;
  if (s == "pl") return LossFamily::Pl;
  if (s == "pl-robust") return LossFamily::PlRobust;
  throw InvalidInputError("unknown loss family \"" + s + "\"");
}

Link link_from_string(const std::string& s) {
  if (s == "logistic") return Link::Logistic;
  if (s == "probit") return Link::Probit;
  throw InvalidInputError("link must be \"logistic\" or \"probit\", got \"" + s + "\"");
}

void LossSpec::validate() const {
  // Ranking families admit eps < 1 - 1/K!; the sharp K-dependent bound is
  // checked where K is known. Pairwise de-biasing needs eps < 1/2.
  const double hi = is_ranking() ? 1.0 : 0.5;
  if (!(std::isfinite(eps_assumed) && eps_assumed >= 0.0 && eps_assumed < hi))
    throw InvalidRateError("LossSpec: eps_assumed must lie in [0, " +
                           std::string(is_ranking() ? "1" : "0.5") + "), got " +
                           std::to_string(eps_assumed));
  if ((family == LossFamily::Dpo || family == LossFamily::Pl) && eps_assumed != 0.0)
    throw InvalidRateError("LossSpec: family \"" + to_string(family) +
                           "\" takes no noise rate; eps_assumed must be 0");
  if (link == Link::Probit && family != LossFamily::Dpo && family != LossFamily::Cdpo &&
      family != LossFamily::Rdpo)
    throw InvalidInputError("LossSpec: probit link is only defined for dpo, cdpo, rdpo");
}

LossSpec loss_spec_from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw InvalidInputError(std::string("loss spec: JSON parse error: ") + e.what());
  }
  if (!j.is_object() || !j.contains("family"))
    throw InvalidInputError("loss spec: expected an object with key \"family\"");
  LossSpec spec;
  spec.family = loss_family_from_string(j["family"].get<std::string>());
  if (j.contains("link")) spec.link = link_from_string(j["link"].get<std::string>());
  if (j.contains("eps")) spec.eps_assumed = j["eps"].get<double>();
  spec.validate();
  return spec;
}

std::string loss_spec_to_json_text(const LossSpec& spec) {
  json j{{"family", to_string(spec.family)},
         {"link", to_string(spec.link)},
         {"eps", spec.eps_assumed}};
  return j.dump();
}

double bce_loss(Link link, double x) {
  return link == Link::Logistic ? neg_log_sigmoid(x) : neg_log_normal_cdf(x);
}

double bce_dloss(Link link, double x) {
  if (link == Link::Logistic) return -sigmoid(-x);
  if (x < -37.0) {
    // Inverse Mills ratio, asymptotic branch for the deep lower tail.
    const double x2 = x * x;
    return x / (1.0 - 1.0 / x2 + 3.0 / (x2 * x2));
  }
  return -normal_pdf(x) / normal_cdf(x);
}

namespace {

double debias(double f_obs, double f_rev, double eps) {
  return ((1.0 - eps) * f_obs - eps * f_rev) / (1.0 - 2.0 * eps);
}

double ipo_base(double x) {
  const double t = x - 0.5;
  return t * t;
}
double ipo_dbase(double x) { return 2.0 * (x - 0.5); }

double slic_base(double x) { return std::max(0.0, 1.0 - x); }
// Subgradient choice at the kink: 0.
double slic_dbase(double x) { return x < 1.0 ? -1.0 : 0.0; }

void check_ranking(const DiscreteEnv& env, const ObservedRanking& r) {
  const std::size_t K = r.ranking.size();
  if (K < 2 || K > 5) throw MalformedRankingError("ranking: K must lie in [2, 5]");
  if (r.prompt >= static_cast<std::uint32_t>(env.num_prompts()))
    throw IndexError("ranking: prompt index out of range");
  auto sorted = r.ranking;
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
    throw MalformedRankingError("ranking: repeated candidate");
  for (auto a : r.ranking)
    if (a >= static_cast<std::uint32_t>(env.num_actions(static_cast<Eigen::Index>(r.prompt))))
      throw IndexError("ranking: action index out of range");
  if (r.candidate_count != factorial(K))
    throw MalformedRankingError("ranking: candidate_count must equal K!");
}

Eigen::VectorXd ranking_scores(const DiscreteEnv& env, const Eigen::VectorXd& theta,
                               const ObservedRanking& r) {
  const auto s = static_cast<Eigen::Index>(r.prompt);
  const Eigen::VectorXd lp = policy_log_probs(env, theta, s);
  const Eigen::VectorXd lp0 = policy_log_probs(env, env.theta_sft, s);
  Eigen::VectorXd u(static_cast<Eigen::Index>(r.ranking.size()));
  for (std::size_t j = 0; j < r.ranking.size(); ++j) {
    const auto a = static_cast<Eigen::Index>(r.ranking[j]);
    u[static_cast<Eigen::Index>(j)] = env.beta * (lp[a] - lp0[a]);
  }
  return u;
}

void robust_coeffs(double eps, std::uint64_t N, double* a, double* b) {
  if (!(std::isfinite(eps) && eps >= 0.0))
    throw InvalidRateError("ranking de-bias: eps must be finite and >= 0");
  const double Nd = static_cast<double>(N);
  const double denom = (1.0 - eps) * Nd - 1.0;
  if (!(denom > 0.0))
    throw InvalidRateError("ranking de-bias: need (1 - eps) * N - 1 > 0, got eps = " +
                           std::to_string(eps) + ", N = " + std::to_string(N));
  *a = (Nd - 1.0 - eps) / denom;
  *b = -eps / denom;
}

}  // namespace

double pair_loss_from_score(const LossSpec& spec, double beta_h) {
  spec.validate();
  const double e = spec.eps_assumed;
  switch (spec.family) {
    case LossFamily::Dpo:
      return bce_loss(spec.link, beta_h);
    case LossFamily::Cdpo:
      return (1.0 - e) * bce_loss(spec.link, beta_h) + e * bce_loss(spec.link, -beta_h);
    case LossFamily::Rdpo:
      return debias(bce_loss(spec.link, beta_h), bce_loss(spec.link, -beta_h), e);
    case LossFamily::Ipo:
      return debias(ipo_base(beta_h), ipo_base(-beta_h), e);
    case LossFamily::Slic:
      return debias(slic_base(beta_h), slic_base(-beta_h), e);
    default:
      throw KindMismatchError("pair loss is undefined for ranking families");
  }
}

double pair_dloss_from_score(const LossSpec& spec, double beta_h) {
  spec.validate();
  const double e = spec.eps_assumed;
  switch (spec.family) {
    case LossFamily::Dpo:
      return bce_dloss(spec.link, beta_h);
    case LossFamily::Cdpo:
      return (1.0 - e) * bce_dloss(spec.link, beta_h) - e * bce_dloss(spec.link, -beta_h);
    case LossFamily::Rdpo:
      return ((1.0 - e) * bce_dloss(spec.link, beta_h) + e * bce_dloss(spec.link, -beta_h)) /
             (1.0 - 2.0 * e);
    case LossFamily::Ipo:
      return ((1.0 - e) * ipo_dbase(beta_h) + e * ipo_dbase(-beta_h)) / (1.0 - 2.0 * e);
    case LossFamily::Slic:
      return ((1.0 - e) * slic_dbase(beta_h) + e * slic_dbase(-beta_h)) / (1.0 - 2.0 * e);
    default:
      throw KindMismatchError("pair loss is undefined for ranking families");
  }
}

double pair_loss(const LossSpec& spec, const DiscreteEnv& env, const Eigen::VectorXd& theta,
                 const ObservedPair& pair) {
  const double h = preference_score(env, theta, static_cast<Eigen::Index>(pair.prompt),
                                    static_cast<Eigen::Index>(pair.winner),
                                    static_cast<Eigen::Index>(pair.loser));
  return pair_loss_from_score(spec, env.beta * h);
}

Eigen::VectorXd pair_loss_grad(const LossSpec& spec, const DiscreteEnv& env,
                               const Eigen::VectorXd& theta, const ObservedPair& pair) {
  const auto s = static_cast<Eigen::Index>(pair.prompt);
  const double h = preference_score(env, theta, s, static_cast<Eigen::Index>(pair.winner),
                                    static_cast<Eigen::Index>(pair.loser));
  const double d = pair_dloss_from_score(spec, env.beta * h);
  const auto& F = env.features[static_cast<std::size_t>(s)];
  // For the log-linear class, grad log pi(w) - grad log pi(l) collapses to
  // the feature difference: the shared softmax mean cancels.
  const Eigen::VectorXd x = (F.row(static_cast<Eigen::Index>(pair.winner)) -
                             F.row(static_cast<Eigen::Index>(pair.loser)))
                                .transpose();
  return env.beta * d * x;
}

GradientWeights gradient_weights(const DiscreteEnv& env, const Eigen::VectorXd& theta,
                                 const ObservedPair& pair, double eps) {
  if (!(std::isfinite(eps) && eps >= 0.0 && eps < 0.5))
    throw InvalidRateError("gradient_weights: eps must lie in [0, 0.5)");
  const double h = preference_score(env, theta, static_cast<Eigen::Index>(pair.prompt),
                                    static_cast<Eigen::Index>(pair.winner),
                                    static_cast<Eigen::Index>(pair.loser));
  const double sig_rev = sigmoid(-env.beta * h);  // sigma(beta h(l, w))
  const double sig_fwd = sigmoid(env.beta * h);
  GradientWeights w;
  w.zeta = sig_rev;
  w.zeta_bar = (1.0 - eps) * sig_rev - eps * sig_fwd;
  w.zeta_hat = ((1.0 - eps) * sig_rev + eps * sig_fwd) / (1.0 - 2.0 * eps);
  return w;
}

double rdpo_variance_closed_form(const DiscreteEnv& env, const Eigen::VectorXd& theta,
                                 const PreferencePair& pair, double eps, Link link) {
  if (!(std::isfinite(eps) && eps >= 0.0 && eps < 0.5))
    throw InvalidRateError("rdpo_variance_closed_form: eps must lie in [0, 0.5)");
  const double h = preference_score(env, theta, static_cast<Eigen::Index>(pair.prompt),
                                    static_cast<Eigen::Index>(pair.clean_winner),
                                    static_cast<Eigen::Index>(pair.clean_loser()));
  const double x = env.beta * h;
  const double diff = bce_loss(link, x) - bce_loss(link, -x);
  return eps * (1.0 - eps) * diff * diff;
}

FlipExpectation rdpo_flip_expectation(const DiscreteEnv& env, const Eigen::VectorXd& theta,
                                      const PreferencePair& pair, double eps, Link link) {
  if (!(std::isfinite(eps) && eps >= 0.0 && eps < 0.5))
    throw InvalidRateError("rdpo_flip_expectation: eps must lie in [0, 0.5)");
  const double h = preference_score(env, theta, static_cast<Eigen::Index>(pair.prompt),
                                    static_cast<Eigen::Index>(pair.clean_winner),
                                    static_cast<Eigen::Index>(pair.clean_loser()));
  const double x = env.beta * h;
  const double keep = debias(bce_loss(link, x), bce_loss(link, -x), eps);
  const double swap = debias(bce_loss(link, -x), bce_loss(link, x), eps);

  FlipExpectation out;
  out.mean = (1.0 - eps) * keep + eps * swap;
  const double scale = 1.0 - 2.0 * eps;
  const double x1 = scale * keep;
  const double x2 = scale * swap;
  const double m = (1.0 - eps) * x1 + eps * x2;
  out.variance_unnormalized = (1.0 - eps) * (x1 - m) * (x1 - m) + eps * (x2 - m) * (x2 - m);
  return out;
}

double pl_loss_from_scores(const Eigen::VectorXd& u) {
  const Eigen::Index K = u.size();
  if (K < 2) throw MalformedRankingError("pl loss: need at least two candidates");
  double loss = 0.0;
  for (Eigen::Index j = 0; j + 1 < K; ++j)
    loss += logsumexp(u.segment(j, K - j)) - u[j];
  return loss;
}

Eigen::VectorXd pl_grad_from_scores(const Eigen::VectorXd& u) {
  const Eigen::Index K = u.size();
  if (K < 2) throw MalformedRankingError("pl loss: need at least two candidates");
  Eigen::VectorXd g = Eigen::VectorXd::Zero(K);
  for (Eigen::Index j = 0; j + 1 < K; ++j) {
    const double lse = logsumexp(u.segment(j, K - j));
    for (Eigen::Index k = j; k < K; ++k) g[k] += std::exp(u[k] - lse);
    g[j] -= 1.0;
  }
  return g;
}

double pl_robust_loss_from_scores(const Eigen::VectorXd& u, double eps) {
  const Eigen::Index K = u.size();
  if (K < 2 || K > 5) throw MalformedRankingError("pl-robust loss: K must lie in [2, 5]");
  const std::uint64_t N = factorial(static_cast<std::size_t>(K));
  double a = 0.0, b = 0.0;
  robust_coeffs(eps, N, &a, &b);

  std::vector<int> perm(static_cast<std::size_t>(K));
  std::iota(perm.begin(), perm.end(), 0);
  double loss_clean = 0.0, loss_rest = 0.0;
  Eigen::VectorXd up(K);
  do {
    bool is_identity = true;
    for (Eigen::Index j = 0; j < K; ++j) {
      up[j] = u[perm[static_cast<std::size_t>(j)]];
      if (perm[static_cast<std::size_t>(j)] != j) is_identity = false;
    }
    (is_identity ? loss_clean : loss_rest) += pl_loss_from_scores(up);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return a * loss_clean + b * loss_rest;
}

Eigen::VectorXd pl_robust_grad_from_scores(const Eigen::VectorXd& u, double eps) {
  const Eigen::Index K = u.size();
  if (K < 2 || K > 5) throw MalformedRankingError("pl-robust loss: K must lie in [2, 5]");
  const std::uint64_t N = factorial(static_cast<std::size_t>(K));
  double a = 0.0, b = 0.0;
  robust_coeffs(eps, N, &a, &b);

  std::vector<int> perm(static_cast<std::size_t>(K));
  std::iota(perm.begin(), perm.end(), 0);
  Eigen::VectorXd g = Eigen::VectorXd::Zero(K);
  Eigen::VectorXd up(K);
  do {
    bool is_identity = true;
    for (Eigen::Index j = 0; j < K; ++j) {
      up[j] = u[perm[static_cast<std::size_t>(j)]];
      if (perm[static_cast<std::size_t>(j)] != j) is_identity = false;
    }
    const Eigen::VectorXd gp = pl_grad_from_scores(up);
    const double coeff = is_identity ? a : b;
    for (Eigen::Index j = 0; j < K; ++j) g[perm[static_cast<std::size_t>(j)]] += coeff * gp[j];
  } while (std::next_permutation(perm.begin(), perm.end()));
  return g;
}

double ranking_loss(const LossSpec& spec, const DiscreteEnv& env, const Eigen::VectorXd& theta,
                    const ObservedRanking& ranking) {
  spec.validate();
  if (!spec.is_ranking())
    throw KindMismatchError("ranking loss requires family pl or pl-robust");
  check_ranking(env, ranking);
  const Eigen::VectorXd u = ranking_scores(env, theta, ranking);
  if (spec.family == LossFamily::Pl) return pl_loss_from_scores(u);
  return pl_robust_loss_from_scores(u, spec.eps_assumed);
}

Eigen::VectorXd ranking_loss_grad(const LossSpec& spec, const DiscreteEnv& env,
                                  const Eigen::VectorXd& theta, const ObservedRanking& ranking) {
  spec.validate();
  if (!spec.is_ranking())
    throw KindMismatchError("ranking loss requires family pl or pl-robust");
  check_ranking(env, ranking);
  const Eigen::VectorXd u = ranking_scores(env, theta, ranking);
  const Eigen::VectorXd g = spec.family == LossFamily::Pl
                                ? pl_grad_from_scores(u)
                                : pl_robust_grad_from_scores(u, spec.eps_assumed);
  // Score gradients are zero-sum across candidates, so the softmax mean
  // cancels and only the candidates' features enter.
  const auto& F = env.features[static_cast<std::size_t>(ranking.prompt)];
  Eigen::VectorXd out = Eigen::VectorXd::Zero(env.dim());
  for (std::size_t j = 0; j < ranking.ranking.size(); ++j)
    out += env.beta * g[static_cast<Eigen::Index>(j)] *
           F.row(static_cast<Eigen::Index>(ranking.ranking[j])).transpose();
  return out;
}

}  // namespace robustpref
