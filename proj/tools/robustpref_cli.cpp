#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "robustpref/dataset.hpp"
#include "robustpref/env.hpp"
#include "robustpref/errors.hpp"
#include "robustpref/losses.hpp"
#include "robustpref/metrics.hpp"
#include "robustpref/optim.hpp"
#include "robustpref/reward.hpp"
#include "robustpref/sweep.hpp"
#include "robustpref/verify.hpp"

namespace rp = robustpref;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

// Seed precedence: ROBUSTPREF_SEED > --seed flag > config file > default.
std::optional<std::uint64_t> env_seed_override() {
  const char* v = std::getenv("ROBUSTPREF_SEED");
  if (!v || !*v) return std::nullopt;
  try {
    std::size_t pos = 0;
    unsigned long long x = std::stoull(v, &pos);
    if (pos != std::strlen(v)) throw std::invalid_argument(v);
    return static_cast<std::uint64_t>(x);
  } catch (const std::exception&) {
    throw rp::InvalidInputError("ROBUSTPREF_SEED must be a non-negative integer");
  }
}

std::uint64_t resolve_seed(std::uint64_t flag_or_config_seed) {
  if (auto s = env_seed_override()) return *s;
  return flag_or_config_seed;
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw rp::InvalidInputError("cannot open '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json load_config(const std::string& path) {
  if (path.empty()) return json::object();
  json j;
  try {
    j = json::parse(read_text_file(path));
  } catch (const json::exception& e) {
    throw rp::InvalidInputError("config '" + path + "': " + e.what());
  }
  if (!j.is_object()) throw rp::InvalidInputError("config '" + path + "' must be a JSON object");
  return j;
}

// Flags beat config keys; config keys beat built-in defaults.
template <class T>
void merge(const CLI::Option* opt, const json& cfg, const char* key, T& value) {
  if (opt->count() > 0 || !cfg.contains(key)) return;
  try {
    value = cfg.at(key).get<T>();
  } catch (const json::exception& e) {
    throw rp::InvalidInputError(std::string("config key '") + key + "': " + e.what());
  }
}

void check_dataset_provenance(const rp::PreferenceDataset& ds, const std::string& env_hash,
                              const std::string& what) {
  if (ds.env_hash.empty())
    throw rp::ProvenanceError(what + ": dataset carries no env_hash; regenerate it with gen-data");
  if (ds.env_hash != env_hash)
    throw rp::ProvenanceError(what + ": dataset env_hash " + ds.env_hash +
                              " does not match environment " + env_hash);
}

void append_csv_row(const std::string& path, const rp::MetricsReport& row) {
  namespace fs = std::filesystem;
  bool fresh = true;
  std::error_code ec;
  if (fs::exists(path, ec) && fs::file_size(path, ec) > 0) fresh = false;
  std::ofstream out(path, std::ios::binary | std::ios::app);
  if (!out) throw rp::InvalidInputError("cannot open '" + path + "' for appending");
  if (fresh) out << rp::kMetricsCsvHeader << "\r\n";
  out << rp::metrics_csv_row(row) << "\r\n";
  if (!out) throw rp::InvalidInputError("failed while writing '" + path + "'");
}

struct PolicyFile {
  Eigen::VectorXd theta;
  double bound_B = 1.0;
  std::string env_hash;
  rp::LossSpec loss;
  std::uint64_t seed = 0;
};

void save_policy(const std::string& path, const PolicyFile& p, double final_loss,
                 double grad_norm) {
  ordered_json j;
  j["theta"] = std::vector<double>(p.theta.data(), p.theta.data() + p.theta.size());
  j["bound_B"] = p.bound_B;
  j["env_hash"] = p.env_hash;
  j["family"] = rp::to_string(p.loss.family);
  j["link"] = rp::to_string(p.loss.link);
  j["eps"] = p.loss.eps_assumed;
  j["seed"] = p.seed;
  j["final_loss"] = final_loss;
  j["grad_norm"] = grad_norm;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw rp::InvalidInputError("cannot open '" + path + "' for writing");
  out << j.dump(2) << "\n";
  if (!out) throw rp::InvalidInputError("failed while writing '" + path + "'");
}

PolicyFile load_policy(const std::string& path) {
  json j;
  try {
    j = json::parse(read_text_file(path));
  } catch (const json::exception& e) {
    throw rp::InvalidInputError("policy '" + path + "': " + e.what());
  }
  PolicyFile p;
  try {
    std::vector<double> t = j.at("theta").get<std::vector<double>>();
    p.theta = Eigen::Map<Eigen::VectorXd>(t.data(), static_cast<Eigen::Index>(t.size()));
    p.bound_B = j.at("bound_B").get<double>();
    p.env_hash = j.value("env_hash", std::string{});
    p.loss.family = rp::loss_family_from_string(j.value("family", std::string{"dpo"}));
    p.loss.link = rp::link_from_string(j.value("link", std::string{"logistic"}));
    p.loss.eps_assumed = j.value("eps", 0.0);
    p.seed = j.value("seed", std::uint64_t{0});
  } catch (const json::exception& e) {
    throw rp::InvalidInputError("policy '" + path + "': " + e.what());
  }
  return p;
}

// Shared by train and eval: every diagnostic the CSV schema carries.
rp::MetricsReport make_report(const rp::DiscreteEnv& env, const Eigen::VectorXd& theta,
                              const rp::LossSpec& spec, const std::string& method,
                              const rp::PreferenceDataset& cov_ds,
                              const rp::PreferenceDataset* acc_ds, double lambda_flag,
                              double bound_B, std::uint64_t seed, std::int64_t wall_ms) {
  const double nan = std::numeric_limits<double>::quiet_NaN();
  rp::MetricsReport r;
  r.method = method;
  r.family = rp::to_string(spec.family);
  r.link = rp::to_string(spec.link);
  r.eps_true = cov_ds.eps_true;
  r.eps_assumed = spec.eps_assumed;
  r.n = cov_ds.size();
  r.seed = seed;
  r.lambda = lambda_flag > 0.0 ? lambda_flag : rp::default_metrics_lambda(env.dim(), cov_ds.size());

  if (env.theta_star.has_value()) {
    Eigen::VectorXd target = rp::optimal_policy_params(env);
    if (cov_ds.kind == rp::DatasetKind::Pair) {
      Eigen::MatrixXd sigma = rp::sample_cov_diff(cov_ds, env);
      rp::EstimationError err = rp::estimation_error(theta, target, sigma, r.lambda);
      r.l2_error = err.l2;
      r.seminorm_error = err.seminorm;
    } else {
      r.l2_error = (theta - target).norm();
      r.seminorm_error = nan;
    }
    r.margin_gap = rp::margin_and_gap(env, theta, target).gap;
  } else {
    r.l2_error = nan;
    r.seminorm_error = nan;
    r.margin_gap = nan;
  }
  r.subopt_gap = rp::subopt_gap(env, theta);
  r.eval_accuracy = acc_ds ? rp::eval_accuracy(env, theta, *acc_ds) : nan;
  try {
    r.kappa_rel_bound = rp::kappa_rel_bound(env);
  } catch (const rp::CoverageError&) {
    r.kappa_rel_bound = nan;
  }
  r.gamma = rp::gamma_const(env.beta, env.feature_bound() * bound_B);
  r.wall_ms = wall_ms;
  return r;
}

void emit(const ordered_json& j) { std::cout << j.dump(2) << "\n"; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"exact preference-optimization laboratory on finite environments"};
  app.require_subcommand(1);
  std::function<int()> run;

  // ---- gen-env ----
  {
    CLI::App* cmd = app.add_subcommand("gen-env", "generate a random environment file");
    auto config_path = std::make_shared<std::string>();
    auto kind = std::make_shared<std::string>("tabular");
    auto prompts = std::make_shared<std::int64_t>(1);
    auto actions = std::make_shared<std::int64_t>(8);
    auto dim = std::make_shared<std::int64_t>(8);
    auto beta = std::make_shared<double>(1.0);
    auto pref = std::make_shared<std::string>("btl");
    auto scale = std::make_shared<double>(1.0);
    auto seed = std::make_shared<std::uint64_t>(0);
    auto out = std::make_shared<std::string>();
    cmd->add_option("--config", *config_path, "JSON config; flags override its keys");
    CLI::Option* o_kind = cmd->add_option("--kind", *kind, "tabular or loglinear");
    CLI::Option* o_prompts = cmd->add_option("--prompts", *prompts, "number of prompts");
    CLI::Option* o_actions = cmd->add_option("--actions", *actions, "actions per prompt");
    CLI::Option* o_dim = cmd->add_option("--dim", *dim, "feature dimension (loglinear)");
    CLI::Option* o_beta = cmd->add_option("--beta", *beta, "KL regularization strength");
    CLI::Option* o_pref = cmd->add_option("--pref-model", *pref, "btl or probit comparisons");
    CLI::Option* o_scale = cmd->add_option("--reward-scale", *scale, "max |r*| after scaling");
    CLI::Option* o_seed = cmd->add_option("--seed", *seed, "generator seed");
    CLI::Option* o_out = cmd->add_option("--out", *out, "output env path");
    cmd->callback([=, &run]() {
      run = [=]() -> int {
        json cfg = load_config(*config_path);
        merge(o_kind, cfg, "kind", *kind);
        merge(o_prompts, cfg, "prompts", *prompts);
        merge(o_actions, cfg, "actions", *actions);
        merge(o_dim, cfg, "dim", *dim);
        merge(o_beta, cfg, "beta", *beta);
        merge(o_pref, cfg, "pref_model", *pref);
        merge(o_scale, cfg, "reward_scale", *scale);
        merge(o_seed, cfg, "seed", *seed);
        merge(o_out, cfg, "out", *out);
        if (out->empty()) throw rp::InvalidInputError("gen-env: --out is required");
        rp::EnvGenConfig c;
        c.kind = rp::env_kind_from_string(*kind);
        c.prompts = static_cast<Eigen::Index>(*prompts);
        c.actions = static_cast<Eigen::Index>(*actions);
        c.dim = static_cast<Eigen::Index>(*dim);
        c.beta = *beta;
        c.pref_model = rp::pref_model_from_string(*pref);
        c.reward_scale = *scale;
        c.seed = resolve_seed(*seed);
        rp::DiscreteEnv env = rp::generate_env(c);
        rp::save_env(env, *out);
        ordered_json j;
        j["path"] = *out;
        j["env_hash"] = rp::env_hash_of_file(*out);
        j["prompts"] = env.num_prompts();
        j["dim"] = env.dim();
        emit(j);
        return 0;
      };
    });
  }

  // ---- gen-data ----
  {
    CLI::App* cmd = app.add_subcommand("gen-data", "sample a preference dataset from an env");
    auto config_path = std::make_shared<std::string>();
    auto env_path = std::make_shared<std::string>();
    auto kind = std::make_shared<std::string>("pair");
    auto n = std::make_shared<std::uint64_t>(1024);
    auto eps = std::make_shared<double>(0.0);
    auto seed = std::make_shared<std::uint64_t>(0);
    auto rank_k = std::make_shared<std::uint64_t>(3);
    auto min_gap = std::make_shared<double>(0.0);
    auto out = std::make_shared<std::string>();
    cmd->add_option("--config", *config_path, "JSON config; flags override its keys");
    CLI::Option* o_env = cmd->add_option("--env", *env_path, "environment file");
    CLI::Option* o_kind = cmd->add_option("--kind", *kind, "pair or rank");
    CLI::Option* o_n = cmd->add_option("--n", *n, "number of records");
    CLI::Option* o_eps = cmd->add_option("--eps", *eps, "label noise rate");
    CLI::Option* o_seed = cmd->add_option("--seed", *seed, "sampling seed");
    CLI::Option* o_k = cmd->add_option("--rank-k", *rank_k, "candidates per ranking");
    CLI::Option* o_gap = cmd->add_option("--min-gap", *min_gap, "minimum |r* difference| per pair");
    CLI::Option* o_out = cmd->add_option("--out", *out, "output dataset path");
    cmd->callback([=, &run]() {
      run = [=]() -> int {
        json cfg = load_config(*config_path);
        merge(o_env, cfg, "env", *env_path);
        merge(o_kind, cfg, "kind", *kind);
        merge(o_n, cfg, "n", *n);
        merge(o_eps, cfg, "eps", *eps);
        merge(o_seed, cfg, "seed", *seed);
        merge(o_k, cfg, "rank_k", *rank_k);
        merge(o_gap, cfg, "min_gap", *min_gap);
        merge(o_out, cfg, "out", *out);
        if (env_path->empty()) throw rp::InvalidInputError("gen-data: --env is required");
        if (out->empty()) throw rp::InvalidInputError("gen-data: --out is required");
        rp::DiscreteEnv env = rp::load_env(*env_path);
        std::uint64_t s = resolve_seed(*seed);
        rp::DatasetKind dk = rp::dataset_kind_from_string(*kind);
        rp::PreferenceDataset ds;
        if (dk == rp::DatasetKind::Pair) {
          if (!(*eps >= 0.0 && *eps < 0.5))
            throw rp::InvalidRateError("gen-data: pairwise eps must lie in [0, 0.5)");
          std::optional<double> gap =
              *min_gap > 0.0 ? std::optional<double>(*min_gap) : std::nullopt;
          ds = rp::sample_pairs(env, static_cast<std::size_t>(*n), s, gap);
          if (*eps > 0.0) ds = rp::flip_pairs(ds, *eps, s);
        } else {
          double nf = static_cast<double>(rp::factorial(static_cast<std::size_t>(*rank_k)));
          if (!(*eps >= 0.0) || !((1.0 - *eps) * nf - 1.0 > 0.0))
            throw rp::InvalidRateError("gen-data: ranking eps must satisfy (1 - eps) K! - 1 > 0");
          ds = rp::sample_rankings(env, static_cast<std::size_t>(*n),
                                   static_cast<std::size_t>(*rank_k), s);
          if (*eps > 0.0) ds = rp::perturb_rankings(ds, *eps, s);
        }
        ds.env_hash = rp::env_hash_of_file(*env_path);
        rp::save_dataset(ds, *out);
        ordered_json j;
        j["path"] = *out;
        j["kind"] = rp::to_string(ds.kind);
        j["n"] = ds.size();
        j["eps_true"] = ds.eps_true;
        j["env_hash"] = ds.env_hash;
        emit(j);
        return 0;
      };
    });
  }

  // ---- train ----
  {
    CLI::App* cmd = app.add_subcommand("train", "fit a policy on a dataset");
    auto config_path = std::make_shared<std::string>();
    auto env_path = std::make_shared<std::string>();
    auto data_path = std::make_shared<std::string>();
    auto holdout_path = std::make_shared<std::string>();
    auto method = std::make_shared<std::string>();
    auto family = std::make_shared<std::string>("dpo");
    auto link = std::make_shared<std::string>("logistic");
    auto eps = std::make_shared<double>(0.0);
    auto bound_B = std::make_shared<double>(4.0);
    auto steps = std::make_shared<std::int64_t>(5000);
    auto lr_mode = std::make_shared<std::string>("constant");
    auto eta = std::make_shared<double>(0.0);
    auto inv_c = std::make_shared<double>(1.0);
    auto inv_lambda = std::make_shared<double>(0.0);
    auto batch = std::make_shared<std::string>("full");
    auto seed = std::make_shared<std::uint64_t>(0);
    auto tol = std::make_shared<double>(1e-10);
    auto lambda = std::make_shared<double>(0.0);
    auto out = std::make_shared<std::string>();
    auto csv = std::make_shared<std::string>();
    cmd->add_option("--config", *config_path, "JSON config; flags override its keys");
    CLI::Option* o_env = cmd->add_option("--env", *env_path, "environment file");
    CLI::Option* o_data = cmd->add_option("--data", *data_path, "training dataset");
    CLI::Option* o_hold = cmd->add_option("--holdout", *holdout_path,
                                          "optional clean pair set for eval_accuracy");
    CLI::Option* o_method = cmd->add_option("--method", *method, "method label for the CSV row");
    CLI::Option* o_family = cmd->add_option("--family", *family,
                                            "dpo|cdpo|rdpo|ipo|slic|pl|pl-robust");
    CLI::Option* o_link = cmd->add_option("--link", *link, "logistic or probit");
    CLI::Option* o_eps = cmd->add_option("--eps", *eps, "assumed flip rate");
    CLI::Option* o_B = cmd->add_option("--B", *bound_B, "parameter ball radius");
    CLI::Option* o_steps = cmd->add_option("--steps", *steps, "gradient steps");
    CLI::Option* o_lr = cmd->add_option("--lr-mode", *lr_mode, "constant or inverse");
    CLI::Option* o_eta = cmd->add_option("--eta", *eta, "constant step; <= 0 selects 1/M");
    CLI::Option* o_ic = cmd->add_option("--inv-c", *inv_c, "inverse schedule numerator");
    CLI::Option* o_il = cmd->add_option("--inv-lambda", *inv_lambda,
                                        "inverse schedule curvature; <= 0 derives it");
    CLI::Option* o_batch = cmd->add_option("--batch", *batch, "full or per-sample");
    CLI::Option* o_seed = cmd->add_option("--seed", *seed, "shuffle seed");
    CLI::Option* o_tol = cmd->add_option("--tol", *tol, "projected-gradient stop tolerance");
    CLI::Option* o_lambda = cmd->add_option("--lambda", *lambda,
                                            "metrics ridge; <= 0 selects sqrt(d ln(4d)/n)");
    CLI::Option* o_out = cmd->add_option("--out", *out, "output policy path");
    CLI::Option* o_csv = cmd->add_option("--csv", *csv, "append the metrics row here");
    cmd->callback([=, &run]() {
      run = [=]() -> int {
        json cfg = load_config(*config_path);
        merge(o_env, cfg, "env", *env_path);
        merge(o_data, cfg, "data", *data_path);
        merge(o_hold, cfg, "holdout", *holdout_path);
        merge(o_method, cfg, "method", *method);
        merge(o_family, cfg, "family", *family);
        merge(o_link, cfg, "link", *link);
        merge(o_eps, cfg, "eps", *eps);
        merge(o_B, cfg, "bound_B", *bound_B);
        merge(o_steps, cfg, "steps", *steps);
        merge(o_lr, cfg, "lr_mode", *lr_mode);
        merge(o_eta, cfg, "eta", *eta);
        merge(o_ic, cfg, "inv_c", *inv_c);
        merge(o_il, cfg, "inv_lambda", *inv_lambda);
        merge(o_batch, cfg, "batch", *batch);
        merge(o_seed, cfg, "seed", *seed);
        merge(o_tol, cfg, "tol", *tol);
        merge(o_lambda, cfg, "lambda", *lambda);
        merge(o_out, cfg, "out", *out);
        merge(o_csv, cfg, "csv", *csv);
        if (env_path->empty()) throw rp::InvalidInputError("train: --env is required");
        if (data_path->empty()) throw rp::InvalidInputError("train: --data is required");
        if (out->empty()) throw rp::InvalidInputError("train: --out is required");

        rp::DiscreteEnv env = rp::load_env(*env_path);
        std::string env_hash = rp::env_hash_of_file(*env_path);
        rp::PreferenceDataset ds = rp::load_dataset(*data_path);
        check_dataset_provenance(ds, env_hash, "train");
        ds.validate_indices(env);

        rp::TrainConfig tc;
        tc.loss.family = rp::loss_family_from_string(*family);
        tc.loss.link = rp::link_from_string(*link);
        tc.loss.eps_assumed = *eps;
        tc.bound_B = *bound_B;
        tc.steps = *steps;
        tc.lr_mode = rp::lr_mode_from_string(*lr_mode);
        tc.eta = *eta;
        tc.inv_c = *inv_c;
        tc.inv_lambda = *inv_lambda;
        tc.batch = rp::batch_mode_from_string(*batch);
        tc.seed = resolve_seed(*seed);
        tc.tol = *tol;

        auto t0 = std::chrono::steady_clock::now();
        rp::TrainResult res = rp::train_on_dataset(env, ds, tc);
        auto t1 = std::chrono::steady_clock::now();
        std::int64_t wall =
            std::chrono::duration_cast<std::chrono::milliseconds>(t1 - t0).count();

        PolicyFile pf;
        pf.theta = res.params.theta;
        pf.bound_B = tc.bound_B;
        pf.env_hash = env_hash;
        pf.loss = tc.loss;
        pf.seed = tc.seed;
        double final_loss = res.trace.empty() ? 0.0 : res.trace.back().loss;
        double grad_norm = res.trace.empty() ? 0.0 : res.trace.back().grad_norm;
        save_policy(*out, pf, final_loss, grad_norm);

        std::optional<rp::PreferenceDataset> holdout;
        if (!holdout_path->empty()) {
          holdout = rp::load_dataset(*holdout_path);
          check_dataset_provenance(*holdout, env_hash, "train holdout");
          holdout->validate_indices(env);
        }
        std::string name = method->empty() ? rp::to_string(tc.loss.family) : *method;
        rp::MetricsReport row =
            make_report(env, res.params.theta, tc.loss, name, ds,
                        holdout ? &*holdout : nullptr, *lambda, tc.bound_B, tc.seed, wall);
        if (!csv->empty()) append_csv_row(*csv, row);

        ordered_json j;
        j["policy"] = *out;
        j["final_loss"] = final_loss;
        j["grad_norm"] = grad_norm;
        j["steps_run"] = res.trace.empty() ? 0 : static_cast<std::int64_t>(res.trace.size() - 1);
        j["l2_error"] = row.l2_error;
        j["subopt_gap"] = row.subopt_gap;
        if (!csv->empty()) j["csv"] = *csv;
        emit(j);
        return 0;
      };
    });
  }

  // ---- eval ----
  {
    CLI::App* cmd = app.add_subcommand("eval", "score a saved policy on a dataset");
    auto config_path = std::make_shared<std::string>();
    auto env_path = std::make_shared<std::string>();
    auto policy_path = std::make_shared<std::string>();
    auto data_path = std::make_shared<std::string>();
    auto method = std::make_shared<std::string>();
    auto lambda = std::make_shared<double>(0.0);
    auto csv = std::make_shared<std::string>();
    cmd->add_option("--config", *config_path, "JSON config; flags override its keys");
    CLI::Option* o_env = cmd->add_option("--env", *env_path, "environment file");
    CLI::Option* o_pol = cmd->add_option("--policy", *policy_path, "policy file from train");
    CLI::Option* o_data = cmd->add_option("--data", *data_path, "evaluation dataset");
    CLI::Option* o_method = cmd->add_option("--method", *method, "method label for the CSV row");
    CLI::Option* o_lambda = cmd->add_option("--lambda", *lambda,
                                            "metrics ridge; <= 0 selects sqrt(d ln(4d)/n)");
    CLI::Option* o_csv = cmd->add_option("--csv", *csv, "append the metrics row here");
    cmd->callback([=, &run]() {
      run = [=]() -> int {
        json cfg = load_config(*config_path);
        merge(o_env, cfg, "env", *env_path);
        merge(o_pol, cfg, "policy", *policy_path);
        merge(o_data, cfg, "data", *data_path);
        merge(o_method, cfg, "method", *method);
        merge(o_lambda, cfg, "lambda", *lambda);
        merge(o_csv, cfg, "csv", *csv);
        if (env_path->empty()) throw rp::InvalidInputError("eval: --env is required");
        if (policy_path->empty()) throw rp::InvalidInputError("eval: --policy is required");
        if (data_path->empty()) throw rp::InvalidInputError("eval: --data is required");

        rp::DiscreteEnv env = rp::load_env(*env_path);
        std::string env_hash = rp::env_hash_of_file(*env_path);
        PolicyFile pf = load_policy(*policy_path);
        if (!pf.env_hash.empty() && pf.env_hash != env_hash)
          throw rp::ProvenanceError("eval: policy env_hash " + pf.env_hash +
                                    " does not match environment " + env_hash);
        rp::PolicyParams params(pf.theta, pf.bound_B);  // validates the parameter
        rp::PreferenceDataset ds = rp::load_dataset(*data_path);
        check_dataset_provenance(ds, env_hash, "eval");
        ds.validate_indices(env);

        std::string name = method->empty() ? rp::to_string(pf.loss.family) : *method;
        // wall_ms stays 0: evaluation is deterministic, so rows are replayable.
        rp::MetricsReport row = make_report(env, params.theta, pf.loss, name, ds, &ds, *lambda,
                                            pf.bound_B, pf.seed, 0);
        if (!csv->empty()) append_csv_row(*csv, row);

        ordered_json j;
        j["l2_error"] = row.l2_error;
        j["seminorm_error"] = row.seminorm_error;
        j["subopt_gap"] = row.subopt_gap;
        j["margin_gap"] = row.margin_gap;
        j["eval_accuracy"] = row.eval_accuracy;
        if (!csv->empty()) j["csv"] = *csv;
        emit(j);
        return 0;
      };
    });
  }

  // ---- tune-eps ----
  {
    CLI::App* cmd = app.add_subcommand("tune-eps",
                                       "pick the de-bias rate by holdout accuracy");
    auto config_path = std::make_shared<std::string>();
    auto env_path = std::make_shared<std::string>();
    auto data_path = std::make_shared<std::string>();
    auto holdout_path = std::make_shared<std::string>();
    auto grid = std::make_shared<std::vector<double>>();
    auto bound_B = std::make_shared<double>(4.0);
    auto steps = std::make_shared<std::int64_t>(5000);
    auto eta = std::make_shared<double>(0.0);
    auto seed = std::make_shared<std::uint64_t>(0);
    auto out = std::make_shared<std::string>();
    cmd->add_option("--config", *config_path, "JSON config; flags override its keys");
    CLI::Option* o_env = cmd->add_option("--env", *env_path, "environment file");
    CLI::Option* o_data = cmd->add_option("--data", *data_path, "noisy training dataset");
    CLI::Option* o_hold = cmd->add_option("--holdout", *holdout_path, "clean holdout pair set");
    CLI::Option* o_grid =
        cmd->add_option("--grid", *grid, "candidate rates")->delimiter(',');
    CLI::Option* o_B = cmd->add_option("--B", *bound_B, "parameter ball radius");
    CLI::Option* o_steps = cmd->add_option("--steps", *steps, "gradient steps per fit");
    CLI::Option* o_eta = cmd->add_option("--eta", *eta, "constant step; <= 0 selects 1/M");
    CLI::Option* o_seed = cmd->add_option("--seed", *seed, "training seed");
    CLI::Option* o_out = cmd->add_option("--out", *out, "optional JSON result path");
    cmd->callback([=, &run]() {
      run = [=]() -> int {
        json cfg = load_config(*config_path);
        merge(o_env, cfg, "env", *env_path);
        merge(o_data, cfg, "data", *data_path);
        merge(o_hold, cfg, "holdout", *holdout_path);
        merge(o_grid, cfg, "grid", *grid);
        merge(o_B, cfg, "bound_B", *bound_B);
        merge(o_steps, cfg, "steps", *steps);
        merge(o_eta, cfg, "eta", *eta);
        merge(o_seed, cfg, "seed", *seed);
        merge(o_out, cfg, "out", *out);
        if (env_path->empty()) throw rp::InvalidInputError("tune-eps: --env is required");
        if (data_path->empty()) throw rp::InvalidInputError("tune-eps: --data is required");
        if (holdout_path->empty()) throw rp::InvalidInputError("tune-eps: --holdout is required");

        rp::DiscreteEnv env = rp::load_env(*env_path);
        std::string env_hash = rp::env_hash_of_file(*env_path);
        rp::PreferenceDataset train = rp::load_dataset(*data_path);
        rp::PreferenceDataset holdout = rp::load_dataset(*holdout_path);
        check_dataset_provenance(train, env_hash, "tune-eps");
        check_dataset_provenance(holdout, env_hash, "tune-eps holdout");
        train.validate_indices(env);
        holdout.validate_indices(env);
        if (holdout.eps_true != 0.0)
          throw rp::InvalidInputError("tune-eps: holdout must carry clean labels "
                                      "(eps_true = 0)");

        rp::TrainOptions opts;
        opts.bound_B = *bound_B;
        opts.steps = *steps;
        opts.eta = *eta;
        rp::TuneEpsResult res =
            rp::tune_eps(env, train, holdout, *grid, opts, resolve_seed(*seed));
        std::string text = rp::tune_eps_result_to_json_text(res);
        if (!out->empty()) {
          std::ofstream of(*out, std::ios::binary);
          if (!of) throw rp::InvalidInputError("cannot open '" + *out + "' for writing");
          of << text;
        }
        std::cout << text;
        return 0;
      };
    });
  }

  // ---- sweep ----
  {
    CLI::App* cmd = app.add_subcommand("sweep", "run a (method, eps, n, seed) grid to CSV");
    auto config_path = std::make_shared<std::string>();
    auto out = std::make_shared<std::string>();
    auto jobs = std::make_shared<int>(0);
    cmd->add_option("--config", *config_path, "sweep JSON config")->required();
    CLI::Option* o_out = cmd->add_option("--out", *out, "output CSV path (overrides config)");
    CLI::Option* o_jobs = cmd->add_option("--jobs", *jobs, "parallel workers (overrides config)");
    cmd->callback([=, &run]() {
      run = [=]() -> int {
        std::string env_path, output_path;
        rp::SweepConfig cfg =
            rp::sweep_config_from_json_text(read_text_file(*config_path), &env_path,
                                            &output_path);
        if (o_out->count() > 0) output_path = *out;
        if (o_jobs->count() > 0) cfg.jobs = *jobs;
        if (auto s = env_seed_override()) cfg.seeds = {*s};
        if (env_path.empty())
          throw rp::InvalidInputError("sweep: config needs an 'env' path");
        if (output_path.empty())
          throw rp::InvalidInputError("sweep: give an output CSV via config 'output' or --out");
        rp::DiscreteEnv env = rp::load_env(env_path);
        std::vector<rp::MetricsReport> rows = rp::run_sweep(env, cfg);
        rp::write_metrics_csv(output_path, rows);
        ordered_json j;
        j["rows"] = rows.size();
        j["output"] = output_path;
        emit(j);
        return 0;
      };
    });
  }

  // ---- slope ----
  {
    CLI::App* cmd = app.add_subcommand("slope", "fit a log-log error slope from a sweep CSV");
    auto csv = std::make_shared<std::string>();
    auto ycol = std::make_shared<std::string>("l2_error");
    auto method = std::make_shared<std::string>();
    auto family = std::make_shared<std::string>();
    auto eps_true = std::make_shared<double>(std::numeric_limits<double>::quiet_NaN());
    auto eps_assumed = std::make_shared<double>(std::numeric_limits<double>::quiet_NaN());
    auto resamples = std::make_shared<std::uint64_t>(1000);
    auto bseed = std::make_shared<std::uint64_t>(0);
    cmd->add_option("--csv", *csv, "metrics CSV from sweep/train/eval")->required();
    cmd->add_option("--y", *ycol, "metric column for the fit");
    cmd->add_option("--method", *method, "keep only rows with this method");
    cmd->add_option("--family", *family, "keep only rows with this family");
    cmd->add_option("--eps-true", *eps_true, "keep only rows with this eps_true");
    cmd->add_option("--eps-assumed", *eps_assumed, "keep only rows with this eps_assumed");
    cmd->add_option("--resamples", *resamples, "bootstrap resamples for the CI");
    cmd->add_option("--bootstrap-seed", *bseed, "bootstrap seed");
    cmd->callback([=, &run]() {
      run = [=]() -> int {
        std::vector<rp::MetricsReport> rows = rp::read_metrics_csv(*csv);
        std::vector<rp::MetricsReport> kept;
        for (const rp::MetricsReport& r : rows) {
          if (!method->empty() && r.method != *method) continue;
          if (!family->empty() && r.family != *family) continue;
          if (!std::isnan(*eps_true) && r.eps_true != *eps_true) continue;
          if (!std::isnan(*eps_assumed) && r.eps_assumed != *eps_assumed) continue;
          kept.push_back(r);
        }
        if (kept.empty()) throw rp::InvalidInputError("slope: no rows left after filtering");
        rp::SlopeFit fit = rp::fit_error_slope(kept, *ycol, *resamples, resolve_seed(*bseed));
        std::cout << rp::slope_fit_to_json_text(fit);
        return 0;
      };
    });
  }

  // ---- verify ----
  {
    CLI::App* cmd = app.add_subcommand("verify", "run the property suites");
    auto suite = std::make_shared<std::string>("all");
    auto seed = std::make_shared<std::uint64_t>(0);
    auto out = std::make_shared<std::string>();
    cmd->add_option("--suite", *suite, "lemmas|gradients|reductions|bounds|oracles|all");
    cmd->add_option("--seed", *seed, "instance seed");
    cmd->add_option("--out", *out, "optional JSON report path");
    cmd->callback([=, &run]() {
      run = [=]() -> int {
        std::uint64_t s = resolve_seed(*seed);
        std::vector<rp::SuiteReport> reports;
        if (*suite == "all")
          reports = rp::run_all_verify_suites(s);
        else
          reports.push_back(rp::run_verify_suite(*suite, s));
        std::string text = rp::suite_reports_to_json_text(reports);
        if (!out->empty()) {
          std::ofstream of(*out, std::ios::binary);
          if (!of) throw rp::InvalidInputError("cannot open '" + *out + "' for writing");
          of << text;
        }
        std::cout << text;
        for (const rp::SuiteReport& r : reports)
          if (!r.passed()) return 2;
        return 0;
      };
    });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    return run();
  } catch (const rp::NumericRangeError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 3;
  } catch (const rp::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
