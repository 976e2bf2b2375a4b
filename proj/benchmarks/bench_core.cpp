// Microbenchmarks for the hot paths: policy evaluation, per-pair losses,
// a full-batch training step, and dataset sampling throughput.

#include <benchmark/benchmark.h>

#include <vector>

#include "robustpref/dataset.hpp"
#include "robustpref/env.hpp"
#include "robustpref/losses.hpp"
#include "robustpref/optim.hpp"
#include "robustpref/rng.hpp"
#include "robustpref/sweep.hpp"

namespace {

using namespace robustpref;

DiscreteEnv bench_env(EnvKind kind, Eigen::Index prompts, Eigen::Index actions) {
  EnvGenConfig c;
  c.kind = kind;
  c.prompts = prompts;
  c.actions = actions;
  c.dim = 16;
  c.beta = 1.0;
  c.seed = 99;
  return generate_env(c);
}

Eigen::VectorXd bench_theta(const DiscreteEnv& env) {
  SplitMix64 rng(4242);
  Eigen::VectorXd t(env.dim());
  for (Eigen::Index j = 0; j < env.dim(); ++j) t(j) = rng.next_double() - 0.5;
  t.array() -= t.mean();
  return t;
}

void BM_PolicyLogProbs(benchmark::State& state) {
  DiscreteEnv env = bench_env(EnvKind::LogLinear, 16, static_cast<Eigen::Index>(state.range(0)));
  Eigen::VectorXd theta = bench_theta(env);
  for (auto _ : state) {
    for (Eigen::Index s = 0; s < env.num_prompts(); ++s) {
      benchmark::DoNotOptimize(policy_log_probs(env, theta, s));
    }
  }
  state.SetItemsProcessed(state.iterations() * env.num_prompts());
}
BENCHMARK(BM_PolicyLogProbs)->Arg(8)->Arg(64);

void BM_PairLossGrad(benchmark::State& state) {
  DiscreteEnv env = bench_env(EnvKind::LogLinear, 4, 16);
  Eigen::VectorXd theta = bench_theta(env);
  PreferenceDataset ds = sample_pairs(env, 4096, 11);
  std::vector<ObservedPair> obs = ds.observed_pairs();
  LossSpec spec{LossFamily::Rdpo, Link::Logistic, 0.2};
  for (auto _ : state) {
    Eigen::VectorXd acc = Eigen::VectorXd::Zero(env.dim());
    for (const ObservedPair& p : obs) acc += pair_loss_grad(spec, env, theta, p);
    benchmark::DoNotOptimize(acc);
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(obs.size()));
}
BENCHMARK(BM_PairLossGrad);

void BM_FullBatchStep(benchmark::State& state) {
  DiscreteEnv env = bench_env(EnvKind::Tabular, 1, 8);
  PreferenceDataset ds = sample_pairs(env, static_cast<std::size_t>(state.range(0)), 21);
  std::vector<ObservedPair> obs = ds.observed_pairs();
  TrainConfig cfg;
  cfg.loss = LossSpec{LossFamily::Rdpo, Link::Logistic, 0.2};
  cfg.bound_B = 4.0;
  cfg.steps = 1;
  cfg.tol = 0.0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(train_full_batch(env, obs, cfg));
  }
}
BENCHMARK(BM_FullBatchStep)->Arg(1024)->Arg(16384);

void BM_SamplePairs(benchmark::State& state) {
  DiscreteEnv env = bench_env(EnvKind::LogLinear, 8, 16);
  std::uint64_t seed = 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(sample_pairs(env, 8192, ++seed));
  }
  state.SetItemsProcessed(state.iterations() * 8192);
}
BENCHMARK(BM_SamplePairs);

}  // namespace

BENCHMARK_MAIN();
