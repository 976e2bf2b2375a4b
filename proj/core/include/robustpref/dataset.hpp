#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "robustpref/env.hpp"

namespace robustpref {

// Full provenance record. Training code must never touch clean_winner or
// flipped; hand it the redacted views below instead.
struct PreferencePair {
  std::uint32_t prompt = 0;
  std::uint32_t obs_winner = 0;
  std::uint32_t obs_loser = 0;
  std::uint32_t clean_winner = 0;
  bool flipped = false;

  std::uint32_t clean_loser() const {
    return clean_winner == obs_winner ? obs_loser : obs_winner;
  }
};

struct RankingSample {
  std::uint32_t prompt = 0;
  std::vector<std::uint32_t> obs_ranking;    // action indices, best first
  std::vector<std::uint32_t> clean_ranking;  // pre-noise ranking of the same actions
  std::uint64_t candidate_count = 0;         // N; K! unless a caller overrides
};

// What a learner is allowed to see.
struct ObservedPair {
  std::uint32_t prompt = 0;
  std::uint32_t winner = 0;
  std::uint32_t loser = 0;
};

struct ObservedRanking {
  std::uint32_t prompt = 0;
  std::vector<std::uint32_t> ranking;
  std::uint64_t candidate_count = 0;
};

enum class DatasetKind { Pair, Rank };

std::string to_string(DatasetKind k);
DatasetKind dataset_kind_from_string(const std::string& s);

struct PreferenceDataset {
  DatasetKind kind = DatasetKind::Pair;
  std::string env_hash;
  std::uint64_t seed = 0;
  double eps_true = 0.0;
  std::vector<PreferencePair> pairs;
  std::vector<RankingSample> rankings;

  std::size_t size() const {
    return kind == DatasetKind::Pair ? pairs.size() : rankings.size();
  }

  std::vector<ObservedPair> observed_pairs() const;
  std::vector<ObservedRanking> observed_rankings() const;

  // Index-range and structural checks against an env. Hash comparison is the
  // caller's job since only the caller knows which file the env came from.
  void validate_indices(const DiscreteEnv& env) const;
};

// n clean comparisons: s ~ rho, two distinct actions from pi_sft (at most 64
// attempts per record, then DegenerateSftError), winner ~ true_pref_prob.
// min_gap, when set, additionally requires |r*(a) - r*(a')| >= min_gap.
PreferenceDataset sample_pairs(const DiscreteEnv& env, std::size_t n, std::uint64_t seed,
                               std::optional<double> min_gap = std::nullopt);

// Independent label flips with probability eps in [0, 0.5). Applying it
// twice XORs the flip indicators.
PreferenceDataset flip_pairs(const PreferenceDataset& ds, double eps, std::uint64_t seed);

// n clean rankings of K distinct candidates (2 <= K <= 5) drawn from pi_sft;
// ranking order sampled from the Plackett-Luce model on r*.
PreferenceDataset sample_rankings(const DiscreteEnv& env, std::size_t n, std::size_t K,
                                  std::uint64_t seed);

// With probability eps the ranking is replaced by one of the other N - 1
// permutations of its candidates, uniformly. Requires (1 - eps) * N - 1 > 0.
PreferenceDataset perturb_rankings(const PreferenceDataset& ds, double eps, std::uint64_t seed);

// JSONL: one header object, then one record object per line.
PreferenceDataset load_dataset(const std::string& path);
void save_dataset(const PreferenceDataset& ds, const std::string& path);

std::uint64_t factorial(std::size_t k);

}  // namespace robustpref
