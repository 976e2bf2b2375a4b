#include "robustpref/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "robustpref/numeric.hpp"
#include "robustpref/rng.hpp"

namespace robustpref {

using nlohmann::json;

namespace {

// Substream tags; every sampling stage owns a disjoint stream family.
constexpr std::uint64_t kStreamPairSample = 0x70616972;  // "pair"
constexpr std::uint64_t kStreamPairFlip = 0x666c6970;    // "flip"
constexpr std::uint64_t kStreamRankSample = 0x72616e6b;  // "rank"
constexpr std::uint64_t kStreamRankPerturb = 0x70657274; // "pert"

constexpr int kMaxResample = 64;

std::string canonical_env_hash(const DiscreteEnv& env) {
  return env_hash_of_text(env_to_json_text(env));
}

}  // namespace

std::string to_string(DatasetKind k) { return k == DatasetKind::Pair ? "pair" : "rank"; }

DatasetKind dataset_kind_from_string(const std::string& s) {
  if (s == "pair") return DatasetKind::Pair;
  if (s == "rank") return DatasetKind::Rank;
  throw InvalidInputError("dataset kind must be \"pair\" or \"rank\", got \"" + s + "\"");
}

std::vector<ObservedPair> PreferenceDataset::observed_pairs() const {
  if (kind != DatasetKind::Pair)
    throw KindMismatchError("observed_pairs: dataset kind is not \"pair\"");
  std::vector<ObservedPair> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) out.push_back({p.prompt, p.obs_winner, p.obs_loser});
  return out;
}

std::vector<ObservedRanking> PreferenceDataset::observed_rankings() const {
  if (kind != DatasetKind::Rank)
    throw KindMismatchError("observed_rankings: dataset kind is not \"rank\"");
  std::vector<ObservedRanking> out;
  out.reserve(rankings.size());
  for (const auto& r : rankings) out.push_back({r.prompt, r.obs_ranking, r.candidate_count});
  return out;
}

void PreferenceDataset::validate_indices(const DiscreteEnv& env) const {
  const auto check = [&](std::uint32_t s, std::uint32_t a, std::size_t rec) {
    if (s >= static_cast<std::uint32_t>(env.num_prompts()))
      throw IndexError("record " + std::to_string(rec) + ": prompt " + std::to_string(s) +
                       " out of range");
    if (a >= static_cast<std::uint32_t>(env.num_actions(static_cast<Eigen::Index>(s))))
      throw IndexError("record " + std::to_string(rec) + ": action " + std::to_string(a) +
                       " out of range for prompt " + std::to_string(s));
  };
  if (kind == DatasetKind::Pair) {
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      const auto& p = pairs[i];
      check(p.prompt, p.obs_winner, i);
      check(p.prompt, p.obs_loser, i);
      if (p.obs_winner == p.obs_loser)
        throw DegeneratePairError("record " + std::to_string(i) + ": winner equals loser");
      if (p.clean_winner != p.obs_winner && p.clean_winner != p.obs_loser)
        throw InvalidInputError("record " + std::to_string(i) +
                                ": clean_winner is not a member of the pair");
    }
  } else {
    for (std::size_t i = 0; i < rankings.size(); ++i) {
      const auto& r = rankings[i];
      if (r.obs_ranking.size() < 2 || r.obs_ranking.size() > 5)
        throw MalformedRankingError("record " + std::to_string(i) + ": K must be in [2, 5]");
      if (r.clean_ranking.size() != r.obs_ranking.size())
        throw MalformedRankingError("record " + std::to_string(i) +
                                    ": clean and observed rankings differ in length");
      auto sorted_obs = r.obs_ranking;
      auto sorted_clean = r.clean_ranking;
      std::sort(sorted_obs.begin(), sorted_obs.end());
      std::sort(sorted_clean.begin(), sorted_clean.end());
      if (sorted_obs != sorted_clean)
        throw MalformedRankingError("record " + std::to_string(i) +
                                    ": rankings are not permutations of the same candidates");
      if (std::adjacent_find(sorted_obs.begin(), sorted_obs.end()) != sorted_obs.end())
        throw MalformedRankingError("record " + std::to_string(i) + ": repeated candidate");
      for (auto a : r.obs_ranking) check(r.prompt, a, i);
      if (r.candidate_count != factorial(r.obs_ranking.size()))
        throw MalformedRankingError("record " + std::to_string(i) +
                                    ": candidate_count must equal K!");
    }
  }
}

PreferenceDataset sample_pairs(const DiscreteEnv& env, std::size_t n, std::uint64_t seed,
                               std::optional<double> min_gap) {
  if (min_gap.has_value() && !(std::isfinite(*min_gap) && *min_gap >= 0.0))
    throw InvalidInputError("sample_pairs: min_gap must be finite and >= 0");
  const auto sft = sft_policy(env);

  PreferenceDataset ds;
  ds.kind = DatasetKind::Pair;
  ds.env_hash = canonical_env_hash(env);
  ds.seed = seed;
  ds.eps_true = 0.0;
  ds.pairs.reserve(n);

  for (std::size_t i = 0; i < n; ++i) {
    SplitMix64 rng(substream_seed(seed, kStreamPairSample, i));
    const Eigen::Index s = rng.categorical(env.prompt_weights);
    const auto& pi = sft[static_cast<std::size_t>(s)];

    Eigen::Index a = -1, b = -1;
    bool found = false;
    for (int attempt = 0; attempt < kMaxResample; ++attempt) {
      a = rng.categorical(pi);
      b = rng.categorical(pi);
      if (a == b) continue;
      if (min_gap.has_value()) {
        const auto& r = env.latent_reward[static_cast<std::size_t>(s)];
        if (std::abs(r[a] - r[b]) < *min_gap) continue;
      }
      found = true;
      break;
    }
    if (!found)
      throw DegenerateSftError("sample_pairs: no admissible distinct pair after " +
                               std::to_string(kMaxResample) + " attempts at prompt " +
                               std::to_string(s));

    const double p = true_pref_prob(env, s, a, b);
    const bool a_wins = rng.bernoulli(p);
    PreferencePair rec;
    rec.prompt = static_cast<std::uint32_t>(s);
    rec.obs_winner = static_cast<std::uint32_t>(a_wins ? a : b);
    rec.obs_loser = static_cast<std::uint32_t>(a_wins ? b : a);
    rec.clean_winner = rec.obs_winner;
    rec.flipped = false;
    ds.pairs.push_back(rec);
  }
  return ds;
}

PreferenceDataset flip_pairs(const PreferenceDataset& ds, double eps, std::uint64_t seed) {
  if (ds.kind != DatasetKind::Pair)
    throw KindMismatchError("flip_pairs: dataset kind is not \"pair\"");
  if (!(std::isfinite(eps) && eps >= 0.0 && eps < 0.5))
    throw InvalidRateError("flip_pairs: eps must lie in [0, 0.5), got " + std::to_string(eps));

  PreferenceDataset out = ds;
  out.eps_true = eps;
  out.seed = seed;
  for (std::size_t i = 0; i < out.pairs.size(); ++i) {
    SplitMix64 rng(substream_seed(seed, kStreamPairFlip, i));
    if (rng.bernoulli(eps)) {
      auto& p = out.pairs[i];
      std::swap(p.obs_winner, p.obs_loser);
      p.flipped = !p.flipped;
    }
  }
  return out;
}

PreferenceDataset sample_rankings(const DiscreteEnv& env, std::size_t n, std::size_t K,
                                  std::uint64_t seed) {
  if (K < 2 || K > 5)
    throw InvalidInputError("sample_rankings: K must lie in [2, 5], got " + std::to_string(K));
  const auto sft = sft_policy(env);

  PreferenceDataset ds;
  ds.kind = DatasetKind::Rank;
  ds.env_hash = canonical_env_hash(env);
  ds.seed = seed;
  ds.eps_true = 0.0;
  ds.rankings.reserve(n);

  for (std::size_t i = 0; i < n; ++i) {
    SplitMix64 rng(substream_seed(seed, kStreamRankSample, i));
    const Eigen::Index s = rng.categorical(env.prompt_weights);
    if (static_cast<std::size_t>(env.num_actions(s)) < K)
      throw InvalidInputError("sample_rankings: prompt " + std::to_string(s) +
                              " has fewer than K actions");
    const auto& pi = sft[static_cast<std::size_t>(s)];

    std::vector<Eigen::Index> cand;
    cand.reserve(K);
    while (cand.size() < K) {
      bool placed = false;
      for (int attempt = 0; attempt < kMaxResample; ++attempt) {
        const Eigen::Index c = rng.categorical(pi);
        if (std::find(cand.begin(), cand.end(), c) == cand.end()) {
          cand.push_back(c);
          placed = true;
          break;
        }
      }
      if (!placed)
        throw DegenerateSftError("sample_rankings: no distinct candidate after " +
                                 std::to_string(kMaxResample) + " attempts at prompt " +
                                 std::to_string(s));
    }

    // Plackett-Luce draw: repeatedly pick the next-best among the remaining
    // candidates with probability softmax(r*).
    const auto& r = env.latent_reward[static_cast<std::size_t>(s)];
    std::vector<Eigen::Index> remaining = cand;
    std::vector<std::uint32_t> ranking;
    ranking.reserve(K);
    while (!remaining.empty()) {
      Eigen::VectorXd scores(static_cast<Eigen::Index>(remaining.size()));
      for (std::size_t j = 0; j < remaining.size(); ++j)
        scores[static_cast<Eigen::Index>(j)] = r[remaining[j]];
      const Eigen::VectorXd probs = log_softmax(scores).array().exp().matrix();
      const Eigen::Index pick = rng.categorical(probs);
      ranking.push_back(static_cast<std::uint32_t>(remaining[static_cast<std::size_t>(pick)]));
      remaining.erase(remaining.begin() + pick);
    }

    RankingSample rec;
    rec.prompt = static_cast<std::uint32_t>(s);
    rec.obs_ranking = ranking;
    rec.clean_ranking = ranking;
    rec.candidate_count = factorial(K);
    ds.rankings.push_back(std::move(rec));
  }
  return ds;
}

PreferenceDataset perturb_rankings(const PreferenceDataset& ds, double eps, std::uint64_t seed) {
  if (ds.kind != DatasetKind::Rank)
    throw KindMismatchError("perturb_rankings: dataset kind is not \"rank\"");
  if (!(std::isfinite(eps) && eps >= 0.0))
    throw InvalidRateError("perturb_rankings: eps must be finite and >= 0");

  PreferenceDataset out = ds;
  out.eps_true = eps;
  out.seed = seed;
  for (std::size_t i = 0; i < out.rankings.size(); ++i) {
    auto& rec = out.rankings[i];
    const double N = static_cast<double>(rec.candidate_count);
    if (!((1.0 - eps) * N - 1.0 > 0.0))
      throw InvalidRateError("perturb_rankings: need (1 - eps) * N - 1 > 0, got eps = " +
                             std::to_string(eps) + ", N = " + std::to_string(rec.candidate_count));
    SplitMix64 rng(substream_seed(seed, kStreamRankPerturb, i));
    if (!rng.bernoulli(eps)) continue;

    // Uniform draw over the other N - 1 permutations, enumerated in
    // lexicographic order of the candidate indices.
    std::vector<std::uint32_t> perm = rec.obs_ranking;
    std::sort(perm.begin(), perm.end());
    std::uint64_t target = rng.uniform_index(static_cast<std::size_t>(rec.candidate_count - 1));
    std::vector<std::uint32_t> chosen;
    do {
      if (perm == rec.obs_ranking) continue;
      if (target == 0) {
        chosen = perm;
        break;
      }
      --target;
    } while (std::next_permutation(perm.begin(), perm.end()));
    if (chosen.empty())
      throw MalformedRankingError("perturb_rankings: permutation enumeration failed at record " +
                                  std::to_string(i));
    rec.obs_ranking = chosen;
  }
  return out;
}

std::uint64_t factorial(std::size_t k) {
  std::uint64_t f = 1;
  for (std::size_t i = 2; i <= k; ++i) f *= i;
  return f;
}

namespace {

json header_json(const PreferenceDataset& ds) {
  return json{{"env_hash", ds.env_hash},
              {"seed", ds.seed},
              {"eps_true", ds.eps_true},
              {"kind", to_string(ds.kind)}};
}

}  // namespace

void save_dataset(const PreferenceDataset& ds, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InvalidInputError("cannot write dataset file: " + path);
  out << header_json(ds).dump() << "\n";
  if (ds.kind == DatasetKind::Pair) {
    for (const auto& p : ds.pairs) {
      json j{{"s", p.prompt},
             {"w", p.obs_winner},
             {"l", p.obs_loser},
             {"cw", p.clean_winner},
             {"flip", p.flipped}};
      out << j.dump() << "\n";
    }
  } else {
    for (const auto& r : ds.rankings) {
      json j{{"s", r.prompt}, {"rank", r.obs_ranking}, {"crank", r.clean_ranking}};
      out << j.dump() << "\n";
    }
  }
}

PreferenceDataset load_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidInputError("cannot open dataset file: " + path);

  std::string line;
  std::size_t lineno = 0;
  PreferenceDataset ds;
  bool have_header = false;

  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw InvalidInputError("dataset line " + std::to_string(lineno) + ": " + e.what());
    }
    if (!have_header) {
      for (const std::string key : {"env_hash", "seed", "eps_true", "kind"})
        if (!j.contains(key))
          throw InvalidInputError("dataset header: missing key \"" + key + "\"");
      ds.env_hash = j["env_hash"].get<std::string>();
      ds.seed = j["seed"].get<std::uint64_t>();
      ds.eps_true = j["eps_true"].get<double>();
      ds.kind = dataset_kind_from_string(j["kind"].get<std::string>());
      have_header = true;
      continue;
    }
    if (ds.kind == DatasetKind::Pair) {
      for (const std::string key : {"s", "w", "l", "cw", "flip"})
        if (!j.contains(key))
          throw InvalidInputError("dataset line " + std::to_string(lineno) + ": missing key \"" +
                                  key + "\"");
      PreferencePair p;
      p.prompt = j["s"].get<std::uint32_t>();
      p.obs_winner = j["w"].get<std::uint32_t>();
      p.obs_loser = j["l"].get<std::uint32_t>();
      p.clean_winner = j["cw"].get<std::uint32_t>();
      p.flipped = j["flip"].get<bool>();
      if (p.flipped != (p.clean_winner != p.obs_winner))
        throw InvalidInputError("dataset line " + std::to_string(lineno) +
                                ": flip flag disagrees with clean_winner");
      ds.pairs.push_back(p);
    } else {
      for (const std::string key : {"s", "rank", "crank"})
        if (!j.contains(key))
          throw InvalidInputError("dataset line " + std::to_string(lineno) + ": missing key \"" +
                                  key + "\"");
      RankingSample r;
      r.prompt = j["s"].get<std::uint32_t>();
      r.obs_ranking = j["rank"].get<std::vector<std::uint32_t>>();
      r.clean_ranking = j["crank"].get<std::vector<std::uint32_t>>();
      if (r.obs_ranking.size() < 2 || r.obs_ranking.size() > 5)
        throw MalformedRankingError("dataset line " + std::to_string(lineno) +
                                    ": K must be in [2, 5]");
      r.candidate_count = factorial(r.obs_ranking.size());
      ds.rankings.push_back(std::move(r));
    }
  }
  if (!have_header) throw InvalidInputError("dataset file has no header line: " + path);
  return ds;
}

}  // namespace robustpref
