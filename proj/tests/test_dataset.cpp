#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "helpers.hpp"
#include "robustpref/dataset.hpp"
#include "robustpref/errors.hpp"

using namespace robustpref;

TEST_SUITE("dataset") {

TEST_CASE("sample_pairs is deterministic and well formed") {
  DiscreteEnv env = testutil::tabular_env({0.5, 0.0, -0.5});
  PreferenceDataset a = sample_pairs(env, 200, 42);
  PreferenceDataset b = sample_pairs(env, 200, 42);
  REQUIRE(a.pairs.size() == 200);
  CHECK(a.kind == DatasetKind::Pair);
  CHECK(a.eps_true == 0.0);
  CHECK(a.seed == 42);
  CHECK(a.env_hash == env_hash_of_text(env_to_json_text(env)));
  for (std::size_t i = 0; i < a.pairs.size(); ++i) {
    const PreferencePair& p = a.pairs[i];
    CHECK(p.obs_winner != p.obs_loser);
    CHECK(!p.flipped);
    CHECK(p.clean_winner == p.obs_winner);
    CHECK(p.obs_winner < 3);
    CHECK(p.obs_loser < 3);
    CHECK(a.pairs[i].prompt == b.pairs[i].prompt);
    CHECK(a.pairs[i].obs_winner == b.pairs[i].obs_winner);
    CHECK(a.pairs[i].obs_loser == b.pairs[i].obs_loser);
  }
  PreferenceDataset c = sample_pairs(env, 200, 43);
  bool same = true;
  for (std::size_t i = 0; i < c.pairs.size(); ++i)
    same = same && c.pairs[i].obs_winner == a.pairs[i].obs_winner &&
           c.pairs[i].obs_loser == a.pairs[i].obs_loser && c.pairs[i].prompt == a.pairs[i].prompt;
  CHECK(!same);
}

TEST_CASE("huge reward gap makes the clean winner deterministic") {
  DiscreteEnv env = testutil::tabular_env({50.0, 0.0});
  PreferenceDataset ds = sample_pairs(env, 300, 9);
  for (const PreferencePair& p : ds.pairs) CHECK(p.clean_winner == 0);
}

TEST_CASE("min_gap filters close pairs") {
  DiscreteEnv env = testutil::tabular_env({1.0, 0.95, 0.0});
  PreferenceDataset ds = sample_pairs(env, 400, 3, 0.5);
  for (const PreferencePair& p : ds.pairs) {
    double gap = std::abs(env.latent_reward[0](p.obs_winner) - env.latent_reward[0](p.obs_loser));
    CHECK(gap >= 0.5);
  }
}

TEST_CASE("degenerate sampling throws") {
  // Point-mass SFT: the second action essentially never appears.
  DiscreteEnv env = testutil::tabular_env({0.0, 0.0});
  env.theta_sft << 25.0, -25.0;
  env.validate();
  CHECK_THROWS_AS(sample_pairs(env, 10, 0), DegenerateSftError);

  // Unreachable min_gap exhausts the attempt budget.
  DiscreteEnv flat = testutil::tabular_env({0.1, 0.0});
  CHECK_THROWS_AS(sample_pairs(flat, 10, 0, 5.0), DegenerateSftError);
}

TEST_CASE("flip_pairs zero rate is the identity") {
  DiscreteEnv env = testutil::tabular_env({0.4, -0.4});
  PreferenceDataset clean = sample_pairs(env, 100, 5);
  PreferenceDataset out = flip_pairs(clean, 0.0, 77);
  CHECK(out.eps_true == 0.0);
  for (std::size_t i = 0; i < out.pairs.size(); ++i) {
    CHECK(!out.pairs[i].flipped);
    CHECK(out.pairs[i].obs_winner == clean.pairs[i].obs_winner);
  }
}

TEST_CASE("flip_pairs validates the rate") {
  DiscreteEnv env = testutil::tabular_env({0.4, -0.4});
  PreferenceDataset clean = sample_pairs(env, 10, 5);
  CHECK_THROWS_AS(flip_pairs(clean, 0.5, 0), InvalidRateError);
  CHECK_THROWS_AS(flip_pairs(clean, -0.01, 0), InvalidRateError);
  CHECK_THROWS_AS(flip_pairs(clean, 0.7, 0), InvalidRateError);
}

TEST_CASE("flip indicator matches observed versus clean labels") {
  DiscreteEnv env = testutil::tabular_env({0.6, 0.1, -0.7});
  PreferenceDataset noisy = flip_pairs(sample_pairs(env, 500, 21), 0.3, 22);
  CHECK(noisy.eps_true == 0.3);
  std::size_t flips = 0;
  for (const PreferencePair& p : noisy.pairs) {
    if (p.flipped) {
      ++flips;
      CHECK(p.obs_winner != p.clean_winner);
      CHECK(p.obs_loser == p.clean_winner);
    } else {
      CHECK(p.obs_winner == p.clean_winner);
    }
    CHECK(p.clean_loser() == (p.flipped ? p.obs_winner : p.obs_loser));
  }
  CHECK(flips > 0);
}

TEST_CASE("flipping twice composes as xor") {
  DiscreteEnv env = testutil::tabular_env({0.6, 0.1, -0.7});
  PreferenceDataset clean = sample_pairs(env, 300, 8);
  PreferenceDataset once = flip_pairs(clean, 0.25, 100);
  PreferenceDataset twice = flip_pairs(once, 0.25, 101);
  for (std::size_t i = 0; i < twice.pairs.size(); ++i) {
    const PreferencePair& p = twice.pairs[i];
    // clean_winner survives re-flipping; flipped tracks obs vs clean.
    CHECK(p.clean_winner == clean.pairs[i].clean_winner);
    CHECK(p.flipped == (p.obs_winner != p.clean_winner));
  }
}

TEST_CASE("empirical flip rate concentrates") {
  DiscreteEnv env = testutil::tabular_env({0.6, 0.1, -0.7});
  const std::size_t n = 20000;
  PreferenceDataset noisy = flip_pairs(sample_pairs(env, n, 1), 0.2, 2);
  std::size_t flips = 0;
  for (const PreferencePair& p : noisy.pairs)
    if (p.flipped) ++flips;
  double rate = static_cast<double>(flips) / static_cast<double>(n);
  // 3 sigma band around 0.2 for Bernoulli(0.2) with n = 20000.
  CHECK(std::abs(rate - 0.2) < 3.0 * std::sqrt(0.2 * 0.8 / static_cast<double>(n)));
}

TEST_CASE("rankings are distinct candidates with K factorial alternatives") {
  DiscreteEnv env = testutil::tabular_env({0.8, 0.3, -0.2, -0.9});
  PreferenceDataset ds = sample_rankings(env, 150, 3, 11);
  REQUIRE(ds.rankings.size() == 150);
  CHECK(ds.kind == DatasetKind::Rank);
  for (const RankingSample& r : ds.rankings) {
    REQUIRE(r.obs_ranking.size() == 3);
    std::set<std::uint32_t> uniq(r.obs_ranking.begin(), r.obs_ranking.end());
    CHECK(uniq.size() == 3);
    CHECK(r.candidate_count == 6);
    CHECK(r.obs_ranking == r.clean_ranking);
    for (std::uint32_t a : r.obs_ranking) CHECK(a < 4);
  }
}

TEST_CASE("ranking K bounds") {
  DiscreteEnv env = testutil::tabular_env({0.8, 0.3, -0.2, -0.9, 0.1});
  CHECK_THROWS_AS(sample_rankings(env, 5, 1, 0), InvalidInputError);
  CHECK_THROWS_AS(sample_rankings(env, 5, 6, 0), InvalidInputError);
  // K cannot exceed the action count of the drawn prompt.
  DiscreteEnv two = testutil::tabular_env({0.5, -0.5});
  CHECK_THROWS_AS(sample_rankings(two, 5, 3, 0), InvalidInputError);
  CHECK_NOTHROW(sample_rankings(env, 5, 5, 0));
}

TEST_CASE("perturb_rankings zero rate is the identity") {
  DiscreteEnv env = testutil::tabular_env({0.8, 0.3, -0.2});
  PreferenceDataset clean = sample_rankings(env, 60, 3, 4);
  PreferenceDataset out = perturb_rankings(clean, 0.0, 9);
  for (std::size_t i = 0; i < out.rankings.size(); ++i)
    CHECK(out.rankings[i].obs_ranking == clean.rankings[i].obs_ranking);
}

TEST_CASE("perturb_rankings validates the rate against the alternative count") {
  DiscreteEnv env = testutil::tabular_env({0.8, 0.3, -0.2});
  PreferenceDataset clean = sample_rankings(env, 20, 3, 4);
  CHECK_THROWS_AS(perturb_rankings(clean, -0.1, 0), InvalidRateError);
  // (1 - eps) 6 - 1 > 0 iff eps < 5/6.
  CHECK_THROWS_AS(perturb_rankings(clean, 5.0 / 6.0, 0), InvalidRateError);
  CHECK_NOTHROW(perturb_rankings(clean, 0.8, 0));

  PreferenceDataset pairsdata = sample_rankings(env, 20, 2, 4);
  // K = 2: N = 2, need eps < 1/2 exactly like pairwise flips.
  CHECK_THROWS_AS(perturb_rankings(pairsdata, 0.5, 0), InvalidRateError);
  CHECK_NOTHROW(perturb_rankings(pairsdata, 0.49, 0));
}

TEST_CASE("perturbation keeps the candidate set and marks changes") {
  DiscreteEnv env = testutil::tabular_env({0.9, 0.4, -0.1, -0.6});
  PreferenceDataset clean = sample_rankings(env, 400, 3, 14);
  PreferenceDataset noisy = perturb_rankings(clean, 0.4, 15);
  CHECK(noisy.eps_true == 0.4);
  std::size_t changed = 0;
  for (std::size_t i = 0; i < noisy.rankings.size(); ++i) {
    const RankingSample& r = noisy.rankings[i];
    std::set<std::uint32_t> obs(r.obs_ranking.begin(), r.obs_ranking.end());
    std::set<std::uint32_t> cln(r.clean_ranking.begin(), r.clean_ranking.end());
    CHECK(obs == cln);
    CHECK(r.clean_ranking == clean.rankings[i].obs_ranking);
    if (r.obs_ranking != r.clean_ranking) ++changed;
  }
  // Replacement is uniform over the 5 other permutations, all distinct from
  // the clean one, so the change rate tracks eps itself.
  double rate = static_cast<double>(changed) / 400.0;
  CHECK(std::abs(rate - 0.4) < 3.0 * std::sqrt(0.4 * 0.6 / 400.0));
}

TEST_CASE("jsonl round trip preserves everything") {
  namespace fs = std::filesystem;
  fs::path dir = fs::temp_directory_path() / "robustpref-tests";
  fs::create_directories(dir);

  DiscreteEnv env = testutil::tabular_env({0.7, 0.2, -0.3});
  PreferenceDataset ds = flip_pairs(sample_pairs(env, 50, 31), 0.2, 32);
  ds.env_hash = "feedbeeffeedbeef";
  std::string p = (dir / "pairs.jsonl").string();
  save_dataset(ds, p);
  PreferenceDataset back = load_dataset(p);
  CHECK(back.kind == DatasetKind::Pair);
  CHECK(back.env_hash == ds.env_hash);
  CHECK(back.seed == ds.seed);
  CHECK(back.eps_true == ds.eps_true);
  REQUIRE(back.pairs.size() == ds.pairs.size());
  for (std::size_t i = 0; i < ds.pairs.size(); ++i) {
    CHECK(back.pairs[i].prompt == ds.pairs[i].prompt);
    CHECK(back.pairs[i].obs_winner == ds.pairs[i].obs_winner);
    CHECK(back.pairs[i].obs_loser == ds.pairs[i].obs_loser);
    CHECK(back.pairs[i].clean_winner == ds.pairs[i].clean_winner);
    CHECK(back.pairs[i].flipped == ds.pairs[i].flipped);
  }

  PreferenceDataset rk = perturb_rankings(sample_rankings(env, 40, 3, 33), 0.3, 34);
  rk.env_hash = "feedbeeffeedbeef";
  std::string q = (dir / "ranks.jsonl").string();
  save_dataset(rk, q);
  PreferenceDataset rback = load_dataset(q);
  CHECK(rback.kind == DatasetKind::Rank);
  REQUIRE(rback.rankings.size() == rk.rankings.size());
  for (std::size_t i = 0; i < rk.rankings.size(); ++i) {
    CHECK(rback.rankings[i].obs_ranking == rk.rankings[i].obs_ranking);
    CHECK(rback.rankings[i].clean_ranking == rk.rankings[i].clean_ranking);
    CHECK(rback.rankings[i].candidate_count == rk.rankings[i].candidate_count);
  }
}

TEST_CASE("jsonl header drives the record count") {
  namespace fs = std::filesystem;
  fs::path dir = fs::temp_directory_path() / "robustpref-tests";
  fs::create_directories(dir);
  std::string p = (dir / "lines.jsonl").string();

  DiscreteEnv env = testutil::tabular_env({0.7, -0.7});
  PreferenceDataset ds = sample_pairs(env, 5, 1);
  ds.env_hash = "00";
  save_dataset(ds, p);
  std::ifstream in(p);
  std::size_t lines = 0;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) ++lines;
  CHECK(lines == 6);  // header + one line per record
}

TEST_CASE("load_dataset rejects malformed input") {
  namespace fs = std::filesystem;
  fs::path dir = fs::temp_directory_path() / "robustpref-tests";
  fs::create_directories(dir);

  auto write = [&](const char* name, const std::string& body) {
    std::string p = (dir / name).string();
    std::ofstream out(p);
    out << body;
    return p;
  };

  CHECK_THROWS_AS(load_dataset((dir / "absent.jsonl").string()), InvalidInputError);
  CHECK_THROWS_AS(load_dataset(write("garbage.jsonl", "not json\n")), InvalidInputError);
  CHECK_THROWS_AS(load_dataset(write("nohdr.jsonl", "{\"w\": 0}\n")), InvalidInputError);
  std::string hdr = R"({"env_hash":"ab","eps_true":0.0,"kind":"pair","seed":1})";
  CHECK_THROWS_AS(load_dataset(write("badrec.jsonl", hdr + "\n{\"w\": 0}\n")), InvalidInputError);
  // Flip flag contradicting the provenance columns is corruption.
  CHECK_THROWS_AS(
      load_dataset(write("badflip.jsonl", hdr + "\n{\"s\":0,\"w\":1,\"l\":0,\"cw\":0,\"flip\":false}\n")),
      InvalidInputError);

  // A self-pair parses but fails structural validation against any env.
  PreferenceDataset selfpair =
      load_dataset(write("selfpair.jsonl", hdr + "\n{\"s\":0,\"w\":1,\"l\":1,\"cw\":1,\"flip\":false}\n"));
  DiscreteEnv env = testutil::tabular_env({0.3, -0.3});
  CHECK_THROWS_AS(selfpair.validate_indices(env), DegeneratePairError);
}

TEST_CASE("observed views redact provenance") {
  DiscreteEnv env = testutil::tabular_env({0.7, 0.2, -0.3});
  PreferenceDataset ds = flip_pairs(sample_pairs(env, 30, 3), 0.3, 4);
  std::vector<ObservedPair> obs = ds.observed_pairs();
  REQUIRE(obs.size() == ds.pairs.size());
  for (std::size_t i = 0; i < obs.size(); ++i) {
    CHECK(obs[i].prompt == ds.pairs[i].prompt);
    CHECK(obs[i].winner == ds.pairs[i].obs_winner);
    CHECK(obs[i].loser == ds.pairs[i].obs_loser);
  }
  PreferenceDataset rk = sample_rankings(env, 10, 2, 5);
  CHECK(rk.observed_rankings().size() == 10);
  CHECK_THROWS_AS(rk.observed_pairs(), KindMismatchError);
  CHECK_THROWS_AS(ds.observed_rankings(), KindMismatchError);
}

TEST_CASE("validate_indices catches structural corruption") {
  DiscreteEnv env = testutil::tabular_env({0.7, 0.2, -0.3});
  PreferenceDataset ds = sample_pairs(env, 10, 3);
  CHECK_NOTHROW(ds.validate_indices(env));

  PreferenceDataset bad = ds;
  bad.pairs[4].obs_winner = 9;
  CHECK_THROWS_AS(bad.validate_indices(env), IndexError);

  bad = ds;
  bad.pairs[2].prompt = 1;
  CHECK_THROWS_AS(bad.validate_indices(env), IndexError);

  bad = ds;
  bad.pairs[0].clean_winner = (3 - bad.pairs[0].obs_winner - bad.pairs[0].obs_loser) % 3;
  CHECK_THROWS_AS(bad.validate_indices(env), InvalidInputError);

  PreferenceDataset rk = sample_rankings(env, 10, 3, 3);
  CHECK_NOTHROW(rk.validate_indices(env));
  PreferenceDataset rbad = rk;
  rbad.rankings[1].obs_ranking = {0, 0, 1};
  CHECK_THROWS_AS(rbad.validate_indices(env), MalformedRankingError);
  rbad = rk;
  rbad.rankings[0].candidate_count = 5;
  CHECK_THROWS_AS(rbad.validate_indices(env), MalformedRankingError);
}

TEST_CASE("factorial small values") {
  CHECK(factorial(0) == 1);
  CHECK(factorial(1) == 1);
  CHECK(factorial(5) == 120);
  CHECK(factorial(12) == 479001600ULL);
}

}  // TEST_SUITE
