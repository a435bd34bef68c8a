#include "prefshield/experiment.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "oracles.hpp"

namespace prefshield {
namespace {

GridConfig empty_grid(int n) {
  GridConfig g;
  g.width = g.height = n;
  g.start = {n - 1, 0};
  g.goal = {0, n - 1};
  return g;
}

// Optimal Q by repeated Bellman backups over the deterministic model.
QTable optimal_q(const GridConfig& g, double gamma) {
  QTable q(g);
  for (int it = 0; it < 500; ++it) {
    for (int r = 0; r < g.height; ++r)
      for (int c = 0; c < g.width; ++c) {
        const Cell s{r, c};
        if (!is_safe(g, s) || s == g.goal) continue;
        for (Action a : kActions) {
          const StepOutcome o = step(g, s, a);
          q.set(s, a, o.reward + (o.terminal ? 0.0 : gamma * q.max_value(o.next_state)));
        }
      }
  }
  return q;
}

std::vector<std::uint64_t> seeds(int n) {
  std::vector<std::uint64_t> out;
  for (int i = 0; i < n; ++i) out.push_back(i);
  return out;
}

TEST(Mechanisms, FourCombinations) {
  EXPECT_EQ(mechanism_config(Mechanism::L1), (MechanismConfig{Mechanism::L1, true, false}));
  EXPECT_EQ(mechanism_config(Mechanism::L2), (MechanismConfig{Mechanism::L2, false, false}));
  EXPECT_EQ(mechanism_config(Mechanism::L3), (MechanismConfig{Mechanism::L3, true, true}));
  EXPECT_EQ(mechanism_config(Mechanism::L4), (MechanismConfig{Mechanism::L4, false, true}));
}

TEST(RunEpisode, GreedyOnOptimalTableFollowsShortestPath) {
  const GridConfig g = empty_grid(3);
  Hyperparams h;
  h.epsilon_start = h.epsilon_end = 0.0;
  const int bfs = oracle::bfs_distance(g, g.start, g.goal);
  ASSERT_EQ(bfs, 4);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    QTable q = optimal_q(g, h.gamma);
    RngStream rng(seed);
    const auto tr = run_episode(g, q, mechanism_config(Mechanism::L2), std::nullopt, h, 0, rng);
    EXPECT_EQ(tr.length, bfs);
    EXPECT_DOUBLE_EQ(tr.episode_return, g.goal_reward + g.step_reward * (bfs - 1));
  }
}

TEST(RunEpisode, ShieldRequiresPreference) {
  const GridConfig g = canonical_grid();
  QTable q(g);
  RngStream rng(0);
  EXPECT_THROW(run_episode(g, q, mechanism_config(Mechanism::L1), std::nullopt, {}, 0, rng),
               ContractError);
  EXPECT_THROW(train(g, mechanism_config(Mechanism::L3), std::nullopt, {}, 0), ContractError);
}

TEST(RunEpisode, TraceInvariants) {
  const GridConfig g = canonical_grid();
  const Hyperparams h = default_hyperparams(40);
  for (Mechanism m : kMechanisms) {
    const auto run = train(g, mechanism_config(m), Preference::Clockwise, h, 5);
    for (const auto& ep : run.episodes) {
      double sum = 0;
      for (const auto& s : ep.steps) sum += s.outcome.reward;
      EXPECT_EQ(sum, ep.episode_return);
      EXPECT_LE(ep.length, h.max_steps_per_episode);
      EXPECT_EQ(ep.length, static_cast<int>(ep.steps.size()));
    }
  }
}

TEST(RunEpisode, ShieldedRunsNeverCollide) {
  const GridConfig g = canonical_grid();
  for (Preference p : kPreferences) {
    const auto run = train(g, mechanism_config(Mechanism::L1), p, default_hyperparams(), 1);
    for (const auto& ep : run.episodes)
      for (const auto& s : ep.steps) {
        ASSERT_NE(s.outcome.reward, g.collision_penalty);
        ASSERT_NE(s.outcome.next_state, s.state);
      }
  }
}

TEST(RunEpisode, UnshieldedRunsCollideEarly) {
  const GridConfig g = canonical_grid();
  const Hyperparams h = default_hyperparams(10);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto run = train(g, mechanism_config(Mechanism::L2), std::nullopt, h, seed);
    int collisions = 0;
    for (const auto& ep : run.episodes)
      for (const auto& s : ep.steps) collisions += s.outcome.reward == g.collision_penalty;
    EXPECT_GT(collisions, 0) << "seed " << seed;
  }
}

TEST(RunEpisode, ExplanationsDoNotChangeDynamics) {
  const GridConfig g = canonical_grid();
  const auto h = default_hyperparams(60);
  const auto l1 = train(g, mechanism_config(Mechanism::L1), Preference::North, h, 9);
  const auto l3 = train(g, mechanism_config(Mechanism::L3), Preference::North, h, 9);
  const auto l2 = train(g, mechanism_config(Mechanism::L2), Preference::North, h, 9);
  const auto l4 = train(g, mechanism_config(Mechanism::L4), Preference::North, h, 9);
  EXPECT_EQ(canonical_dynamics(l1.episodes), canonical_dynamics(l3.episodes));
  EXPECT_EQ(canonical_dynamics(l2.episodes), canonical_dynamics(l4.episodes));
  EXPECT_EQ(l1.q, l3.q);
  EXPECT_EQ(l2.q, l4.q);

  int l1_events = 0, l3_events = 0, l2_events = 0, l4_events = 0;
  for (const auto& ep : l1.episodes) for (const auto& s : ep.steps) l1_events += s.explanation.has_value();
  for (const auto& ep : l3.episodes) for (const auto& s : ep.steps) l3_events += s.explanation.has_value();
  for (const auto& ep : l2.episodes) for (const auto& s : ep.steps) l2_events += s.explanation.has_value();
  for (const auto& ep : l4.episodes) for (const auto& s : ep.steps) l4_events += s.explanation.has_value();
  EXPECT_EQ(l1_events, 0);
  EXPECT_EQ(l2_events, 0);
  EXPECT_GT(l3_events, 0);
  EXPECT_GT(l4_events, 0);
}

TEST(RunEpisode, InterventionsAndExplanationsCorrespond) {
  const GridConfig g = canonical_grid();
  for (Preference p : kPreferences) {
    const auto run = train(g, mechanism_config(Mechanism::L3), p, default_hyperparams(100), 4);
    int interventions = 0, events = 0, unavailable = 0;
    for (const auto& ep : run.episodes)
      for (const auto& s : ep.steps) {
        interventions += s.decision.executed != s.proposed;
        if (!s.explanation) continue;
        const auto k = s.explanation->kind;
        events += k == ExplanationKind::UnsafeReplacement ||
                  k == ExplanationKind::PreferenceSubstitution;
        if (k == ExplanationKind::PreferenceUnavailable) {
          ++unavailable;
          EXPECT_TRUE(s.decision.preferred.has_value());
        }
        EXPECT_NE(k, ExplanationKind::GreedyRationale);
      }
    EXPECT_EQ(interventions, events);
    EXPECT_GT(events, 0);
  }
}

TEST(RunEpisode, GreedyRationaleNotRepeatedInPlace) {
  const GridConfig g = canonical_grid();
  const auto run = train(g, mechanism_config(Mechanism::L4), std::nullopt, default_hyperparams(50), 2);
  for (const auto& ep : run.episodes) {
    std::optional<Cell> last;
    for (const auto& s : ep.steps) {
      if (!s.explanation) continue;
      EXPECT_EQ(s.explanation->kind, ExplanationKind::GreedyRationale);
      EXPECT_EQ(s.decision.q_executed, s.decision.q_best);
      EXPECT_NE(last, s.state);
      last = s.state;
    }
  }
}

TEST(Experiment, ShieldlessMechanismsYieldOneCurve) {
  const GridConfig g = canonical_grid();
  const auto curves =
      run_experiment(g, {Mechanism::L1, Mechanism::L2},
                     {Preference::North, Preference::South}, seeds(2), default_hyperparams(20));
  ASSERT_EQ(curves.size(), 3u);
  EXPECT_EQ(curves[0].label, "L1-north");
  EXPECT_EQ(curves[1].label, "L1-south");
  EXPECT_EQ(curves[2].label, "L2-none");
  for (const auto& c : curves) {
    EXPECT_EQ(c.per_episode_return.size(), 20u);
    EXPECT_EQ(c.seeds, seeds(2));
    for (std::size_t i = 1; i < c.accumulated.size(); ++i) {
      EXPECT_NEAR(c.accumulated[i], c.accumulated[i - 1] + c.per_episode_return[i],
                  1e-9 * std::max(1.0, std::abs(c.accumulated[i])));
    }
  }
  EXPECT_THROW(run_experiment(g, {}, {Preference::North}, seeds(1), {}), ValidationError);
  EXPECT_THROW(run_experiment(g, {Mechanism::L1}, {std::nullopt}, seeds(1), {}), ContractError);
}

TEST(Experiment, SingleSeedCurveIsPrefixSum) {
  const GridConfig g = canonical_grid();
  const auto h = default_hyperparams(30);
  const auto curves = run_experiment(g, {Mechanism::L2}, {std::nullopt}, {7}, h);
  const auto run = train(g, mechanism_config(Mechanism::L2), std::nullopt, h, 7);
  ASSERT_EQ(curves.size(), 1u);
  EXPECT_EQ(curves[0].per_episode_return, episode_returns(run));
  EXPECT_EQ(curves[0].accumulated, prefix_sums(episode_returns(run)));
}

TEST(Experiment, MeanCurveIsElementwiseMeanOfSeedCurves) {
  const GridConfig g = canonical_grid();
  const auto h = default_hyperparams(30);
  const auto cells = run_experiment_cells(g, {Mechanism::L1}, {Preference::Clockwise}, seeds(5), h);
  const auto mean = mean_curve(cells[0]);
  for (std::size_t e = 0; e < 30; ++e) {
    double acc_mean = 0;
    for (std::uint64_t s = 0; s < 5; ++s) {
      const auto acc =
          prefix_sums(episode_returns(train(g, mechanism_config(Mechanism::L1), Preference::Clockwise, h, s)));
      acc_mean += acc[e] / 5.0;
    }
    EXPECT_NEAR(mean.accumulated[e], acc_mean, 1e-9 * std::max(1.0, std::abs(acc_mean)));
  }
}

// Misaligned preferences accumulate more slowly than aligned ones early on.
TEST(Experiment, MisalignedPreferencesTrailAlignedOnes) {
  const GridConfig g = canonical_grid();
  const auto curves = run_experiment(
      g, {Mechanism::L1},
      {Preference::North, Preference::Clockwise, Preference::AntiClockwise, Preference::South},
      seeds(20), default_hyperparams());
  const auto& north = curves[0].accumulated;
  const auto& cw = curves[1].accumulated;
  const auto& acw = curves[2].accumulated;
  const auto& south = curves[3].accumulated;
  EXPECT_GT(north[19], south[19]);
  EXPECT_GT(cw[19], acw[19]);
  EXPECT_GT(north[49], south[49]);
}

TEST(Transparency, WeightedSum) {
  EXPECT_EQ(transparency_score({0, 0, 0}), 0.0);
  EXPECT_DOUBLE_EQ(transparency_score({1, 0, 0}), 0.385);
  EXPECT_NEAR(transparency_score({7, 7, 7}), 7.252, 1e-9);
  EXPECT_DOUBLE_EQ(transparency_score({0, 1, 0}), 0.352);
  EXPECT_DOUBLE_EQ(transparency_score({0, 0, 1}), 0.299);
}

class CsvTest : public ::testing::Test {
 protected:
  std::filesystem::path path_ =
      std::filesystem::temp_directory_path() /
      ("prefshield_csv_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) + "_" +
       ::testing::UnitTest::GetInstance()->current_test_info()->name() + ".csv");
  void TearDown() override { std::filesystem::remove(path_); }

  std::vector<std::string> lines() {
    std::ifstream in(path_, std::ios::binary);
    std::vector<std::string> out;
    for (std::string l; std::getline(in, l);) out.push_back(l);
    return out;
  }
};

TEST_F(CsvTest, OneCurveThreeEpisodes) {
  RewardCurve c{"L2-none", {-3.5, 1.0, 2.25}, {}, {0}};
  c.accumulated = prefix_sums(c.per_episode_return);
  export_csv({c}, path_.string());
  const auto ls = lines();
  ASSERT_EQ(ls.size(), 4u);
  EXPECT_EQ(ls[0], "label,episode,per_episode_return,accumulated");
  EXPECT_EQ(ls[1], "L2-none,0,-3.5,-3.5");
  EXPECT_EQ(ls[3], "L2-none,2,2.25,-0.25");
  std::ifstream raw(path_, std::ios::binary);
  const std::string all((std::istreambuf_iterator<char>(raw)), {});
  EXPECT_EQ(all.find('\r'), std::string::npos);
}

TEST_F(CsvTest, EmptyListWritesHeaderOnly) {
  export_csv({}, path_.string());
  EXPECT_EQ(lines(), std::vector<std::string>{"label,episode,per_episode_return,accumulated"});
}

TEST_F(CsvTest, RoundTripPreservesValues) {
  const auto curves = run_experiment(canonical_grid(), {Mechanism::L1, Mechanism::L2},
                                     {Preference::AntiClockwise}, seeds(3), default_hyperparams(25));
  export_csv(curves, path_.string());
  std::ifstream in(path_, std::ios::binary);
  const auto back = read_csv(in);
  ASSERT_EQ(back.size(), curves.size());
  for (std::size_t i = 0; i < curves.size(); ++i) {
    EXPECT_EQ(back[i].label, curves[i].label);
    ASSERT_EQ(back[i].accumulated.size(), curves[i].accumulated.size());
    for (std::size_t e = 0; e < curves[i].accumulated.size(); ++e) {
      EXPECT_NEAR(back[i].accumulated[e], curves[i].accumulated[e],
                  1e-12 * std::max(1.0, std::abs(curves[i].accumulated[e])));
    }
  }
}

TEST_F(CsvTest, UnwritablePathIsIoError) {
  try {
    export_csv({}, "/nonexistent-dir/x.csv");
    FAIL();
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("/nonexistent-dir/x.csv"), std::string::npos);
  }
}

TEST(TraceDigest, Determinism) {
  const GridConfig g = canonical_grid();
  const auto h = default_hyperparams(40);
  const auto a = train(g, mechanism_config(Mechanism::L1), Preference::South, h, 3);
  const auto b = train(g, mechanism_config(Mechanism::L1), Preference::South, h, 3);
  const auto c = train(g, mechanism_config(Mechanism::L1), Preference::South, h, 4);
  const auto d = train(g, mechanism_config(Mechanism::L3), Preference::South, h, 3);
  EXPECT_EQ(trace_digest(a.episodes).size(), 64u);
  EXPECT_EQ(trace_digest(a.episodes), trace_digest(b.episodes));
  EXPECT_NE(trace_digest(a.episodes), trace_digest(c.episodes));
  EXPECT_EQ(trace_digest(a.episodes), trace_digest(d.episodes));
  EXPECT_EQ(trace_digest(a.episodes[0]), trace_digest(d.episodes[0]));
}

TEST(TraceDigest, KnownSha256Vector) {
  EXPECT_EQ(sha256_hex("abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(TraceFormat, OneJsonObjectPerStep) {
  const GridConfig g = canonical_grid();
  const auto run = train(g, mechanism_config(Mechanism::L3), Preference::North, default_hyperparams(3), 0);
  std::ostringstream out;
  write_trace(out, run.episodes);
  std::istringstream in(out.str());
  std::size_t n = 0;
  for (std::string line; std::getline(in, line); ++n) {
    const auto j = nlohmann::ordered_json::parse(line);
    EXPECT_EQ(j.begin().key(), "episode");
    EXPECT_TRUE(j.contains("state"));
    EXPECT_TRUE(j.contains("executed"));
    EXPECT_TRUE(j.contains("reward"));
  }
  std::size_t steps = 0;
  for (const auto& ep : run.episodes) steps += ep.steps.size();
  EXPECT_EQ(n, steps);

  std::ostringstream log;
  write_explain_log(log, run.episodes);
  EXPECT_EQ(log.str().rfind("0:", 0), 0u);
}

}  // namespace
}  // namespace prefshield
