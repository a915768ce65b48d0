#include <gtest/gtest.h>

#include <set>

#include "fellas/attacks.hpp"
#include "fellas/ingest.hpp"
#include "testutil.hpp"

using namespace fellas;

namespace {

Dataset grouped_dataset(int users, int items, std::uint64_t seed) {
  SynthConfig cfg;
  cfg.num_users = users;
  cfg.num_items = items;
  cfg.group_size = 10;
  cfg.sharpness = 3.0;
  cfg.seed = seed;
  cfg.min_len = 4;
  cfg.max_len = 10;
  return make_synth_dataset(cfg);
}

EmbeddingMatrix embeddings_for(const Dataset& d, int dim = 32, std::uint64_t seed = 3) {
  StubProvider prov(dim, seed);
  return embed_items(d.catalog, prov);
}

}  // namespace

TEST(Sia, UnperturbedInputIsRecoveredExactly) {
  auto d = grouped_dataset(20, 30, 7);
  auto vllm = embeddings_for(d);
  CosineSearcher index(vllm);
  for (const auto& us : d.users) {
    auto inferred = sia_infer(us.train.items, index);
    EXPECT_EQ(inferred, us.train.items);
    EXPECT_DOUBLE_EQ(attack_f1(inferred, us.train.items).f1, 1.0);
  }
}

TEST(TrainedItems, NoTrainingMeansEmptySet) {
  auto p = init_params({ModelType::gru, 4, 1, 50, 0}, 10, 3);
  EXPECT_TRUE(trained_items(p, p).empty());
}

TEST(TrainedItems, OneLocalPassIsInputsPositivesNegatives) {
  for (auto type : {ModelType::gru, ModelType::sasrec}) {
    Dataset d;
    d.catalog.titles = {"t0 a", "t1 b", "t2 c", "t3 d", "t4 e", "t5 f"};
    UserSplit u;
    u.train.items = {0, 1};  // sequence [a, b]
    u.valid_target = 2;
    u.test_target = 3;
    d.users = {u};

    FedConfig fed;
    fed.local_epochs = 1;
    fed.neg_ratio = 1;
    fed.mode = FedMode::vanilla;
    fed.seed = 13;
    ModelConfig mc;
    mc.type = type;
    mc.dim = 4;
    auto global = init_params(mc, d.num_items(), 1);
    ClientState st;
    st.user = 0;
    auto upd = client_train(global, d, st, fed, nullptr, nullptr, nullptr, 0);
    ASSERT_EQ(upd.negatives_drawn.size(), 1u);

    std::set<ItemId> want = {0, 1, upd.negatives_drawn[0]};
    auto got = trained_items(upd.params, global);
    EXPECT_EQ(std::set<ItemId>(got.begin(), got.end()), want) << to_string(type);
  }
}

TEST(Siaui, SingletonPoolWithTrueItem) {
  EmbeddingMatrix m(5, 8);
  Rng rng(9);
  for (auto& x : m.a) x = rng.normal();
  CosineSearcher index(m);
  auto inferred = siaui_infer({3}, index, {2});
  EXPECT_EQ(inferred, (std::vector<ItemId>{2}));
  EXPECT_DOUBLE_EQ(attack_f1(inferred, {2}).f1, 1.0);
}

TEST(Siaui, PoolExhaustionFallsBackToFullCatalog) {
  EmbeddingMatrix m(6, 8);
  Rng rng(10);
  for (auto& x : m.a) x = rng.normal();
  CosineSearcher index(m);
  std::size_t fallbacks = 0;
  auto inferred = siaui_infer({0, 1, 2, 3}, index, {5}, &fallbacks);
  EXPECT_EQ(inferred.size(), 4u);
  EXPECT_EQ(inferred[0], 5);          // the only pool item
  EXPECT_EQ(fallbacks, 3u);           // remaining positions fall back
  for (std::size_t t = 1; t < 4; ++t)
    EXPECT_EQ(inferred[t], static_cast<ItemId>(t));  // self-similarity argmax
}

TEST(Siaui, GreedyMatchesBruteForceReEvaluation) {
  Rng rng(11);
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 20;
    EmbeddingMatrix m(n, 12);
    for (auto& x : m.a) x = rng.normal();
    CosineSearcher index(m);
    std::vector<ItemId> observed;
    const int len = 1 + static_cast<int>(rng.below(6));
    for (int i = 0; i < len; ++i)
      observed.push_back(static_cast<ItemId>(rng.below(n)));
    std::set<ItemId> pool_set;
    while (pool_set.size() < 8) pool_set.insert(static_cast<ItemId>(rng.below(n)));
    std::vector<ItemId> pool(pool_set.begin(), pool_set.end());

    auto got = siaui_infer(observed, index, pool);

    // independent re-evaluation of the greedy trajectory
    std::set<ItemId> remaining(pool.begin(), pool.end());
    for (std::size_t t = 0; t < observed.size(); ++t) {
      ASSERT_FALSE(remaining.empty());
      ItemId best = -1;
      double best_cos = -2;
      for (ItemId cand : remaining) {
        double c = cosine(m.row(cand), m.row(observed[t]));
        if (c > best_cos) {
          best_cos = c;
          best = cand;
        }
      }
      ASSERT_EQ(got[t], best) << "trial " << trial << " position " << t;
      remaining.erase(best);
    }
  }
}

TEST(AttackF1, MultisetExamples) {
  EXPECT_DOUBLE_EQ(attack_f1({1, 2, 3}, {1, 2, 3}).f1, 1.0);
  EXPECT_DOUBLE_EQ(attack_f1({4, 5, 6}, {1, 2, 3}).f1, 0.0);
  auto s = attack_f1({0, 1, 2}, {0, 0, 1});  // inferred [a,b,c], truth [a,a,b]
  EXPECT_DOUBLE_EQ(s.precision, 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(s.recall, 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(s.f1, 2.0 / 3.0);
}

TEST(AttackF1, PositionPermutationInvariant) {
  Rng rng(13);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<ItemId> a, b;
    for (int i = 0; i < 8; ++i) {
      a.push_back(static_cast<ItemId>(rng.below(5)));
      b.push_back(static_cast<ItemId>(rng.below(5)));
    }
    auto base = attack_f1(a, b);
    auto ap = a;
    auto bp = b;
    rng.shuffle(ap);
    rng.shuffle(bp);
    auto perm = attack_f1(ap, bp);
    EXPECT_DOUBLE_EQ(base.f1, perm.f1);
  }
}

TEST(AttackF1, MicroPoolsCountsAcrossUsers) {
  std::vector<std::vector<ItemId>> inferred = {{1, 2}, {3}};
  std::vector<std::vector<ItemId>> truth = {{1, 9}, {4}};
  auto micro = attack_f1_micro(inferred, truth);
  EXPECT_DOUBLE_EQ(micro.precision, 1.0 / 3.0);
  auto macro = attack_f1_macro(inferred, truth);
  EXPECT_DOUBLE_EQ(macro.f1, 0.25);  // (0.5 + 0) / 2
}

TEST(AttackGrid, RowAndSummaryLayout) {
  auto d = grouped_dataset(12, 30, 17);
  auto vllm = embeddings_for(d);
  FedConfig fed;
  fed.local_epochs = 2;
  fed.seed = 23;
  ModelConfig mc;
  mc.type = ModelType::sasrec;
  mc.dim = 4;
  auto global = init_params(mc, d.num_items(), 2);

  AttackGridConfig grid;
  auto res = run_attack_grid(d, global, vllm, fed, grid);
  // per setting: one sia + one siaui row per user, plus 2 summary rows
  const std::size_t settings = 4;  // three epsilons + random
  EXPECT_EQ(res.rows.size(), settings * (2u * 12u + 2u));
  std::size_t summaries = 0;
  for (const auto& r : res.rows)
    if (r.user == -1) ++summaries;
  EXPECT_EQ(summaries, 8u);  // 2 attacks x 4 settings

  auto csv = attack_report_csv(res.rows);
  EXPECT_EQ(csv.rfind("user,attack,inv_epsilon,", 0), 0u);
  EXPECT_NE(csv.find(",random,"), std::string::npos);
  EXPECT_NE(csv.find(",0.001,"), std::string::npos);
}

TEST(AttackGrid, SiauiBeatsSiaUnderHeavyNoise) {
  auto d = grouped_dataset(40, 40, 19);
  auto vllm = embeddings_for(d, 64);
  FedConfig fed;
  fed.local_epochs = 2;
  fed.seed = 29;
  ModelConfig mc;
  mc.type = ModelType::gru;
  mc.dim = 4;
  auto global = init_params(mc, d.num_items(), 2);

  AttackGridConfig grid;
  grid.inv_eps_grid = {0.1};
  grid.include_random = false;
  auto res = run_attack_grid(d, global, vllm, fed, grid);
  double sia_f1 = -1, siaui_f1 = -1;
  for (const auto& r : res.rows) {
    if (r.user != -1) continue;
    if (r.attack == "sia") sia_f1 = r.f1;
    if (r.attack == "siaui") siaui_f1 = r.f1;
  }
  ASSERT_GE(sia_f1, 0.0);
  EXPECT_GT(siaui_f1, sia_f1);
}
