#include <gtest/gtest.h>

#include <cmath>

#include "fellas/adam.hpp"
#include "fellas/loss.hpp"
#include "testutil.hpp"

using namespace fellas;

namespace {

struct Case {
  ModelParams params;
  EmbeddingMatrix vllm;
  std::vector<ItemId> seq;
  StepTargets targets;
  Vec s_pos;
  std::vector<Vec> s_negs;
};

Case make_case(ModelType type, int num_items, int seq_len, std::uint64_t seed,
               int service_dim = 6, int dim = 8, int depth = 1) {
  Case c;
  ModelConfig cfg;
  cfg.type = type;
  cfg.dim = dim;
  cfg.depth = depth;
  cfg.service_dim = service_dim;
  c.params = init_params(cfg, num_items, seed);
  Rng rng(stream_seed(seed, "case"));
  if (service_dim > 0) {
    c.vllm = EmbeddingMatrix(num_items, service_dim);
    for (auto& x : c.vllm.a) x = rng.normal();
  }
  for (int t = 0; t < seq_len; ++t)
    c.seq.push_back(static_cast<ItemId>(rng.below(static_cast<std::uint64_t>(num_items))));
  c.targets = next_item_targets(c.seq);
  for (auto& negs : c.targets.negatives)
    negs.push_back(static_cast<ItemId>(rng.below(static_cast<std::uint64_t>(num_items))));
  if (service_dim > 0) {
    c.s_pos.resize(static_cast<std::size_t>(service_dim));
    rng.fill_normal(c.s_pos);
    c.s_negs.emplace_back(static_cast<std::size_t>(service_dim));
    rng.fill_normal(c.s_negs.back());
  }
  return c;
}

const EmbeddingMatrix* vllm_of(const Case& c) {
  return c.params.cfg.service_dim > 0 ? &c.vllm : nullptr;
}

}  // namespace

TEST(RecLoss, ZeroScoresGiveTwoLogTwoPerStep) {
  auto p = make_zero_params({ModelType::gru, 4, 1, 50, 0}, 10);
  std::vector<ItemId> seq = {0, 1, 2, 3};
  auto tg = next_item_targets(seq);
  for (auto& n : tg.negatives) n.push_back(9);
  auto out = rec_loss(p, nullptr, seq, tg);
  EXPECT_NEAR(out.rec, 3.0 * 2.0 * std::log(2.0), 1e-12);
  EXPECT_DOUBLE_EQ(out.total, out.rec);
}

TEST(RecLoss, SaturatedScoresGiveZeroLoss) {
  auto p = make_zero_params({ModelType::gru, 4, 1, 50, 0}, 10);
  std::vector<ItemId> seq = {0, 1};
  auto tg = next_item_targets(seq);
  tg.negatives[0].push_back(9);
  p.head.b[1] = 50.0;   // positive score -> +inf direction
  p.head.b[9] = -50.0;  // negative score -> -inf direction
  auto out = rec_loss(p, nullptr, seq, tg);
  EXPECT_LT(out.rec, 1e-20);
}

TEST(RecLoss, TargetShapeValidated) {
  auto p = init_params({ModelType::gru, 4, 1, 50, 0}, 10, 3);
  std::vector<ItemId> seq = {0, 1, 2};
  StepTargets tg;
  tg.positives = {1};  // wrong: needs T-1 = 2 entries
  tg.negatives = {{5}};
  EXPECT_THROW(rec_loss(p, nullptr, seq, tg), std::invalid_argument);
}

TEST(Contrastive, AlignedPositiveOrthogonalNegative) {
  // psi = identity, s_pos = s_u, s_neg orthogonal to s_u:
  // loss = -log(e / (e + 1))
  ModelConfig cfg{ModelType::gru, 4, 1, 50, 4};
  auto p = init_params(cfg, 8, 11);
  p.psi.w.zero();
  for (int i = 0; i < 4; ++i) p.psi.w(i, i) = 1.0;
  std::fill(p.psi.b.begin(), p.psi.b.end(), 0.0);
  EmbeddingMatrix vllm(8, 4);
  Rng rng(12);
  for (auto& x : vllm.a) x = rng.normal();

  std::vector<ItemId> seq = {0, 3, 5};
  auto eff = fuse_embeddings(p, &vllm);
  auto fc = forward(p, eff, seq);
  Vec s_u(fc.latents().row(2).begin(), fc.latents().row(2).end());
  ASSERT_GT(norm2(s_u), 0.0);

  Vec ortho(4);
  rng.fill_normal(ortho);
  const double proj = dot(ortho, s_u) / dot(s_u, s_u);
  for (std::size_t i = 0; i < 4; ++i) ortho[i] -= proj * s_u[i];
  ASSERT_GT(norm2(ortho), 1e-9);

  auto out = contrastive_loss(p, &vllm, seq, s_u, {ortho});
  const double want = -std::log(std::exp(1.0) / (std::exp(1.0) + 1.0));
  EXPECT_NEAR(out.cl, want, 1e-9);
}

TEST(Contrastive, IdenticalPositiveAndNegativeGiveLogTwo) {
  ModelConfig cfg{ModelType::sasrec, 4, 1, 50, 5};
  auto p = init_params(cfg, 8, 13);
  EmbeddingMatrix vllm(8, 5);
  Rng rng(14);
  for (auto& x : vllm.a) x = rng.normal();
  std::vector<ItemId> seq = {1, 2};
  Vec s(5);
  rng.fill_normal(s);
  auto out = contrastive_loss(p, &vllm, seq, s, {s});
  EXPECT_NEAR(out.cl, std::log(2.0), 1e-12);
}

TEST(Contrastive, RequiresNegativeAndProjection) {
  ModelConfig cfg{ModelType::gru, 4, 1, 50, 4};
  auto p = init_params(cfg, 8, 15);
  EmbeddingMatrix vllm(8, 4);
  std::vector<ItemId> seq = {0};
  Vec s(4, 1.0);
  EXPECT_THROW(contrastive_loss(p, &vllm, seq, s, {}), std::invalid_argument);
  Vec wrong_dim(3, 1.0);
  EXPECT_THROW(contrastive_loss(p, &vllm, seq, wrong_dim, {wrong_dim}),
               std::invalid_argument);
}

TEST(TotalLoss, AlphaZeroMatchesRecBitwise) {
  auto c = make_case(ModelType::sasrec, 12, 5, 101);
  auto a = total_loss(c.params, &c.vllm, c.seq, c.targets, 0.0, &c.s_pos, &c.s_negs);
  auto b = rec_loss(c.params, &c.vllm, c.seq, c.targets);
  EXPECT_EQ(a.total, b.total);
  auto ga = collect_arrays(const_cast<const ModelParams&>(a.grads));
  auto gb = collect_arrays(const_cast<const ModelParams&>(b.grads));
  ASSERT_EQ(ga.size(), gb.size());
  for (std::size_t k = 0; k < ga.size(); ++k) EXPECT_EQ(*ga[k], *gb[k]);
}

TEST(TotalLoss, AddsScaledContrastiveTerm) {
  auto c = make_case(ModelType::gru, 12, 4, 103);
  c.s_negs = {c.s_pos};  // forces cl = log 2
  auto out = total_loss(c.params, &c.vllm, c.seq, c.targets, 1.0, &c.s_pos, &c.s_negs);
  auto rec = rec_loss(c.params, &c.vllm, c.seq, c.targets);
  EXPECT_NEAR(out.total, rec.rec + std::log(2.0), 1e-12);
  for (double alpha : {1.0, 0.1, 0.01, 0.001}) {
    auto o = total_loss(c.params, &c.vllm, c.seq, c.targets, alpha, &c.s_pos, &c.s_negs);
    EXPECT_NEAR(o.total, o.rec + alpha * o.cl, 1e-12);
  }
}

// Finite-difference checks. The acceptance suite runs 20 seeds; these cover
// each model/loss combination plus the depth-2 stacks.
namespace {

double fd_check(ModelType type, double alpha, bool with_targets, std::uint64_t seed,
                int depth = 1) {
  auto c = make_case(type, 20, 5, seed, 6, 8, depth);
  if (!with_targets) {
    c.targets.positives.clear();
    c.targets.negatives.clear();
  }
  const Vec* sp = alpha > 0 ? &c.s_pos : nullptr;
  const std::vector<Vec>* sn = alpha > 0 ? &c.s_negs : nullptr;
  auto analytic = total_loss(c.params, vllm_of(c), c.seq, c.targets, alpha, sp, sn);
  auto res = testutil::check_gradients(
      c.params, analytic.grads,
      [&](const ModelParams& p) {
        return total_loss(p, vllm_of(c), c.seq, c.targets, alpha, sp, sn).total;
      });
  EXPECT_LT(res.max_rel_err, 1e-4)
      << to_string(type) << " alpha=" << alpha << " seed=" << seed << " worst at "
      << res.worst_array << "[" << res.worst_index << "]";
  return res.max_rel_err;
}

}  // namespace

TEST(GradCheck, RecLossGru) {
  for (std::uint64_t s : {1u, 2u, 3u}) fd_check(ModelType::gru, 0.0, true, s);
}

TEST(GradCheck, RecLossSasrec) {
  for (std::uint64_t s : {4u, 5u, 6u}) fd_check(ModelType::sasrec, 0.0, true, s);
}

TEST(GradCheck, ContrastiveOnly) {
  fd_check(ModelType::gru, 1.0, false, 7);
  fd_check(ModelType::sasrec, 1.0, false, 8);
}

TEST(GradCheck, TotalLoss) {
  fd_check(ModelType::gru, 0.7, true, 9);
  fd_check(ModelType::sasrec, 0.7, true, 10);
}

TEST(GradCheck, DepthTwo) {
  fd_check(ModelType::gru, 0.5, true, 11, 2);
  fd_check(ModelType::sasrec, 0.5, true, 12, 2);
}

TEST(GradSparsity, GruRowsSplitBetweenTableAndHead) {
  auto c = make_case(ModelType::gru, 15, 4, 201, 0);
  auto out = rec_loss(c.params, nullptr, c.seq, c.targets);
  // the final input position feeds no recommendation step, so only the
  // first T-1 positions reach the id table; the last item is still covered
  // as a positive through the head
  std::set<ItemId> inputs(c.seq.begin(), c.seq.end() - 1);
  std::set<ItemId> scored;
  for (std::size_t t = 0; t < c.targets.positives.size(); ++t) {
    scored.insert(c.targets.positives[t]);
    for (ItemId n : c.targets.negatives[t]) scored.insert(n);
  }
  for (int v = 0; v < 15; ++v) {
    bool id_nonzero = false, head_nonzero = false;
    for (double x : out.grads.id_embeddings.row(v)) id_nonzero |= x != 0.0;
    for (double x : out.grads.head.w.row(v)) head_nonzero |= x != 0.0;
    head_nonzero |= out.grads.head.b[static_cast<std::size_t>(v)] != 0.0;
    EXPECT_EQ(id_nonzero, inputs.count(static_cast<ItemId>(v)) > 0) << v;
    EXPECT_EQ(head_nonzero, scored.count(static_cast<ItemId>(v)) > 0) << v;
  }
}

TEST(GradSparsity, SasrecRowsAreInputsPositivesNegatives) {
  auto c = make_case(ModelType::sasrec, 15, 4, 202, 0);
  auto out = rec_loss(c.params, nullptr, c.seq, c.targets);
  std::set<ItemId> want(c.seq.begin(), c.seq.end());
  for (std::size_t t = 0; t < c.targets.positives.size(); ++t) {
    want.insert(c.targets.positives[t]);
    for (ItemId n : c.targets.negatives[t]) want.insert(n);
  }
  for (int v = 0; v < 15; ++v) {
    bool nonzero = false;
    for (double x : out.grads.id_embeddings.row(v)) nonzero |= x != 0.0;
    EXPECT_EQ(nonzero, want.count(static_cast<ItemId>(v)) > 0) << v;
  }
}

TEST(Adam, ZeroGradientLeavesParamsUntouched) {
  auto p = init_params({ModelType::gru, 4, 1, 50, 0}, 6, 31);
  auto before = p;
  auto st = make_adam(p);
  adam_step(p, zero_like(p), st);
  auto pa = collect_arrays(const_cast<const ModelParams&>(p));
  auto pb = collect_arrays(const_cast<const ModelParams&>(before));
  for (std::size_t k = 0; k < pa.size(); ++k) EXPECT_EQ(*pa[k], *pb[k]);
}

TEST(Adam, FirstStepMovesByAboutLr) {
  auto p = make_zero_params({ModelType::gru, 2, 1, 50, 0}, 2);
  auto g = zero_like(p);
  g.id_embeddings(0, 0) = 1.0;
  auto st = make_adam(p, {0.001});
  adam_step(p, g, st);
  EXPECT_NEAR(p.id_embeddings(0, 0), -0.001, 1e-8);
  EXPECT_DOUBLE_EQ(p.id_embeddings(1, 1), 0.0);
}

TEST(Adam, TwoConstantStepsMatchHandTrace) {
  auto p = make_zero_params({ModelType::gru, 2, 1, 50, 0}, 2);
  auto g = zero_like(p);
  const double grad = 2.5;
  g.id_embeddings(0, 0) = grad;
  AdamConfig cfg{0.01, 0.9, 0.999, 1e-8};
  auto st = make_adam(p, cfg);

  double m = 0, v = 0, x = 0;
  for (int t = 1; t <= 2; ++t) {
    m = cfg.beta1 * m + (1 - cfg.beta1) * grad;
    v = cfg.beta2 * v + (1 - cfg.beta2) * grad * grad;
    double mh = m / (1 - std::pow(cfg.beta1, t));
    double vh = v / (1 - std::pow(cfg.beta2, t));
    x -= cfg.lr * mh / (std::sqrt(vh) + cfg.eps);
    adam_step(p, g, st);
    EXPECT_DOUBLE_EQ(p.id_embeddings(0, 0), x) << "step " << t;
  }
}

TEST(Adam, NonFiniteGradientIsFatal) {
  auto p = make_zero_params({ModelType::gru, 2, 1, 50, 0}, 2);
  auto g = zero_like(p);
  g.id_embeddings(0, 0) = std::numeric_limits<double>::quiet_NaN();
  auto st = make_adam(p);
  EXPECT_THROW(adam_step(p, g, st), std::runtime_error);
}
