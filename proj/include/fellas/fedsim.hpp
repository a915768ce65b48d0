#pragma once

// Federated orchestration: client scheduling, local training, unweighted
// aggregation, the two service-enhanced modes, plus the centralized and
// zero-shot reference baselines.
//
// Determinism contract: (seed, config, dataset) fixes every artifact of a
// run. All randomness flows through named streams derived with stream_seed,
// and aggregation always sums in ascending UserId order.

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <iostream>
#include <memory>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "fellas/adam.hpp"
#include "fellas/domain.hpp"
#include "fellas/embed.hpp"
#include "fellas/loss.hpp"
#include "fellas/metrics.hpp"
#include "fellas/model.hpp"
#include "fellas/privacy.hpp"

namespace fellas {

enum class FedMode { vanilla, fellas, fellas_item_only };

inline std::string to_string(FedMode m) {
  switch (m) {
    case FedMode::vanilla: return "vanilla";
    case FedMode::fellas: return "fellas";
    case FedMode::fellas_item_only: return "fellas_item_only";
  }
  return "?";
}

struct FedConfig {
  int rounds = 20;            // global rounds; one round traverses all clients
  int clients_per_step = 256; // contiguous block size per aggregation step
  int local_epochs = 5;
  double lr = 0.001;
  int neg_ratio = 1;
  double alpha = 0.1;
  double inv_epsilon = 0.01;
  FedMode mode = FedMode::vanilla;
  bool freeze_adapter = false;  // pin phi at zero (ablation/equivalence runs)
  std::uint64_t seed = 42;

  void validate() const {
    if (rounds < 0) throw std::invalid_argument("fed config: rounds < 0");
    if (clients_per_step < 1)
      throw std::invalid_argument("fed config: clients_per_step < 1");
    if (local_epochs < 1) throw std::invalid_argument("fed config: local_epochs < 1");
    if (!(lr > 0.0)) throw std::invalid_argument("fed config: lr <= 0");
    if (neg_ratio < 1) throw std::invalid_argument("fed config: neg_ratio < 1");
    if (alpha < 0.0) throw std::invalid_argument("fed config: alpha < 0");
    if (!(inv_epsilon > 0.0)) throw std::invalid_argument("fed config: inv_epsilon <= 0");
  }
};

struct RoundPlan {
  int round = 0;  // running aggregation-step index
  std::vector<UserId> participants;
};

// One full shuffle of the client queue, traversed in contiguous blocks; the
// final block may be smaller.
inline std::vector<RoundPlan> schedule_epoch(int num_users, int clients_per_step,
                                             Rng& rng, int first_round = 0) {
  if (clients_per_step < 1)
    throw std::invalid_argument("schedule_epoch: clients_per_step < 1");
  std::vector<UserId> queue(num_users);
  std::iota(queue.begin(), queue.end(), 0);
  rng.shuffle(queue);
  std::vector<RoundPlan> plans;
  for (int off = 0; off < num_users; off += clients_per_step) {
    RoundPlan p;
    p.round = first_round + static_cast<int>(plans.size());
    const int end = std::min(num_users, off + clients_per_step);
    p.participants.assign(queue.begin() + off, queue.begin() + end);
    plans.push_back(std::move(p));
  }
  return plans;
}

// Per-client cache. The sequence service is queried at most once per run
// (one perturbed + one random sequence), so the privacy budget is spent
// exactly once and no composition accounting is needed.
struct ClientState {
  UserId user = 0;
  bool service_cached = false;
  bool alpha_disabled = false;  // provider failed; train with alpha = 0
  PerturbedSequence perturbed;
  Vec s_pos;
  std::vector<Vec> s_rd;
};

inline std::vector<std::string> titles_of(const Catalog& catalog,
                                          const std::vector<ItemId>& items) {
  std::vector<std::string> out;
  out.reserve(items.size());
  for (ItemId v : items) out.push_back(catalog.titles.at(static_cast<std::size_t>(v)));
  return out;
}

inline void ensure_sequence_service(ClientState& st, const Dataset& data,
                                    const CosineSearcher& index,
                                    EmbeddingProvider& provider,
                                    const FedConfig& cfg) {
  if (st.service_cached || st.alpha_disabled) return;
  const auto& train = data.users[static_cast<std::size_t>(st.user)].train;

  Rng rng_priv(stream_seed(cfg.seed, "priv", static_cast<std::uint64_t>(st.user)));
  st.perturbed = perturb_sequence(train, index, 1.0 / cfg.inv_epsilon, rng_priv);

  Rng rng_rd(stream_seed(cfg.seed, "rdseq", static_cast<std::uint64_t>(st.user)));
  std::vector<ItemId> random_seq(train.items.size());
  for (auto& v : random_seq)
    v = static_cast<ItemId>(rng_rd.below(static_cast<std::uint64_t>(data.num_items())));

  try {
    st.s_pos = embed_sequence(titles_of(data.catalog, st.perturbed.items), provider).vector;
    st.s_rd.clear();
    st.s_rd.push_back(
        embed_sequence(titles_of(data.catalog, random_seq), provider).vector);
    st.service_cached = true;
  } catch (const ProviderError& e) {
    st.alpha_disabled = true;
    std::cerr << "warning: sequence service unavailable for user " << st.user
              << ", continuing with alpha=0 (" << e.what() << ")\n";
  }
}

inline std::vector<char> user_item_mask(const Dataset& data, UserId u) {
  std::vector<char> mask(static_cast<std::size_t>(data.num_items()), 0);
  const auto& us = data.users[static_cast<std::size_t>(u)];
  for (ItemId v : us.train.items) mask[static_cast<std::size_t>(v)] = 1;
  mask[static_cast<std::size_t>(us.valid_target)] = 1;
  mask[static_cast<std::size_t>(us.test_target)] = 1;
  return mask;
}

// Uniform negatives outside the user's full sequence, by rejection.
inline std::vector<ItemId> sample_negatives(const std::vector<char>& user_mask,
                                            int count, Rng& rng) {
  const auto n = static_cast<std::uint64_t>(user_mask.size());
  std::size_t interacted = 0;
  for (char c : user_mask) interacted += static_cast<std::size_t>(c);
  if (interacted >= user_mask.size())
    throw std::runtime_error("sample_negatives: user interacted with every item");
  std::vector<ItemId> out;
  out.reserve(static_cast<std::size_t>(count));
  while (static_cast<int>(out.size()) < count) {
    auto v = static_cast<ItemId>(rng.below(n));
    if (!user_mask[static_cast<std::size_t>(v)]) out.push_back(v);
  }
  return out;
}

struct ClientUpdate {
  UserId user = 0;
  ModelParams params;
  double mean_loss = 0.0;
  std::vector<ItemId> negatives_drawn;  // union over local epochs, in draw order
};

// Five (by default) local epochs of L_rec + alpha * L_cl from the global
// snapshot, with a fresh optimizer. Negatives are resampled every epoch from
// a per-(user, round) stream.
inline ClientUpdate client_train(const ModelParams& global, const Dataset& data,
                                 ClientState& st, const FedConfig& cfg,
                                 const EmbeddingMatrix* vllm,
                                 const CosineSearcher* index,
                                 EmbeddingProvider* seq_provider,
                                 std::uint64_t round_ordinal) {
  cfg.validate();
  const auto& train = data.users[static_cast<std::size_t>(st.user)].train;

  const bool wants_cl = cfg.mode == FedMode::fellas && cfg.alpha > 0.0;
  if (wants_cl && seq_provider != nullptr && index != nullptr)
    ensure_sequence_service(st, data, *index, *seq_provider, cfg);
  const bool use_cl = wants_cl && st.service_cached && !st.alpha_disabled;

  ClientUpdate out;
  out.user = st.user;
  out.params = global;

  const auto mask = user_item_mask(data, st.user);
  Rng rng_neg(stream_seed(cfg.seed, "neg", static_cast<std::uint64_t>(st.user),
                          round_ordinal));
  AdamState adam = make_adam(out.params, {cfg.lr});
  double loss_sum = 0.0;
  for (int epoch = 0; epoch < cfg.local_epochs; ++epoch) {
    StepTargets tg = next_item_targets(train.items);
    for (auto& negs : tg.negatives) {
      negs = sample_negatives(mask, cfg.neg_ratio, rng_neg);
      out.negatives_drawn.insert(out.negatives_drawn.end(), negs.begin(), negs.end());
    }
    auto lo = total_loss(out.params, vllm, train.items, tg,
                         use_cl ? cfg.alpha : 0.0, use_cl ? &st.s_pos : nullptr,
                         use_cl ? &st.s_rd : nullptr);
    if (cfg.freeze_adapter && !out.params.phi.w.empty()) {
      lo.grads.phi.w.zero();
      std::fill(lo.grads.phi.b.begin(), lo.grads.phi.b.end(), 0.0);
    }
    adam_step(out.params, lo.grads, adam);
    loss_sum += lo.total;
  }
  out.mean_loss = loss_sum / cfg.local_epochs;
  return out;
}

// Element-wise unweighted mean as a Welford running mean in the given order
// (run_federated sorts updates by UserId first). The incremental form makes
// the identity cases exact: identical participants leave the mean untouched
// because every increment (x - m)/k is exactly zero.
inline ModelParams aggregate(const std::vector<const ModelParams*>& participants) {
  if (participants.empty()) throw std::invalid_argument("aggregate: empty list");
  ModelParams out = *participants.front();
  auto dst = collect_arrays(out);
  for (std::size_t n = 1; n < participants.size(); ++n) {
    auto src = collect_arrays(*participants[n]);
    if (src.size() != dst.size())
      throw std::invalid_argument("aggregate: parameter shape mismatch");
    const double inv = 1.0 / static_cast<double>(n + 1);
    for (std::size_t k = 0; k < dst.size(); ++k) {
      if (src[k]->size() != dst[k]->size())
        throw std::invalid_argument("aggregate: array size mismatch");
      for (std::size_t i = 0; i < dst[k]->size(); ++i)
        (*dst[k])[i] += ((*src[k])[i] - (*dst[k])[i]) * inv;
    }
  }
  return out;
}

inline ModelParams aggregate(const std::vector<ModelParams>& participants) {
  std::vector<const ModelParams*> ptrs;
  ptrs.reserve(participants.size());
  for (const auto& p : participants) ptrs.push_back(&p);
  return aggregate(ptrs);
}

enum class EvalSplit { valid, test };

// Full-catalog ranking of the held-out target; the user's other interacted
// items are excluded from the candidate set.
inline EvalResult evaluate_split(const ModelParams& p, const Dataset& data,
                                 const EmbeddingMatrix* vllm, EvalSplit split) {
  const Matrix eff = fuse_embeddings(p, vllm);
  std::vector<int> ranks;
  ranks.reserve(data.users.size());
  for (const auto& us : data.users) {
    std::vector<ItemId> seq = us.train.items;
    if (split == EvalSplit::test) seq.push_back(us.valid_target);
    const ItemId target = split == EvalSplit::valid ? us.valid_target : us.test_target;
    const ItemId other = split == EvalSplit::valid ? us.test_target : us.valid_target;
    auto fc = forward(p, eff, seq);
    auto scores = score_all(p, eff, fc, fc.length() - 1);
    std::vector<char> excl(static_cast<std::size_t>(data.num_items()), 0);
    for (ItemId v : us.train.items) excl[static_cast<std::size_t>(v)] = 1;
    excl[static_cast<std::size_t>(other)] = 1;
    if (split == EvalSplit::test) excl[static_cast<std::size_t>(us.valid_target)] = 1;
    excl[static_cast<std::size_t>(target)] = 0;
    ranks.push_back(rank_target(scores, target, excl));
  }
  return eval_from_ranks(ranks);
}

struct MetricsRow {
  int round = 0;
  std::string mode;
  std::string model;
  double hr10 = 0, ndcg10 = 0, hr20 = 0, ndcg20 = 0, loss = 0;
};

inline std::string metrics_csv(const std::vector<MetricsRow>& rows) {
  std::string out = "round,mode,model,hr10,ndcg10,hr20,ndcg20,loss\n";
  char buf[256];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%d,%s,%s,%.6f,%.6f,%.6f,%.6f,%.6f\n", r.round,
                  r.mode.c_str(), r.model.c_str(), r.hr10, r.ndcg10, r.hr20, r.ndcg20,
                  r.loss);
    out += buf;
  }
  return out;
}

struct RunResult {
  ModelParams params;  // best-validation checkpoint
  std::vector<MetricsRow> log;
  double best_valid_hr10 = -1.0;
};

// Alg-1/Alg-2 style main loop. Per global round: shuffle the client queue,
// walk it in blocks, train every block from the current snapshot, aggregate.
inline RunResult run_federated(const Dataset& data, const FedConfig& cfg,
                               ModelConfig model_cfg,
                               EmbeddingProvider* provider = nullptr,
                               const std::string& item_cache = "",
                               const EmbeddingMatrix* vllm_pre = nullptr) {
  cfg.validate();
  if (data.num_users() == 0) throw std::invalid_argument("run_federated: no users");

  std::optional<EmbeddingMatrix> vllm;
  std::optional<CosineSearcher> index;
  if (cfg.mode != FedMode::vanilla) {
    if (vllm_pre != nullptr) {
      vllm = *vllm_pre;
    } else {
      if (provider == nullptr)
        throw std::invalid_argument("run_federated: service modes need a provider");
      vllm = embed_items(data.catalog, *provider, item_cache);
    }
    model_cfg.service_dim = vllm->cols;
    if (cfg.mode == FedMode::fellas) index.emplace(*vllm);
  } else {
    model_cfg.service_dim = 0;
  }

  ModelParams params = init_params(model_cfg, data.num_items(), cfg.seed);
  if (cfg.freeze_adapter && !params.phi.w.empty()) {
    params.phi.w.zero();
    std::fill(params.phi.b.begin(), params.phi.b.end(), 0.0);
  }

  std::vector<ClientState> clients(data.users.size());
  for (std::size_t u = 0; u < clients.size(); ++u)
    clients[u].user = static_cast<UserId>(u);

  RunResult result;
  result.params = params;

  const EmbeddingMatrix* vllm_ptr = vllm ? &*vllm : nullptr;
  const CosineSearcher* index_ptr = index ? &*index : nullptr;

  int round_ordinal = 0;
  for (int round = 0; round < cfg.rounds; ++round) {
    Rng rng_sched(stream_seed(cfg.seed, "sched", static_cast<std::uint64_t>(round)));
    auto plans = schedule_epoch(data.num_users(), cfg.clients_per_step, rng_sched,
                                round_ordinal);
    double loss_sum = 0.0;
    int loss_count = 0;
    for (const auto& plan : plans) {
      std::vector<ClientUpdate> updates;
      updates.reserve(plan.participants.size());
      for (UserId u : plan.participants) {
        updates.push_back(client_train(params, data, clients[static_cast<std::size_t>(u)],
                                       cfg, vllm_ptr, index_ptr, provider,
                                       static_cast<std::uint64_t>(plan.round)));
        loss_sum += updates.back().mean_loss;
        ++loss_count;
      }
      std::sort(updates.begin(), updates.end(),
                [](const ClientUpdate& a, const ClientUpdate& b) { return a.user < b.user; });
      std::vector<const ModelParams*> ptrs;
      ptrs.reserve(updates.size());
      for (const auto& u : updates) ptrs.push_back(&u.params);
      params = aggregate(ptrs);
      ++round_ordinal;
    }

    auto ev = evaluate_split(params, data, vllm_ptr, EvalSplit::valid);
    MetricsRow row{round, to_string(cfg.mode), to_string(model_cfg.type),
                   ev.hr10, ev.ndcg10, ev.hr20, ev.ndcg20,
                   loss_count > 0 ? loss_sum / loss_count : 0.0};
    result.log.push_back(row);
    if (ev.hr10 > result.best_valid_hr10) {
      result.best_valid_hr10 = ev.hr10;
      result.params = params;
    }
  }
  return result;
}

struct CentralConfig {
  int epochs = 20;
  int batch_size = 256;
  double lr = 0.001;
  int neg_ratio = 1;
  std::uint64_t seed = 42;
};

// Reference upper baseline: same model and loss, trained on the pooled
// corpus with mini-batches and one persistent optimizer.
inline RunResult run_centralized(const Dataset& data, const CentralConfig& cfg,
                                 ModelConfig model_cfg) {
  if (cfg.epochs < 0 || cfg.batch_size < 1 || !(cfg.lr > 0) || cfg.neg_ratio < 1)
    throw std::invalid_argument("central config: bad values");
  model_cfg.service_dim = 0;
  ModelParams params = init_params(model_cfg, data.num_items(), cfg.seed);
  AdamState adam = make_adam(params, {cfg.lr});

  RunResult result;
  result.params = params;

  std::vector<UserId> order(data.users.size());
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng rng_shuffle(stream_seed(cfg.seed, "central-shuffle",
                                static_cast<std::uint64_t>(epoch)));
    rng_shuffle.shuffle(order);
    double loss_sum = 0.0;
    int loss_count = 0;
    for (std::size_t off = 0; off < order.size();
         off += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end =
          std::min(order.size(), off + static_cast<std::size_t>(cfg.batch_size));
      ModelParams grad_sum = zero_like(params);
      auto acc = collect_arrays(grad_sum);
      for (std::size_t i = off; i < end; ++i) {
        const UserId u = order[i];
        const auto& train = data.users[static_cast<std::size_t>(u)].train;
        const auto mask = user_item_mask(data, u);
        Rng rng_neg(stream_seed(cfg.seed, "central-neg", static_cast<std::uint64_t>(u),
                                static_cast<std::uint64_t>(epoch)));
        StepTargets tg = next_item_targets(train.items);
        for (auto& negs : tg.negatives) negs = sample_negatives(mask, cfg.neg_ratio, rng_neg);
        auto lo = total_loss(params, nullptr, train.items, tg, 0.0);
        loss_sum += lo.total;
        ++loss_count;
        auto src = collect_arrays(lo.grads);
        for (std::size_t k = 0; k < acc.size(); ++k)
          for (std::size_t j = 0; j < acc[k]->size(); ++j)
            (*acc[k])[j] += (*src[k])[j];
      }
      const double inv = 1.0 / static_cast<double>(end - off);
      for (auto* a : acc)
        for (auto& x : *a) x *= inv;
      adam_step(params, grad_sum, adam);
    }

    auto ev = evaluate_split(params, data, nullptr, EvalSplit::valid);
    result.log.push_back({epoch, "central", to_string(model_cfg.type), ev.hr10,
                          ev.ndcg10, ev.hr20, ev.ndcg20,
                          loss_count > 0 ? loss_sum / loss_count : 0.0});
    if (ev.hr10 > result.best_valid_hr10) {
      result.best_valid_hr10 = ev.hr10;
      result.params = params;
    }
  }
  return result;
}

// Ranks candidates by cosine between their service embedding and the service
// embedding of the user's history text. No training involved.
inline EvalResult zero_shot_rank(const Dataset& data, EmbeddingProvider& provider,
                                 const EmbeddingMatrix& vllm, EvalSplit split) {
  std::vector<int> ranks;
  ranks.reserve(data.users.size());
  Vec norms(static_cast<std::size_t>(vllm.rows));
  for (int i = 0; i < vllm.rows; ++i) norms[static_cast<std::size_t>(i)] = norm2(vllm.row(i));
  for (const auto& us : data.users) {
    std::vector<ItemId> seq = us.train.items;
    if (split == EvalSplit::test) seq.push_back(us.valid_target);
    auto s = embed_sequence(titles_of(data.catalog, seq), provider).vector;
    const double sn = norm2(s);
    if (sn == 0.0) throw std::domain_error("zero_shot_rank: zero-norm sequence embedding");
    Vec scores(static_cast<std::size_t>(vllm.rows), -2.0);
    for (int j = 0; j < vllm.rows; ++j)
      if (norms[static_cast<std::size_t>(j)] > 0.0)
        scores[static_cast<std::size_t>(j)] =
            dot(vllm.row(j), s) / (norms[static_cast<std::size_t>(j)] * sn);
    const ItemId target = split == EvalSplit::valid ? us.valid_target : us.test_target;
    const ItemId other = split == EvalSplit::valid ? us.test_target : us.valid_target;
    std::vector<char> excl(static_cast<std::size_t>(data.num_items()), 0);
    for (ItemId v : us.train.items) excl[static_cast<std::size_t>(v)] = 1;
    excl[static_cast<std::size_t>(other)] = 1;
    if (split == EvalSplit::test) excl[static_cast<std::size_t>(us.valid_target)] = 1;
    excl[static_cast<std::size_t>(target)] = 0;
    ranks.push_back(rank_target(scores, target, excl));
  }
  return eval_from_ranks(ranks);
}

}  // namespace fellas
