#pragma once

// Interacted-item inference attacks against the sequence service, and their
// multiset F1 scoring.
//
// SIA: the service sees only the perturbed sequence and guesses, per
// position, the catalog item whose embedding is most similar to the observed
// one. SIAUI additionally learns (from the uploaded model update) which
// embedding rows the client touched, restricts guesses to that pool and
// removes each guess once made.

#include <algorithm>
#include <cstdio>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "fellas/fedsim.hpp"
#include "fellas/privacy.hpp"

namespace fellas {

inline std::vector<ItemId> sia_infer(const std::vector<ItemId>& observed,
                                     const CosineSearcher& index) {
  std::vector<ItemId> out;
  out.reserve(observed.size());
  for (ItemId v : observed) {
    if (v < 0 || v >= index.matrix().rows)
      throw std::out_of_range("sia_infer: observed item outside catalog");
    out.push_back(index.nearest(index.matrix().row(v)));
  }
  return out;
}

// Items whose per-item parameter rows moved between the global snapshot and
// the uploaded model: the id-embedding row always, plus the output-head row
// for the gru variant (its scores live in the head, not the embedding table).
inline std::vector<ItemId> trained_items(const ModelParams& updated,
                                         const ModelParams& base,
                                         double tol = 1e-9) {
  if (updated.num_items != base.num_items ||
      updated.cfg.type != base.cfg.type || updated.cfg.dim != base.cfg.dim)
    throw std::invalid_argument("trained_items: model shape mismatch");
  std::vector<ItemId> out;
  for (int v = 0; v < updated.num_items; ++v) {
    double delta = 0.0;
    auto a = updated.id_embeddings.row(v);
    auto b = base.id_embeddings.row(v);
    for (std::size_t i = 0; i < a.size(); ++i)
      delta = std::max(delta, std::abs(a[i] - b[i]));
    if (!updated.head.w.empty()) {
      auto ha = updated.head.w.row(v);
      auto hb = base.head.w.row(v);
      for (std::size_t i = 0; i < ha.size(); ++i)
        delta = std::max(delta, std::abs(ha[i] - hb[i]));
      delta = std::max(delta, std::abs(updated.head.b[v] - base.head.b[v]));
    }
    if (delta > tol) out.push_back(static_cast<ItemId>(v));
  }
  return out;
}

// Greedy per-position argmax over the remaining guess pool; each guess is
// removed. If the pool runs out the rest falls back to full-catalog SIA.
inline std::vector<ItemId> siaui_infer(const std::vector<ItemId>& observed,
                                       const CosineSearcher& index,
                                       const std::vector<ItemId>& guess_pool,
                                       std::size_t* fallback_positions = nullptr) {
  if (guess_pool.empty())
    throw std::invalid_argument("siaui_infer: empty guess pool");
  std::vector<ItemId> pool = guess_pool;
  std::sort(pool.begin(), pool.end());
  std::vector<char> used(pool.size(), 0);
  std::size_t remaining = pool.size();
  std::size_t fallbacks = 0;

  const auto& m = index.matrix();
  std::vector<ItemId> out;
  out.reserve(observed.size());
  for (ItemId obs : observed) {
    if (remaining == 0) {
      out.push_back(index.nearest(m.row(obs)));
      ++fallbacks;
      continue;
    }
    auto q = m.row(obs);
    const double qn = norm2(q);
    if (qn == 0.0) throw std::domain_error("siaui_infer: zero-norm observed embedding");
    int best = -1;
    double best_cos = 0.0;
    for (std::size_t i = 0; i < pool.size(); ++i) {
      if (used[i]) continue;
      const double rn = norm2(m.row(pool[i]));
      if (rn == 0.0) continue;
      const double c = dot(m.row(pool[i]), q) / (rn * qn);
      if (best < 0 || c > best_cos) {
        best = static_cast<int>(i);
        best_cos = c;
      }
    }
    if (best < 0) {  // pool nonempty but all rows zero-norm
      out.push_back(index.nearest(m.row(obs)));
      ++fallbacks;
      continue;
    }
    out.push_back(pool[static_cast<std::size_t>(best)]);
    used[static_cast<std::size_t>(best)] = 1;
    --remaining;
  }
  if (fallback_positions != nullptr) *fallback_positions += fallbacks;
  return out;
}

struct F1Score {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

inline std::size_t multiset_intersection(const std::vector<ItemId>& a,
                                         const std::vector<ItemId>& b) {
  std::map<ItemId, std::size_t> counts;
  for (ItemId v : a) ++counts[v];
  std::size_t m = 0;
  for (ItemId v : b) {
    auto it = counts.find(v);
    if (it != counts.end() && it->second > 0) {
      --it->second;
      ++m;
    }
  }
  return m;
}

inline F1Score f1_from_counts(std::size_t m, std::size_t inferred, std::size_t truth) {
  F1Score s;
  if (inferred == 0 || truth == 0)
    throw std::invalid_argument("attack_f1: empty inferred or truth multiset");
  s.precision = static_cast<double>(m) / static_cast<double>(inferred);
  s.recall = static_cast<double>(m) / static_cast<double>(truth);
  s.f1 = (s.precision + s.recall) > 0.0
             ? 2.0 * s.precision * s.recall / (s.precision + s.recall)
             : 0.0;
  return s;
}

inline F1Score attack_f1(const std::vector<ItemId>& inferred,
                         const std::vector<ItemId>& truth) {
  return f1_from_counts(multiset_intersection(inferred, truth), inferred.size(),
                        truth.size());
}

// Micro average: pooled counts over users.
inline F1Score attack_f1_micro(const std::vector<std::vector<ItemId>>& inferred,
                               const std::vector<std::vector<ItemId>>& truth) {
  if (inferred.size() != truth.size())
    throw std::invalid_argument("attack_f1_micro: user count mismatch");
  std::size_t m = 0, ni = 0, nt = 0;
  for (std::size_t u = 0; u < inferred.size(); ++u) {
    m += multiset_intersection(inferred[u], truth[u]);
    ni += inferred[u].size();
    nt += truth[u].size();
  }
  return f1_from_counts(m, ni, nt);
}

inline F1Score attack_f1_macro(const std::vector<std::vector<ItemId>>& inferred,
                               const std::vector<std::vector<ItemId>>& truth) {
  if (inferred.size() != truth.size() || inferred.empty())
    throw std::invalid_argument("attack_f1_macro: bad input");
  F1Score acc;
  for (std::size_t u = 0; u < inferred.size(); ++u) {
    auto s = attack_f1(inferred[u], truth[u]);
    acc.precision += s.precision;
    acc.recall += s.recall;
    acc.f1 += s.f1;
  }
  const double n = static_cast<double>(inferred.size());
  return {acc.precision / n, acc.recall / n, acc.f1 / n};
}

struct AttackGridConfig {
  std::vector<double> inv_eps_grid{0.1, 0.01, 0.001};
  bool include_random = true;
  double tol = 1e-9;
  bool macro_summary = false;
};

struct AttackRow {
  UserId user = -1;  // -1 = micro/macro summary over all users
  std::string attack;
  std::string setting;  // formatted 1/epsilon, or "random"
  double precision = 0, recall = 0, f1 = 0;
};

struct AttackGridResult {
  std::vector<AttackRow> rows;
  std::size_t siaui_pool_fallbacks = 0;
};

namespace detail {

inline std::string format_setting(double inv_eps) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%g", inv_eps);
  return buf;
}

}  // namespace detail

// Re-simulates the adversary's view for every user: the observed perturbed
// sequence under each privacy setting (plus a uniform random-replacement
// baseline) and one round of local training on top of the given global
// snapshot for the update-information side channel.
inline AttackGridResult run_attack_grid(const Dataset& data, const ModelParams& global,
                                        const EmbeddingMatrix& vllm,
                                        const FedConfig& fed,
                                        const AttackGridConfig& grid) {
  if (vllm.rows != data.num_items())
    throw std::invalid_argument("run_attack_grid: embedding/catalog size mismatch");
  CosineSearcher index(vllm);

  // Local training for the uploaded update. The contrastive term plays no
  // role in which rows move, so it is disabled here.
  FedConfig local = fed;
  local.alpha = 0.0;
  local.mode = global.cfg.service_dim > 0 ? FedMode::fellas_item_only : FedMode::vanilla;
  const EmbeddingMatrix* vllm_for_train =
      global.cfg.service_dim > 0 ? &vllm : nullptr;

  const int n_users = data.num_users();
  std::vector<std::vector<ItemId>> pools(static_cast<std::size_t>(n_users));
  for (int u = 0; u < n_users; ++u) {
    ClientState st;
    st.user = static_cast<UserId>(u);
    auto upd = client_train(global, data, st, local, vllm_for_train, nullptr, nullptr,
                            stream_seed(fed.seed, "attack-round"));
    pools[static_cast<std::size_t>(u)] = trained_items(upd.params, global, grid.tol);
  }

  AttackGridResult result;
  std::vector<std::string> settings;
  for (double ie : grid.inv_eps_grid) settings.push_back(detail::format_setting(ie));
  if (grid.include_random) settings.push_back("random");

  for (std::size_t si = 0; si < settings.size(); ++si) {
    const bool random_setting = settings[si] == "random";
    std::vector<std::vector<ItemId>> truth(static_cast<std::size_t>(n_users));
    std::vector<std::vector<ItemId>> sia_all(static_cast<std::size_t>(n_users));
    std::vector<std::vector<ItemId>> siaui_all(static_cast<std::size_t>(n_users));
    for (int u = 0; u < n_users; ++u) {
      const auto& train = data.users[static_cast<std::size_t>(u)].train;
      truth[static_cast<std::size_t>(u)] = train.items;
      std::vector<ItemId> observed;
      if (random_setting) {
        Rng rng(stream_seed(fed.seed, "attack-random", static_cast<std::uint64_t>(u)));
        observed.resize(train.items.size());
        for (auto& v : observed)
          v = static_cast<ItemId>(rng.below(static_cast<std::uint64_t>(data.num_items())));
      } else {
        Rng rng(stream_seed(fed.seed, "attack-dx", static_cast<std::uint64_t>(u), si));
        observed =
            perturb_sequence(train, index, 1.0 / grid.inv_eps_grid[si], rng).items;
      }
      sia_all[static_cast<std::size_t>(u)] = sia_infer(observed, index);
      siaui_all[static_cast<std::size_t>(u)] =
          siaui_infer(observed, index, pools[static_cast<std::size_t>(u)],
                      &result.siaui_pool_fallbacks);
      auto s1 = attack_f1(sia_all[static_cast<std::size_t>(u)],
                          truth[static_cast<std::size_t>(u)]);
      auto s2 = attack_f1(siaui_all[static_cast<std::size_t>(u)],
                          truth[static_cast<std::size_t>(u)]);
      result.rows.push_back({static_cast<UserId>(u), "sia", settings[si], s1.precision,
                             s1.recall, s1.f1});
      result.rows.push_back({static_cast<UserId>(u), "siaui", settings[si], s2.precision,
                             s2.recall, s2.f1});
    }
    auto sum1 = grid.macro_summary ? attack_f1_macro(sia_all, truth)
                                   : attack_f1_micro(sia_all, truth);
    auto sum2 = grid.macro_summary ? attack_f1_macro(siaui_all, truth)
                                   : attack_f1_micro(siaui_all, truth);
    result.rows.push_back({-1, "sia", settings[si], sum1.precision, sum1.recall, sum1.f1});
    result.rows.push_back(
        {-1, "siaui", settings[si], sum2.precision, sum2.recall, sum2.f1});
  }
  return result;
}

inline std::string attack_report_csv(const std::vector<AttackRow>& rows) {
  std::string out = "user,attack,inv_epsilon,precision,recall,f1\n";
  char buf[256];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%d,%s,%s,%.6f,%.6f,%.6f\n", r.user,
                  r.attack.c_str(), r.setting.c_str(), r.precision, r.recall, r.f1);
    out += buf;
  }
  return out;
}

}  // namespace fellas
