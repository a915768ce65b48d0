#pragma once

// Training objectives: sampled binary cross entropy over next-item scores,
// the contrastive alignment against service sequence embeddings, and their
// weighted sum L = L_rec + alpha * L_cl.

#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

#include "fellas/model.hpp"

namespace fellas {

// Per-step supervision for a length-T sequence: positives[t] is the item the
// model should score highly at step t (t = 0..T-2), negatives[t] the sampled
// items it should score low. A length-1 sequence has no recommendation steps.
struct StepTargets {
  std::vector<ItemId> positives;
  std::vector<std::vector<ItemId>> negatives;
};

inline StepTargets next_item_targets(std::span<const ItemId> seq) {
  StepTargets tg;
  for (std::size_t t = 0; t + 1 < seq.size(); ++t) tg.positives.push_back(seq[t + 1]);
  tg.negatives.resize(tg.positives.size());
  return tg;
}

namespace detail {

inline double softplus(double x) {
  // log(1 + e^x) without overflow
  return std::log1p(std::exp(-std::abs(x))) + std::max(x, 0.0);
}

inline void affine_apply(const Affine& a, std::span<const double> x, Vec& y) {
  if (static_cast<int>(x.size()) != a.w.cols)
    throw std::invalid_argument("affine_apply: input dimension mismatch");
  y.assign(a.b.begin(), a.b.end());
  matvec_add(a.w, x, y);
}

// d cos(a,b) contributions given upstream dc.
inline void cosine_backward(double dc, std::span<const double> a,
                            std::span<const double> b, double c, double na,
                            double nb, std::span<double> da, Vec& db) {
  const double inv = 1.0 / (na * nb);
  db.assign(b.size(), 0.0);
  for (std::size_t i = 0; i < a.size(); ++i) {
    da[i] += dc * (b[i] * inv - c * a[i] / (na * na));
    db[i] = dc * (a[i] * inv - c * b[i] / (nb * nb));
  }
}

}  // namespace detail

struct LossOut {
  double rec = 0.0;
  double cl = 0.0;
  double total = 0.0;
  ModelParams grads;
};

// One forward pass serves both terms: scores at steps 0..T-2 drive the
// recommendation loss, the final latent h_{T-1} is the contrastive view s_u.
inline LossOut total_loss(const ModelParams& p, const EmbeddingMatrix* vllm,
                          std::span<const ItemId> seq, const StepTargets& tg,
                          double alpha, const Vec* s_llm_pos = nullptr,
                          const std::vector<Vec>* s_llm_negs = nullptr) {
  if (alpha < 0.0) throw std::invalid_argument("total_loss: alpha < 0");
  const Matrix eff = fuse_embeddings(p, vllm);
  const ForwardCache fc = forward(p, eff, seq);
  const int T = fc.length();

  LossOut out;
  out.grads = zero_like(p);
  std::vector<ScoreGrad> sgs;

  if (!tg.positives.empty()) {
    if (tg.positives.size() != tg.negatives.size() ||
        static_cast<int>(tg.positives.size()) != T - 1)
      throw std::invalid_argument("total_loss: targets must cover steps 0..T-2");
    for (int t = 0; t < T - 1; ++t) {
      const ItemId pos = tg.positives[t];
      const double rp = score_item(p, eff, fc, t, pos);
      out.rec += detail::softplus(-rp);
      sgs.push_back({t, pos, detail::sigmoid(rp) - 1.0});
      for (ItemId neg : tg.negatives[t]) {
        const double rn = score_item(p, eff, fc, t, neg);
        out.rec += detail::softplus(rn);
        sgs.push_back({t, neg, detail::sigmoid(rn)});
      }
    }
  }

  Vec dh_final;
  bool have_dh = false;
  if (alpha > 0.0 && s_llm_pos != nullptr) {
    if (s_llm_negs == nullptr || s_llm_negs->empty())
      throw std::invalid_argument("total_loss: contrastive term needs >= 1 negative");
    if (p.psi.w.empty())
      throw std::invalid_argument("total_loss: model has no psi projection");
    const auto s_u = fc.latents().row(T - 1);
    const double nu = norm2(s_u);
    if (nu == 0.0) throw std::domain_error("contrastive: zero-norm sequence latent");

    Vec pvec;
    detail::affine_apply(p.psi, *s_llm_pos, pvec);
    const double np = norm2(pvec);
    if (np == 0.0) throw std::domain_error("contrastive: zero-norm positive view");
    const double cp = dot(s_u, pvec) / (nu * np);

    std::vector<Vec> nvecs(s_llm_negs->size());
    std::vector<double> cn(s_llm_negs->size()), nn(s_llm_negs->size());
    double zsum = std::exp(cp);
    for (std::size_t j = 0; j < s_llm_negs->size(); ++j) {
      detail::affine_apply(p.psi, (*s_llm_negs)[j], nvecs[j]);
      nn[j] = norm2(nvecs[j]);
      if (nn[j] == 0.0) throw std::domain_error("contrastive: zero-norm negative view");
      cn[j] = dot(s_u, nvecs[j]) / (nu * nn[j]);
      zsum += std::exp(cn[j]);
    }
    out.cl = -cp + std::log(zsum);

    // gradients, scaled by alpha so the combined backward pass runs once
    dh_final.assign(s_u.size(), 0.0);
    Vec dview;
    const double dcp = alpha * (std::exp(cp) / zsum - 1.0);
    detail::cosine_backward(dcp, s_u, pvec, cp, nu, np, dh_final, dview);
    outer_add(out.grads.psi.w, dview, *s_llm_pos);
    axpy(1.0, dview, out.grads.psi.b);
    for (std::size_t j = 0; j < nvecs.size(); ++j) {
      const double dcj = alpha * (std::exp(cn[j]) / zsum);
      detail::cosine_backward(dcj, s_u, nvecs[j], cn[j], nu, nn[j], dh_final, dview);
      outer_add(out.grads.psi.w, dview, (*s_llm_negs)[j]);
      axpy(1.0, dview, out.grads.psi.b);
    }
    have_dh = true;
  }

  out.total = out.rec + alpha * out.cl;
  backward(p, vllm, eff, fc, sgs, have_dh ? &dh_final : nullptr, out.grads);
  return out;
}

inline LossOut rec_loss(const ModelParams& p, const EmbeddingMatrix* vllm,
                        std::span<const ItemId> seq, const StepTargets& tg) {
  return total_loss(p, vllm, seq, tg, 0.0);
}

inline LossOut contrastive_loss(const ModelParams& p, const EmbeddingMatrix* vllm,
                                std::span<const ItemId> seq, const Vec& s_llm_pos,
                                const std::vector<Vec>& s_llm_negs) {
  StepTargets empty;
  return total_loss(p, vllm, seq, empty, 1.0, &s_llm_pos, &s_llm_negs);
}

}  // namespace fellas
