#pragma once

// Sequence perturbation with metric differential privacy. Each item's
// service embedding gets additive noise with density proportional to
// exp(-epsilon * ||z||); the item is then replaced by the catalog entry whose
// embedding is most cosine-similar to the noisy vector.

#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "fellas/domain.hpp"
#include "fellas/embed.hpp"
#include "fellas/matrix.hpp"
#include "fellas/rng.hpp"

namespace fellas {

struct PrivacyParams {
  double epsilon = 100.0;  // configured as 1/epsilon in run configs
  std::uint64_t seed = 0;
};

// z = r * u with u uniform on the unit sphere and r ~ Gamma(N, epsilon):
// exactly the density exp(-epsilon ||z||) up to normalization.
inline Vec sample_noise(int dim, double epsilon, Rng& rng) {
  if (dim < 1) throw std::invalid_argument("sample_noise: dim < 1");
  if (!(epsilon > 0.0)) throw std::invalid_argument("sample_noise: epsilon <= 0");
  Vec z(static_cast<std::size_t>(dim));
  double n = 0.0;
  do {
    rng.fill_normal(z);
    n = norm2(z);
  } while (n == 0.0);
  const double r = rng.gamma_int(dim, epsilon);
  for (auto& x : z) x *= r / n;
  return z;
}

// Precomputes row norms for repeated full-catalog cosine argmax scans.
// Ties break toward the lowest ItemId; zero-norm rows are never selected.
class CosineSearcher {
 public:
  explicit CosineSearcher(const EmbeddingMatrix& m) : m_(&m), norms_(m.rows) {
    for (int i = 0; i < m.rows; ++i) norms_[i] = norm2(m.row(i));
  }

  ItemId nearest(std::span<const double> query) const {
    double qn = norm2(query);
    if (qn == 0.0) throw std::domain_error("CosineSearcher: zero-norm query");
    ItemId best = -1;
    double best_cos = 0.0;
    for (int i = 0; i < m_->rows; ++i) {
      if (norms_[i] == 0.0) continue;
      double c = dot(m_->row(i), query) / (norms_[i] * qn);
      if (best < 0 || c > best_cos) {
        best = static_cast<ItemId>(i);
        best_cos = c;
      }
    }
    if (best < 0) throw std::domain_error("CosineSearcher: all rows zero-norm");
    return best;
  }

  const EmbeddingMatrix& matrix() const { return *m_; }

 private:
  const EmbeddingMatrix* m_;
  Vec norms_;
};

inline ItemId replace_nearest(const CosineSearcher& index, ItemId item,
                              std::span<const double> noise) {
  const auto& m = index.matrix();
  if (item < 0 || item >= m.rows)
    throw std::out_of_range("replace_nearest: item outside catalog");
  Vec q(m.row(item).begin(), m.row(item).end());
  axpy(1.0, noise, q);
  return index.nearest(q);
}

inline ItemId perturb_item(ItemId item, const CosineSearcher& index,
                           double epsilon, Rng& rng) {
  const int dim = index.matrix().cols;
  Vec z = sample_noise(dim, epsilon, rng);
  Vec q(index.matrix().row(item).begin(), index.matrix().row(item).end());
  axpy(1.0, z, q);
  if (norm2(q) == 0.0) {
    // perturbed vector cancelled exactly; one resample, then give up
    z = sample_noise(dim, epsilon, rng);
    q.assign(index.matrix().row(item).begin(), index.matrix().row(item).end());
    axpy(1.0, z, q);
    if (norm2(q) == 0.0)
      throw std::domain_error("perturb_item: zero-norm perturbed vector twice");
  }
  return index.nearest(q);
}

struct PerturbedSequence {
  UserId user = 0;
  std::vector<ItemId> items;
};

// Independent fresh noise per position; order and length preserved.
inline PerturbedSequence perturb_sequence(const InteractionSequence& seq,
                                          const CosineSearcher& index,
                                          double epsilon, Rng& rng) {
  if (seq.items.empty())
    throw std::invalid_argument("perturb_sequence: empty sequence");
  PerturbedSequence out;
  out.user = seq.user;
  out.items.reserve(seq.items.size());
  for (ItemId v : seq.items)
    out.items.push_back(perturb_item(v, index, epsilon, rng));
  return out;
}

inline PerturbedSequence perturb_sequence(const InteractionSequence& seq,
                                          const EmbeddingMatrix& vllm,
                                          const PrivacyParams& params) {
  CosineSearcher index(vllm);
  Rng rng(params.seed);
  return perturb_sequence(seq, index, params.epsilon, rng);
}

}  // namespace fellas
