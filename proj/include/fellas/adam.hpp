#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>

#include "fellas/model.hpp"

namespace fellas {

struct AdamConfig {
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Fresh state has zero moments, so parameters whose gradient stays exactly
// zero never move - the sparsity the update-information attack relies on.
struct AdamState {
  AdamConfig cfg;
  std::int64_t t = 0;
  ModelParams m, v;
};

inline AdamState make_adam(const ModelParams& like, AdamConfig cfg = {}) {
  AdamState s;
  s.cfg = cfg;
  s.m = zero_like(like);
  s.v = zero_like(like);
  return s;
}

inline void adam_step(ModelParams& p, const ModelParams& g, AdamState& s) {
  ++s.t;
  auto ps = collect_arrays(p);
  auto gs = collect_arrays(g);
  auto ms = collect_arrays(s.m);
  auto vs = collect_arrays(s.v);
  if (ps.size() != gs.size() || ps.size() != ms.size())
    throw std::invalid_argument("adam_step: parameter/gradient shape mismatch");
  const double bc1 = 1.0 - std::pow(s.cfg.beta1, static_cast<double>(s.t));
  const double bc2 = 1.0 - std::pow(s.cfg.beta2, static_cast<double>(s.t));
  for (std::size_t k = 0; k < ps.size(); ++k) {
    auto& pa = *ps[k];
    const auto& ga = *gs[k];
    auto& ma = *ms[k];
    auto& va = *vs[k];
    if (pa.size() != ga.size())
      throw std::invalid_argument("adam_step: array size mismatch");
    for (std::size_t i = 0; i < pa.size(); ++i) {
      const double gr = ga[i];
      if (!std::isfinite(gr)) throw std::runtime_error("adam_step: non-finite gradient");
      ma[i] = s.cfg.beta1 * ma[i] + (1.0 - s.cfg.beta1) * gr;
      va[i] = s.cfg.beta2 * va[i] + (1.0 - s.cfg.beta2) * gr * gr;
      pa[i] -= s.cfg.lr * (ma[i] / bc1) / (std::sqrt(va[i] / bc2) + s.cfg.eps);
    }
  }
}

}  // namespace fellas
