#pragma once

// Lightweight sequential recommenders with hand-written gradients.
//
// Two scorer variants share the fused item embedding and both adapters:
//   gru    - stacked GRU, scores r_{*,t+1} = W_out h_t + b_out
//   sasrec - causal single-head attention block(s), scores h_t . effective[j]
// The asymmetry (separate output head vs. embedding dot product) is kept on
// purpose; it is what makes the trained-row analysis in attacks.hpp differ
// between the variants.
//
// Every backward pass here is checked against central finite differences in
// the test suite; keep forward and backward in lockstep when editing.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "fellas/embed.hpp"
#include "fellas/matrix.hpp"
#include "fellas/rng.hpp"

namespace fellas {

enum class ModelType { gru, sasrec };

inline std::string to_string(ModelType t) {
  return t == ModelType::gru ? "gru" : "sasrec";
}

inline ModelType model_type_from_string(const std::string& s) {
  if (s == "gru") return ModelType::gru;
  if (s == "sasrec") return ModelType::sasrec;
  throw std::invalid_argument("unknown model type: " + s);
}

struct ModelConfig {
  ModelType type = ModelType::gru;
  int dim = 8;            // d
  int depth = 1;          // 1 or 2 encoder layers/blocks
  int max_positions = 50; // position table length (sasrec)
  int service_dim = 0;    // N; 0 disables fusion and both adapters
};

struct GruLayer {
  Matrix wz, uz, wr, ur, wh, uh;
  Vec bz, br, bh;
};

struct AttnBlock {
  Matrix wq, wk, wv, wo;
  Vec ln1_g, ln1_b, ln2_g, ln2_b;
  Matrix w1, w2;  // position-wise feed-forward pair
  Vec b1, b2;
};

struct Affine {
  Matrix w;
  Vec b;
};

struct ModelParams {
  ModelConfig cfg;
  int num_items = 0;
  Matrix id_embeddings;         // |V| x d
  std::vector<GruLayer> gru;    // depth entries (gru)
  std::vector<AttnBlock> attn;  // depth entries (sasrec)
  Matrix positions;             // max_positions x d (sasrec)
  Affine head;                  // |V| x d, |V| (gru)
  Affine phi;                   // d x N, d  (item fusion adapter)
  Affine psi;                   // d x N, d  (contrastive projection)
};

// Visits every parameter array in a fixed declared order. Aggregation, Adam,
// checkpoints and the finite-difference tests all rely on this one ordering.
template <typename Params, typename F>
void visit_arrays(Params& p, F&& f) {
  f("id_embeddings", p.id_embeddings.a);
  for (std::size_t l = 0; l < p.gru.size(); ++l) {
    auto& g = p.gru[l];
    const std::string pre = "gru" + std::to_string(l) + ".";
    f(pre + "wz", g.wz.a);
    f(pre + "uz", g.uz.a);
    f(pre + "bz", g.bz);
    f(pre + "wr", g.wr.a);
    f(pre + "ur", g.ur.a);
    f(pre + "br", g.br);
    f(pre + "wh", g.wh.a);
    f(pre + "uh", g.uh.a);
    f(pre + "bh", g.bh);
  }
  for (std::size_t l = 0; l < p.attn.size(); ++l) {
    auto& b = p.attn[l];
    const std::string pre = "attn" + std::to_string(l) + ".";
    f(pre + "wq", b.wq.a);
    f(pre + "wk", b.wk.a);
    f(pre + "wv", b.wv.a);
    f(pre + "wo", b.wo.a);
    f(pre + "ln1_g", b.ln1_g);
    f(pre + "ln1_b", b.ln1_b);
    f(pre + "w1", b.w1.a);
    f(pre + "b1", b.b1);
    f(pre + "w2", b.w2.a);
    f(pre + "b2", b.b2);
    f(pre + "ln2_g", b.ln2_g);
    f(pre + "ln2_b", b.ln2_b);
  }
  if (!p.positions.empty()) f("positions", p.positions.a);
  if (!p.head.w.empty()) {
    f("head.w", p.head.w.a);
    f("head.b", p.head.b);
  }
  if (!p.phi.w.empty()) {
    f("phi.w", p.phi.w.a);
    f("phi.b", p.phi.b);
  }
  if (!p.psi.w.empty()) {
    f("psi.w", p.psi.w.a);
    f("psi.b", p.psi.b);
  }
}

inline std::vector<std::vector<double>*> collect_arrays(ModelParams& p) {
  std::vector<std::vector<double>*> out;
  visit_arrays(p, [&](const std::string&, std::vector<double>& v) { out.push_back(&v); });
  return out;
}

inline std::vector<const std::vector<double>*> collect_arrays(const ModelParams& p) {
  std::vector<const std::vector<double>*> out;
  visit_arrays(p, [&](const std::string&, const std::vector<double>& v) { out.push_back(&v); });
  return out;
}

inline ModelParams make_zero_params(const ModelConfig& cfg, int num_items) {
  if (cfg.dim < 1 || cfg.depth < 1 || cfg.depth > 2)
    throw std::invalid_argument("model config: dim >= 1 and depth in {1,2} required");
  ModelParams p;
  p.cfg = cfg;
  p.num_items = num_items;
  const int d = cfg.dim;
  p.id_embeddings = Matrix(num_items, d);
  if (cfg.type == ModelType::gru) {
    p.gru.resize(cfg.depth);
    for (auto& g : p.gru) {
      g.wz = g.uz = g.wr = g.ur = g.wh = g.uh = Matrix(d, d);
      g.bz = g.br = g.bh = Vec(d, 0.0);
    }
    p.head.w = Matrix(num_items, d);
    p.head.b = Vec(num_items, 0.0);
  } else {
    p.attn.resize(cfg.depth);
    for (auto& b : p.attn) {
      b.wq = b.wk = b.wv = b.wo = Matrix(d, d);
      b.ln1_g = b.ln1_b = b.ln2_g = b.ln2_b = Vec(d, 0.0);
      b.w1 = b.w2 = Matrix(d, d);
      b.b1 = b.b2 = Vec(d, 0.0);
    }
    p.positions = Matrix(cfg.max_positions, d);
  }
  if (cfg.service_dim > 0) {
    p.phi.w = Matrix(d, cfg.service_dim);
    p.phi.b = Vec(d, 0.0);
    p.psi.w = Matrix(d, cfg.service_dim);
    p.psi.b = Vec(d, 0.0);
  }
  return p;
}

inline ModelParams zero_like(const ModelParams& p) {
  return make_zero_params(p.cfg, p.num_items);
}

// Random init, one independent stream per array so adding or removing
// adapters never shifts the draws of the shared arrays.
inline ModelParams init_params(const ModelConfig& cfg, int num_items,
                               std::uint64_t seed) {
  ModelParams p = make_zero_params(cfg, num_items);
  const std::uint64_t root = stream_seed(seed, "init");
  visit_arrays(p, [&](const std::string& name, std::vector<double>& v) {
    if (name.ends_with("ln1_g") || name.ends_with("ln2_g")) {
      std::fill(v.begin(), v.end(), 1.0);
      return;
    }
    if (name.ends_with("_b") || name.starts_with("head.b") ||
        name.ends_with(".bz") || name.ends_with(".br") || name.ends_with(".bh") ||
        name.ends_with(".b1") || name.ends_with(".b2") ||
        name == "phi.b" || name == "psi.b" || name == "head.b")
      return;  // biases start at zero
    Rng rng(hash_combine(root, fnv1a64(name)));
    for (auto& x : v) x = 0.1 * rng.normal();
  });
  return p;
}

// effective[v] = phi(V_llm[v]) + id_embeddings[v]; with no service the id
// table is used as-is (phi absent, not zero).
inline Matrix fuse_embeddings(const ModelParams& p, const EmbeddingMatrix* vllm) {
  const int d = p.cfg.dim;
  Matrix eff(p.num_items, d);
  for (int v = 0; v < p.num_items; ++v) {
    auto dst = eff.row(v);
    auto src = p.id_embeddings.row(v);
    std::copy(src.begin(), src.end(), dst.begin());
  }
  if (p.cfg.service_dim > 0) {
    if (vllm == nullptr)
      throw std::invalid_argument("fuse_embeddings: service embeddings required");
    if (vllm->rows != p.num_items || vllm->cols != p.cfg.service_dim)
      throw std::invalid_argument("fuse_embeddings: service matrix shape mismatch");
    for (int v = 0; v < p.num_items; ++v) {
      auto dst = eff.row(v);
      axpy(1.0, p.phi.b, dst);
      matvec_add(p.phi.w, vllm->row(v), dst);
    }
  }
  return eff;
}

namespace detail {

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

constexpr double kLnEps = 1e-8;

// y = gamma * (x - mu)/sqrt(var + eps) + beta; xhat and rstd cached.
inline void layer_norm(std::span<const double> x, std::span<const double> gamma,
                       std::span<const double> beta, std::span<double> xhat,
                       std::span<double> y, double& rstd) {
  const std::size_t n = x.size();
  double mu = 0.0;
  for (double v : x) mu += v;
  mu /= static_cast<double>(n);
  double var = 0.0;
  for (double v : x) var += (v - mu) * (v - mu);
  var /= static_cast<double>(n);
  rstd = 1.0 / std::sqrt(var + kLnEps);
  for (std::size_t i = 0; i < n; ++i) {
    xhat[i] = (x[i] - mu) * rstd;
    y[i] = gamma[i] * xhat[i] + beta[i];
  }
}

inline void layer_norm_backward(std::span<const double> dy,
                                std::span<const double> xhat, double rstd,
                                std::span<const double> gamma,
                                std::span<double> dgamma, std::span<double> dbeta,
                                std::span<double> dx) {
  const std::size_t n = xhat.size();
  double m1 = 0.0, m2 = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    dgamma[i] += dy[i] * xhat[i];
    dbeta[i] += dy[i];
    const double dxh = dy[i] * gamma[i];
    m1 += dxh;
    m2 += dxh * xhat[i];
  }
  m1 /= static_cast<double>(n);
  m2 /= static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double dxh = dy[i] * gamma[i];
    dx[i] += rstd * (dxh - m1 - xhat[i] * m2);
  }
}

}  // namespace detail

struct GruCache {
  Matrix z, r, hc, h;  // T x d each
};

struct AttnCache {
  Matrix in;      // block input, T x d
  Matrix q, k, v; // projections, T x d
  Matrix attw;    // causal softmax weights, T x T (row t uses cols 0..t)
  Matrix c;       // attention context, T x d
  Matrix xhat1, n;      // LN1 internals and output
  Matrix mpre, act;     // feed-forward hidden
  Matrix xhat2, y, h;   // LN2 internals; h is block output
  Vec rstd1, rstd2;
};

struct ForwardCache {
  std::vector<ItemId> seq;
  Matrix x;  // fused (+ positional) inputs, T x d
  std::vector<GruCache> gru;
  std::vector<AttnCache> attn;

  int length() const { return static_cast<int>(seq.size()); }
  const Matrix& latents() const {
    if (!gru.empty()) return gru.back().h;
    if (!attn.empty()) return attn.back().h;
    return x;
  }
};

inline ForwardCache forward(const ModelParams& p, const Matrix& eff,
                            std::span<const ItemId> seq) {
  if (seq.empty()) throw std::invalid_argument("forward: empty sequence");
  const int T = static_cast<int>(seq.size());
  const int d = p.cfg.dim;

  ForwardCache fc;
  fc.seq.assign(seq.begin(), seq.end());
  fc.x = Matrix(T, d);
  for (int t = 0; t < T; ++t) {
    if (seq[t] < 0 || seq[t] >= p.num_items)
      throw std::out_of_range("forward: item id outside catalog");
    auto src = eff.row(seq[t]);
    auto dst = fc.x.row(t);
    std::copy(src.begin(), src.end(), dst.begin());
  }

  if (p.cfg.type == ModelType::gru) {
    fc.gru.resize(p.gru.size());
    const Matrix* input = &fc.x;
    for (std::size_t l = 0; l < p.gru.size(); ++l) {
      const auto& g = p.gru[l];
      auto& c = fc.gru[l];
      c.z = c.r = c.hc = c.h = Matrix(T, d);
      Vec az(d), ar(d), ah(d), rh(d);
      for (int t = 0; t < T; ++t) {
        auto xt = input->row(t);
        std::span<const double> hprev =
            t > 0 ? std::span<const double>(c.h.row(t - 1)) : std::span<const double>();
        for (int i = 0; i < d; ++i) {
          az[i] = g.bz[i];
          ar[i] = g.br[i];
        }
        matvec_add(g.wz, xt, az);
        matvec_add(g.wr, xt, ar);
        if (t > 0) {
          matvec_add(g.uz, hprev, az);
          matvec_add(g.ur, hprev, ar);
        }
        for (int i = 0; i < d; ++i) {
          c.z(t, i) = detail::sigmoid(az[i]);
          c.r(t, i) = detail::sigmoid(ar[i]);
        }
        for (int i = 0; i < d; ++i) {
          ah[i] = g.bh[i];
          rh[i] = t > 0 ? c.r(t, i) * hprev[i] : 0.0;
        }
        matvec_add(g.wh, xt, ah);
        if (t > 0) matvec_add(g.uh, rh, ah);
        for (int i = 0; i < d; ++i) {
          c.hc(t, i) = std::tanh(ah[i]);
          const double hp = t > 0 ? hprev[i] : 0.0;
          c.h(t, i) = (1.0 - c.z(t, i)) * hp + c.z(t, i) * c.hc(t, i);
        }
      }
      input = &c.h;
    }
    return fc;
  }

  // sasrec: add positional embeddings, then causal attention block(s)
  if (T > p.positions.rows)
    throw std::invalid_argument("forward: sequence longer than position table (" +
                                std::to_string(T) + " > " +
                                std::to_string(p.positions.rows) + ")");
  for (int t = 0; t < T; ++t) axpy(1.0, p.positions.row(t), fc.x.row(t));

  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  fc.attn.resize(p.attn.size());
  const Matrix* input = &fc.x;
  for (std::size_t l = 0; l < p.attn.size(); ++l) {
    const auto& b = p.attn[l];
    auto& c = fc.attn[l];
    c.in = *input;
    c.q = c.k = c.v = c.c = Matrix(T, d);
    c.attw = Matrix(T, T);
    c.xhat1 = c.n = c.mpre = c.act = c.xhat2 = c.y = c.h = Matrix(T, d);
    c.rstd1.assign(T, 0.0);
    c.rstd2.assign(T, 0.0);
    for (int t = 0; t < T; ++t) {
      matvec_add(b.wq, c.in.row(t), c.q.row(t));
      matvec_add(b.wk, c.in.row(t), c.k.row(t));
      matvec_add(b.wv, c.in.row(t), c.v.row(t));
    }
    Vec u(d);
    for (int t = 0; t < T; ++t) {
      // causal softmax over positions 0..t
      double mx = -1e300;
      for (int s = 0; s <= t; ++s) {
        c.attw(t, s) = dot(c.q.row(t), c.k.row(s)) * scale;
        mx = std::max(mx, c.attw(t, s));
      }
      double zsum = 0.0;
      for (int s = 0; s <= t; ++s) {
        c.attw(t, s) = std::exp(c.attw(t, s) - mx);
        zsum += c.attw(t, s);
      }
      for (int s = 0; s <= t; ++s) {
        c.attw(t, s) /= zsum;
        axpy(c.attw(t, s), c.v.row(s), c.c.row(t));
      }
      // residual + LN1
      std::fill(u.begin(), u.end(), 0.0);
      matvec_add(b.wo, c.c.row(t), u);
      for (int i = 0; i < d; ++i) u[i] += c.in(t, i);
      detail::layer_norm(u, b.ln1_g, b.ln1_b, c.xhat1.row(t), c.n.row(t), c.rstd1[t]);
      // feed-forward + residual + LN2
      for (int i = 0; i < d; ++i) c.mpre(t, i) = b.b1[i];
      matvec_add(b.w1, c.n.row(t), c.mpre.row(t));
      for (int i = 0; i < d; ++i) c.act(t, i) = c.mpre(t, i) > 0.0 ? c.mpre(t, i) : 0.0;
      for (int i = 0; i < d; ++i) c.y(t, i) = b.b2[i] + c.n(t, i);
      matvec_add(b.w2, c.act.row(t), c.y.row(t));
      detail::layer_norm(c.y.row(t), b.ln2_g, b.ln2_b, c.xhat2.row(t), c.h.row(t),
                         c.rstd2[t]);
    }
    input = &c.h;
  }
  return fc;
}

inline double score_item(const ModelParams& p, const Matrix& eff,
                         const ForwardCache& fc, int step, ItemId item) {
  auto h = fc.latents().row(step);
  if (p.cfg.type == ModelType::gru)
    return dot(p.head.w.row(item), h) + p.head.b[item];
  return dot(eff.row(item), h);
}

inline Vec score_all(const ModelParams& p, const Matrix& eff,
                     const ForwardCache& fc, int step) {
  Vec out(static_cast<std::size_t>(p.num_items), 0.0);
  auto h = fc.latents().row(step);
  if (p.cfg.type == ModelType::gru) {
    for (int j = 0; j < p.num_items; ++j)
      out[j] = dot(p.head.w.row(j), h) + p.head.b[j];
  } else {
    for (int j = 0; j < p.num_items; ++j) out[j] = dot(eff.row(j), h);
  }
  return out;
}

// Gradient of a score w.r.t. one model output latent plus the per-item
// parameter rows. d_eff collects effective-embedding row gradients which are
// split into id/phi at the end of backward().
struct ScoreGrad {
  int step;
  ItemId item;
  double g;
};

namespace detail {

inline void gru_backward(const GruLayer& g, const GruCache& c, const Matrix& input,
                         const Matrix& dh_in, GruLayer& gg, Matrix& d_input) {
  const int T = c.h.rows, d = c.h.cols;
  Vec carry(d, 0.0), dht(d), dz(d), dhc(d), dah(d), dar(d), daz(d), rh(d), tmp(d), dr(d);
  for (int t = T - 1; t >= 0; --t) {
    for (int i = 0; i < d; ++i) dht[i] = dh_in(t, i) + carry[i];
    std::fill(carry.begin(), carry.end(), 0.0);
    auto xt = input.row(t);
    for (int i = 0; i < d; ++i) {
      const double hp = t > 0 ? c.h(t - 1, i) : 0.0;
      dz[i] = dht[i] * (c.hc(t, i) - hp);
      dhc[i] = dht[i] * c.z(t, i);
      carry[i] += dht[i] * (1.0 - c.z(t, i));
      dah[i] = dhc[i] * (1.0 - c.hc(t, i) * c.hc(t, i));
      rh[i] = t > 0 ? c.r(t, i) * c.h(t - 1, i) : 0.0;
    }
    outer_add(gg.wh, dah, xt);
    axpy(1.0, dah, gg.bh);
    matvec_t_add(g.wh, dah, d_input.row(t));
    if (t > 0) {
      outer_add(gg.uh, dah, rh);
      std::fill(tmp.begin(), tmp.end(), 0.0);
      matvec_t_add(g.uh, dah, tmp);  // gradient into r (.) h_{t-1}
      for (int i = 0; i < d; ++i) {
        dr[i] = tmp[i] * c.h(t - 1, i);
        carry[i] += tmp[i] * c.r(t, i);
        dar[i] = dr[i] * c.r(t, i) * (1.0 - c.r(t, i));
      }
      outer_add(gg.wr, dar, xt);
      axpy(1.0, dar, gg.br);
      matvec_t_add(g.wr, dar, d_input.row(t));
      auto hprev = c.h.row(t - 1);
      outer_add(gg.ur, dar, hprev);
      matvec_t_add(g.ur, dar, carry);
    }
    for (int i = 0; i < d; ++i) daz[i] = dz[i] * c.z(t, i) * (1.0 - c.z(t, i));
    outer_add(gg.wz, daz, xt);
    axpy(1.0, daz, gg.bz);
    matvec_t_add(g.wz, daz, d_input.row(t));
    if (t > 0) {
      auto hprev = c.h.row(t - 1);
      outer_add(gg.uz, daz, hprev);
      matvec_t_add(g.uz, daz, carry);
    }
  }
}

inline void attn_backward(const AttnBlock& b, const AttnCache& c, const Matrix& dh_in,
                          AttnBlock& gb, Matrix& d_input) {
  const int T = c.h.rows, d = c.h.cols;
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  Matrix dy(T, d), dn(T, d), du(T, d), dc(T, d), dq(T, d), dk(T, d), dv(T, d);
  Vec dm(d), dact(d);
  for (int t = 0; t < T; ++t)
    detail::layer_norm_backward(dh_in.row(t), c.xhat2.row(t), c.rstd2[t], b.ln2_g,
                                gb.ln2_g, gb.ln2_b, dy.row(t));
  for (int t = 0; t < T; ++t) {
    // y = n + W2 relu(W1 n + b1) + b2
    axpy(1.0, dy.row(t), dn.row(t));
    outer_add(gb.w2, dy.row(t), c.act.row(t));
    axpy(1.0, dy.row(t), gb.b2);
    std::fill(dact.begin(), dact.end(), 0.0);
    matvec_t_add(b.w2, dy.row(t), dact);
    for (int i = 0; i < d; ++i) dm[i] = c.mpre(t, i) > 0.0 ? dact[i] : 0.0;
    outer_add(gb.w1, dm, c.n.row(t));
    axpy(1.0, dm, gb.b1);
    matvec_t_add(b.w1, dm, dn.row(t));
    detail::layer_norm_backward(dn.row(t), c.xhat1.row(t), c.rstd1[t], b.ln1_g,
                                gb.ln1_g, gb.ln1_b, du.row(t));
    // u = in + Wo c
    axpy(1.0, du.row(t), d_input.row(t));
    outer_add(gb.wo, du.row(t), c.c.row(t));
    matvec_t_add(b.wo, du.row(t), dc.row(t));
  }
  // attention backward
  Vec da(T);
  for (int t = 0; t < T; ++t) {
    double inner = 0.0;
    for (int s = 0; s <= t; ++s) {
      axpy(c.attw(t, s), dc.row(t), dv.row(s));
      da[s] = dot(dc.row(t), c.v.row(s));
      inner += c.attw(t, s) * da[s];
    }
    for (int s = 0; s <= t; ++s) {
      const double de = c.attw(t, s) * (da[s] - inner);
      axpy(de * scale, c.k.row(s), dq.row(t));
      axpy(de * scale, c.q.row(t), dk.row(s));
    }
  }
  for (int t = 0; t < T; ++t) {
    outer_add(gb.wq, dq.row(t), c.in.row(t));
    matvec_t_add(b.wq, dq.row(t), d_input.row(t));
    outer_add(gb.wk, dk.row(t), c.in.row(t));
    matvec_t_add(b.wk, dk.row(t), d_input.row(t));
    outer_add(gb.wv, dv.row(t), c.in.row(t));
    matvec_t_add(b.wv, dv.row(t), d_input.row(t));
  }
}

}  // namespace detail

inline void outer_add_row(Matrix& m, ItemId row, double g, std::span<const double> x) {
  auto r = m.row(row);
  for (std::size_t i = 0; i < x.size(); ++i) r[i] += g * x[i];
}

// Backpropagates score gradients (and an optional extra gradient on the final
// latent, used by the contrastive term) into a Gradients accumulator.
inline void backward(const ModelParams& p, const EmbeddingMatrix* vllm,
                     const Matrix& eff, const ForwardCache& fc,
                     const std::vector<ScoreGrad>& score_grads,
                     const Vec* dh_final, ModelParams& grads) {
  const int T = fc.length();
  const int d = p.cfg.dim;
  Matrix dh(T, d);
  std::vector<int> touched;  // effective-embedding rows with gradient
  std::vector<char> touched_mask(static_cast<std::size_t>(p.num_items), 0);
  Matrix d_eff(p.num_items, 0);  // lazily sized below when needed

  auto touch = [&](ItemId v) {
    if (!touched_mask[static_cast<std::size_t>(v)]) {
      touched_mask[static_cast<std::size_t>(v)] = 1;
      touched.push_back(v);
    }
  };

  const bool emb_scores = p.cfg.type == ModelType::sasrec;
  if (emb_scores || p.cfg.service_dim > 0) d_eff = Matrix(p.num_items, d);

  for (const auto& sg : score_grads) {
    if (sg.step < 0 || sg.step >= T)
      throw std::out_of_range("backward: score step out of range");
    auto h = fc.latents().row(sg.step);
    if (p.cfg.type == ModelType::gru) {
      outer_add_row(grads.head.w, sg.item, sg.g, h);
      grads.head.b[sg.item] += sg.g;
      axpy(sg.g, p.head.w.row(sg.item), dh.row(sg.step));
    } else {
      touch(sg.item);
      axpy(sg.g, h, d_eff.row(sg.item));
      axpy(sg.g, eff.row(sg.item), dh.row(sg.step));
    }
  }
  if (dh_final != nullptr) axpy(1.0, *dh_final, dh.row(T - 1));

  // encoder backward, top layer to bottom
  Matrix d_x(T, d);
  if (p.cfg.type == ModelType::gru) {
    Matrix cur = dh;
    for (int l = static_cast<int>(p.gru.size()) - 1; l >= 0; --l) {
      const Matrix& input = l == 0 ? fc.x : fc.gru[l - 1].h;
      Matrix d_in(T, d);
      detail::gru_backward(p.gru[l], fc.gru[l], input, cur, grads.gru[l], d_in);
      cur = std::move(d_in);
    }
    d_x = std::move(cur);
  } else {
    Matrix cur = dh;
    for (int l = static_cast<int>(p.attn.size()) - 1; l >= 0; --l) {
      Matrix d_in(T, d);
      detail::attn_backward(p.attn[l], fc.attn[l], cur, grads.attn[l], d_in);
      cur = std::move(d_in);
    }
    d_x = std::move(cur);
    for (int t = 0; t < T; ++t) axpy(1.0, d_x.row(t), grads.positions.row(t));
  }

  // input embedding rows
  if (d_eff.cols == 0) {
    // gru without fusion: gradients land directly on the id table
    for (int t = 0; t < T; ++t)
      axpy(1.0, d_x.row(t), grads.id_embeddings.row(fc.seq[t]));
    return;
  }
  for (int t = 0; t < T; ++t) {
    touch(fc.seq[t]);
    axpy(1.0, d_x.row(t), d_eff.row(fc.seq[t]));
  }
  for (int v : touched) {
    auto dv = d_eff.row(v);
    axpy(1.0, dv, grads.id_embeddings.row(v));
    if (p.cfg.service_dim > 0) {
      outer_add(grads.phi.w, dv, vllm->row(v));
      axpy(1.0, dv, grads.phi.b);
    }
  }
}

inline std::size_t total_parameter_count(const ModelParams& p) {
  std::size_t n = 0;
  visit_arrays(p, [&](const std::string&, const std::vector<double>& v) { n += v.size(); });
  return n;
}

// Checkpoint file: one JSON header line, then the flat 64-bit float payload
// in visit_arrays order.
inline void save_checkpoint(const ModelParams& p, const std::string& path) {
  nlohmann::json h;
  h["model"] = to_string(p.cfg.type);
  h["num_items"] = p.num_items;
  h["dim"] = p.cfg.dim;
  h["depth"] = p.cfg.depth;
  h["max_positions"] = p.cfg.max_positions;
  h["service_dim"] = p.cfg.service_dim;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
  out << h.dump() << "\n";
  visit_arrays(p, [&](const std::string&, const std::vector<double>& v) {
    out.write(reinterpret_cast<const char*>(v.data()),
              static_cast<std::streamsize>(v.size() * sizeof(double)));
  });
  if (!out) throw std::runtime_error("checkpoint write failed: " + path);
}

inline ModelParams load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
  std::string header;
  std::getline(in, header);
  nlohmann::json h = nlohmann::json::parse(header);
  ModelConfig cfg;
  cfg.type = model_type_from_string(h.at("model").get<std::string>());
  cfg.dim = h.at("dim").get<int>();
  cfg.depth = h.at("depth").get<int>();
  cfg.max_positions = h.at("max_positions").get<int>();
  cfg.service_dim = h.at("service_dim").get<int>();
  ModelParams p = make_zero_params(cfg, h.at("num_items").get<int>());
  visit_arrays(p, [&](const std::string& name, std::vector<double>& v) {
    in.read(reinterpret_cast<char*>(v.data()),
            static_cast<std::streamsize>(v.size() * sizeof(double)));
    if (!in) throw std::runtime_error("checkpoint truncated at " + name);
  });
  char extra;
  if (in.read(&extra, 1))
    throw std::runtime_error("checkpoint has trailing bytes: " + path);
  return p;
}

}  // namespace fellas
