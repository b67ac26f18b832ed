#pragma once

#include "vista/ops.hpp"
#include "vista/tensor.hpp"
#include "vista/view.hpp"

#include <cmath>
#include <string>
#include <tuple>

namespace vista {

enum class FusionMode { conv, linear, gap };
enum class Branch { sem, geo };

inline const char* fusion_mode_name(FusionMode m) {
  switch (m) {
    case FusionMode::conv: return "conv";
    case FusionMode::linear: return "linear";
    default: return "gap";
  }
}

inline FusionMode parse_fusion_mode(const std::string& s) {
  if (s == "conv") return FusionMode::conv;
  if (s == "linear") return FusionMode::linear;
  if (s == "gap") return FusionMode::gap;
  throw std::invalid_argument("unknown fusion mode '" + s + "' (expected conv|linear|gap)");
}

struct FfnWeights {
  Tensor w1;     // [4*d_v x d_v]
  Tensor b1;     // [4*d_v]
  Tensor w2;     // [d_v x 4*d_v]
  Tensor b2;     // [d_v]
  Tensor gamma;  // [d_v]
  Tensor beta;   // [d_v]
};

/// Parameters of the dual cross-view attention block: shared 3x3 conv (or
/// pointwise, for the linear ablation) Q/K/V projections, per-branch pointwise
/// query/key projections, and per-branch FFNs.
struct VistaWeights {
  Tensor conv_q_w, conv_q_b;
  Tensor conv_k_w, conv_k_b;
  Tensor conv_v_w, conv_v_b;
  Tensor lin_q_w, lin_q_b;
  Tensor lin_k_w, lin_k_b;
  Tensor lin_v_w, lin_v_b;
  Tensor branch_q_sem_w, branch_q_sem_b;
  Tensor branch_q_geo_w, branch_q_geo_b;
  Tensor branch_k_sem_w, branch_k_sem_b;
  Tensor branch_k_geo_w, branch_k_geo_b;
  FfnWeights ffn_sem, ffn_geo;

  Index d_f() const { return conv_q_w.dim(1); }
  Index d_q() const { return conv_q_w.dim(0); }
  Index d_v() const { return conv_v_w.dim(0); }

  template <class Rng>
  static VistaWeights init(Index d_f, Index d_q, Index d_v, Rng& rng) {
    if (d_f < 1 || d_q < 1 || d_v < 1) {
      throw std::invalid_argument("vista weights: dimensions must be >= 1");
    }
    VistaWeights w;
    const double conv_std = std::sqrt(2.0 / static_cast<double>(d_f * 9));
    const double lin_std = std::sqrt(2.0 / static_cast<double>(d_f));
    const double branch_std = std::sqrt(1.0 / static_cast<double>(d_q));
    w.conv_q_w = Tensor::randn({d_q, d_f, 3, 3}, rng, conv_std, true);
    w.conv_k_w = Tensor::randn({d_q, d_f, 3, 3}, rng, conv_std, true);
    w.conv_v_w = Tensor::randn({d_v, d_f, 3, 3}, rng, conv_std, true);
    w.conv_q_b = Tensor::randn({d_q}, rng, 0.01, true);
    w.conv_k_b = Tensor::randn({d_q}, rng, 0.01, true);
    w.conv_v_b = Tensor::randn({d_v}, rng, 0.01, true);
    w.lin_q_w = Tensor::randn({d_q, d_f}, rng, lin_std, true);
    w.lin_k_w = Tensor::randn({d_q, d_f}, rng, lin_std, true);
    w.lin_v_w = Tensor::randn({d_v, d_f}, rng, lin_std, true);
    w.lin_q_b = Tensor::randn({d_q}, rng, 0.01, true);
    w.lin_k_b = Tensor::randn({d_q}, rng, 0.01, true);
    w.lin_v_b = Tensor::randn({d_v}, rng, 0.01, true);
    w.branch_q_sem_w = Tensor::randn({d_q, d_q}, rng, branch_std, true);
    w.branch_q_geo_w = Tensor::randn({d_q, d_q}, rng, branch_std, true);
    w.branch_k_sem_w = Tensor::randn({d_q, d_q}, rng, branch_std, true);
    w.branch_k_geo_w = Tensor::randn({d_q, d_q}, rng, branch_std, true);
    w.branch_q_sem_b = Tensor::randn({d_q}, rng, 0.01, true);
    w.branch_q_geo_b = Tensor::randn({d_q}, rng, 0.01, true);
    w.branch_k_sem_b = Tensor::randn({d_q}, rng, 0.01, true);
    w.branch_k_geo_b = Tensor::randn({d_q}, rng, 0.01, true);
    for (FfnWeights* ffn : {&w.ffn_sem, &w.ffn_geo}) {
      const double ffn_std = std::sqrt(2.0 / static_cast<double>(d_v));
      ffn->w1 = Tensor::randn({4 * d_v, d_v}, rng, ffn_std, true);
      ffn->b1 = Tensor::randn({4 * d_v}, rng, 0.01, true);
      ffn->w2 = Tensor::randn({d_v, 4 * d_v}, rng, ffn_std / 2.0, true);
      ffn->b2 = Tensor::randn({d_v}, rng, 0.01, true);
      ffn->gamma = Tensor::fill({d_v}, 1.0, true);
      ffn->beta = Tensor::zeros({d_v}, true);
    }
    return w;
  }
};

/// Per-branch attention matrices (rows are probability vectors over source
/// cells) and the fused output sequences.
struct AttentionBundle {
  Tensor a_sem, a_geo;  // [n x m]
  Tensor f_sem, f_geo;  // [n x d_v]

  Index n() const { return a_sem.dim(0); }
  Index m() const { return a_sem.dim(1); }

  void validate(double tol = 1e-9) const {
    for (const Tensor* a : {&a_sem, &a_geo}) {
      const Index n_ = a->dim(0), m_ = a->dim(1);
      for (Index i = 0; i < n_; ++i) {
        double row = 0.0;
        for (Index j = 0; j < m_; ++j) {
          const double v = (*a)[i * m_ + j];
          if (v < 0.0 || v > 1.0) throw std::runtime_error("attention weight outside [0,1]");
          row += v;
        }
        if (std::abs(row - 1.0) > tol) throw std::runtime_error("attention row does not sum to 1");
      }
    }
  }
};

struct VistaOptions {
  FusionMode mode = FusionMode::conv;
  bool decouple = true;
  Index heads = 1;
  Index pool_bev_kh = 4, pool_bev_kw = 4;
  Index pool_rv_kh = 4, pool_rv_kw = 4;
  // Debug knob: replace the learned attention with the uniform matrix; used to
  // check the claim that gap fusion is the uniform-attention limit.
  bool force_uniform_attention = false;
};

struct VistaOutput {
  ViewMap fused_sem;  // full-resolution BEV map feeding the classification head
  ViewMap fused_geo;  // full-resolution BEV map feeding the regression head
  AttentionBundle bundle;
};

/// Project pooled view maps into query/key/value sequences. Queries come from
/// the BEV map, keys and values from the RV map. conv mode applies 3x3 convs
/// on the 2-D pooled maps before flattening so the projections see spatial
/// neighborhoods; linear mode uses per-cell projections.
inline std::tuple<Tensor, Tensor, Tensor> project_qkv(const ViewMap& bev, const ViewMap& rv,
                                                      const VistaWeights& w, FusionMode mode) {
  if (bev.channels() != w.d_f() || rv.channels() != w.d_f()) {
    throw std::invalid_argument("project_qkv: view map channels do not match d_f=" +
                                std::to_string(w.d_f()));
  }
  if (mode == FusionMode::linear) {
    Tensor bev_flat = reshape(bev.features, {bev.channels(), bev.s1() * bev.s2()});
    Tensor rv_flat = reshape(rv.features, {rv.channels(), rv.s1() * rv.s2()});
    Tensor q = transpose(conv1d_pointwise(bev_flat, w.lin_q_w, w.lin_q_b));
    Tensor k = transpose(conv1d_pointwise(rv_flat, w.lin_k_w, w.lin_k_b));
    Tensor v = transpose(conv1d_pointwise(rv_flat, w.lin_v_w, w.lin_v_b));
    return {q, k, v};
  }
  ViewMap qm = bev, km = rv, vm = rv;
  qm.features = conv2d(bev.features, w.conv_q_w, w.conv_q_b);
  km.features = conv2d(rv.features, w.conv_k_w, w.conv_k_b);
  vm.features = conv2d(rv.features, w.conv_v_w, w.conv_v_b);
  return {map_to_sequence(qm), map_to_sequence(km), map_to_sequence(vm)};
}

/// Per-branch pointwise projections of queries and keys; values are shared
/// between branches.
inline std::pair<Tensor, Tensor> branch(const Tensor& q, const Tensor& k, const VistaWeights& w,
                                        Branch which) {
  const Tensor& qw = which == Branch::sem ? w.branch_q_sem_w : w.branch_q_geo_w;
  const Tensor& qb = which == Branch::sem ? w.branch_q_sem_b : w.branch_q_geo_b;
  const Tensor& kw = which == Branch::sem ? w.branch_k_sem_w : w.branch_k_geo_w;
  const Tensor& kb = which == Branch::sem ? w.branch_k_sem_b : w.branch_k_geo_b;
  Tensor qi = transpose(conv1d_pointwise(transpose(q), qw, qb));
  Tensor ki = transpose(conv1d_pointwise(transpose(k), kw, kb));
  return {qi, ki};
}

/// Scaled dot-product attention: A = softmax(Q K^T / sqrt(d_q)), F = A V.
inline std::pair<Tensor, Tensor> cross_attention(const Tensor& qi, const Tensor& ki,
                                                 const Tensor& v) {
  if (qi.dim(1) != ki.dim(1)) {
    throw std::invalid_argument("cross_attention: query/key dimensions differ");
  }
  const double inv_sqrt_dq = 1.0 / std::sqrt(static_cast<double>(qi.dim(1)));
  Tensor logits = scale(matmul(qi, transpose(ki)), inv_sqrt_dq);
  Tensor a = softmax_rows(logits);
  Tensor f = matmul(a, v);
  return {a, f};
}

/// Two-layer FFN with residual connection and post-residual layer norm.
inline Tensor ffn(const Tensor& f, const VistaWeights& w, Branch which) {
  const FfnWeights& p = which == Branch::sem ? w.ffn_sem : w.ffn_geo;
  Tensor h = conv1d_pointwise(transpose(f), p.w1, p.b1);
  Tensor out = transpose(conv1d_pointwise(relu(h), p.w2, p.b2));
  return layer_norm(add(f, out), p.gamma, p.beta);
}

namespace detail {

inline Tensor uniform_attention(Index n, Index m) {
  return Tensor::fill({n, m}, 1.0 / static_cast<double>(m));
}

/// Unweighted mean of the value vectors broadcast to every query position.
inline Tensor gap_fusion(const Tensor& v, Index n) {
  const Index m = v.dim(0);
  Tensor mean_row = matmul(Tensor::fill({1, m}, 1.0 / static_cast<double>(m)), v);
  return matmul(Tensor::fill({n, 1}, 1.0), mean_row);
}

}  // namespace detail

/// Full fusion pass: pool both views, project, run the decoupled (or shared)
/// attention, and scatter the fused sequences back onto the full-resolution
/// BEV map. fused_sem feeds the classification head, fused_geo the regression
/// head.
inline VistaOutput vista_forward(const ViewMap& bev, const ViewMap& rv, const VistaWeights& w,
                                 const VistaOptions& opt) {
  if (opt.heads != 1) {
    throw std::invalid_argument("vista_forward: only a single attention head is implemented");
  }
  if (w.d_v() != bev.channels()) {
    throw std::invalid_argument("vista_forward: d_v must equal the view channel count for the "
                                "residual fusion (" + std::to_string(w.d_v()) + " vs " +
                                std::to_string(bev.channels()) + ")");
  }
  ViewMap bev_pooled = pool_for_attention(bev, opt.pool_bev_kh, opt.pool_bev_kw);
  ViewMap rv_pooled = pool_for_attention(rv, opt.pool_rv_kh, opt.pool_rv_kw);
  const Index n = bev_pooled.s1() * bev_pooled.s2();

  VistaOutput out;
  if (opt.mode == FusionMode::gap) {
    // Uniform-attention limit: every query receives the mean value vector.
    // Values use the same conv projection as conv mode; queries and keys are
    // never formed.
    if (rv_pooled.channels() != w.d_f()) {
      throw std::invalid_argument("vista_forward: view map channels do not match d_f");
    }
    ViewMap vm = rv_pooled;
    vm.features = conv2d(rv_pooled.features, w.conv_v_w, w.conv_v_b);
    Tensor v = map_to_sequence(vm);
    const Index m = v.dim(0);
    Tensor f = ffn(detail::gap_fusion(v, n), w, Branch::sem);
    Tensor a = detail::uniform_attention(n, m);
    out.bundle = {a, a, f, f};
  } else {
    auto [q, k, v] = project_qkv(bev_pooled, rv_pooled, w, opt.mode);
    const Index m = k.dim(0);
    auto attend = [&](const Tensor& qi, const Tensor& ki) {
      if (opt.force_uniform_attention) {
        Tensor a = detail::uniform_attention(n, m);
        return std::pair<Tensor, Tensor>{a, matmul(a, v)};
      }
      return cross_attention(qi, ki, v);
    };
    if (opt.decouple) {
      auto [q_sem, k_sem] = branch(q, k, w, Branch::sem);
      auto [q_geo, k_geo] = branch(q, k, w, Branch::geo);
      auto [a_sem, f_sem] = attend(q_sem, k_sem);
      auto [a_geo, f_geo] = attend(q_geo, k_geo);
      out.bundle = {a_sem, a_geo, ffn(f_sem, w, Branch::sem), ffn(f_geo, w, Branch::geo)};
    } else {
      // Shared attention modelling: no per-branch projections, one FFN.
      auto [a, f0] = attend(q, k);
      Tensor f = ffn(f0, w, Branch::sem);
      out.bundle = {a, a, f, f};
    }
  }

  auto to_map = [&](const Tensor& seq) {
    ViewMap fused = sequence_to_map(seq, bev_pooled);
    return scatter_back(fused, bev);
  };
  out.fused_sem = to_map(out.bundle.f_sem);
  out.fused_geo = to_map(out.bundle.f_geo);
  return out;
}

}  // namespace vista
