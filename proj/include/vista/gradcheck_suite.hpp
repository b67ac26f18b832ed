#pragma once

#include "vista/attention.hpp"
#include "vista/grad_check.hpp"
#include "vista/losses.hpp"
#include "vista/ops.hpp"
#include "vista/train.hpp"

#include <functional>
#include <string>
#include <vector>

namespace vista {

struct GradCheckEntry {
  std::string name;
  GradCheckReport report;
};

/// Gradient checks over every differentiable op plus the loss kernels, on
/// small random tensors. eps is passed through unguarded so callers can sweep
/// it; pass something inside [1e-7, 1e-3] for meaningful answers.
inline std::vector<GradCheckEntry> run_op_gradcheck_suite(double eps, std::uint64_t seed = 7) {
  std::mt19937_64 rng(seed);
  std::vector<GradCheckEntry> out;
  Tensor w23 = Tensor::randn({2, 3}, rng);
  Tensor m34 = Tensor::randn({3, 4}, rng);
  Tensor conv_w = Tensor::randn({2, 2, 3, 3}, rng);
  Tensor conv_b = Tensor::randn({2}, rng);
  Tensor lin_w = Tensor::randn({3, 2}, rng);
  Tensor lin_b = Tensor::randn({3}, rng);
  Tensor gamma = Tensor::randn({4}, rng);
  Tensor beta = Tensor::randn({4}, rng);
  Tensor r234 = Tensor::randn({2, 3, 4}, rng);
  Tensor r222 = Tensor::randn({2, 2, 2}, rng);
  Tensor r246 = Tensor::randn({2, 4, 6}, rng);

  auto check = [&](const char* name, Shape shape,
                   std::function<Tensor(const Tensor&)> f) {
    Tensor x = Tensor::randn(shape, rng);
    out.push_back({name, detail::grad_check_impl<double>(f, x, eps, 0, 0x51ee7)});
  };

  check("add", {2, 3}, [&](const Tensor& t) { return sum(add(t, w23)); });
  check("sub", {2, 3}, [&](const Tensor& t) { return sum(sub(w23, t)); });
  check("mul", {2, 3}, [&](const Tensor& t) { return sum(mul(t, w23)); });
  check("scale", {2, 3}, [&](const Tensor& t) { return sum(scale(t, -1.7)); });
  check("relu", {2, 3}, [&](const Tensor& t) { return sum(mul(relu(t), w23)); });
  check("matmul_lhs", {2, 3}, [&](const Tensor& t) { return sum(matmul(t, m34)); });
  check("matmul_rhs", {3, 4}, [&](const Tensor& t) { return sum(matmul(w23, t)); });
  check("transpose", {2, 3}, [&](const Tensor& t) { return sum(mul(transpose(t), transpose(w23))); });
  check("reshape", {2, 3}, [&](const Tensor& t) { return sum(mul(reshape(t, {3, 2}), transpose(w23))); });
  check("softmax_rows", {3, 4}, [&](const Tensor& t) { return sum(mul(softmax_rows(t), m34)); });
  check("conv2d_x", {2, 3, 4}, [&](const Tensor& t) { return sum(mul(conv2d(t, conv_w, conv_b), r234)); });
  check("conv2d_w", {2, 2, 3, 3}, [&](const Tensor& t) { return sum(conv2d(r234, t, conv_b)); });
  check("conv2d_b", {2}, [&](const Tensor& t) { return sum(mul(conv2d(r234, conv_w, t), r234)); });
  check("conv1d_x", {2, 5}, [&](const Tensor& t) { return sum(conv1d_pointwise(t, lin_w, lin_b)); });
  check("conv1d_w", {3, 2}, [&](const Tensor& t) { return sum(conv1d_pointwise(w23, t, lin_b)); });
  check("conv1d_b", {3}, [&](const Tensor& t) { return sum(conv1d_pointwise(w23, lin_w, t)); });
  check("avg_pool2d", {2, 4, 6}, [&](const Tensor& t) { return sum(mul(avg_pool2d(t, 2, 3), r222)); });
  check("unpool_broadcast", {2, 2, 3}, [&](const Tensor& t) {
    return sum(mul(unpool_broadcast(t, 2, 2, 4, 6), r246));
  });
  check("layer_norm_x", {3, 4}, [&](const Tensor& t) { return sum(mul(layer_norm(t, gamma, beta), m34)); });
  check("layer_norm_gamma", {4}, [&](const Tensor& t) { return sum(mul(layer_norm(m34, t, beta), m34)); });
  check("layer_norm_beta", {4}, [&](const Tensor& t) { return sum(mul(layer_norm(m34, gamma, t), m34)); });
  check("fold_axis", {2, 2, 3, 2}, [&](const Tensor& t) {
    return sum(mul(fold_axis_into_channels(t, 2), reshape(r234, {6, 2, 2})));
  });
  check("unfold_axis", {6, 2, 2}, [&](const Tensor& t) {
    return sum(mul(unfold_channels_to_axis(t, 2, 2), reshape(r234, {2, 2, 3, 2})));
  });

  // loss kernels
  {
    std::vector<int> targets{1, -1, 0, -1};
    check("focal_loss", {4, 2}, [&](const Tensor& t) { return focal_loss(t, targets); });
  }
  {
    Tensor target = Tensor::randn({3, 4}, rng);
    std::vector<bool> mask{true, false, true};
    check("l1_loss", {3, 4}, [&](const Tensor& t) { return l1_loss(t, target, mask); });
  }
  {
    PillarCenters centers;
    centers.centers = {{0, 0}, {0.3, 0}, {5, 5}, {0.1, 0.2}};
    centers.nx = 4;
    centers.ny = 1;
    std::vector<BoxFootprint> boxes{{1.0, 1.0, 0.0, 0.0, 0}};
    check("variance_loss", {4, 6}, [&](const Tensor& t) {
      return variance_loss(softmax_rows(t), boxes, centers);
    });
  }
  return out;
}

/// End-to-end gradient checks through the full pipeline (voxelize -> encode ->
/// collapse -> necks -> attention -> heads -> losses) for a sample of
/// parameter tensors. Probes the max_checks highest-|gradient| coordinates of
/// each tensor: at pipeline scale the loss carries ~1e-13 of evaluation noise,
/// so central differences only resolve components above ~1e-8 and smaller ones
/// would measure noise, not gradient correctness (the per-op suite covers
/// every kernel exhaustively at small scale).
inline std::vector<GradCheckEntry> run_pipeline_gradcheck(const ModelConfig& mc,
                                                          const SceneSample& scene, double eps,
                                                          Index max_checks,
                                                          std::uint64_t seed = 17) {
  Model model = Model::init(mc, seed);
  using Getter = std::function<Tensor&(Model&)>;
  const std::vector<std::pair<std::string, Getter>> picks = {
      {"pipeline/encoder.w1", [](Model& m) -> Tensor& { return m.encoder.w1; }},
      {"pipeline/encoder.b2", [](Model& m) -> Tensor& { return m.encoder.b2; }},
      {"pipeline/neck_bev.w", [](Model& m) -> Tensor& { return m.neck_bev_w; }},
      {"pipeline/neck_rv.w", [](Model& m) -> Tensor& { return m.neck_rv_w; }},
      {"pipeline/vista.conv_q.w", [](Model& m) -> Tensor& { return m.vista.conv_q_w; }},
      {"pipeline/vista.conv_v.w", [](Model& m) -> Tensor& { return m.vista.conv_v_w; }},
      {"pipeline/vista.branch_q_sem.w", [](Model& m) -> Tensor& { return m.vista.branch_q_sem_w; }},
      {"pipeline/vista.branch_k_geo.w", [](Model& m) -> Tensor& { return m.vista.branch_k_geo_w; }},
      {"pipeline/vista.ffn_sem.w1", [](Model& m) -> Tensor& { return m.vista.ffn_sem.w1; }},
      {"pipeline/vista.ffn_geo.w2", [](Model& m) -> Tensor& { return m.vista.ffn_geo.w2; }},
      {"pipeline/head_cls.w", [](Model& m) -> Tensor& { return m.head_cls_w; }},
      {"pipeline/head_reg.w", [](Model& m) -> Tensor& { return m.head_reg_w; }},
  };
  std::vector<GradCheckEntry> out;
  for (const auto& [name, get] : picks) {
    auto f = [&](const Tensor& t) {
      Model probe = model;
      get(probe) = t;
      return probe.forward(scene).loss.total;
    };
    Tensor x = get(model);
    out.push_back({name, detail::grad_check_impl<double>(f, x, eps, max_checks, 0xc0ffee,
                                                         ProbeSelection::top_magnitude)});
  }
  return out;
}

}  // namespace vista
