#pragma once

#include "vista/attention.hpp"
#include "vista/losses.hpp"
#include "vista/scene.hpp"
#include "vista/view.hpp"
#include "vista/voxel.hpp"

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <utility>
#include <vector>

namespace vista {

// ---------------------------------------------------------------------------
// Dense target assignment
// ---------------------------------------------------------------------------

struct Targets {
  std::vector<int> cls;        // per pillar; -1 background
  Tensor reg;                  // [N_bev x 4]: dx, dy, log w, log h (zero rows off the mask)
  std::vector<bool> positive;  // per pillar
  Index n_positive = 0;
};

/// A pillar is positive iff its center lies inside at least one box; it is
/// assigned to the nearest containing box (by center distance, ties broken by
/// box order). Offsets point from the pillar center to the box center.
inline Targets assign_targets(const std::vector<BoxFootprint>& boxes,
                              const PillarCenters& centers) {
  const Index n = static_cast<Index>(centers.centers.size());
  Targets t;
  t.cls.assign(static_cast<std::size_t>(n), -1);
  t.positive.assign(static_cast<std::size_t>(n), false);
  std::vector<double> reg(static_cast<std::size_t>(n * 4), 0.0);
  for (Index j = 0; j < n; ++j) {
    const double px = centers.centers[static_cast<std::size_t>(j)][0];
    const double py = centers.centers[static_cast<std::size_t>(j)][1];
    int best = -1;
    double best_d2 = std::numeric_limits<double>::infinity();
    for (std::size_t q = 0; q < boxes.size(); ++q) {
      if (!boxes[q].contains(px, py)) continue;
      const double dx = boxes[q].x - px, dy = boxes[q].y - py;
      const double d2 = dx * dx + dy * dy;
      if (d2 < best_d2) {
        best_d2 = d2;
        best = static_cast<int>(q);
      }
    }
    if (best < 0) continue;
    const auto& b = boxes[static_cast<std::size_t>(best)];
    t.cls[static_cast<std::size_t>(j)] = b.class_id;
    t.positive[static_cast<std::size_t>(j)] = true;
    ++t.n_positive;
    reg[static_cast<std::size_t>(j * 4 + 0)] = b.x - px;
    reg[static_cast<std::size_t>(j * 4 + 1)] = b.y - py;
    reg[static_cast<std::size_t>(j * 4 + 2)] = std::log(b.w);
    reg[static_cast<std::size_t>(j * 4 + 3)] = std::log(b.h);
  }
  t.reg = Tensor::from_values({n, 4}, reg);
  return t;
}

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

struct ModelConfig {
  VoxelConfig voxel;
  Index enc_channels = 16;
  Index d_f = 32;  // neck output channels; must equal d_v for the residual fusion
  Index d_q = 32;
  Index d_v = 32;
  Index heads = 1;
  Index pool_bev_kh = 4, pool_bev_kw = 4;
  Index pool_rv_kh = 4, pool_rv_kw = 4;
  Index num_classes = 2;
  FusionMode mode = FusionMode::conv;
  bool decouple = true;
  VarTarget var_target = VarTarget::both;
  FocalOptions focal;
  LossWeights lambdas;

  VistaOptions vista_options() const {
    VistaOptions opt;
    opt.mode = mode;
    opt.decouple = decouple;
    opt.heads = heads;
    opt.pool_bev_kh = pool_bev_kh;
    opt.pool_bev_kw = pool_bev_kw;
    opt.pool_rv_kh = pool_rv_kh;
    opt.pool_rv_kw = pool_rv_kw;
    return opt;
  }
};

struct ForwardResult {
  VistaOutput fusion;
  Tensor logits;  // [N_bev x K]
  Tensor reg;     // [N_bev x 4]
  TotalLoss loss;
};

/// The full desk-scale detector: voxel encoder, per-view neck convs, the
/// cross-view attention block, and pointwise classification/regression heads.
struct Model {
  ModelConfig cfg;
  VoxelEncoderWeights encoder;
  Tensor neck_bev_w, neck_bev_b;
  Tensor neck_rv_w, neck_rv_b;
  VistaWeights vista;
  Tensor head_cls_w, head_cls_b;
  Tensor head_reg_w, head_reg_b;

  static Model init(const ModelConfig& cfg, std::uint64_t seed) {
    if (cfg.d_v != cfg.d_f) {
      throw std::invalid_argument("model: d_v must equal d_f for the residual fusion");
    }
    cfg.voxel.validate();
    std::mt19937_64 rng(seed ^ 0x1157a0u);
    Model m;
    m.cfg = cfg;
    const Index c = cfg.enc_channels;
    m.encoder.w1 = Tensor::randn({c, 4}, rng, std::sqrt(2.0 / 4.0), true);
    m.encoder.b1 = Tensor::randn({c}, rng, 0.01, true);
    m.encoder.w2 = Tensor::randn({c, c}, rng, std::sqrt(2.0 / static_cast<double>(c)), true);
    m.encoder.b2 = Tensor::randn({c}, rng, 0.01, true);
    const Index bev_c = c * cfg.voxel.nz();
    const Index rv_c = c * cfg.voxel.ny();
    m.neck_bev_w = Tensor::randn({cfg.d_f, bev_c, 3, 3}, rng,
                                 std::sqrt(2.0 / static_cast<double>(bev_c * 9)), true);
    m.neck_bev_b = Tensor::randn({cfg.d_f}, rng, 0.01, true);
    m.neck_rv_w = Tensor::randn({cfg.d_f, rv_c, 3, 3}, rng,
                                std::sqrt(2.0 / static_cast<double>(rv_c * 9)), true);
    m.neck_rv_b = Tensor::randn({cfg.d_f}, rng, 0.01, true);
    m.vista = VistaWeights::init(cfg.d_f, cfg.d_q, cfg.d_v, rng);
    m.head_cls_w = Tensor::randn({cfg.num_classes, cfg.d_f}, rng,
                                 std::sqrt(1.0 / static_cast<double>(cfg.d_f)), true);
    m.head_cls_b = Tensor::randn({cfg.num_classes}, rng, 0.01, true);
    m.head_reg_w = Tensor::randn({4, cfg.d_f}, rng,
                                 std::sqrt(1.0 / static_cast<double>(cfg.d_f)), true);
    m.head_reg_b = Tensor::randn({4}, rng, 0.01, true);
    return m;
  }

  std::vector<std::pair<std::string, Tensor>> parameters() {
    std::vector<std::pair<std::string, Tensor>> p;
    p.emplace_back("encoder.w1", encoder.w1);
    p.emplace_back("encoder.b1", encoder.b1);
    p.emplace_back("encoder.w2", encoder.w2);
    p.emplace_back("encoder.b2", encoder.b2);
    p.emplace_back("neck_bev.w", neck_bev_w);
    p.emplace_back("neck_bev.b", neck_bev_b);
    p.emplace_back("neck_rv.w", neck_rv_w);
    p.emplace_back("neck_rv.b", neck_rv_b);
    p.emplace_back("vista.conv_q.w", vista.conv_q_w);
    p.emplace_back("vista.conv_q.b", vista.conv_q_b);
    p.emplace_back("vista.conv_k.w", vista.conv_k_w);
    p.emplace_back("vista.conv_k.b", vista.conv_k_b);
    p.emplace_back("vista.conv_v.w", vista.conv_v_w);
    p.emplace_back("vista.conv_v.b", vista.conv_v_b);
    p.emplace_back("vista.lin_q.w", vista.lin_q_w);
    p.emplace_back("vista.lin_q.b", vista.lin_q_b);
    p.emplace_back("vista.lin_k.w", vista.lin_k_w);
    p.emplace_back("vista.lin_k.b", vista.lin_k_b);
    p.emplace_back("vista.lin_v.w", vista.lin_v_w);
    p.emplace_back("vista.lin_v.b", vista.lin_v_b);
    p.emplace_back("vista.branch_q_sem.w", vista.branch_q_sem_w);
    p.emplace_back("vista.branch_q_sem.b", vista.branch_q_sem_b);
    p.emplace_back("vista.branch_q_geo.w", vista.branch_q_geo_w);
    p.emplace_back("vista.branch_q_geo.b", vista.branch_q_geo_b);
    p.emplace_back("vista.branch_k_sem.w", vista.branch_k_sem_w);
    p.emplace_back("vista.branch_k_sem.b", vista.branch_k_sem_b);
    p.emplace_back("vista.branch_k_geo.w", vista.branch_k_geo_w);
    p.emplace_back("vista.branch_k_geo.b", vista.branch_k_geo_b);
    for (auto [name, ffn] : {std::pair<const char*, FfnWeights*>{"vista.ffn_sem", &vista.ffn_sem},
                             std::pair<const char*, FfnWeights*>{"vista.ffn_geo", &vista.ffn_geo}}) {
      p.emplace_back(std::string(name) + ".w1", ffn->w1);
      p.emplace_back(std::string(name) + ".b1", ffn->b1);
      p.emplace_back(std::string(name) + ".w2", ffn->w2);
      p.emplace_back(std::string(name) + ".b2", ffn->b2);
      p.emplace_back(std::string(name) + ".gamma", ffn->gamma);
      p.emplace_back(std::string(name) + ".beta", ffn->beta);
    }
    p.emplace_back("head_cls.w", head_cls_w);
    p.emplace_back("head_cls.b", head_cls_b);
    p.emplace_back("head_reg.w", head_reg_w);
    p.emplace_back("head_reg.b", head_reg_b);
    return p;
  }

  void zero_grad() {
    for (auto& [name, t] : parameters()) t.zero_grad();
  }

  ForwardResult forward(const SceneSample& scene) const {
    VoxelGrid grid = voxelize(scene.cloud, cfg.voxel);
    Tensor f3d = encode_features(grid, encoder);
    ViewMap bev = collapse(f3d, View::bev);
    ViewMap rv = collapse(f3d, View::rv);
    bev.features = conv2d(bev.features, neck_bev_w, neck_bev_b);
    rv.features = conv2d(rv.features, neck_rv_w, neck_rv_b);

    ForwardResult r;
    r.fusion = vista_forward(bev, rv, vista, cfg.vista_options());

    const Index n_bev = cfg.voxel.nx() * cfg.voxel.ny();
    Tensor sem_flat = reshape(r.fusion.fused_sem.features, {cfg.d_f, n_bev});
    Tensor geo_flat = reshape(r.fusion.fused_geo.features, {cfg.d_f, n_bev});
    r.logits = transpose(conv1d_pointwise(sem_flat, head_cls_w, head_cls_b));
    r.reg = transpose(conv1d_pointwise(geo_flat, head_reg_w, head_reg_b));

    Targets targets = assign_targets(scene.boxes, pillar_centers(cfg.voxel));
    Tensor l_cls = focal_loss(r.logits, targets.cls, cfg.focal);
    Tensor l_reg = l1_loss(r.reg, targets.reg, targets.positive);

    PillarCenters pooled = pillar_centers_pooled(cfg.voxel, cfg.pool_bev_kh, cfg.pool_bev_kw);
    VarianceLoss var_sem = variance_loss_detailed(r.fusion.bundle.a_sem, scene.boxes, pooled);
    VarianceLoss var_geo = variance_loss_detailed(r.fusion.bundle.a_geo, scene.boxes, pooled);
    r.loss = total_loss(l_cls, l_reg, var_sem, var_geo, cfg.lambdas, cfg.var_target);
    return r;
  }
};

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

/// Adam with decoupled weight decay; fixed learning rate.
struct Adam {
  double lr = 1e-3;
  double beta1 = 0.9, beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-2;

  void step(std::vector<std::pair<std::string, Tensor>>& params) {
    ++t_;
    if (state_.empty()) state_.resize(params.size());
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      Tensor& p = params[i].second;
      if (p.grad().size() == 0) continue;
      auto& s = state_[i];
      if (s.m.size() != p.size()) {
        s.m = Tensor::Array::Zero(p.size());
        s.v = Tensor::Array::Zero(p.size());
      }
      s.m = beta1 * s.m + (1.0 - beta1) * p.grad();
      s.v = beta2 * s.v + (1.0 - beta2) * p.grad().square();
      p.data() -= lr * ((s.m / bc1) / ((s.v / bc2).sqrt() + eps) + weight_decay * p.data());
    }
  }

 private:
  struct State {
    Tensor::Array m, v;
  };
  std::vector<State> state_;
  std::int64_t t_ = 0;
};

// ---------------------------------------------------------------------------
// Smoke training
// ---------------------------------------------------------------------------

struct TrainConfig {
  Index steps = 300;
  Index batch_size = 1;
  double learning_rate = 1e-3;
  double beta1 = 0.9, beta2 = 0.999;
  double weight_decay = 1e-2;
  std::uint64_t seed = 0;
  bool augment = false;

  void validate() const {
    if (steps < 1) throw std::invalid_argument("train config: steps must be >= 1");
    if (batch_size < 1) throw std::invalid_argument("train config: batch size must be >= 1");
    if (!(learning_rate > 0)) throw std::invalid_argument("train config: learning rate must be > 0");
  }
};

struct TrainTrace {
  std::vector<LossReport> steps;
  Model model;
};

/// Deterministic single-threaded loop: scenes are visited round-robin,
/// gradients averaged over the batch, parameters updated by Adam. Aborts with
/// a diagnostic when any loss component turns non-finite.
inline TrainTrace train_smoke(const TrainConfig& tc, const std::vector<SceneSample>& scenes,
                              const ModelConfig& mc) {
  tc.validate();
  if (scenes.empty()) throw std::invalid_argument("train_smoke: no scenes");
  TrainTrace trace;
  trace.model = Model::init(mc, tc.seed);
  Adam opt;
  opt.lr = tc.learning_rate;
  opt.beta1 = tc.beta1;
  opt.beta2 = tc.beta2;
  opt.weight_decay = tc.weight_decay;
  auto params = trace.model.parameters();

  std::size_t cursor = 0;
  for (Index step = 0; step < tc.steps; ++step) {
    trace.model.zero_grad();
    Tensor batch_total;
    LossReport report;
    for (Index b = 0; b < tc.batch_size; ++b) {
      const SceneSample& base = scenes[cursor];
      cursor = (cursor + 1) % scenes.size();
      ForwardResult r = tc.augment
                            ? trace.model.forward(augment(
                                  base, tc.seed ^ (0x9e3779b97f4a7c15ull * (step * tc.batch_size + b + 1))))
                            : trace.model.forward(base);
      const double inv_b = 1.0 / static_cast<double>(tc.batch_size);
      batch_total = batch_total.defined() ? add(batch_total, scale(r.loss.total, inv_b))
                                          : scale(r.loss.total, inv_b);
      report.cls += r.loss.report.cls * inv_b;
      report.reg += r.loss.report.reg * inv_b;
      report.var += r.loss.report.var * inv_b;
      report.target += r.loss.report.target * inv_b;
      report.total += r.loss.report.total * inv_b;
      report.lambda_cls = r.loss.report.lambda_cls;
      report.lambda_reg = r.loss.report.lambda_reg;
      report.lambda_var = r.loss.report.lambda_var;
      if (b == 0) report.per_box_variances = r.loss.report.per_box_variances;
    }
    if (!std::isfinite(report.total) || !std::isfinite(report.cls) || !std::isfinite(report.reg) ||
        !std::isfinite(report.var)) {
      throw std::runtime_error("train_smoke: non-finite loss at step " + std::to_string(step) +
                               " (cls=" + std::to_string(report.cls) +
                               ", reg=" + std::to_string(report.reg) +
                               ", var=" + std::to_string(report.var) + ")");
    }
    batch_total.backward();
    opt.step(params);
    trace.steps.push_back(std::move(report));
  }
  return trace;
}

// ---------------------------------------------------------------------------
// Attention concentration metric
// ---------------------------------------------------------------------------

/// Ground-plane x-intervals covered by each pooled RV cell, in the flat
/// row-major order of the RV key sequence. RV integrates the y axis away, so
/// a cell's footprint is an x slab.
inline std::vector<std::array<double, 2>> rv_pooled_x_intervals(const VoxelConfig& cfg, Index kh,
                                                                Index kw) {
  const Index nx = cfg.nx(), nz = cfg.nz();
  const Index px = pooled_extent(nx, kh), pz = pooled_extent(nz, kw);
  std::vector<std::array<double, 2>> out;
  out.reserve(static_cast<std::size_t>(px * pz));
  for (Index i = 0; i < px; ++i) {
    const double x0 = cfg.x_min + static_cast<double>(i * kh) * cfg.res_x;
    const double x1 = cfg.x_min + static_cast<double>(std::min((i + 1) * kh, nx)) * cfg.res_x;
    for (Index j = 0; j < pz; ++j) out.push_back({x0, x1});
  }
  return out;
}

struct ConcentrationReport {
  double in_box_mass = 0.0;   // attention mass on source cells intersecting any object
  double mean_row_max = 0.0;  // mean of per-row maxima (1/m for uniform attention)
  Index rows = 0;             // number of query rows selected by the boxes
};

/// Quantifies how sharply the selected query rows focus on object regions of
/// the source view.
inline ConcentrationReport attention_concentration(
    const Tensor& attention, const std::vector<BoxFootprint>& boxes,
    const PillarCenters& query_centers, const std::vector<std::array<double, 2>>& src_x_intervals) {
  if (attention.rank() != 2 ||
      attention.dim(0) != static_cast<Index>(query_centers.centers.size())) {
    throw std::invalid_argument("attention_concentration: row count must equal query pillar count");
  }
  const Index m = attention.dim(1);
  if (static_cast<Index>(src_x_intervals.size()) != m) {
    throw std::invalid_argument("attention_concentration: source cell count must equal columns");
  }
  std::vector<bool> object_cell(static_cast<std::size_t>(m), false);
  for (Index j = 0; j < m; ++j) {
    for (const auto& b : boxes) {
      const double lo = b.x - b.w / 2, hi = b.x + b.w / 2;
      if (hi >= src_x_intervals[static_cast<std::size_t>(j)][0] &&
          lo <= src_x_intervals[static_cast<std::size_t>(j)][1]) {
        object_cell[static_cast<std::size_t>(j)] = true;
        break;
      }
    }
  }
  std::vector<bool> selected(query_centers.centers.size(), false);
  for (const auto& rows : select_box_rows(boxes, query_centers)) {
    for (Index i : rows) selected[static_cast<std::size_t>(i)] = true;
  }
  ConcentrationReport rep;
  for (std::size_t i = 0; i < selected.size(); ++i) {
    if (!selected[i]) continue;
    ++rep.rows;
    double mass = 0.0, row_max = 0.0;
    for (Index j = 0; j < m; ++j) {
      const double a = attention[static_cast<Index>(i) * m + j];
      if (object_cell[static_cast<std::size_t>(j)]) mass += a;
      row_max = std::max(row_max, a);
    }
    rep.in_box_mass += mass;
    rep.mean_row_max += row_max;
  }
  if (rep.rows > 0) {
    rep.in_box_mass /= static_cast<double>(rep.rows);
    rep.mean_row_max /= static_cast<double>(rep.rows);
  }
  return rep;
}

struct BranchConcentration {
  ConcentrationReport sem, geo;
};

inline BranchConcentration attention_concentration(const AttentionBundle& bundle,
                                                   const std::vector<BoxFootprint>& boxes,
                                                   const PillarCenters& query_centers,
                                                   const std::vector<std::array<double, 2>>& src) {
  return {attention_concentration(bundle.a_sem, boxes, query_centers, src),
          attention_concentration(bundle.a_geo, boxes, query_centers, src)};
}

}  // namespace vista
