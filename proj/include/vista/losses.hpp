#pragma once

#include "vista/ops.hpp"
#include "vista/tensor.hpp"
#include "vista/voxel.hpp"

#include <cmath>
#include <string>
#include <vector>

namespace vista {

/// Axis-aligned ground-plane box: full extents (w, h) and center (x, y).
struct BoxFootprint {
  double w = 0, h = 0;
  double x = 0, y = 0;
  int class_id = 0;

  void validate() const {
    if (!(w > 0 && h > 0)) throw std::invalid_argument("box: extents must be positive");
  }

  bool contains(double px, double py) const {
    return x - w / 2 <= px && px <= x + w / 2 && y - h / 2 <= py && py <= y + h / 2;
  }
};

enum class VarTarget { sem, geo, both };

inline const char* var_target_name(VarTarget v) {
  switch (v) {
    case VarTarget::sem: return "sem";
    case VarTarget::geo: return "geo";
    default: return "both";
  }
}

inline VarTarget parse_var_target(const std::string& s) {
  if (s == "sem") return VarTarget::sem;
  if (s == "geo") return VarTarget::geo;
  if (s == "both") return VarTarget::both;
  throw std::invalid_argument("unknown var target '" + s + "' (expected sem|geo|both)");
}

/// Per-box sets of attention rows: pillar p belongs to box q iff its center
/// lies inside the footprint, bounds inclusive on both sides.
inline std::vector<std::vector<Index>> select_box_rows(const std::vector<BoxFootprint>& boxes,
                                                       const PillarCenters& centers) {
  std::vector<std::vector<Index>> rows(boxes.size());
  for (std::size_t q = 0; q < boxes.size(); ++q) {
    boxes[q].validate();
    for (std::size_t j = 0; j < centers.centers.size(); ++j) {
      if (boxes[q].contains(centers.centers[j][0], centers.centers[j][1])) {
        rows[q].push_back(static_cast<Index>(j));
      }
    }
  }
  return rows;
}

inline std::vector<std::vector<Index>> select_box_rows(const Tensor& attention,
                                                       const std::vector<BoxFootprint>& boxes,
                                                       const PillarCenters& centers) {
  if (attention.rank() != 2 ||
      attention.dim(0) != static_cast<Index>(centers.centers.size())) {
    throw std::invalid_argument("select_box_rows: attention row count must equal pillar count");
  }
  return select_box_rows(boxes, centers);
}

namespace detail {

struct VarianceParts {
  std::vector<double> row_coeff;      // per attention row: sum over boxes of 1/(N_q * N_active)
  std::vector<double> per_box;        // mean row variance per box (0 for empty boxes)
  Index active_boxes = 0;
};

inline VarianceParts variance_parts(const Tensor& attention,
                                    const std::vector<std::vector<Index>>& rows_per_box,
                                    Index m) {
  VarianceParts parts;
  parts.row_coeff.assign(static_cast<std::size_t>(attention.dim(0)), 0.0);
  parts.per_box.assign(rows_per_box.size(), 0.0);
  for (const auto& rows : rows_per_box) {
    if (!rows.empty()) ++parts.active_boxes;
  }
  if (parts.active_boxes == 0) return parts;
  for (std::size_t q = 0; q < rows_per_box.size(); ++q) {
    const auto& rows = rows_per_box[q];
    if (rows.empty()) continue;
    const double wq = 1.0 / (static_cast<double>(rows.size()) * static_cast<double>(parts.active_boxes));
    double box_var = 0.0;
    for (Index i : rows) {
      parts.row_coeff[static_cast<std::size_t>(i)] += wq;
      double mean = 0.0;
      for (Index j = 0; j < m; ++j) mean += attention[i * m + j];
      mean /= static_cast<double>(m);
      double var = 0.0;
      for (Index j = 0; j < m; ++j) {
        const double d = attention[i * m + j] - mean;
        var += d * d;
      }
      box_var += var / static_cast<double>(m);
    }
    parts.per_box[q] = box_var / static_cast<double>(rows.size());
  }
  return parts;
}

}  // namespace detail

struct VarianceLoss {
  Tensor loss;                    // scalar, differentiable w.r.t. the attention map
  std::vector<double> per_box;    // mean row variance per box; 0 for boxes covering no pillar
  Index active_boxes = 0;
};

/// Attention variance constraint: the negated average (over boxes with at
/// least one pillar, then over that box's rows) of the population variance of
/// each selected attention row. Zero when no box covers any pillar.
inline VarianceLoss variance_loss_detailed(const Tensor& attention,
                                           const std::vector<BoxFootprint>& boxes,
                                           const PillarCenters& centers) {
  if (attention.rank() != 2 ||
      attention.dim(0) != static_cast<Index>(centers.centers.size())) {
    throw std::invalid_argument("variance_loss: attention row count must equal pillar count");
  }
  const Index m = attention.dim(1);
  auto rows_per_box = select_box_rows(boxes, centers);
  auto parts = detail::variance_parts(attention, rows_per_box, m);

  VarianceLoss out;
  out.per_box = parts.per_box;
  out.active_boxes = parts.active_boxes;

  double total = 0.0;
  for (std::size_t q = 0; q < rows_per_box.size(); ++q) total += parts.per_box[q];
  if (parts.active_boxes > 0) total /= static_cast<double>(parts.active_boxes);

  typename Tensor::Array d(1);
  d[0] = -total;
  Tensor loss = detail::make_tensor<double>({1}, std::move(d), attention.requires_grad());
  auto pa = attention.node_ptr();
  const Index n = attention.dim(0);
  detail::attach(loss, {pa}, [pa, n, m, coeff = std::move(parts.row_coeff)](auto& o) {
    pa->ensure_grad();
    const double g = o.grad[0];
    for (Index i = 0; i < n; ++i) {
      const double c = coeff[static_cast<std::size_t>(i)];
      if (c == 0.0) continue;
      double mean = 0.0;
      for (Index j = 0; j < m; ++j) mean += pa->data[i * m + j];
      mean /= static_cast<double>(m);
      const double k = -g * c * 2.0 / static_cast<double>(m);
      for (Index j = 0; j < m; ++j) pa->grad[i * m + j] += k * (pa->data[i * m + j] - mean);
    }
  });
  out.loss = loss;
  return out;
}

inline Tensor variance_loss(const Tensor& attention, const std::vector<BoxFootprint>& boxes,
                            const PillarCenters& centers) {
  return variance_loss_detailed(attention, boxes, centers).loss;
}

struct FocalOptions {
  double alpha = 0.25;
  double gamma = 2.0;
  // Appendix-style label scaling knob: multiplies every negative-target term.
  double background_weight = 1.0;
};

namespace detail {

inline double softplus(double x) { return std::log1p(std::exp(-std::abs(x))) + std::max(x, 0.0); }

inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace detail

/// Sigmoid focal classification loss over per-pillar logits [N x K]. Targets
/// hold a class index per pillar, -1 for background. Normalized by the number
/// of positive pillars (at least 1).
inline Tensor focal_loss(const Tensor& logits, const std::vector<int>& targets,
                         const FocalOptions& opt = {}) {
  if (logits.rank() != 2) throw std::invalid_argument("focal_loss: logits must be [N x K]");
  const Index n = logits.dim(0), k = logits.dim(1);
  if (static_cast<Index>(targets.size()) != n) {
    throw std::invalid_argument("focal_loss: target count must equal pillar count");
  }
  Index n_pos = 0;
  for (int t : targets) {
    if (t >= static_cast<int>(k)) throw std::invalid_argument("focal_loss: class index out of range");
    if (t >= 0) ++n_pos;
  }
  const double norm = 1.0 / static_cast<double>(std::max<Index>(n_pos, 1));

  double loss = 0.0;
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < k; ++j) {
      const double z = logits[i * k + j];
      const double p = detail::sigmoid(z);
      const double log_p = -detail::softplus(-z);
      const double log_1p = -detail::softplus(z);
      if (targets[static_cast<std::size_t>(i)] == static_cast<int>(j)) {
        loss += -opt.alpha * std::pow(1.0 - p, opt.gamma) * log_p;
      } else {
        loss += opt.background_weight * -(1.0 - opt.alpha) * std::pow(p, opt.gamma) * log_1p;
      }
    }
  }
  typename Tensor::Array d(1);
  d[0] = loss * norm;
  Tensor out = detail::make_tensor<double>({1}, std::move(d), logits.requires_grad());
  auto pl = logits.node_ptr();
  detail::attach(out, {pl}, [pl, n, k, targets, opt, norm](auto& o) {
    pl->ensure_grad();
    const double g = o.grad[0] * norm;
    for (Index i = 0; i < n; ++i) {
      for (Index j = 0; j < k; ++j) {
        const double z = pl->data[i * k + j];
        const double p = detail::sigmoid(z);
        const double log_p = -detail::softplus(-z);
        const double log_1p = -detail::softplus(z);
        double dz;
        if (targets[static_cast<std::size_t>(i)] == static_cast<int>(j)) {
          dz = opt.alpha * std::pow(1.0 - p, opt.gamma) * (opt.gamma * p * log_p - (1.0 - p));
        } else {
          dz = opt.background_weight * (1.0 - opt.alpha) * std::pow(p, opt.gamma) *
               (p - opt.gamma * (1.0 - p) * log_1p);
        }
        pl->grad[i * k + j] += g * dz;
      }
    }
  });
  return out;
}

/// Mean absolute error over positive pillars and regression channels; zero
/// when nothing is positive.
inline Tensor l1_loss(const Tensor& pred, const Tensor& target,
                      const std::vector<bool>& positive_mask) {
  if (pred.shape() != target.shape() || pred.rank() != 2) {
    throw std::invalid_argument("l1_loss: pred/target must be matching [N x R]");
  }
  const Index n = pred.dim(0), r = pred.dim(1);
  if (static_cast<Index>(positive_mask.size()) != n) {
    throw std::invalid_argument("l1_loss: mask length must equal pillar count");
  }
  Index n_pos = 0;
  for (bool b : positive_mask) {
    if (b) ++n_pos;
  }
  double loss = 0.0;
  if (n_pos > 0) {
    for (Index i = 0; i < n; ++i) {
      if (!positive_mask[static_cast<std::size_t>(i)]) continue;
      for (Index j = 0; j < r; ++j) loss += std::abs(pred[i * r + j] - target[i * r + j]);
    }
    loss /= static_cast<double>(n_pos * r);
  }
  typename Tensor::Array d(1);
  d[0] = loss;
  Tensor out = detail::make_tensor<double>({1}, std::move(d), pred.requires_grad());
  auto pp = pred.node_ptr();
  auto pt = target.node_ptr();
  detail::attach(out, {pp, pt}, [pp, pt, n, r, n_pos, positive_mask](auto& o) {
    if (n_pos == 0) return;
    const double g = o.grad[0] / static_cast<double>(n_pos * r);
    for (Index i = 0; i < n; ++i) {
      if (!positive_mask[static_cast<std::size_t>(i)]) continue;
      for (Index j = 0; j < r; ++j) {
        const double diff = pp->data[i * r + j] - pt->data[i * r + j];
        const double s = diff > 0 ? 1.0 : (diff < 0 ? -1.0 : 0.0);
        if (pp->requires_grad) {
          pp->ensure_grad();
          pp->grad[i * r + j] += g * s;
        }
        if (pt->requires_grad) {
          pt->ensure_grad();
          pt->grad[i * r + j] -= g * s;
        }
      }
    }
  });
  return out;
}

struct LossWeights {
  double lambda_cls = 1.0;
  double lambda_reg = 0.25;
  double lambda_var = 1.0;
};

struct LossReport {
  double cls = 0, reg = 0, var = 0, target = 0, total = 0;
  double lambda_cls = 1.0, lambda_reg = 0.25, lambda_var = 1.0;
  std::vector<double> per_box_variances;
};

struct TotalLoss {
  Tensor total;  // scalar; backward drives the whole model
  LossReport report;
};

/// Weighted joint objective: target = l1*cls + l2*reg, total = target +
/// l3*var, with the variance term drawn from the sem branch, the geo branch,
/// or the mean of both.
inline TotalLoss total_loss(const Tensor& cls, const Tensor& reg, const VarianceLoss& var_sem,
                            const VarianceLoss& var_geo, const LossWeights& w,
                            VarTarget var_target) {
  Tensor var;
  const VarianceLoss* report_src = nullptr;
  switch (var_target) {
    case VarTarget::sem:
      var = var_sem.loss;
      report_src = &var_sem;
      break;
    case VarTarget::geo:
      var = var_geo.loss;
      report_src = &var_geo;
      break;
    default:
      var = scale(add(var_sem.loss, var_geo.loss), 0.5);
      report_src = &var_sem;
      break;
  }
  Tensor target = add(scale(cls, w.lambda_cls), scale(reg, w.lambda_reg));
  Tensor total = add(target, scale(var, w.lambda_var));

  TotalLoss out;
  out.total = total;
  out.report.cls = cls.value();
  out.report.reg = reg.value();
  out.report.var = var.value();
  out.report.target = target.value();
  out.report.total = total.value();
  out.report.lambda_cls = w.lambda_cls;
  out.report.lambda_reg = w.lambda_reg;
  out.report.lambda_var = w.lambda_var;
  out.report.per_box_variances = report_src->per_box;
  if (var_target == VarTarget::both) {
    for (std::size_t q = 0; q < out.report.per_box_variances.size(); ++q) {
      out.report.per_box_variances[q] =
          0.5 * (var_sem.per_box[q] + var_geo.per_box[q]);
    }
  }
  return out;
}

}  // namespace vista
