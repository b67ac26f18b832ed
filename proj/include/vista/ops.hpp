#pragma once

#include "vista/tensor.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <utility>

namespace vista {

namespace detail {

template <class Scalar>
using MatRM = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <class Scalar>
using MapRM = Eigen::Map<MatRM<Scalar>>;

template <class Scalar>
using CMapRM = Eigen::Map<const MatRM<Scalar>>;

template <class Scalar>
bool wants_grad(const TensorT<Scalar>& t) {
  return t.requires_grad();
}

template <class Scalar, class... Ts>
bool wants_grad(const TensorT<Scalar>& t, const Ts&... rest) {
  return t.requires_grad() || wants_grad(rest...);
}

template <class Scalar, class Fn>
void attach(TensorT<Scalar>& out, std::vector<std::shared_ptr<typename TensorT<Scalar>::Node>> parents,
            Fn&& backward) {
  if (!out.requires_grad()) return;
  auto& node = *out.node_ptr();
  node.parents = std::move(parents);
  node.backward = std::forward<Fn>(backward);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise
// ---------------------------------------------------------------------------

template <class Scalar>
TensorT<Scalar> add(const TensorT<Scalar>& a, const TensorT<Scalar>& b) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument("add: shape mismatch " + shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
  }
  auto out = detail::make_tensor<Scalar>(a.shape(), a.data() + b.data(),
                                         detail::wants_grad(a, b));
  auto pa = a.node_ptr(), pb = b.node_ptr();
  detail::attach(out, {pa, pb}, [pa, pb](auto& o) {
    if (pa->requires_grad) {
      pa->ensure_grad();
      pa->grad += o.grad;
    }
    if (pb->requires_grad) {
      pb->ensure_grad();
      pb->grad += o.grad;
    }
  });
  return out;
}

template <class Scalar>
TensorT<Scalar> sub(const TensorT<Scalar>& a, const TensorT<Scalar>& b) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument("sub: shape mismatch " + shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
  }
  auto out = detail::make_tensor<Scalar>(a.shape(), a.data() - b.data(),
                                         detail::wants_grad(a, b));
  auto pa = a.node_ptr(), pb = b.node_ptr();
  detail::attach(out, {pa, pb}, [pa, pb](auto& o) {
    if (pa->requires_grad) {
      pa->ensure_grad();
      pa->grad += o.grad;
    }
    if (pb->requires_grad) {
      pb->ensure_grad();
      pb->grad -= o.grad;
    }
  });
  return out;
}

template <class Scalar>
TensorT<Scalar> mul(const TensorT<Scalar>& a, const TensorT<Scalar>& b) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument("mul: shape mismatch " + shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
  }
  auto out = detail::make_tensor<Scalar>(a.shape(), a.data() * b.data(),
                                         detail::wants_grad(a, b));
  auto pa = a.node_ptr(), pb = b.node_ptr();
  detail::attach(out, {pa, pb}, [pa, pb](auto& o) {
    if (pa->requires_grad) {
      pa->ensure_grad();
      pa->grad += o.grad * pb->data;
    }
    if (pb->requires_grad) {
      pb->ensure_grad();
      pb->grad += o.grad * pa->data;
    }
  });
  return out;
}

template <class Scalar>
TensorT<Scalar> scale(const TensorT<Scalar>& a, Scalar s) {
  auto out = detail::make_tensor<Scalar>(a.shape(), a.data() * s, a.requires_grad());
  auto pa = a.node_ptr();
  detail::attach(out, {pa}, [pa, s](auto& o) {
    pa->ensure_grad();
    pa->grad += o.grad * s;
  });
  return out;
}

template <class Scalar>
TensorT<Scalar> relu(const TensorT<Scalar>& a) {
  auto out = detail::make_tensor<Scalar>(a.shape(), a.data().max(Scalar(0)), a.requires_grad());
  auto pa = a.node_ptr();
  detail::attach(out, {pa}, [pa](auto& o) {
    pa->ensure_grad();
    pa->grad += o.grad * (pa->data > Scalar(0)).template cast<Scalar>();
  });
  return out;
}

template <class Scalar>
TensorT<Scalar> sum(const TensorT<Scalar>& a) {
  typename TensorT<Scalar>::Array d(1);
  d[0] = a.data().sum();
  auto out = detail::make_tensor<Scalar>({1}, std::move(d), a.requires_grad());
  auto pa = a.node_ptr();
  detail::attach(out, {pa}, [pa](auto& o) {
    pa->ensure_grad();
    pa->grad += o.grad[0];
  });
  return out;
}

// ---------------------------------------------------------------------------
// Shape manipulation
// ---------------------------------------------------------------------------

template <class Scalar>
TensorT<Scalar> reshape(const TensorT<Scalar>& a, Shape shape) {
  if (numel(shape) != a.size()) {
    throw std::invalid_argument("reshape: element count mismatch " + shape_str(a.shape()) +
                                " -> " + shape_str(shape));
  }
  auto out = detail::make_tensor<Scalar>(std::move(shape), a.data(), a.requires_grad());
  auto pa = a.node_ptr();
  detail::attach(out, {pa}, [pa](auto& o) {
    pa->ensure_grad();
    pa->grad += o.grad;
  });
  return out;
}

template <class Scalar>
TensorT<Scalar> transpose(const TensorT<Scalar>& a) {
  if (a.rank() != 2) throw std::invalid_argument("transpose: rank-2 tensor required");
  const Index n = a.dim(0), m = a.dim(1);
  typename TensorT<Scalar>::Array d(n * m);
  detail::MapRM<Scalar>(d.data(), m, n) = detail::CMapRM<Scalar>(a.data().data(), n, m).transpose();
  auto out = detail::make_tensor<Scalar>({m, n}, std::move(d), a.requires_grad());
  auto pa = a.node_ptr();
  detail::attach(out, {pa}, [pa, n, m](auto& o) {
    pa->ensure_grad();
    detail::MapRM<Scalar> ga(pa->grad.data(), n, m);
    ga += detail::CMapRM<Scalar>(o.grad.data(), m, n).transpose();
  });
  return out;
}

/// Fold one spatial axis of a rank-4 [C x D1 x D2 x D3] tensor into channels.
/// Output channel index is c*E + e where E is the folded extent; the two
/// remaining spatial axes keep their order. Pure permutation of elements.
template <class Scalar>
TensorT<Scalar> fold_axis_into_channels(const TensorT<Scalar>& a, int axis) {
  if (a.rank() != 4) throw std::invalid_argument("fold_axis_into_channels: rank-4 tensor required");
  if (axis < 1 || axis > 3) throw std::invalid_argument("fold_axis_into_channels: axis must be 1, 2, or 3");
  const Index c = a.dim(0), d1 = a.dim(1), d2 = a.dim(2), d3 = a.dim(3);
  const Index ext[4] = {c, d1, d2, d3};
  const Index e = ext[axis];
  Index sa = 0, sb = 0;
  {
    Index rem[2], k = 0;
    for (int ax = 1; ax <= 3; ++ax) {
      if (ax != axis) rem[k++] = ext[ax];
    }
    sa = rem[0];
    sb = rem[1];
  }
  typename TensorT<Scalar>::Array d(a.size());
  const Scalar* src = a.data().data();
  Scalar* dst = d.data();
  // out[(ci*e + ei), ia, ib] = in[ci, axis->ei, others ia/ib in order]
  for (Index ci = 0; ci < c; ++ci) {
    for (Index ei = 0; ei < e; ++ei) {
      for (Index ia = 0; ia < sa; ++ia) {
        for (Index ib = 0; ib < sb; ++ib) {
          Index i1, i2, i3;
          switch (axis) {
            case 1: i1 = ei; i2 = ia; i3 = ib; break;
            case 2: i1 = ia; i2 = ei; i3 = ib; break;
            default: i1 = ia; i2 = ib; i3 = ei; break;
          }
          dst[((ci * e + ei) * sa + ia) * sb + ib] = src[((ci * d1 + i1) * d2 + i2) * d3 + i3];
        }
      }
    }
  }
  auto out = detail::make_tensor<Scalar>({c * e, sa, sb}, std::move(d), a.requires_grad());
  auto pa = a.node_ptr();
  detail::attach(out, {pa}, [pa, axis, c, d1, d2, d3, e, sa, sb](auto& o) {
    pa->ensure_grad();
    const Scalar* g = o.grad.data();
    Scalar* gin = pa->grad.data();
    for (Index ci = 0; ci < c; ++ci) {
      for (Index ei = 0; ei < e; ++ei) {
        for (Index ia = 0; ia < sa; ++ia) {
          for (Index ib = 0; ib < sb; ++ib) {
            Index i1, i2, i3;
            switch (axis) {
              case 1: i1 = ei; i2 = ia; i3 = ib; break;
              case 2: i1 = ia; i2 = ei; i3 = ib; break;
              default: i1 = ia; i2 = ib; i3 = ei; break;
            }
            gin[((ci * d1 + i1) * d2 + i2) * d3 + i3] += g[((ci * e + ei) * sa + ia) * sb + ib];
          }
        }
      }
    }
  });
  return out;
}

/// Inverse of fold_axis_into_channels given the original channel count.
template <class Scalar>
TensorT<Scalar> unfold_channels_to_axis(const TensorT<Scalar>& a, int axis, Index base_channels) {
  if (a.rank() != 3) throw std::invalid_argument("unfold_channels_to_axis: rank-3 tensor required");
  if (axis < 1 || axis > 3) throw std::invalid_argument("unfold_channels_to_axis: axis must be 1, 2, or 3");
  const Index folded = a.dim(0), sa = a.dim(1), sb = a.dim(2);
  if (base_channels <= 0 || folded % base_channels != 0) {
    throw std::invalid_argument("unfold_channels_to_axis: channel count not divisible");
  }
  const Index c = base_channels;
  const Index e = folded / c;
  Index d1, d2, d3;
  switch (axis) {
    case 1: d1 = e; d2 = sa; d3 = sb; break;
    case 2: d1 = sa; d2 = e; d3 = sb; break;
    default: d1 = sa; d2 = sb; d3 = e; break;
  }
  typename TensorT<Scalar>::Array d(a.size());
  const Scalar* src = a.data().data();
  Scalar* dst = d.data();
  for (Index ci = 0; ci < c; ++ci) {
    for (Index ei = 0; ei < e; ++ei) {
      for (Index ia = 0; ia < sa; ++ia) {
        for (Index ib = 0; ib < sb; ++ib) {
          Index i1, i2, i3;
          switch (axis) {
            case 1: i1 = ei; i2 = ia; i3 = ib; break;
            case 2: i1 = ia; i2 = ei; i3 = ib; break;
            default: i1 = ia; i2 = ib; i3 = ei; break;
          }
          dst[((ci * d1 + i1) * d2 + i2) * d3 + i3] = src[((ci * e + ei) * sa + ia) * sb + ib];
        }
      }
    }
  }
  auto out = detail::make_tensor<Scalar>({c, d1, d2, d3}, std::move(d), a.requires_grad());
  auto pa = a.node_ptr();
  detail::attach(out, {pa}, [pa, axis, c, e, sa, sb, d1, d2, d3](auto& o) {
    pa->ensure_grad();
    const Scalar* g = o.grad.data();
    Scalar* gin = pa->grad.data();
    for (Index ci = 0; ci < c; ++ci) {
      for (Index ei = 0; ei < e; ++ei) {
        for (Index ia = 0; ia < sa; ++ia) {
          for (Index ib = 0; ib < sb; ++ib) {
            Index i1, i2, i3;
            switch (axis) {
              case 1: i1 = ei; i2 = ia; i3 = ib; break;
              case 2: i1 = ia; i2 = ei; i3 = ib; break;
              default: i1 = ia; i2 = ib; i3 = ei; break;
            }
            gin[((ci * e + ei) * sa + ia) * sb + ib] += g[((ci * d1 + i1) * d2 + i2) * d3 + i3];
          }
        }
      }
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

template <class Scalar>
TensorT<Scalar> matmul(const TensorT<Scalar>& a, const TensorT<Scalar>& b) {
  if (a.rank() != 2 || b.rank() != 2) throw std::invalid_argument("matmul: rank-2 tensors required");
  if (a.dim(1) != b.dim(0)) {
    throw std::invalid_argument("matmul: inner extents differ " + shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
  }
  const Index n = a.dim(0), k = a.dim(1), m = b.dim(1);
  typename TensorT<Scalar>::Array d(n * m);
  detail::MapRM<Scalar>(d.data(), n, m).noalias() =
      detail::CMapRM<Scalar>(a.data().data(), n, k) * detail::CMapRM<Scalar>(b.data().data(), k, m);
  auto out = detail::make_tensor<Scalar>({n, m}, std::move(d), detail::wants_grad(a, b));
  auto pa = a.node_ptr(), pb = b.node_ptr();
  detail::attach(out, {pa, pb}, [pa, pb, n, k, m](auto& o) {
    detail::CMapRM<Scalar> g(o.grad.data(), n, m);
    if (pa->requires_grad) {
      pa->ensure_grad();
      detail::MapRM<Scalar> ga(pa->grad.data(), n, k);
      ga.noalias() += g * detail::CMapRM<Scalar>(pb->data.data(), k, m).transpose();
    }
    if (pb->requires_grad) {
      pb->ensure_grad();
      detail::MapRM<Scalar> gb(pb->grad.data(), k, m);
      gb.noalias() += detail::CMapRM<Scalar>(pa->data.data(), n, k).transpose() * g;
    }
  });
  return out;
}

/// Row-wise softmax with per-row max subtraction.
template <class Scalar>
TensorT<Scalar> softmax_rows(const TensorT<Scalar>& a) {
  if (a.rank() != 2) throw std::invalid_argument("softmax_rows: rank-2 tensor required");
  const Index n = a.dim(0), m = a.dim(1);
  typename TensorT<Scalar>::Array d(n * m);
  {
    detail::CMapRM<Scalar> x(a.data().data(), n, m);
    detail::MapRM<Scalar> y(d.data(), n, m);
    for (Index i = 0; i < n; ++i) {
      const Scalar mx = x.row(i).maxCoeff();
      y.row(i) = (x.row(i).array() - mx).exp();
      y.row(i) /= y.row(i).sum();
    }
  }
  auto out = detail::make_tensor<Scalar>({n, m}, std::move(d), a.requires_grad());
  auto pa = a.node_ptr();
  auto out_node = out.node_ptr();
  detail::attach(out, {pa}, [pa, n, m](auto& o) {
    pa->ensure_grad();
    detail::CMapRM<Scalar> y(o.data.data(), n, m);
    detail::CMapRM<Scalar> g(o.grad.data(), n, m);
    detail::MapRM<Scalar> gx(pa->grad.data(), n, m);
    for (Index i = 0; i < n; ++i) {
      const Scalar dot = (g.row(i).array() * y.row(i).array()).sum();
      gx.row(i).array() += y.row(i).array() * (g.row(i).array() - dot);
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// Convolution
// ---------------------------------------------------------------------------

namespace detail {

/// im2col for 3x3 kernels with zero padding 1 (same-size output).
/// col is (C_in*9) x (H*W), column-major.
template <class Scalar>
void im2col_3x3(const Scalar* x, Index c_in, Index h, Index w,
                Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& col) {
  col.setZero(c_in * 9, h * w);
  for (Index ci = 0; ci < c_in; ++ci) {
    const Scalar* plane = x + ci * h * w;
    for (Index ky = 0; ky < 3; ++ky) {
      for (Index kx = 0; kx < 3; ++kx) {
        const Index row = (ci * 3 + ky) * 3 + kx;
        for (Index y = 0; y < h; ++y) {
          const Index sy = y + ky - 1;
          if (sy < 0 || sy >= h) continue;
          for (Index x2 = 0; x2 < w; ++x2) {
            const Index sx = x2 + kx - 1;
            if (sx < 0 || sx >= w) continue;
            col(row, y * w + x2) = plane[sy * w + sx];
          }
        }
      }
    }
  }
}

/// Transpose of im2col_3x3: scatter-add columns back onto the input plane.
template <class Scalar>
void col2im_3x3(const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& col,
                Index c_in, Index h, Index w, Scalar* gx) {
  for (Index ci = 0; ci < c_in; ++ci) {
    Scalar* plane = gx + ci * h * w;
    for (Index ky = 0; ky < 3; ++ky) {
      for (Index kx = 0; kx < 3; ++kx) {
        const Index row = (ci * 3 + ky) * 3 + kx;
        for (Index y = 0; y < h; ++y) {
          const Index sy = y + ky - 1;
          if (sy < 0 || sy >= h) continue;
          for (Index x2 = 0; x2 < w; ++x2) {
            const Index sx = x2 + kx - 1;
            if (sx < 0 || sx >= w) continue;
            plane[sy * w + sx] += col(row, y * w + x2);
          }
        }
      }
    }
  }
}

}  // namespace detail

/// 3x3 cross-correlation with zero padding 1 (same-size output), backed by
/// im2col + GEMM. x is [C_in x H x W], w is [C_out x C_in x 3 x 3], b [C_out].
template <class Scalar>
TensorT<Scalar> conv2d(const TensorT<Scalar>& x, const TensorT<Scalar>& w,
                       const TensorT<Scalar>& b) {
  if (x.rank() != 3) throw std::invalid_argument("conv2d: input must be [C x H x W]");
  if (w.rank() != 4 || w.dim(2) != 3 || w.dim(3) != 3) {
    throw std::invalid_argument("conv2d: kernel must be [C_out x C_in x 3 x 3]");
  }
  if (w.dim(1) != x.dim(0)) {
    throw std::invalid_argument("conv2d: channel mismatch, input " + shape_str(x.shape()) +
                                " kernel " + shape_str(w.shape()));
  }
  if (b.rank() != 1 || b.dim(0) != w.dim(0)) {
    throw std::invalid_argument("conv2d: bias must be [C_out]");
  }
  const Index c_in = x.dim(0), h = x.dim(1), ww = x.dim(2), c_out = w.dim(0);
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> col;
  detail::im2col_3x3(x.data().data(), c_in, h, ww, col);
  typename TensorT<Scalar>::Array d(c_out * h * ww);
  {
    detail::MapRM<Scalar> out_mat(d.data(), c_out, h * ww);
    detail::CMapRM<Scalar> w_mat(w.data().data(), c_out, c_in * 9);
    out_mat.noalias() = w_mat * col;
    out_mat.colwise() += Eigen::Map<const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>>(b.data().data(), c_out);
  }
  auto out = detail::make_tensor<Scalar>({c_out, h, ww}, std::move(d),
                                         detail::wants_grad(x, w, b));
  auto px = x.node_ptr(), pw = w.node_ptr(), pb = b.node_ptr();
  detail::attach(out, {px, pw, pb}, [px, pw, pb, c_in, h, ww, c_out](auto& o) {
    detail::CMapRM<Scalar> g(o.grad.data(), c_out, h * ww);
    if (pb->requires_grad) {
      pb->ensure_grad();
      Eigen::Map<Eigen::Matrix<Scalar, Eigen::Dynamic, 1>>(pb->grad.data(), c_out) +=
          g.rowwise().sum();
    }
    if (pw->requires_grad || px->requires_grad) {
      // col is recomputed rather than kept alive in the closure.
      Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> col2;
      detail::im2col_3x3(px->data.data(), c_in, h, ww, col2);
      if (pw->requires_grad) {
        pw->ensure_grad();
        detail::MapRM<Scalar> gw(pw->grad.data(), c_out, c_in * 9);
        gw.noalias() += g * col2.transpose();
      }
      if (px->requires_grad) {
        px->ensure_grad();
        detail::CMapRM<Scalar> w_mat(pw->data.data(), c_out, c_in * 9);
        Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> gcol = w_mat.transpose() * g;
        detail::col2im_3x3(gcol, c_in, h, ww, px->grad.data());
      }
    }
  });
  return out;
}

/// Per-position linear map over a sequence: x [C_in x L] -> [C_out x L].
template <class Scalar>
TensorT<Scalar> conv1d_pointwise(const TensorT<Scalar>& x, const TensorT<Scalar>& w,
                                 const TensorT<Scalar>& b) {
  if (x.rank() != 2) throw std::invalid_argument("conv1d_pointwise: input must be [C x L]");
  if (w.rank() != 2 || w.dim(1) != x.dim(0)) {
    throw std::invalid_argument("conv1d_pointwise: channel mismatch, input " + shape_str(x.shape()) +
                                " weight " + shape_str(w.shape()));
  }
  if (b.rank() != 1 || b.dim(0) != w.dim(0)) {
    throw std::invalid_argument("conv1d_pointwise: bias must be [C_out]");
  }
  const Index c_in = x.dim(0), l = x.dim(1), c_out = w.dim(0);
  typename TensorT<Scalar>::Array d(c_out * l);
  {
    detail::MapRM<Scalar> y(d.data(), c_out, l);
    y.noalias() = detail::CMapRM<Scalar>(w.data().data(), c_out, c_in) *
                  detail::CMapRM<Scalar>(x.data().data(), c_in, l);
    y.colwise() += Eigen::Map<const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>>(b.data().data(), c_out);
  }
  auto out = detail::make_tensor<Scalar>({c_out, l}, std::move(d), detail::wants_grad(x, w, b));
  auto px = x.node_ptr(), pw = w.node_ptr(), pb = b.node_ptr();
  detail::attach(out, {px, pw, pb}, [px, pw, pb, c_in, l, c_out](auto& o) {
    detail::CMapRM<Scalar> g(o.grad.data(), c_out, l);
    if (pb->requires_grad) {
      pb->ensure_grad();
      Eigen::Map<Eigen::Matrix<Scalar, Eigen::Dynamic, 1>>(pb->grad.data(), c_out) +=
          g.rowwise().sum();
    }
    if (pw->requires_grad) {
      pw->ensure_grad();
      detail::MapRM<Scalar> gw(pw->grad.data(), c_out, c_in);
      gw.noalias() += g * detail::CMapRM<Scalar>(px->data.data(), c_in, l).transpose();
    }
    if (px->requires_grad) {
      px->ensure_grad();
      detail::MapRM<Scalar> gx(px->grad.data(), c_in, l);
      gx.noalias() += detail::CMapRM<Scalar>(pw->data.data(), c_out, c_in).transpose() * g;
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// Pooling
// ---------------------------------------------------------------------------

inline Index pooled_extent(Index n, Index k) { return (n + k - 1) / k; }

namespace detail {

// Pairwise reduction keeps window sums exact when all values coincide and the
// count is a power of two, which makes avg_pool an exact left inverse of
// unpool_broadcast at the standard kernel sizes.
template <class Scalar>
Scalar pairwise_sum(const Scalar* v, Index n) {
  if (n == 1) return v[0];
  if (n == 2) return v[0] + v[1];
  const Index half = n / 2;
  return pairwise_sum(v, half) + pairwise_sum(v + half, n - half);
}

}  // namespace detail

/// Average pooling; edge windows truncate (mean over the valid cells).
template <class Scalar>
TensorT<Scalar> avg_pool2d(const TensorT<Scalar>& x, Index kh, Index kw) {
  if (x.rank() != 3) throw std::invalid_argument("avg_pool2d: input must be [C x H x W]");
  if (kh < 1 || kw < 1) throw std::invalid_argument("avg_pool2d: kernel extents must be >= 1");
  const Index c = x.dim(0), h = x.dim(1), w = x.dim(2);
  const Index oh = pooled_extent(h, kh), ow = pooled_extent(w, kw);
  typename TensorT<Scalar>::Array d(c * oh * ow);
  const Scalar* src = x.data().data();
  for (Index ci = 0; ci < c; ++ci) {
    for (Index oy = 0; oy < oh; ++oy) {
      const Index y0 = oy * kh, y1 = std::min(y0 + kh, h);
      for (Index ox = 0; ox < ow; ++ox) {
        const Index x0 = ox * kw, x1 = std::min(x0 + kw, w);
        Scalar window[64];
        std::vector<Scalar> big;
        const Index count = (y1 - y0) * (x1 - x0);
        Scalar* buf = window;
        if (count > 64) {
          big.resize(static_cast<std::size_t>(count));
          buf = big.data();
        }
        Index k = 0;
        for (Index y = y0; y < y1; ++y) {
          for (Index x2 = x0; x2 < x1; ++x2) buf[k++] = src[(ci * h + y) * w + x2];
        }
        d[(ci * oh + oy) * ow + ox] = detail::pairwise_sum(buf, count) / Scalar(count);
      }
    }
  }
  auto out = detail::make_tensor<Scalar>({c, oh, ow}, std::move(d), x.requires_grad());
  auto px = x.node_ptr();
  detail::attach(out, {px}, [px, c, h, w, kh, kw, oh, ow](auto& o) {
    px->ensure_grad();
    Scalar* gx = px->grad.data();
    const Scalar* g = o.grad.data();
    for (Index ci = 0; ci < c; ++ci) {
      for (Index oy = 0; oy < oh; ++oy) {
        const Index y0 = oy * kh, y1 = std::min(y0 + kh, h);
        for (Index ox = 0; ox < ow; ++ox) {
          const Index x0 = ox * kw, x1 = std::min(x0 + kw, w);
          const Scalar share = g[(ci * oh + oy) * ow + ox] / Scalar((y1 - y0) * (x1 - x0));
          for (Index y = y0; y < y1; ++y) {
            for (Index x2 = x0; x2 < x1; ++x2) gx[(ci * h + y) * w + x2] += share;
          }
        }
      }
    }
  });
  return out;
}

/// Nearest-window broadcast back to full resolution: every original cell
/// receives the value of the pooled cell that covers it.
template <class Scalar>
TensorT<Scalar> unpool_broadcast(const TensorT<Scalar>& x, Index kh, Index kw, Index h, Index w) {
  if (x.rank() != 3) throw std::invalid_argument("unpool_broadcast: input must be [C x h x w]");
  if (kh < 1 || kw < 1) throw std::invalid_argument("unpool_broadcast: kernel extents must be >= 1");
  const Index c = x.dim(0), ph = x.dim(1), pw = x.dim(2);
  if (ph != pooled_extent(h, kh) || pw != pooled_extent(w, kw)) {
    throw std::invalid_argument("unpool_broadcast: target size " + std::to_string(h) + "x" +
                                std::to_string(w) + " inconsistent with pooled map " +
                                shape_str(x.shape()));
  }
  typename TensorT<Scalar>::Array d(c * h * w);
  const Scalar* src = x.data().data();
  for (Index ci = 0; ci < c; ++ci) {
    for (Index y = 0; y < h; ++y) {
      for (Index x2 = 0; x2 < w; ++x2) {
        d[(ci * h + y) * w + x2] = src[(ci * ph + y / kh) * pw + x2 / kw];
      }
    }
  }
  auto out = detail::make_tensor<Scalar>({c, h, w}, std::move(d), x.requires_grad());
  auto px = x.node_ptr();
  detail::attach(out, {px}, [px, c, h, w, kh, kw, ph, pw](auto& o) {
    px->ensure_grad();
    Scalar* gx = px->grad.data();
    const Scalar* g = o.grad.data();
    for (Index ci = 0; ci < c; ++ci) {
      for (Index y = 0; y < h; ++y) {
        for (Index x2 = 0; x2 < w; ++x2) {
          gx[(ci * ph + y / kh) * pw + x2 / kw] += g[(ci * h + y) * w + x2];
        }
      }
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// Normalization
// ---------------------------------------------------------------------------

/// Last-axis layer normalization with affine parameters; epsilon 1e-5.
template <class Scalar>
TensorT<Scalar> layer_norm(const TensorT<Scalar>& x, const TensorT<Scalar>& gamma,
                           const TensorT<Scalar>& beta) {
  if (x.rank() < 1) throw std::invalid_argument("layer_norm: rank >= 1 required");
  const Index d = x.shape().back();
  if (gamma.rank() != 1 || gamma.dim(0) != d || beta.rank() != 1 || beta.dim(0) != d) {
    throw std::invalid_argument("layer_norm: gamma/beta must be [" + std::to_string(d) + "]");
  }
  constexpr Scalar kEps = Scalar(1e-5);
  const Index rows = x.size() / d;
  typename TensorT<Scalar>::Array out_data(x.size());
  typename TensorT<Scalar>::Array xhat(x.size());
  typename TensorT<Scalar>::Array inv_std(rows);
  {
    detail::CMapRM<Scalar> xm(x.data().data(), rows, d);
    detail::MapRM<Scalar> ym(out_data.data(), rows, d);
    detail::MapRM<Scalar> hm(xhat.data(), rows, d);
    const auto gv = gamma.data();
    const auto bv = beta.data();
    for (Index i = 0; i < rows; ++i) {
      const Scalar mean = xm.row(i).mean();
      const Scalar var = (xm.row(i).array() - mean).square().mean();
      const Scalar is = Scalar(1) / std::sqrt(var + kEps);
      inv_std[i] = is;
      hm.row(i) = (xm.row(i).array() - mean) * is;
      ym.row(i) = hm.row(i).array() * gv.transpose() + bv.transpose();
    }
  }
  auto out = detail::make_tensor<Scalar>(x.shape(), std::move(out_data),
                                         detail::wants_grad(x, gamma, beta));
  auto px = x.node_ptr(), pg = gamma.node_ptr(), pb = beta.node_ptr();
  detail::attach(out, {px, pg, pb},
                 [px, pg, pb, rows, d, xhat = std::move(xhat), inv_std = std::move(inv_std)](auto& o) {
    detail::CMapRM<Scalar> g(o.grad.data(), rows, d);
    detail::CMapRM<Scalar> hm(xhat.data(), rows, d);
    if (pb->requires_grad) {
      pb->ensure_grad();
      pb->grad += g.colwise().sum().transpose().array();
    }
    if (pg->requires_grad) {
      pg->ensure_grad();
      pg->grad += (g.array() * hm.array()).colwise().sum().transpose();
    }
    if (px->requires_grad) {
      px->ensure_grad();
      detail::MapRM<Scalar> gx(px->grad.data(), rows, d);
      const auto gv = pg->data;
      for (Index i = 0; i < rows; ++i) {
        Eigen::Array<Scalar, Eigen::Dynamic, 1> gh = g.row(i).transpose().array() * gv;
        const Scalar mean_gh = gh.mean();
        const Scalar mean_ghh = (gh * hm.row(i).transpose().array()).mean();
        gx.row(i).array() +=
            inv_std[i] * (gh - mean_gh - hm.row(i).transpose().array() * mean_ghh).transpose();
      }
    }
  });
  return out;
}

}  // namespace vista
