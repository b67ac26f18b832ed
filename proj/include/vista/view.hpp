#pragma once

#include "vista/ops.hpp"
#include "vista/tensor.hpp"

namespace vista {

enum class View { bev, rv };

inline const char* view_name(View v) { return v == View::bev ? "bev" : "rv"; }

/// A 2-D feature map produced by folding one spatial axis of the encoded
/// volume into channels. BEV folds the vertical axis (spatial x,y); RV folds
/// the second horizontal axis (spatial x,z). channel layout (base_channels,
/// folded_extent) keeps the fold invertible. pool_kh/pool_kw record the
/// average-pooling kernel already applied relative to full resolution.
struct ViewMap {
  View view = View::bev;
  Tensor features;  // [C' x S1 x S2]
  int folded_axis = 3;
  Index base_channels = 0;
  Index folded_extent = 0;
  Index pool_kh = 1;
  Index pool_kw = 1;

  Index channels() const { return features.dim(0); }
  Index s1() const { return features.dim(1); }
  Index s2() const { return features.dim(2); }
};

/// Collapse the 4-D feature volume [C x Nx x Ny x Nz] into a view map. Pure
/// permutation: every element of f3d appears exactly once in the output.
inline ViewMap collapse(const Tensor& f3d, View view) {
  if (f3d.rank() != 4) throw std::invalid_argument("collapse: rank-4 feature volume required");
  ViewMap out;
  out.view = view;
  out.folded_axis = view == View::bev ? 3 : 2;
  out.base_channels = f3d.dim(0);
  out.folded_extent = f3d.dim(out.folded_axis);
  out.features = fold_axis_into_channels(f3d, out.folded_axis);
  return out;
}

/// Inverse of collapse (for an unpooled map).
inline Tensor uncollapse(const ViewMap& v) {
  return unfold_channels_to_axis(v.features, v.folded_axis, v.base_channels);
}

inline ViewMap pool_for_attention(const ViewMap& v, Index kh, Index kw) {
  ViewMap out = v;
  out.features = avg_pool2d(v.features, kh, kw);
  out.pool_kh = v.pool_kh * kh;
  out.pool_kw = v.pool_kw * kw;
  return out;
}

/// Broadcast a pooled fused map back to the original resolution and add it
/// residually onto the original view map.
inline ViewMap scatter_back(const ViewMap& fused_pooled, const ViewMap& original) {
  if (fused_pooled.view != original.view) {
    throw std::invalid_argument("scatter_back: view mismatch");
  }
  if (fused_pooled.channels() != original.channels()) {
    throw std::invalid_argument("scatter_back: channel mismatch " +
                                std::to_string(fused_pooled.channels()) + " vs " +
                                std::to_string(original.channels()));
  }
  const Index kh = fused_pooled.pool_kh / original.pool_kh;
  const Index kw = fused_pooled.pool_kw / original.pool_kw;
  Tensor up = unpool_broadcast(fused_pooled.features, kh, kw, original.s1(), original.s2());
  ViewMap out = original;
  out.features = add(original.features, up);
  return out;
}

/// [C x S1 x S2] -> [S1*S2 x C] row-major over spatial cells; matches the
/// pillar-center ordering for BEV maps.
inline Tensor map_to_sequence(const ViewMap& v) {
  return transpose(reshape(v.features, {v.channels(), v.s1() * v.s2()}));
}

/// Inverse of map_to_sequence given the spatial extents; the result copies
/// view metadata (including the pooling bookkeeping) from `like`.
inline ViewMap sequence_to_map(const Tensor& seq, const ViewMap& like) {
  if (seq.rank() != 2 || seq.dim(0) != like.s1() * like.s2()) {
    throw std::invalid_argument("sequence_to_map: sequence length does not match spatial extents");
  }
  ViewMap out = like;
  out.features = reshape(transpose(seq), {seq.dim(1), like.s1(), like.s2()});
  return out;
}

}  // namespace vista
