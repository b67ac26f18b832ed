#pragma once

// Brute-force reference implementations used only by tests. These stay
// independent of the library's fast paths: plain loops, no Eigen, no reuse of
// the code under test.

#include "vista/tensor.hpp"

#include <cmath>
#include <cstdint>
#include <vector>

namespace oracle {

using vista::Index;

inline std::vector<double> matmul_naive(const std::vector<double>& a, Index n, Index k,
                                        const std::vector<double>& b, Index m) {
  std::vector<double> c(static_cast<std::size_t>(n * m), 0.0);
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < m; ++j) {
      double acc = 0.0;
      for (Index t = 0; t < k; ++t) acc += a[i * k + t] * b[t * m + j];
      c[i * m + j] = acc;
    }
  }
  return c;
}

inline std::vector<double> conv2d_naive(const std::vector<double>& x, Index c_in, Index h, Index w,
                                        const std::vector<double>& wgt, Index c_out,
                                        const std::vector<double>& bias) {
  std::vector<double> out(static_cast<std::size_t>(c_out * h * w), 0.0);
  for (Index co = 0; co < c_out; ++co) {
    for (Index y = 0; y < h; ++y) {
      for (Index xx = 0; xx < w; ++xx) {
        double acc = bias[co];
        for (Index ci = 0; ci < c_in; ++ci) {
          for (Index ky = 0; ky < 3; ++ky) {
            for (Index kx = 0; kx < 3; ++kx) {
              const Index sy = y + ky - 1;
              const Index sx = xx + kx - 1;
              if (sy < 0 || sy >= h || sx < 0 || sx >= w) continue;
              acc += wgt[((co * c_in + ci) * 3 + ky) * 3 + kx] * x[(ci * h + sy) * w + sx];
            }
          }
        }
        out[(co * h + y) * w + xx] = acc;
      }
    }
  }
  return out;
}

inline std::vector<double> conv1d_naive(const std::vector<double>& x, Index c_in, Index l,
                                        const std::vector<double>& wgt, Index c_out,
                                        const std::vector<double>& bias) {
  std::vector<double> out(static_cast<std::size_t>(c_out * l), 0.0);
  for (Index co = 0; co < c_out; ++co) {
    for (Index j = 0; j < l; ++j) {
      double acc = bias[co];
      for (Index ci = 0; ci < c_in; ++ci) acc += wgt[co * c_in + ci] * x[ci * l + j];
      out[co * l + j] = acc;
    }
  }
  return out;
}

inline std::vector<double> to_vec(const vista::Tensor& t) {
  return {t.data().data(), t.data().data() + t.size()};
}

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace oracle
