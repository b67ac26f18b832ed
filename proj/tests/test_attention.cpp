#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "oracles.hpp"
#include "vista/attention.hpp"
#include "vista/grad_check.hpp"

#include <algorithm>
#include <random>

using vista::Branch;
using vista::FusionMode;
using vista::Index;
using vista::Tensor;
using vista::View;
using vista::ViewMap;
using vista::VistaOptions;
using vista::VistaWeights;

namespace {

ViewMap random_map(View view, Index c, Index s1, Index s2, std::mt19937_64& rng) {
  ViewMap m;
  m.view = view;
  m.folded_axis = view == View::bev ? 3 : 2;
  m.base_channels = c;
  m.folded_extent = 1;
  m.features = Tensor::randn({c, s1, s2}, rng);
  return m;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  return oracle::max_abs_diff(oracle::to_vec(a), oracle::to_vec(b));
}

// 180-degree rotation of the spatial axes of a [C x H x W] tensor.
Tensor rot180_map(const Tensor& t) {
  const Index c = t.dim(0), h = t.dim(1), w = t.dim(2);
  std::vector<double> v(static_cast<std::size_t>(t.size()));
  for (Index ci = 0; ci < c; ++ci) {
    for (Index y = 0; y < h; ++y) {
      for (Index x = 0; x < w; ++x) {
        v[static_cast<std::size_t>((ci * h + (h - 1 - y)) * w + (w - 1 - x))] =
            t[(ci * h + y) * w + x];
      }
    }
  }
  return Tensor::from_values(t.shape(), v);
}

// 180-degree rotation of the spatial taps of a [C_out x C_in x 3 x 3] kernel.
Tensor rot180_kernel(const Tensor& k) {
  const Index co = k.dim(0), ci = k.dim(1);
  std::vector<double> v(static_cast<std::size_t>(k.size()));
  for (Index o = 0; o < co; ++o) {
    for (Index i = 0; i < ci; ++i) {
      for (Index y = 0; y < 3; ++y) {
        for (Index x = 0; x < 3; ++x) {
          v[static_cast<std::size_t>(((o * ci + i) * 3 + (2 - y)) * 3 + (2 - x))] =
              k[((o * ci + i) * 3 + y) * 3 + x];
        }
      }
    }
  }
  return Tensor::from_values(k.shape(), v);
}

}  // namespace

TEST_CASE("project_qkv: identity-center kernels pass features through (channel-truncated)") {
  std::mt19937_64 rng(1);
  const Index d_f = 4, d_q = 3;
  VistaWeights w = VistaWeights::init(d_f, d_q, d_f, rng);
  std::vector<double> id(static_cast<std::size_t>(d_q * d_f * 9), 0.0);
  for (Index o = 0; o < d_q; ++o) id[static_cast<std::size_t>((o * d_f + o) * 9 + 4)] = 1.0;
  w.conv_q_w = Tensor::from_values({d_q, d_f, 3, 3}, id);
  w.conv_q_b = Tensor::zeros({d_q});

  ViewMap bev = random_map(View::bev, d_f, 4, 4, rng);
  ViewMap rv = random_map(View::rv, d_f, 4, 2, rng);
  auto [q, k, v] = vista::project_qkv(bev, rv, w, FusionMode::conv);
  CHECK(q.shape() == vista::Shape{16, 3});
  Tensor seq = vista::map_to_sequence(bev);
  for (Index i = 0; i < 16; ++i) {
    for (Index c = 0; c < d_q; ++c) CHECK(q.at({i, c}) == doctest::Approx(seq.at({i, c})));
  }
  CHECK(k.shape() == vista::Shape{8, 3});
  CHECK(v.shape() == vista::Shape{8, 4});
}

TEST_CASE("project_qkv rejects channel mismatch") {
  std::mt19937_64 rng(2);
  VistaWeights w = VistaWeights::init(4, 3, 4, rng);
  ViewMap bev = random_map(View::bev, 5, 4, 4, rng);
  ViewMap rv = random_map(View::rv, 4, 4, 2, rng);
  CHECK_THROWS_AS(vista::project_qkv(bev, rv, w, FusionMode::conv), std::invalid_argument);
}

TEST_CASE("project_qkv gradient w.r.t. conv_q passes grad_check on a 4x4 map") {
  std::mt19937_64 rng(3);
  const Index d_f = 3, d_q = 2;
  VistaWeights w = VistaWeights::init(d_f, d_q, d_f, rng);
  ViewMap bev = random_map(View::bev, d_f, 4, 4, rng);
  ViewMap rv = random_map(View::rv, d_f, 4, 2, rng);
  Tensor readout = Tensor::randn({16, d_q}, rng);
  auto f = [&](const Tensor& t) {
    VistaWeights wt = w;
    wt.conv_q_w = t;
    auto [q, k, v] = vista::project_qkv(bev, rv, wt, FusionMode::conv);
    (void)k;
    (void)v;
    return vista::sum(vista::mul(q, readout));
  };
  auto report = vista::grad_check<double>(f, w.conv_q_w, 1e-5);
  CHECK(report.max_rel_error < 1e-5);
}

TEST_CASE("branch: identity weights pass queries through") {
  std::mt19937_64 rng(4);
  const Index d_q = 3;
  VistaWeights w = VistaWeights::init(4, d_q, 4, rng);
  std::vector<double> id(9, 0.0);
  id[0] = id[4] = id[8] = 1.0;
  w.branch_q_sem_w = Tensor::from_values({3, 3}, id);
  w.branch_q_sem_b = Tensor::zeros({3});
  w.branch_k_sem_w = Tensor::from_values({3, 3}, id);
  w.branch_k_sem_b = Tensor::zeros({3});
  Tensor q = Tensor::randn({5, 3}, rng);
  Tensor k = Tensor::randn({7, 3}, rng);
  auto [qi, ki] = vista::branch(q, k, w, Branch::sem);
  CHECK(max_abs_diff(qi, q) == 0.0);
  CHECK(max_abs_diff(ki, k) == 0.0);
}

TEST_CASE("branch: sem and geo weights give different attention") {
  std::mt19937_64 rng(5);
  VistaWeights w = VistaWeights::init(4, 4, 4, rng);
  Tensor q = Tensor::randn({6, 4}, rng);
  Tensor k = Tensor::randn({5, 4}, rng);
  Tensor v = Tensor::randn({5, 4}, rng);
  auto [qs, ks] = vista::branch(q, k, w, Branch::sem);
  auto [qg, kg] = vista::branch(q, k, w, Branch::geo);
  auto [a_sem, f_sem] = vista::cross_attention(qs, ks, v);
  auto [a_geo, f_geo] = vista::cross_attention(qg, kg, v);
  (void)f_sem;
  (void)f_geo;
  CHECK(max_abs_diff(a_sem, a_geo) > 1e-4);
}

TEST_CASE("branch: zero weights yield uniform attention rows") {
  std::mt19937_64 rng(6);
  VistaWeights w = VistaWeights::init(4, 3, 4, rng);
  w.branch_q_sem_w = Tensor::zeros({3, 3});
  w.branch_q_sem_b = Tensor::zeros({3});
  Tensor q = Tensor::randn({4, 3}, rng);
  Tensor k = Tensor::randn({6, 3}, rng);
  Tensor v = Tensor::randn({6, 4}, rng);
  auto [qi, ki] = vista::branch(q, k, w, Branch::sem);
  auto [a, f] = vista::cross_attention(qi, ki, v);
  (void)f;
  for (Index i = 0; i < a.size(); ++i) CHECK(a[i] == doctest::Approx(1.0 / 6.0).epsilon(1e-12));
}

TEST_CASE("cross_attention: single key collapses to the value row") {
  std::mt19937_64 rng(7);
  Tensor q = Tensor::randn({5, 3}, rng);
  Tensor k = Tensor::randn({1, 3}, rng);
  Tensor v = Tensor::randn({1, 4}, rng);
  auto [a, f] = vista::cross_attention(q, k, v);
  for (Index i = 0; i < 5; ++i) {
    CHECK(a.at({i, 0}) == 1.0);
    for (Index c = 0; c < 4; ++c) CHECK(f.at({i, c}) == v.at({0, c}));
  }
}

TEST_CASE("cross_attention: scaled orthonormal rows give near-identity attention") {
  const Index n = 4;
  const double s = 50.0;
  std::vector<double> basis(n * n, 0.0);
  for (Index i = 0; i < n; ++i) basis[static_cast<std::size_t>(i * n + i)] = s;
  Tensor q = Tensor::from_values({n, n}, basis);
  Tensor k = Tensor::from_values({n, n}, basis);
  std::mt19937_64 rng(8);
  Tensor v = Tensor::randn({n, 3}, rng);
  auto [a, f] = vista::cross_attention(q, k, v);
  // direct computation at shifted logits: diagonal s^2/sqrt(n), 0 elsewhere
  const double small = std::exp(-s * s / std::sqrt(static_cast<double>(n)));
  const double diag = 1.0 / (1.0 + static_cast<double>(n - 1) * small);
  for (Index i = 0; i < n; ++i) CHECK(a.at({i, i}) == doctest::Approx(diag).epsilon(1e-12));
  CHECK(max_abs_diff(f, v) < 1e-9);
}

TEST_CASE("cross_attention: zero logits average the values") {
  std::mt19937_64 rng(9);
  Tensor q = Tensor::zeros({3, 2});
  Tensor k = Tensor::zeros({4, 2});
  Tensor v = Tensor::randn({4, 2}, rng);
  auto [a, f] = vista::cross_attention(q, k, v);
  (void)a;
  for (Index c = 0; c < 2; ++c) {
    double mean = 0.0;
    for (Index j = 0; j < 4; ++j) mean += v.at({j, c});
    mean /= 4.0;
    for (Index i = 0; i < 3; ++i) CHECK(f.at({i, c}) == doctest::Approx(mean).epsilon(1e-12));
  }
}

TEST_CASE("ffn: zero weights reduce to layer_norm of the input") {
  std::mt19937_64 rng(10);
  const Index d_v = 4;
  VistaWeights w = VistaWeights::init(4, 4, d_v, rng);
  w.ffn_sem.w1 = Tensor::zeros({4 * d_v, d_v});
  w.ffn_sem.b1 = Tensor::zeros({4 * d_v});
  w.ffn_sem.w2 = Tensor::zeros({d_v, 4 * d_v});
  w.ffn_sem.b2 = Tensor::zeros({d_v});
  w.ffn_sem.gamma = Tensor::fill({d_v}, 1.0);
  w.ffn_sem.beta = Tensor::zeros({d_v});
  Tensor f = Tensor::randn({6, d_v}, rng);
  Tensor out = vista::ffn(f, w, Branch::sem);
  Tensor expected = vista::layer_norm(f, w.ffn_sem.gamma, w.ffn_sem.beta);
  CHECK(max_abs_diff(out, expected) < 1e-15);
  CHECK(out.shape() == vista::Shape{6, d_v});
}

TEST_CASE("ffn gradient passes grad_check") {
  std::mt19937_64 rng(11);
  VistaWeights w = VistaWeights::init(4, 4, 4, rng);
  Tensor readout = Tensor::randn({5, 4}, rng);
  auto f = [&](const Tensor& t) { return vista::sum(vista::mul(vista::ffn(t, w, Branch::geo), readout)); };
  Tensor x = Tensor::randn({5, 4}, rng);
  auto report = vista::grad_check<double>(f, x, 1e-5);
  CHECK(report.max_rel_error < 1e-5);
}

TEST_CASE("vista_forward: desk-config attention shape is 256x64") {
  std::mt19937_64 rng(12);
  const Index d = 32;
  VistaWeights w = VistaWeights::init(d, d, d, rng);
  ViewMap bev = random_map(View::bev, d, 64, 64, rng);
  ViewMap rv = random_map(View::rv, d, 64, 16, rng);
  VistaOptions opt;
  auto out = vista::vista_forward(bev, rv, w, opt);
  CHECK(out.bundle.a_sem.shape() == vista::Shape{256, 64});
  CHECK(out.fused_sem.features.shape() == vista::Shape{d, 64, 64});
  out.bundle.validate();
}

TEST_CASE("vista_forward: attention rows sum to one in every mode") {
  std::mt19937_64 rng(13);
  VistaWeights w = VistaWeights::init(4, 4, 4, rng);
  ViewMap bev = random_map(View::bev, 4, 8, 8, rng);
  ViewMap rv = random_map(View::rv, 4, 8, 4, rng);
  for (FusionMode mode : {FusionMode::conv, FusionMode::linear, FusionMode::gap}) {
    for (bool decouple : {true, false}) {
      VistaOptions opt;
      opt.mode = mode;
      opt.decouple = decouple;
      opt.pool_bev_kh = opt.pool_bev_kw = 2;
      opt.pool_rv_kh = opt.pool_rv_kw = 2;
      auto out = vista::vista_forward(bev, rv, w, opt);
      out.bundle.validate();
    }
  }
}

TEST_CASE("vista_forward: gap equals conv with attention forced uniform") {
  std::mt19937_64 rng(14);
  VistaWeights w = VistaWeights::init(6, 5, 6, rng);
  ViewMap bev = random_map(View::bev, 6, 8, 8, rng);
  ViewMap rv = random_map(View::rv, 6, 8, 4, rng);
  VistaOptions gap_opt;
  gap_opt.mode = FusionMode::gap;
  gap_opt.pool_bev_kh = gap_opt.pool_bev_kw = 2;
  gap_opt.pool_rv_kh = gap_opt.pool_rv_kw = 2;
  VistaOptions forced = gap_opt;
  forced.mode = FusionMode::conv;
  forced.decouple = false;
  forced.force_uniform_attention = true;
  auto out_gap = vista::vista_forward(bev, rv, w, gap_opt);
  auto out_forced = vista::vista_forward(bev, rv, w, forced);
  CHECK(max_abs_diff(out_gap.fused_sem.features, out_forced.fused_sem.features) < 1e-9);
  CHECK(max_abs_diff(out_gap.fused_geo.features, out_forced.fused_geo.features) < 1e-9);
  CHECK(max_abs_diff(out_gap.bundle.a_sem, out_forced.bundle.a_sem) == 0.0);
}

TEST_CASE("vista_forward: decouple off shares one attention bitwise") {
  std::mt19937_64 rng(15);
  VistaWeights w = VistaWeights::init(4, 4, 4, rng);
  ViewMap bev = random_map(View::bev, 4, 8, 8, rng);
  ViewMap rv = random_map(View::rv, 4, 8, 4, rng);
  VistaOptions opt;
  opt.decouple = false;
  opt.pool_bev_kh = opt.pool_bev_kw = 2;
  opt.pool_rv_kh = opt.pool_rv_kw = 2;
  auto out = vista::vista_forward(bev, rv, w, opt);
  CHECK(max_abs_diff(out.bundle.a_sem, out.bundle.a_geo) == 0.0);
  CHECK(max_abs_diff(out.fused_sem.features, out.fused_geo.features) == 0.0);

  opt.decouple = true;
  auto out2 = vista::vista_forward(bev, rv, w, opt);
  CHECK(max_abs_diff(out2.bundle.a_sem, out2.bundle.a_geo) > 1e-6);
}

TEST_CASE("vista_forward: unknown head count is rejected") {
  std::mt19937_64 rng(16);
  VistaWeights w = VistaWeights::init(4, 4, 4, rng);
  ViewMap bev = random_map(View::bev, 4, 4, 4, rng);
  ViewMap rv = random_map(View::rv, 4, 4, 2, rng);
  VistaOptions opt;
  opt.heads = 2;
  CHECK_THROWS_AS(vista::vista_forward(bev, rv, w, opt), std::invalid_argument);
}

TEST_CASE("linear mode: permuting RV cells permutes nothing observable") {
  std::mt19937_64 rng(17);
  const Index d = 4, s1 = 4, s2 = 3;
  VistaWeights w = VistaWeights::init(d, d, d, rng);
  ViewMap bev = random_map(View::bev, d, 4, 4, rng);
  ViewMap rv = random_map(View::rv, d, s1, s2, rng);

  // permute the spatial cells of the RV map
  std::vector<Index> perm(static_cast<std::size_t>(s1 * s2));
  for (Index i = 0; i < s1 * s2; ++i) perm[static_cast<std::size_t>(i)] = i;
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<double> permuted(static_cast<std::size_t>(d * s1 * s2));
  for (Index c = 0; c < d; ++c) {
    for (Index j = 0; j < s1 * s2; ++j) {
      permuted[static_cast<std::size_t>(c * s1 * s2 + perm[static_cast<std::size_t>(j)])] =
          rv.features[c * s1 * s2 + j];
    }
  }
  ViewMap rv2 = rv;
  rv2.features = Tensor::from_values(rv.features.shape(), permuted);

  VistaOptions opt;
  opt.mode = FusionMode::linear;
  opt.pool_bev_kh = opt.pool_bev_kw = 2;
  opt.pool_rv_kh = opt.pool_rv_kw = 1;  // identity pooling so cells are keys
  auto out1 = vista::vista_forward(bev, rv, w, opt);
  auto out2 = vista::vista_forward(bev, rv2, w, opt);
  CHECK(max_abs_diff(out1.fused_sem.features, out2.fused_sem.features) < 1e-9);
  CHECK(max_abs_diff(out1.fused_geo.features, out2.fused_geo.features) < 1e-9);
}

TEST_CASE("gap fusion is invariant to permuting the value rows") {
  std::mt19937_64 rng(18);
  Tensor v = Tensor::randn({6, 4}, rng);
  std::vector<Index> perm{3, 1, 5, 0, 2, 4};
  std::vector<double> pv(static_cast<std::size_t>(v.size()));
  for (Index r = 0; r < 6; ++r) {
    for (Index c = 0; c < 4; ++c) {
      pv[static_cast<std::size_t>(perm[static_cast<std::size_t>(r)] * 4 + c)] = v.at({r, c});
    }
  }
  Tensor v2 = Tensor::from_values(v.shape(), pv);
  Tensor f1 = vista::detail::gap_fusion(v, 5);
  Tensor f2 = vista::detail::gap_fusion(v2, 5);
  CHECK(max_abs_diff(f1, f2) < 1e-9);
}

TEST_CASE("conv mode: 180-degree rotation of RV input and kernels preserves fusion") {
  std::mt19937_64 rng(19);
  const Index d = 4;
  VistaWeights w = VistaWeights::init(d, d, d, rng);
  ViewMap bev = random_map(View::bev, d, 8, 8, rng);
  ViewMap rv = random_map(View::rv, d, 8, 4, rng);

  VistaWeights w_rot = w;
  w_rot.conv_k_w = rot180_kernel(w.conv_k_w);
  w_rot.conv_v_w = rot180_kernel(w.conv_v_w);
  ViewMap rv_rot = rv;
  rv_rot.features = rot180_map(rv.features);

  VistaOptions opt;
  opt.mode = FusionMode::conv;
  opt.pool_bev_kh = opt.pool_bev_kw = 2;
  opt.pool_rv_kh = opt.pool_rv_kw = 2;
  auto out1 = vista::vista_forward(bev, rv, w, opt);
  auto out2 = vista::vista_forward(bev, rv_rot, w_rot, opt);
  CHECK(max_abs_diff(out1.fused_sem.features, out2.fused_sem.features) < 1e-9);
  CHECK(max_abs_diff(out1.fused_geo.features, out2.fused_geo.features) < 1e-9);
}

TEST_CASE("vista_forward: end-to-end gradient matches finite differences") {
  std::mt19937_64 rng(20);
  const Index d = 4;
  VistaWeights w = VistaWeights::init(d, d, d, rng);
  ViewMap bev = random_map(View::bev, d, 8, 8, rng);
  ViewMap rv = random_map(View::rv, d, 8, 4, rng);
  Tensor r_sem = Tensor::randn({d, 8, 8}, rng);
  Tensor r_geo = Tensor::randn({d, 8, 8}, rng);
  VistaOptions opt;
  opt.pool_bev_kh = opt.pool_bev_kw = 2;
  opt.pool_rv_kh = opt.pool_rv_kw = 2;

  struct Param {
    const char* name;
    Tensor VistaWeights::* member;
  };
  auto run = [&](const VistaWeights& wt) {
    auto out = vista::vista_forward(bev, rv, wt, opt);
    return vista::add(vista::sum(vista::mul(out.fused_sem.features, r_sem)),
                      vista::sum(vista::mul(out.fused_geo.features, r_geo)));
  };
  for (auto p : {Param{"conv_q_w", &VistaWeights::conv_q_w},
                 Param{"conv_v_w", &VistaWeights::conv_v_w},
                 Param{"branch_k_geo_w", &VistaWeights::branch_k_geo_w}}) {
    CAPTURE(p.name);
    auto f = [&](const Tensor& t) {
      VistaWeights wt = w;
      wt.*(p.member) = t;
      return run(wt);
    };
    auto report = vista::grad_check<double>(f, w.*(p.member), 1e-5);
    CHECK_MESSAGE(report.max_rel_error < 1e-4, p.name, " rel error ", report.max_rel_error);
  }
  auto f_ffn = [&](const Tensor& t) {
    VistaWeights wt = w;
    wt.ffn_sem.w1 = t;
    return run(wt);
  };
  auto report = vista::grad_check<double>(f_ffn, w.ffn_sem.w1, 1e-5);
  CHECK(report.max_rel_error < 1e-4);
}
