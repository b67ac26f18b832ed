#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "oracles.hpp"
#include "vista/grad_check.hpp"
#include "vista/losses.hpp"

#include <cmath>
#include <random>

using vista::BoxFootprint;
using vista::Index;
using vista::PillarCenters;
using vista::Tensor;

namespace {

PillarCenters centers_from(std::vector<std::array<double, 2>> pts) {
  PillarCenters c;
  c.centers = std::move(pts);
  c.nx = static_cast<Index>(c.centers.size());
  c.ny = 1;
  return c;
}

Tensor random_simplex_rows(Index n, Index m, std::mt19937_64& rng) {
  std::exponential_distribution<double> ed(1.0);
  std::vector<double> v(static_cast<std::size_t>(n * m));
  for (Index i = 0; i < n; ++i) {
    double s = 0.0;
    for (Index j = 0; j < m; ++j) {
      v[static_cast<std::size_t>(i * m + j)] = ed(rng);
      s += v[static_cast<std::size_t>(i * m + j)];
    }
    for (Index j = 0; j < m; ++j) v[static_cast<std::size_t>(i * m + j)] /= s;
  }
  return Tensor::from_values({n, m}, v);
}

}  // namespace

TEST_CASE("select_box_rows: containment inequalities are inclusive") {
  BoxFootprint box{2.0, 2.0, 0.0, 0.0, 0};
  auto centers = centers_from({{0.5, 0.5}, {1.5, 0.5}, {1.0, 0.0}, {-1.0, 1.0}, {1.0001, 0.0}});
  auto rows = vista::select_box_rows({box}, centers);
  REQUIRE(rows.size() == 1);
  CHECK(rows[0] == std::vector<Index>{0, 2, 3});  // boundary points at +-w/2 are kept
}

TEST_CASE("select_box_rows: attention row count must match centers") {
  auto centers = centers_from({{0, 0}, {1, 1}});
  Tensor a = Tensor::zeros({3, 4});
  CHECK_THROWS_AS(vista::select_box_rows(a, {}, centers), std::invalid_argument);
}

TEST_CASE("select_box_rows matches the brute-force oracle") {
  std::mt19937_64 rng(41);
  std::uniform_real_distribution<double> u(-5.0, 5.0);
  std::uniform_real_distribution<double> ext(0.3, 3.0);
  for (int rep = 0; rep < 50; ++rep) {
    std::vector<std::array<double, 2>> pts;
    for (int i = 0; i < 40; ++i) pts.push_back({u(rng), u(rng)});
    auto centers = centers_from(pts);
    std::vector<BoxFootprint> boxes;
    for (int q = 0; q < 4; ++q) boxes.push_back({ext(rng), ext(rng), u(rng), u(rng), 0});
    auto rows = vista::select_box_rows(boxes, centers);
    for (std::size_t q = 0; q < boxes.size(); ++q) {
      std::vector<Index> expect;
      for (std::size_t j = 0; j < pts.size(); ++j) {
        const double px = pts[j][0], py = pts[j][1];
        const bool in_x = boxes[q].x - boxes[q].w / 2 <= px && px <= boxes[q].x + boxes[q].w / 2;
        const bool in_y = boxes[q].y - boxes[q].h / 2 <= py && py <= boxes[q].y + boxes[q].h / 2;
        if (in_x && in_y) expect.push_back(static_cast<Index>(j));
      }
      CHECK(rows[q] == expect);
    }
  }
}

TEST_CASE("variance_loss: uniform selected rows give exactly zero") {
  auto centers = centers_from({{0, 0}, {0.5, 0}, {9, 9}});
  Tensor a = Tensor::fill({3, 4}, 0.25);
  BoxFootprint box{2.0, 2.0, 0.0, 0.0, 0};
  Tensor loss = vista::variance_loss(a, {box}, centers);
  CHECK(loss.value() == 0.0);
}

TEST_CASE("variance_loss: one-hot row over m=4 gives -0.1875") {
  auto centers = centers_from({{0, 0}});
  Tensor a = Tensor::from_values({1, 4}, {1, 0, 0, 0});
  BoxFootprint box{1.0, 1.0, 0.0, 0.0, 0};
  Tensor loss = vista::variance_loss(a, {box}, centers);
  CHECK(std::abs(loss.value() - (-0.1875)) <= 1e-12);
}

TEST_CASE("variance_loss: bounded by the one-hot variance on random simplex rows") {
  std::mt19937_64 rng(42);
  for (int rep = 0; rep < 1000; ++rep) {
    std::uniform_int_distribution<Index> md(2, 12);
    const Index m = md(rng);
    Tensor a = random_simplex_rows(3, m, rng);
    auto centers = centers_from({{0, 0}, {0.1, 0}, {0.2, 0}});
    BoxFootprint box{1.0, 1.0, 0.0, 0.0, 0};
    const double v = vista::variance_loss(a, {box}, centers).value();
    const double bound = static_cast<double>(m - 1) / static_cast<double>(m * m);
    CHECK(v <= 0.0);
    CHECK(v >= -bound - 1e-15);
  }
}

TEST_CASE("variance_loss: empty boxes are skipped, no boxes means zero") {
  auto centers = centers_from({{0, 0}});
  Tensor a = Tensor::from_values({1, 4}, {1, 0, 0, 0});
  BoxFootprint hit{1.0, 1.0, 0.0, 0.0, 0};
  BoxFootprint miss{1.0, 1.0, 50.0, 50.0, 0};
  auto detailed = vista::variance_loss_detailed(a, {hit, miss}, centers);
  CHECK(detailed.active_boxes == 1);
  CHECK(std::abs(detailed.loss.value() - (-0.1875)) <= 1e-12);  // miss does not dilute
  CHECK(detailed.per_box[1] == 0.0);

  CHECK(vista::variance_loss(a, {}, centers).value() == 0.0);
  CHECK(vista::variance_loss(a, {miss}, centers).value() == 0.0);
}

TEST_CASE("variance_loss: translation invariance of scene and centers") {
  std::mt19937_64 rng(43);
  Tensor a = random_simplex_rows(4, 6, rng);
  auto centers = centers_from({{0, 0}, {0.4, 0.1}, {2.0, 2.0}, {-1.0, 0.5}});
  std::vector<BoxFootprint> boxes{{1.5, 1.0, 0.1, 0.0, 0}, {2.0, 2.0, -0.8, 0.4, 1}};
  const double base = vista::variance_loss(a, boxes, centers).value();
  for (double shift : {-7.3, 0.01, 12.5}) {
    auto moved = centers;
    for (auto& c : moved.centers) {
      c[0] += shift;
      c[1] -= 2 * shift;
    }
    auto moved_boxes = boxes;
    for (auto& b : moved_boxes) {
      b.x += shift;
      b.y -= 2 * shift;
    }
    CHECK(vista::variance_loss(a, moved_boxes, moved).value() == base);
  }
}

TEST_CASE("variance_loss: gradient is zero on unselected rows and passes grad_check") {
  std::mt19937_64 rng(44);
  auto centers = centers_from({{0, 0}, {0.3, 0}, {5, 5}, {6, 6}});
  std::vector<BoxFootprint> boxes{{1.0, 1.0, 0.0, 0.0, 0}};

  Tensor a = random_simplex_rows(4, 6, rng);
  a.set_requires_grad(true);
  vista::variance_loss(a, boxes, centers).backward();
  for (Index j = 0; j < 6; ++j) {
    CHECK(a.grad()[2 * 6 + j] == 0.0);
    CHECK(a.grad()[3 * 6 + j] == 0.0);
    CHECK(a.grad()[0 * 6 + j] != 0.0);
  }

  // direct check on the raw map
  auto f_raw = [&](const Tensor& t) { return vista::variance_loss(t, boxes, centers); };
  auto report = vista::grad_check<double>(f_raw, random_simplex_rows(4, 6, rng), 1e-5);
  CHECK(report.max_rel_error < 1e-5);

  // through a softmax reparameterization, staying on the simplex
  auto f = [&](const Tensor& t) {
    return vista::variance_loss(vista::softmax_rows(t), boxes, centers);
  };
  Tensor logits = Tensor::randn({4, 6}, rng);
  auto report2 = vista::grad_check<double>(f, logits, 1e-5);
  CHECK(report2.max_rel_error < 1e-5);
}

TEST_CASE("variance_loss: gradient descent alone drives rows toward one-hot") {
  std::mt19937_64 rng(45);
  auto centers = centers_from({{0, 0}, {0.2, 0}, {0.4, 0}, {0.6, 0}});
  std::vector<BoxFootprint> boxes{{2.0, 2.0, 0.3, 0.0, 0}};  // covers all four pillars
  Tensor logits = Tensor::randn({4, 8}, rng, 0.5, true);
  const double lr = 100.0;
  for (int step = 0; step < 500; ++step) {
    logits.zero_grad();
    Tensor loss = vista::variance_loss(vista::softmax_rows(logits), boxes, centers);
    loss.backward();
    logits.data() -= lr * logits.grad();
  }
  Tensor a = vista::softmax_rows(logits);
  for (Index i = 0; i < 4; ++i) {
    double row_max = 0.0;
    for (Index j = 0; j < 8; ++j) row_max = std::max(row_max, a[i * 8 + j]);
    CHECK(row_max > 0.95);
  }
}

TEST_CASE("focal_loss: perfect logits vanish") {
  Tensor logits = Tensor::from_values({3, 2}, {20, -20, -20, 20, -20, -20});
  std::vector<int> targets{0, 1, -1};
  CHECK(vista::focal_loss(logits, targets).value() < 1e-6);
}

TEST_CASE("focal_loss: gamma 0, alpha 0.5 halves balanced cross-entropy") {
  std::mt19937_64 rng(46);
  Tensor logits = Tensor::randn({5, 3}, rng, 2.0);
  std::vector<int> targets{0, -1, 2, 1, -1};
  vista::FocalOptions opt;
  opt.alpha = 0.5;
  opt.gamma = 0.0;
  const double fl = vista::focal_loss(logits, targets, opt).value();

  double bce = 0.0;
  for (Index i = 0; i < 5; ++i) {
    for (Index j = 0; j < 3; ++j) {
      const double z = logits[i * 3 + j];
      const double t = targets[static_cast<std::size_t>(i)] == static_cast<int>(j) ? 1.0 : 0.0;
      bce += std::max(z, 0.0) - z * t + std::log1p(std::exp(-std::abs(z)));
    }
  }
  bce /= 3.0;  // three positive pillars
  CHECK(fl == doctest::Approx(0.5 * bce).epsilon(1e-12));
}

TEST_CASE("focal_loss: normalization uses max(1, positives)") {
  Tensor logits = Tensor::zeros({2, 2});
  std::vector<int> none{-1, -1};
  std::vector<int> one{0, -1};
  CHECK(vista::focal_loss(logits, none).value() > 0.0);
  CHECK(std::isfinite(vista::focal_loss(logits, none).value()));
  CHECK(vista::focal_loss(logits, one).value() > 0.0);
}

TEST_CASE("focal_loss: background weight scales only negative terms") {
  std::mt19937_64 rng(47);
  Tensor logits = Tensor::randn({4, 2}, rng);
  std::vector<int> targets{0, -1, -1, 1};
  vista::FocalOptions base;
  vista::FocalOptions doubled;
  doubled.background_weight = 2.0;
  vista::FocalOptions zeroed;
  zeroed.background_weight = 0.0;
  const double l_base = vista::focal_loss(logits, targets, base).value();
  const double l2 = vista::focal_loss(logits, targets, doubled).value();
  const double l0 = vista::focal_loss(logits, targets, zeroed).value();
  CHECK(l2 == doctest::Approx(2.0 * l_base - l0).epsilon(1e-12));
  CHECK(l0 < l_base);
}

TEST_CASE("focal_loss gradient passes grad_check") {
  std::mt19937_64 rng(48);
  std::vector<int> targets{1, -1, 0, -1};
  auto f = [&](const Tensor& t) { return vista::focal_loss(t, targets); };
  auto report = vista::grad_check<double>(f, Tensor::randn({4, 2}, rng, 2.0), 1e-5);
  CHECK(report.max_rel_error < 1e-5);
}

TEST_CASE("l1_loss: exact values and empty-mask behaviour") {
  Tensor pred = Tensor::from_values({2, 1}, {1.0, 3.5});
  Tensor target = Tensor::from_values({2, 1}, {1.0, 3.0});
  CHECK(vista::l1_loss(pred, pred, {true, true}).value() == 0.0);
  CHECK(vista::l1_loss(pred, target, {false, true}).value() == 0.5);
  CHECK(vista::l1_loss(pred, target, {false, false}).value() == 0.0);
}

TEST_CASE("l1_loss gradient is the scaled sign pattern") {
  std::mt19937_64 rng(49);
  Tensor target = Tensor::randn({3, 4}, rng);
  std::vector<bool> mask{true, false, true};
  auto f = [&](const Tensor& t) { return vista::l1_loss(t, target, mask); };
  Tensor pred = Tensor::randn({3, 4}, rng);
  auto report = vista::grad_check<double>(f, pred, 1e-5);
  CHECK(report.max_rel_error < 1e-5);

  pred.set_requires_grad(true);
  pred.zero_grad();
  vista::l1_loss(pred, target, mask).backward();
  for (Index j = 0; j < 4; ++j) {
    CHECK(pred.grad()[1 * 4 + j] == 0.0);
    CHECK(std::abs(pred.grad()[0 * 4 + j]) == doctest::Approx(1.0 / 8.0));
  }
}

TEST_CASE("total_loss: weighted arithmetic and variance targeting") {
  Tensor cls = Tensor::scalar(1.0);
  Tensor reg = Tensor::scalar(2.0);
  vista::VarianceLoss vs;
  vs.loss = Tensor::scalar(-0.1);
  vs.per_box = {0.1};
  vista::VarianceLoss vg;
  vg.loss = Tensor::scalar(-0.3);
  vg.per_box = {0.3};

  vista::LossWeights w;  // 1.0, 0.25, 1.0
  auto sem = vista::total_loss(cls, reg, vs, vg, w, vista::VarTarget::sem);
  CHECK(sem.report.target == doctest::Approx(1.5));
  CHECK(sem.report.total == doctest::Approx(1.4));
  CHECK(sem.report.var == doctest::Approx(-0.1));

  auto both = vista::total_loss(cls, reg, vs, vg, w, vista::VarTarget::both);
  CHECK(both.report.var == doctest::Approx(-0.2));
  CHECK(both.report.per_box_variances[0] == doctest::Approx(0.2));

  vista::LossWeights off;
  off.lambda_var = 0.0;
  auto no_var = vista::total_loss(cls, reg, vs, vg, off, vista::VarTarget::both);
  CHECK(no_var.report.total == doctest::Approx(no_var.report.target));
}
