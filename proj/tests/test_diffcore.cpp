#include <doctest.h>

#include <cmath>

#include "wsovod/diffcore.hpp"
#include "wsovod/rng.hpp"

using namespace wsovod;

namespace {
Mat random_mat(std::size_t r, std::size_t c, Rng& rng, double scale = 1.0) {
  Mat m(r, c);
  for (double& v : m.data) v = scale * rng.normal();
  return m;
}
}  // namespace

TEST_CASE("affine identity") {
  ParamStore store;
  auto& W = store.add("W", {3, 3});
  auto& b = store.add("b", {3});
  for (std::size_t i = 0; i < 3; ++i) W.values[i * 3 + i] = 1.0;
  Mat x(2, 3);
  Rng rng(1);
  for (double& v : x.data) v = rng.normal();
  const Mat y = affine(W, b, x);
  for (std::size_t i = 0; i < x.data.size(); ++i)
    CHECK(y.data[i] == doctest::Approx(x.data[i]));
}

TEST_CASE("affine batch equals stacked singles") {
  ParamStore store;
  Rng rng(2);
  auto& W = store.add("W", {4, 3});
  auto& b = store.add("b", {3});
  for (double& v : W.values) v = rng.normal();
  for (double& v : b.values) v = rng.normal();
  Mat x = random_mat(2, 4, rng);
  const Mat y = affine(W, b, x);
  for (std::size_t r = 0; r < 2; ++r) {
    Mat xr(1, 4);
    for (std::size_t j = 0; j < 4; ++j) xr(0, j) = x(r, j);
    const Mat yr = affine(W, b, xr);
    for (std::size_t j = 0; j < 3; ++j)
      CHECK(y(r, j) == doctest::Approx(yr(0, j)));
  }
}

TEST_CASE("affine shape mismatch names shapes") {
  ParamStore store;
  auto& W = store.add("W", {4, 3});
  auto& b = store.add("b", {3});
  Mat x(2, 5);
  CHECK_THROWS_WITH_AS(affine(W, b, x),
                       doctest::Contains("shape mismatch"), std::runtime_error);
}

TEST_CASE("affine gradient vs finite differences") {
  ParamStore store;
  Rng rng(3);
  auto& W = store.add("W", {4, 3});
  auto& b = store.add("b", {3});
  for (double& v : W.values) v = rng.normal();
  for (double& v : b.values) v = rng.normal();
  const Mat x = random_mat(4, 4, rng);
  // loss = sum of squares of outputs
  auto loss = [&] {
    const Mat y = affine(W, b, x);
    double l = 0;
    for (double v : y.data) l += v * v;
    return l;
  };
  auto grads = [&] {
    store.zero_grad();
    const Mat y = affine(W, b, x);
    Mat dy = y;
    for (double& v : dy.data) v *= 2.0;
    affine_backward(W, b, x, dy);
  };
  const auto report = grad_check(loss, grads, store, 1e-5, 64, 1);
  CHECK(report.max_rel_err < 1e-6);
}

TEST_CASE("softmax rows/cols on zero matrix") {
  Mat z(2, 3);
  const Mat r = softmax_rows(z);
  for (double v : r.data) CHECK(v == doctest::Approx(1.0 / 3.0));
  const Mat c = softmax_cols(z);
  for (double v : c.data) CHECK(v == doctest::Approx(0.5));
}

TEST_CASE("softmax shift invariance and normalization") {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t r = 1 + rng.uniform_int(6), c = 1 + rng.uniform_int(6);
    Mat m = random_mat(r, c, rng, 3.0);
    const Mat y = softmax_rows(m);
    for (std::size_t i = 0; i < r; ++i) {
      double sum = 0;
      for (std::size_t j = 0; j < c; ++j) {
        CHECK(y(i, j) > 0.0);
        sum += y(i, j);
      }
      CHECK(std::abs(sum - 1.0) < 1e-12);
    }
    Mat shifted = m;
    const double k = rng.normal();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) shifted(i, j) += k;
    const Mat y2 = softmax_rows(shifted);
    for (std::size_t i = 0; i < y.data.size(); ++i)
      CHECK(y.data[i] == doctest::Approx(y2.data[i]).epsilon(1e-12));

    const Mat yc = softmax_cols(m);
    for (std::size_t j = 0; j < c; ++j) {
      double sum = 0;
      for (std::size_t i = 0; i < r; ++i) sum += yc(i, j);
      CHECK(std::abs(sum - 1.0) < 1e-12);
    }
  }
}

TEST_CASE("softmax gradient vs finite differences") {
  ParamStore store;
  Rng rng(6);
  auto& W = store.add("W", {1, 12});
  for (double& v : W.values) v = rng.normal();
  auto as_mat = [&] {
    Mat m(3, 4);
    m.data = W.values;
    return m;
  };
  Mat weights = random_mat(3, 4, rng);  // fixed linear readout
  auto loss_rows = [&] {
    const Mat y = softmax_rows(as_mat());
    double l = 0;
    for (std::size_t i = 0; i < y.data.size(); ++i)
      l += weights.data[i] * y.data[i] * y.data[i];
    return l;
  };
  auto grads_rows = [&] {
    store.zero_grad();
    const Mat y = softmax_rows(as_mat());
    Mat dy = y;
    for (std::size_t i = 0; i < dy.data.size(); ++i)
      dy.data[i] = 2.0 * weights.data[i] * y.data[i];
    const Mat dm = softmax_rows_backward(y, dy);
    W.grad = dm.data;
  };
  CHECK(grad_check(loss_rows, grads_rows, store, 1e-5, 64, 2).max_rel_err < 1e-6);

  auto loss_cols = [&] {
    const Mat y = softmax_cols(as_mat());
    double l = 0;
    for (std::size_t i = 0; i < y.data.size(); ++i)
      l += weights.data[i] * y.data[i];
    return l;
  };
  auto grads_cols = [&] {
    store.zero_grad();
    const Mat y = softmax_cols(as_mat());
    const Mat dm = softmax_cols_backward(y, weights);
    W.grad = dm.data;
  };
  CHECK(grad_check(loss_cols, grads_cols, store, 1e-5, 64, 3).max_rel_err < 1e-6);
}

TEST_CASE("bce values") {
  CHECK(bce(1.0, 1.0) <= 1.2e-7);
  CHECK(bce(0.0, 0.0) <= 1.2e-7);
  CHECK(bce(0.5, 1.0) == doctest::Approx(std::log(2.0)));
  CHECK(bce(0.5, 0.0) == doctest::Approx(std::log(2.0)));
}

TEST_CASE("bce gradient") {
  ParamStore store;
  auto& p = store.add("p", {1});
  p.values[0] = 0.37;
  for (double y : {0.0, 1.0}) {
    auto loss = [&] { return bce(p.values[0], y); };
    auto grads = [&] {
      store.zero_grad();
      p.grad[0] = bce_grad(p.values[0], y);
    };
    CHECK(grad_check(loss, grads, store, 1e-5, 64, 4).max_rel_err < 1e-6);
  }
}

TEST_CASE("smooth_l1 values") {
  const std::vector<double> a{1, 2, 3}, b{1, 2, 3};
  CHECK(smooth_l1(a, b) == doctest::Approx(0.0));
  const std::vector<double> x{2.0}, t{0.0};
  CHECK(smooth_l1(x, t) == doctest::Approx(1.5));
  const std::vector<double> x2{0.5}, t2{0.0};
  CHECK(smooth_l1(x2, t2) == doctest::Approx(0.125));
}

TEST_CASE("smooth_l1 slope continuous at |d|=1") {
  const double eps = 1e-7;
  const std::vector<double> t{0.0};
  auto f = [&](double v) {
    const std::vector<double> x{v};
    return smooth_l1(x, t);
  };
  const double left = (f(1.0) - f(1.0 - eps)) / eps;
  const double right = (f(1.0 + eps) - f(1.0)) / eps;
  CHECK(std::abs(left - right) < 1e-6);
}

TEST_CASE("smooth_l1 gradient") {
  ParamStore store;
  Rng rng(8);
  auto& x = store.add("x", {6});
  std::vector<double> target(6);
  for (double& v : x.values) v = 2.0 * rng.normal();
  for (double& v : target) v = 2.0 * rng.normal();
  auto loss = [&] { return smooth_l1(x.values, target); };
  auto grads = [&] {
    store.zero_grad();
    smooth_l1_backward(x.values, target, x.grad);
  };
  CHECK(grad_check(loss, grads, store, 1e-5, 64, 5).max_rel_err < 1e-5);
}

TEST_CASE("iou_loss values") {
  CHECK(iou_loss({1, 1, 1, 1}, {1, 1, 1, 1}) == doctest::Approx(0.0));
  CHECK(iou_loss({1, 1, 1, 1}, {2, 2, 2, 2}) == doctest::Approx(0.75));
}

TEST_CASE("iou_loss gradient") {
  ParamStore store;
  Rng rng(9);
  auto& t = store.add("t", {4});
  for (int trial = 0; trial < 20; ++trial) {
    for (double& v : t.values) v = rng.uniform(0.5, 3.0);
    const LtrbTargets star{rng.uniform(0.6, 2.9), rng.uniform(0.6, 2.9),
                           rng.uniform(0.6, 2.9), rng.uniform(0.6, 2.9)};
    auto as_t = [&] {
      return LtrbTargets{t.values[0], t.values[1], t.values[2], t.values[3]};
    };
    auto loss = [&] { return iou_loss(as_t(), star); };
    auto grads = [&] {
      store.zero_grad();
      const LtrbTargets g = iou_loss_grad(as_t(), star);
      t.grad = {g.l, g.t, g.r, g.b};
    };
    CHECK(grad_check(loss, grads, store, 1e-5, 64, 10 + trial).max_rel_err < 1e-5);
  }
}

TEST_CASE("sgd_step") {
  SgdConfig cfg;
  cfg.momentum = 0.0;
  cfg.lr = 0.1;
  ParamStore store;
  auto& w = store.add("w", {1});
  w.values[0] = 1.0;

  // zero gradient: unchanged
  sgd_step(store, cfg);
  CHECK(w.values[0] == doctest::Approx(1.0));

  // single step
  w.grad[0] = 1.0;
  sgd_step(store, cfg);
  CHECK(w.values[0] == doctest::Approx(0.9));
  CHECK(w.grad[0] == 0.0);

  // lr=0 is the identity on values
  w.grad[0] = 5.0;
  sgd_step(store, cfg, 0.0);
  CHECK(w.values[0] == doctest::Approx(0.9));
}

TEST_CASE("sgd momentum matches hand-unrolled recurrence") {
  SgdConfig cfg;
  cfg.momentum = 0.9;
  cfg.lr = 0.1;
  ParamStore store;
  auto& w = store.add("w", {1});
  w.values[0] = 1.0;
  const double g1 = 0.5, g2 = -0.2;
  w.grad[0] = g1;
  sgd_step(store, cfg);
  w.grad[0] = g2;
  sgd_step(store, cfg);
  // v1 = g1; w1 = w0 - lr*v1; v2 = 0.9*v1 + g2; w2 = w1 - lr*v2
  const double v1 = g1;
  const double w1 = 1.0 - 0.1 * v1;
  const double v2 = 0.9 * v1 + g2;
  CHECK(w.values[0] == doctest::Approx(w1 - 0.1 * v2));
}

TEST_CASE("grad_check on quadratic") {
  ParamStore store;
  auto& w = store.add("w", {1});
  w.values[0] = 3.0;
  auto loss = [&] { return w.values[0] * w.values[0]; };
  auto grads = [&] {
    store.zero_grad();
    w.grad[0] = 2.0 * w.values[0];
  };
  const auto report = grad_check(loss, grads, store);
  CHECK(report.max_rel_err < 1e-6);
  CHECK(report.entries.size() == 1);
  CHECK(report.entries[0].tensor == "w");
}

TEST_CASE("grad_check flags a corrupted gradient") {
  ParamStore store;
  auto& w = store.add("w", {1});
  w.values[0] = 3.0;
  auto loss = [&] { return w.values[0] * w.values[0]; };
  auto bad_grads = [&] {
    store.zero_grad();
    w.grad[0] = 2.0 * w.values[0] + 0.5;
  };
  CHECK(grad_check(loss, bad_grads, store).max_rel_err > 1e-2);
}

TEST_CASE("checkpoint round-trip") {
  ParamStore store;
  Rng rng(11);
  auto& a = store.add("a", {2, 3});
  auto& b = store.add("b", {4});
  for (double& v : a.values) v = rng.normal();
  for (double& v : b.values) v = rng.normal();
  const std::string path = "test_ckpt.json";
  save_checkpoint(store, path, 17);

  ParamStore loaded;
  loaded.add("a", {2, 3});
  loaded.add("b", {4});
  CHECK(load_checkpoint(loaded, path) == 17);
  CHECK(loaded.get("a").values == a.values);
  CHECK(loaded.get("b").values == b.values);

  ParamStore wrong;
  wrong.add("a", {3, 2});
  wrong.add("b", {4});
  CHECK_THROWS_WITH_AS(load_checkpoint(wrong, path),
                       doctest::Contains("shape mismatch"), std::runtime_error);
}
