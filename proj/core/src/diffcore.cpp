#include "wsovod/diffcore.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include <json.hpp>

#include "wsovod/rng.hpp"

namespace wsovod {

namespace {
void check_shapes(const ParamTensor& W, const ParamTensor& b, const Mat& x) {
  if (W.shape.size() != 2 || b.shape.size() != 1 || W.shape[1] != b.shape[0] ||
      x.cols != W.shape[0]) {
    throw std::runtime_error(
        "affine shape mismatch: x is " + std::to_string(x.rows) + "x" +
        std::to_string(x.cols) + ", W '" + W.name + "' is " +
        std::to_string(W.shape[0]) + "x" + std::to_string(W.shape[1]));
  }
}
}  // namespace

Mat affine(const ParamTensor& W, const ParamTensor& b, const Mat& x) {
  check_shapes(W, b, x);
  const std::size_t in = W.shape[0], out = W.shape[1];
  Mat y(x.rows, out);
  for (std::size_t i = 0; i < x.rows; ++i) {
    for (std::size_t j = 0; j < out; ++j) y(i, j) = b.values[j];
    for (std::size_t k = 0; k < in; ++k) {
      const double xv = x(i, k);
      if (xv == 0.0) continue;
      for (std::size_t j = 0; j < out; ++j) y(i, j) += xv * W.values[k * out + j];
    }
  }
  return y;
}

Mat affine_backward(ParamTensor& W, ParamTensor& b, const Mat& x, const Mat& dy) {
  check_shapes(W, b, x);
  const std::size_t in = W.shape[0], out = W.shape[1];
  Mat dx(x.rows, in);
  for (std::size_t i = 0; i < x.rows; ++i) {
    for (std::size_t j = 0; j < out; ++j) {
      const double g = dy(i, j);
      if (g == 0.0) continue;
      b.grad[j] += g;
      for (std::size_t k = 0; k < in; ++k) {
        W.grad[k * out + j] += x(i, k) * g;
        dx(i, k) += W.values[k * out + j] * g;
      }
    }
  }
  return dx;
}

Mat relu(const Mat& x) {
  Mat y = x;
  for (double& v : y.data) v = std::max(0.0, v);
  return y;
}

Mat relu_backward(const Mat& x, const Mat& dy) {
  Mat dx = dy;
  for (std::size_t i = 0; i < x.data.size(); ++i)
    if (x.data[i] <= 0.0) dx.data[i] = 0.0;
  return dx;
}

Mat leaky_relu(const Mat& x, double slope) {
  Mat y = x;
  for (double& v : y.data) v = v > 0.0 ? v : slope * v;
  return y;
}

Mat leaky_relu_backward(const Mat& x, const Mat& dy, double slope) {
  Mat dx = dy;
  for (std::size_t i = 0; i < x.data.size(); ++i)
    if (x.data[i] <= 0.0) dx.data[i] *= slope;
  return dx;
}

Mat tanh_mat(const Mat& x) {
  Mat y = x;
  for (double& v : y.data) v = std::tanh(v);
  return y;
}

Mat tanh_backward(const Mat& y, const Mat& dy) {
  Mat dx = dy;
  for (std::size_t i = 0; i < y.data.size(); ++i)
    dx.data[i] *= 1.0 - y.data[i] * y.data[i];
  return dx;
}

Mat softmax_rows(const Mat& m) {
  Mat y(m.rows, m.cols);
  for (std::size_t i = 0; i < m.rows; ++i) {
    double mx = -1e300;
    for (std::size_t j = 0; j < m.cols; ++j) mx = std::max(mx, m(i, j));
    double sum = 0;
    for (std::size_t j = 0; j < m.cols; ++j) sum += (y(i, j) = std::exp(m(i, j) - mx));
    for (std::size_t j = 0; j < m.cols; ++j) y(i, j) /= sum;
  }
  return y;
}

Mat softmax_cols(const Mat& m) {
  Mat y(m.rows, m.cols);
  for (std::size_t j = 0; j < m.cols; ++j) {
    double mx = -1e300;
    for (std::size_t i = 0; i < m.rows; ++i) mx = std::max(mx, m(i, j));
    double sum = 0;
    for (std::size_t i = 0; i < m.rows; ++i) sum += (y(i, j) = std::exp(m(i, j) - mx));
    for (std::size_t i = 0; i < m.rows; ++i) y(i, j) /= sum;
  }
  return y;
}

Mat softmax_rows_backward(const Mat& y, const Mat& dy) {
  Mat dm(y.rows, y.cols);
  for (std::size_t i = 0; i < y.rows; ++i) {
    double dot = 0;
    for (std::size_t j = 0; j < y.cols; ++j) dot += dy(i, j) * y(i, j);
    for (std::size_t j = 0; j < y.cols; ++j)
      dm(i, j) = y(i, j) * (dy(i, j) - dot);
  }
  return dm;
}

Mat softmax_cols_backward(const Mat& y, const Mat& dy) {
  Mat dm(y.rows, y.cols);
  for (std::size_t j = 0; j < y.cols; ++j) {
    double dot = 0;
    for (std::size_t i = 0; i < y.rows; ++i) dot += dy(i, j) * y(i, j);
    for (std::size_t i = 0; i < y.rows; ++i)
      dm(i, j) = y(i, j) * (dy(i, j) - dot);
  }
  return dm;
}

double bce(double p, double y) {
  p = std::clamp(p, kBceEps, 1.0 - kBceEps);
  return -(y * std::log(p) + (1.0 - y) * std::log(1.0 - p));
}

double bce_grad(double p, double y) {
  if (p < kBceEps || p > 1.0 - kBceEps) return 0.0;
  return -(y / p) + (1.0 - y) / (1.0 - p);
}

double smooth_l1(std::span<const double> x, std::span<const double> target) {
  double loss = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = std::abs(x[i] - target[i]);
    loss += d < 1.0 ? 0.5 * d * d : d - 0.5;
  }
  return loss;
}

void smooth_l1_backward(std::span<const double> x, std::span<const double> target,
                        std::span<double> gx, double scale) {
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = x[i] - target[i];
    gx[i] += scale * (std::abs(d) < 1.0 ? d : (d > 0 ? 1.0 : -1.0));
  }
}

namespace {
struct IouParts {
  double inter, uni, ap;
  double iw, ih;
};
IouParts iou_parts(const LtrbTargets& t, const LtrbTargets& s) {
  IouParts p;
  p.iw = std::min(t.l, s.l) + std::min(t.r, s.r);
  p.ih = std::min(t.t, s.t) + std::min(t.b, s.b);
  p.inter = p.iw * p.ih;
  p.ap = (t.l + t.r) * (t.t + t.b);
  const double as = (s.l + s.r) * (s.t + s.b);
  p.uni = p.ap + as - p.inter;
  return p;
}
}  // namespace

double iou_loss(const LtrbTargets& t, const LtrbTargets& s) {
  const IouParts p = iou_parts(t, s);
  if (p.uni <= 0) return 1.0;
  return 1.0 - p.inter / p.uni;
}

LtrbTargets iou_loss_grad(const LtrbTargets& t, const LtrbTargets& s) {
  const IouParts p = iou_parts(t, s);
  if (p.uni <= 0) return {};
  // d(1 - I/U)/dv = -(I_v U - I U_v)/U^2, U_v = Ap_v - I_v
  auto comp = [&](double tv, double sv, double i_other, double ap_other) {
    const double di = (tv <= sv ? 1.0 : 0.0) * i_other;
    const double dap = ap_other;
    const double du = dap - di;
    return -(di * p.uni - p.inter * du) / (p.uni * p.uni);
  };
  LtrbTargets g;
  g.l = comp(t.l, s.l, p.ih, t.t + t.b);
  g.r = comp(t.r, s.r, p.ih, t.t + t.b);
  g.t = comp(t.t, s.t, p.iw, t.l + t.r);
  g.b = comp(t.b, s.b, p.iw, t.l + t.r);
  return g;
}

void sgd_step(ParamStore& params, const SgdConfig& cfg, double lr_override) {
  const double lr = lr_override >= 0 ? lr_override : cfg.lr;
  for (ParamTensor* t : params.all()) {
    for (std::size_t i = 0; i < t->size(); ++i) {
      const double g = t->grad[i] + cfg.weight_decay * t->values[i];
      t->momentum[i] = cfg.momentum * t->momentum[i] + g;
      t->values[i] -= lr * t->momentum[i];
    }
    t->zero_grad();
  }
}

void save_checkpoint(const ParamStore& params, const std::string& path, long step) {
  nlohmann::json tensors = nlohmann::json::object();
  for (ParamTensor* t : const_cast<ParamStore&>(params).all()) {
    tensors[t->name] = {{"shape", t->shape}, {"values", t->values}};
  }
  nlohmann::json j = {{"version", 1}, {"step", step}, {"tensors", tensors}};
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
  out << j.dump() << "\n";
}

long load_checkpoint(ParamStore& params, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read checkpoint: " + path);
  nlohmann::json j;
  in >> j;
  if (!j.contains("version") || j["version"] != 1)
    throw std::runtime_error("checkpoint version mismatch: " + path);
  for (ParamTensor* t : params.all()) {
    if (!j["tensors"].contains(t->name))
      throw std::runtime_error("checkpoint missing tensor: " + t->name);
    const auto& jt = j["tensors"][t->name];
    const auto shape = jt["shape"].get<std::vector<std::size_t>>();
    if (shape != t->shape)
      throw std::runtime_error("checkpoint shape mismatch for tensor: " + t->name);
    t->values = jt["values"].get<std::vector<double>>();
    std::fill(t->momentum.begin(), t->momentum.end(), 0.0);
    t->zero_grad();
  }
  return j.value("step", 0L);
}

GradCheckReport grad_check(const std::function<double()>& loss_fn,
                           const std::function<void()>& grad_fn,
                           ParamStore& params, double eps,
                           std::size_t min_coords, std::uint64_t seed) {
  {
    const double l0 = loss_fn();
    if (!std::isfinite(l0)) throw std::runtime_error("grad_check: non-finite loss");
  }
  grad_fn();
  // Snapshot analytic gradients before FD perturbation loops.
  std::vector<std::vector<double>> analytic;
  for (ParamTensor* t : params.all()) analytic.push_back(t->grad);

  GradCheckReport report;
  Rng rng(hash_combine(seed, 0x67c0deULL));
  std::size_t ti = 0;
  for (ParamTensor* t : params.all()) {
    GradCheckEntry entry{t->name, 0.0, 0, 0};
    std::vector<std::size_t> coords;
    if (t->size() <= min_coords) {
      coords.resize(t->size());
      std::iota(coords.begin(), coords.end(), std::size_t{0});
    } else {
      for (std::size_t k = 0; k < min_coords; ++k)
        coords.push_back(rng.uniform_int(t->size()));
    }
    for (std::size_t c : coords) {
      const double saved = t->values[c];
      t->values[c] = saved + eps;
      const double fp = loss_fn();
      t->values[c] = saved - eps;
      const double fm = loss_fn();
      t->values[c] = saved;
      const double numeric = (fp - fm) / (2 * eps);
      const double a = analytic[ti][c];
      const double rel =
          std::abs(a - numeric) / std::max(1e-4, std::abs(a) + std::abs(numeric));
      if (rel > entry.max_rel_err) {
        entry.max_rel_err = rel;
        entry.worst_coord = c;
      }
      ++entry.coords_checked;
    }
    report.max_rel_err = std::max(report.max_rel_err, entry.max_rel_err);
    report.entries.push_back(std::move(entry));
    ++ti;
  }
  return report;
}

}  // namespace wsovod
