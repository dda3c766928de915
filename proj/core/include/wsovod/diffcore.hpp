#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "wsovod/geometry.hpp"
#include "wsovod/matrix.hpp"
#include "wsovod/param.hpp"

namespace wsovod {

// Hand-chained differentiable primitives. Forward functions are pure;
// each backward takes the saved forward inputs/outputs it needs.
// Parameter gradients are accumulated (+=) into ParamTensor::grad.

// y = x W + b. W shape {in,out}, b shape {out}, x is N x in.
Mat affine(const ParamTensor& W, const ParamTensor& b, const Mat& x);
// Accumulates dW, db; returns dL/dx.
Mat affine_backward(ParamTensor& W, ParamTensor& b, const Mat& x, const Mat& dy);

Mat relu(const Mat& x);
Mat relu_backward(const Mat& x, const Mat& dy);
Mat leaky_relu(const Mat& x, double slope = 0.1);
Mat leaky_relu_backward(const Mat& x, const Mat& dy, double slope = 0.1);

Mat tanh_mat(const Mat& x);
Mat tanh_backward(const Mat& y, const Mat& dy);  // takes forward output

Mat softmax_rows(const Mat& m);
Mat softmax_cols(const Mat& m);
// y is the forward output; returns dL/dm.
Mat softmax_rows_backward(const Mat& y, const Mat& dy);
Mat softmax_cols_backward(const Mat& y, const Mat& dy);

inline constexpr double kBceEps = 1e-7;
// -[y log p + (1-y) log(1-p)], p clamped to [eps, 1-eps].
double bce(double p, double y);
double bce_grad(double p, double y);  // d loss / d p (0 inside the clamp)

// Per-element 0.5 d^2 if |d|<1 else |d|-0.5, summed over elements.
double smooth_l1(std::span<const double> x, std::span<const double> target);
// Gradient w.r.t. x, written into gx (accumulated).
void smooth_l1_backward(std::span<const double> x, std::span<const double> target,
                        std::span<double> gx, double scale = 1.0);

// 1 - IoU of the two ltrb-decoded boxes at a shared location.
double iou_loss(const LtrbTargets& t, const LtrbTargets& t_star);
// Gradient w.r.t. the predicted t (subgradient at kinks).
LtrbTargets iou_loss_grad(const LtrbTargets& t, const LtrbTargets& t_star);

struct GradCheckEntry {
  std::string tensor;
  double max_rel_err = 0.0;
  std::size_t worst_coord = 0;
  std::size_t coords_checked = 0;
};
struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_rel_err = 0.0;
  bool pass(double tol) const { return max_rel_err < tol; }
};

// loss_fn must recompute the loss from current parameter values (forward only).
// grad_fn must populate analytic gradients for the same loss (zero_grad included).
// Central differences on a random coordinate subsample (>= min_coords per
// tensor, or the whole tensor if smaller).
GradCheckReport grad_check(const std::function<double()>& loss_fn,
                           const std::function<void()>& grad_fn,
                           ParamStore& params, double eps = 1e-5,
                           std::size_t min_coords = 64,
                           std::uint64_t seed = 0);

}  // namespace wsovod
