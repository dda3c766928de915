#include "wsovod/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace wsovod {

double iou(const Box& a, const Box& b) {
  const double ix0 = std::max(a.x0, b.x0);
  const double iy0 = std::max(a.y0, b.y0);
  const double ix1 = std::min(a.x1, b.x1);
  const double iy1 = std::min(a.y1, b.y1);
  const double iw = std::max(0.0, ix1 - ix0);
  const double ih = std::max(0.0, iy1 - iy0);
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  return uni > 0 ? inter / uni : 0.0;
}

LtrbTargets ltrb_encode(double x, double y, const Box& box) {
  return {x - box.x0, y - box.y0, box.x1 - x, box.y1 - y};
}

Box ltrb_decode(double x, double y, const LtrbTargets& t) {
  return {x - t.l, y - t.t, x + t.r, y + t.b};
}

double centerness_target(const LtrbTargets& t) {
  const double mx_lr = std::max(t.l, t.r);
  const double mx_tb = std::max(t.t, t.b);
  if (mx_lr <= 0 || mx_tb <= 0) return 0.0;
  return std::sqrt((std::min(t.l, t.r) / mx_lr) * (std::min(t.t, t.b) / mx_tb));
}

std::vector<std::size_t> nms(const std::vector<Box>& boxes,
                             const std::vector<double>& scores,
                             double iou_thr) {
  std::vector<std::size_t> order(boxes.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) {
    if (scores[i] != scores[j]) return scores[i] > scores[j];
    return i < j;
  });
  std::vector<std::size_t> keep;
  std::vector<char> suppressed(boxes.size(), 0);
  for (std::size_t oi = 0; oi < order.size(); ++oi) {
    const std::size_t i = order[oi];
    if (suppressed[i]) continue;
    keep.push_back(i);
    for (std::size_t oj = oi + 1; oj < order.size(); ++oj) {
      const std::size_t j = order[oj];
      if (!suppressed[j] && iou(boxes[i], boxes[j]) > iou_thr) suppressed[j] = 1;
    }
  }
  return keep;
}

Box clip_box(const Box& b, double w, double h) {
  Box c{std::clamp(b.x0, 0.0, w), std::clamp(b.y0, 0.0, h),
        std::clamp(b.x1, 0.0, w), std::clamp(b.y1, 0.0, h)};
  if (c.x1 < c.x0) c.x1 = c.x0;
  if (c.y1 < c.y0) c.y1 = c.y0;
  return c;
}

}  // namespace wsovod
