#pragma once

#include <cstddef>
#include <vector>

namespace wsovod {

// Axis-aligned box, origin top-left, continuous pixel coordinates.
// Degenerate (zero-area) boxes are valid; their IoU with anything is 0.
struct Box {
  double x0 = 0, y0 = 0, x1 = 0, y1 = 0;

  double width() const { return x1 - x0; }
  double height() const { return y1 - y0; }
  double area() const { return width() * height(); }
  double cx() const { return 0.5 * (x0 + x1); }
  double cy() const { return 0.5 * (y0 + y1); }

  bool contains(double x, double y) const {
    return x >= x0 && x <= x1 && y >= y0 && y <= y1;
  }
  bool operator==(const Box&) const = default;
};

// Distances from a location to the four box sides.
struct LtrbTargets {
  double l = 0, t = 0, r = 0, b = 0;
  bool operator==(const LtrbTargets&) const = default;
};

double iou(const Box& a, const Box& b);

// Requires the location inside the box; callers filter first.
LtrbTargets ltrb_encode(double x, double y, const Box& box);
Box ltrb_decode(double x, double y, const LtrbTargets& t);

// sqrt((min(l,r)/max(l,r)) * (min(t,b)/max(t,b))); 0 when any max is 0.
double centerness_target(const LtrbTargets& t);

// Greedy descending-score NMS. Kept indices sorted by score descending,
// ties broken by lower original index.
std::vector<std::size_t> nms(const std::vector<Box>& boxes,
                             const std::vector<double>& scores,
                             double iou_thr);

Box clip_box(const Box& b, double w, double h);

}  // namespace wsovod
