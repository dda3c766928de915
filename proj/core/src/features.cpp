#include "wsovod/features.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace wsovod {

namespace {
void init_affine(ParamTensor& W, ParamTensor& b, Rng& rng) {
  const double scale = std::sqrt(2.0 / double(W.shape[0]));
  for (double& v : W.values) v = scale * rng.normal();
  (void)b;  // biases start at zero
}
}  // namespace

ExtractorParams ExtractorParams::create(ParamStore& store, std::size_t stride,
                                        std::size_t d_feat, Rng& init) {
  ExtractorParams p;
  p.stride = stride;
  p.W = &store.add("extractor.W", {stride * stride * 3, d_feat});
  p.b = &store.add("extractor.b", {d_feat});
  init_affine(*p.W, *p.b, init);
  return p;
}

FeatureMap extract(const Image& img, const ExtractorParams& p,
                   ExtractCache* cache) {
  const std::size_t s = p.stride;
  if (img.h % s != 0 || img.w % s != 0)
    throw std::runtime_error("extract: image size " + std::to_string(img.h) + "x" +
                             std::to_string(img.w) + " not a multiple of stride " +
                             std::to_string(s));
  FeatureMap fmap;
  fmap.gh = img.h / s;
  fmap.gw = img.w / s;
  fmap.stride = s;
  const std::size_t cells = fmap.gh * fmap.gw;
  Mat patches(cells, s * s * 3);
  for (std::size_t gy = 0; gy < fmap.gh; ++gy)
    for (std::size_t gx = 0; gx < fmap.gw; ++gx) {
      const std::size_t row = gy * fmap.gw + gx;
      std::size_t k = 0;
      for (std::size_t dy = 0; dy < s; ++dy)
        for (std::size_t dx = 0; dx < s; ++dx)
          for (int c = 0; c < 3; ++c)
            patches(row, k++) = img.at(gy * s + dy, gx * s + dx, std::size_t(c));
    }
  Mat pre = affine(*p.W, *p.b, patches);
  fmap.cells = leaky_relu(pre);
  if (cache) {
    cache->patches = std::move(patches);
    cache->pre = std::move(pre);
  }
  return fmap;
}

void extract_backward(const Mat& d_cells, const ExtractCache& cache,
                      ExtractorParams& p) {
  Mat d_pre = leaky_relu_backward(cache.pre, d_cells);
  affine_backward(*p.W, *p.b, cache.patches, d_pre);
}

Mat roi_pool(const FeatureMap& fmap, const std::vector<Box>& boxes,
             std::size_t g, RoiPoolCache* cache) {
  const std::size_t ch = fmap.channels();
  Mat out(boxes.size(), g * g * ch);
  if (cache) cache->bins.assign(boxes.size(), {});
  for (std::size_t r = 0; r < boxes.size(); ++r) {
    const Box& box = boxes[r];
    std::vector<std::vector<std::size_t>> bin_cells(g * g);
    if (box.area() > 0) {
      // box in grid units
      const double gx0 = box.x0 / double(fmap.stride);
      const double gy0 = box.y0 / double(fmap.stride);
      const double gx1 = box.x1 / double(fmap.stride);
      const double gy1 = box.y1 / double(fmap.stride);
      for (std::size_t by = 0; by < g; ++by)
        for (std::size_t bx = 0; bx < g; ++bx) {
          const double bx0 = gx0 + (gx1 - gx0) * double(bx) / double(g);
          const double bx1e = gx0 + (gx1 - gx0) * double(bx + 1) / double(g);
          const double by0 = gy0 + (gy1 - gy0) * double(by) / double(g);
          const double by1e = gy0 + (gy1 - gy0) * double(by + 1) / double(g);
          auto& cells = bin_cells[by * g + bx];
          const auto cx0 = std::size_t(std::clamp(std::floor(bx0), 0.0, double(fmap.gw - 1)));
          const auto cy0 = std::size_t(std::clamp(std::floor(by0), 0.0, double(fmap.gh - 1)));
          const auto cx1 = std::size_t(std::clamp(std::ceil(bx1e), 1.0, double(fmap.gw)));
          const auto cy1 = std::size_t(std::clamp(std::ceil(by1e), 1.0, double(fmap.gh)));
          for (std::size_t cy = cy0; cy < cy1; ++cy)
            for (std::size_t cx = cx0; cx < cx1; ++cx) {
              // keep cells whose center falls in the bin; nearest-cell fallback below
              const double ccx = double(cx) + 0.5, ccy = double(cy) + 0.5;
              if (ccx >= bx0 && ccx < bx1e && ccy >= by0 && ccy < by1e)
                cells.push_back(fmap.cell_index(cy, cx));
            }
          if (cells.empty()) {
            const double mx = std::clamp(0.5 * (bx0 + bx1e), 0.0, double(fmap.gw) - 1e-9);
            const double my = std::clamp(0.5 * (by0 + by1e), 0.0, double(fmap.gh) - 1e-9);
            cells.push_back(fmap.cell_index(std::size_t(my), std::size_t(mx)));
          }
        }
    }
    for (std::size_t bin = 0; bin < g * g; ++bin) {
      const auto& cells = bin_cells[bin];
      if (cells.empty()) continue;
      for (std::size_t c = 0; c < ch; ++c) {
        double sum = 0;
        for (std::size_t idx : cells) sum += fmap.cells(idx, c);
        out(r, bin * ch + c) = sum / double(cells.size());
      }
    }
    if (cache) cache->bins[r] = std::move(bin_cells);
  }
  return out;
}

void roi_pool_backward(const Mat& dout, const RoiPoolCache& cache,
                       std::size_t channels, Mat& d_cells) {
  for (std::size_t r = 0; r < cache.bins.size(); ++r) {
    const auto& bins = cache.bins[r];
    for (std::size_t bin = 0; bin < bins.size(); ++bin) {
      const auto& cells = bins[bin];
      if (cells.empty()) continue;
      const double inv = 1.0 / double(cells.size());
      for (std::size_t c = 0; c < channels; ++c) {
        const double g = dout(r, bin * channels + c) * inv;
        if (g == 0.0) continue;
        for (std::size_t idx : cells) d_cells(idx, c) += g;
      }
    }
  }
}

ProposalMlpParams ProposalMlpParams::create(ParamStore& store, std::size_t in,
                                            std::size_t d, Rng& init) {
  ProposalMlpParams p;
  p.W1 = &store.add("mlp.W1", {in, d});
  p.b1 = &store.add("mlp.b1", {d});
  p.W2 = &store.add("mlp.W2", {d, d});
  p.b2 = &store.add("mlp.b2", {d});
  init_affine(*p.W1, *p.b1, init);
  init_affine(*p.W2, *p.b2, init);
  return p;
}

Mat proposal_mlp(const Mat& pooled, const ProposalMlpParams& p,
                 ProposalMlpCache* cache, Rng* dropout_rng) {
  Mat z1 = affine(*p.W1, *p.b1, pooled);
  Mat h1 = leaky_relu(z1);
  Mat mask;
  if (dropout_rng && p.dropout_rate > 0.0) {
    mask = Mat(h1.rows, h1.cols);
    const double keep = 1.0 - p.dropout_rate;
    for (double& m : mask.data) m = dropout_rng->uniform() < keep ? 1.0 / keep : 0.0;
    for (std::size_t i = 0; i < h1.data.size(); ++i) h1.data[i] *= mask.data[i];
  }
  Mat z2 = affine(*p.W2, *p.b2, h1);
  Mat out = leaky_relu(z2);
  if (cache) {
    cache->x = pooled;
    cache->z1 = std::move(z1);
    cache->h1 = std::move(h1);
    cache->z2 = std::move(z2);
    cache->mask = std::move(mask);
  }
  return out;
}

Mat proposal_mlp_backward(const Mat& dout, const ProposalMlpCache& cache,
                          ProposalMlpParams& p) {
  Mat d_z2 = leaky_relu_backward(cache.z2, dout);
  Mat d_h1 = affine_backward(*p.W2, *p.b2, cache.h1, d_z2);
  if (!cache.mask.empty())
    for (std::size_t i = 0; i < d_h1.data.size(); ++i)
      d_h1.data[i] *= cache.mask.data[i];
  Mat d_z1 = leaky_relu_backward(cache.z1, d_h1);
  return affine_backward(*p.W1, *p.b1, cache.x, d_z1);
}

DafeParams DafeParams::create(ParamStore& store, std::size_t d_feat,
                              std::size_t hidden, std::size_t m, std::size_t d,
                              Rng& init) {
  DafeParams p;
  p.prototypes = &store.add("dafe.P", {m, d});
  p.A1 = &store.add("dafe.A1", {d_feat, hidden});
  p.b1 = &store.add("dafe.b1", {hidden});
  p.A2 = &store.add("dafe.A2", {hidden, m});
  p.b2 = &store.add("dafe.b2", {m});
  init_affine(*p.A1, *p.b1, init);
  init_affine(*p.A2, *p.b2, init);
  const double scale = std::sqrt(1.0 / double(d));
  for (double& v : p.prototypes->values) v = scale * init.normal();
  return p;
}

std::vector<double> dafe(const FeatureMap& fmap, const DafeParams& p,
                         DafeCache* cache) {
  const std::size_t ch = fmap.channels();
  const std::size_t cells = fmap.cells.rows;
  Mat g(1, ch);
  for (std::size_t i = 0; i < cells; ++i)
    for (std::size_t c = 0; c < ch; ++c) g(0, c) += fmap.cells(i, c);
  for (double& v : g.data) v /= double(cells);
  Mat z1 = affine(*p.A1, *p.b1, g);
  Mat h1 = relu(z1);
  Mat z2 = affine(*p.A2, *p.b2, h1);
  Mat alpha = tanh_mat(z2);
  const std::size_t m = p.prototypes->shape[0], d = p.prototypes->shape[1];
  std::vector<double> xdaf(d, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < d; ++j)
      xdaf[j] += alpha(0, i) * p.prototypes->values[i * d + j];
  if (cache) {
    cache->g = std::move(g);
    cache->z1 = std::move(z1);
    cache->h1 = std::move(h1);
    cache->z2 = std::move(z2);
    cache->alpha = std::move(alpha);
    cache->cells = cells;
  }
  return xdaf;
}

void dafe_backward(const std::vector<double>& d_xdaf, const DafeCache& cache,
                   DafeParams& p, Mat& d_cells) {
  const std::size_t m = p.prototypes->shape[0], d = p.prototypes->shape[1];
  Mat d_alpha(1, m);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      p.prototypes->grad[i * d + j] += cache.alpha(0, i) * d_xdaf[j];
      d_alpha(0, i) += p.prototypes->values[i * d + j] * d_xdaf[j];
    }
  }
  Mat d_z2 = tanh_backward(cache.alpha, d_alpha);
  Mat d_h1 = affine_backward(*p.A2, *p.b2, cache.h1, d_z2);
  Mat d_z1 = relu_backward(cache.z1, d_h1);
  Mat d_g = affine_backward(*p.A1, *p.b1, cache.g, d_z1);
  const double inv = 1.0 / double(cache.cells);
  for (std::size_t i = 0; i < d_cells.rows; ++i)
    for (std::size_t c = 0; c < d_cells.cols; ++c)
      d_cells(i, c) += d_g(0, c) * inv;
}

Mat fuse(const Mat& x_prop, const std::vector<double>& x_daf) {
  if (!x_prop.empty() && x_prop.cols != x_daf.size())
    throw std::runtime_error("fuse: width mismatch");
  Mat out = x_prop;
  for (std::size_t r = 0; r < out.rows; ++r)
    for (std::size_t j = 0; j < out.cols; ++j) out(r, j) += x_daf[j];
  return out;
}

}  // namespace wsovod
