#include "wsovod/proposals.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace wsovod {

namespace {
double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

void init_head(ParamTensor& W, Rng& rng) {
  const double scale = std::sqrt(2.0 / double(W.shape[0]));
  for (double& v : W.values) v = scale * rng.normal();
}
}  // namespace

RpnParams RpnParams::create(ParamStore& store, std::size_t d_feat,
                            std::size_t width, Rng& init) {
  RpnParams p;
  p.Wc = &store.add("rpn.Wc", {9 * d_feat, width});
  p.bc = &store.add("rpn.bc", {width});
  p.Wp = &store.add("rpn.Wp", {width, 1});
  p.bp = &store.add("rpn.bp", {1});
  p.Wcn = &store.add("rpn.Wcn", {width, 1});
  p.bcn = &store.add("rpn.bcn", {1});
  p.Wt = &store.add("rpn.Wt", {width, 4});
  p.bt = &store.add("rpn.bt", {4});
  init_head(*p.Wc, init);
  init_head(*p.Wp, init);
  init_head(*p.Wcn, init);
  init_head(*p.Wt, init);
  // start t around exp(bt) = stride pixels per side
  for (double& v : p.bt->values) v = std::log(4.0);
  return p;
}

LocationPredictions rpn_forward(const FeatureMap& fmap, const RpnParams& p,
                                RpnCache* cache) {
  const std::size_t ch = fmap.channels();
  const std::size_t cells = fmap.cells.rows;
  Mat neigh(cells, 9 * ch);
  for (std::size_t gy = 0; gy < fmap.gh; ++gy)
    for (std::size_t gx = 0; gx < fmap.gw; ++gx) {
      const std::size_t row = fmap.cell_index(gy, gx);
      std::size_t k = 0;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          const long ny = long(gy) + dy, nx = long(gx) + dx;
          if (ny < 0 || nx < 0 || ny >= long(fmap.gh) || nx >= long(fmap.gw)) {
            k += ch;  // zero padding
          } else {
            const std::size_t src = fmap.cell_index(std::size_t(ny), std::size_t(nx));
            for (std::size_t c = 0; c < ch; ++c) neigh(row, k++) = fmap.cells(src, c);
          }
        }
    }
  Mat z = affine(*p.Wc, *p.bc, neigh);
  Mat h = relu(z);
  Mat p_logit = affine(*p.Wp, *p.bp, h);
  Mat c_logit = affine(*p.Wcn, *p.bcn, h);
  Mat t_logit = affine(*p.Wt, *p.bt, h);

  LocationPredictions preds;
  preds.gh = fmap.gh;
  preds.gw = fmap.gw;
  preds.stride = fmap.stride;
  preds.p.resize(cells);
  preds.c.resize(cells);
  preds.t.resize(cells);
  for (std::size_t i = 0; i < cells; ++i) {
    preds.p[i] = sigmoid(p_logit(i, 0));
    preds.c[i] = sigmoid(c_logit(i, 0));
    preds.t[i] = {std::exp(t_logit(i, 0)), std::exp(t_logit(i, 1)),
                  std::exp(t_logit(i, 2)), std::exp(t_logit(i, 3))};
  }
  if (cache) {
    cache->neigh = std::move(neigh);
    cache->z = std::move(z);
    cache->h = std::move(h);
    cache->p_logit = std::move(p_logit);
    cache->c_logit = std::move(c_logit);
    cache->t_logit = std::move(t_logit);
    cache->preds = preds;
  }
  return preds;
}

PgTargets assign_pg_targets(const std::vector<PgtBox>& pgt,
                            const LocationPredictions& geom) {
  const std::size_t cells = geom.gh * geom.gw;
  PgTargets t;
  t.p_star.assign(cells, 0);
  t.c_star.assign(cells, 0.0);
  t.t_star.assign(cells, {});
  for (std::size_t gy = 0; gy < geom.gh; ++gy)
    for (std::size_t gx = 0; gx < geom.gw; ++gx) {
      const std::size_t i = gy * geom.gw + gx;
      const double cx = (double(gx) + 0.5) * double(geom.stride);
      const double cy = (double(gy) + 0.5) * double(geom.stride);
      long best = -1;
      for (std::size_t b = 0; b < pgt.size(); ++b) {
        if (!pgt[b].box.contains(cx, cy)) continue;
        if (best < 0 || pgt[b].box.area() < pgt[std::size_t(best)].box.area())
          best = long(b);
      }
      if (best >= 0) {
        t.p_star[i] = 1;
        const LtrbTargets lt = ltrb_encode(cx, cy, pgt[std::size_t(best)].box);
        t.c_star[i] = centerness_target(lt);
        t.t_star[i] = lt;
        ++t.num_pos;
      }
    }
  return t;
}

double loss_pg(const LocationPredictions& preds, const PgTargets& targets) {
  const std::size_t cells = preds.p.size();
  double cls = 0;
  for (std::size_t i = 0; i < cells; ++i)
    cls += bce(preds.p[i], double(targets.p_star[i]));
  cls /= double(cells);
  if (targets.num_pos == 0) return cls;
  double pos = 0;
  for (std::size_t i = 0; i < cells; ++i) {
    if (!targets.p_star[i]) continue;
    pos += std::abs(preds.c[i] - targets.c_star[i]);
    pos += iou_loss(preds.t[i], targets.t_star[i]);
  }
  return cls + pos / double(targets.num_pos);
}

void loss_pg_backward(const PgTargets& targets, const RpnCache& cache,
                      RpnParams& p, Mat& d_cells) {
  const auto& preds = cache.preds;
  const std::size_t cells = preds.p.size();
  Mat d_p(cells, 1), d_c(cells, 1), d_t(cells, 4);
  const double inv_cells = 1.0 / double(cells);
  const double inv_pos = targets.num_pos ? 1.0 / double(targets.num_pos) : 0.0;
  for (std::size_t i = 0; i < cells; ++i) {
    // BCE through sigmoid: d/dlogit = p - p*
    d_p(i, 0) = inv_cells * (preds.p[i] - double(targets.p_star[i]));
    if (targets.p_star[i]) {
      const double dc = preds.c[i] > targets.c_star[i] ? 1.0 : -1.0;
      d_c(i, 0) = inv_pos * dc * preds.c[i] * (1.0 - preds.c[i]);
      const LtrbTargets g = iou_loss_grad(preds.t[i], targets.t_star[i]);
      // t = exp(logit) chain
      d_t(i, 0) = inv_pos * g.l * preds.t[i].l;
      d_t(i, 1) = inv_pos * g.t * preds.t[i].t;
      d_t(i, 2) = inv_pos * g.r * preds.t[i].r;
      d_t(i, 3) = inv_pos * g.b * preds.t[i].b;
    }
  }
  Mat d_h(cache.h.rows, cache.h.cols);
  auto add = [&](const Mat& m) {
    for (std::size_t i = 0; i < d_h.data.size(); ++i) d_h.data[i] += m.data[i];
  };
  add(affine_backward(*p.Wp, *p.bp, cache.h, d_p));
  add(affine_backward(*p.Wcn, *p.bcn, cache.h, d_c));
  add(affine_backward(*p.Wt, *p.bt, cache.h, d_t));
  Mat d_z = relu_backward(cache.z, d_h);
  Mat d_neigh = affine_backward(*p.Wc, *p.bc, cache.neigh, d_z);
  // scatter neighborhoods back onto cells
  const std::size_t ch = d_cells.cols;
  const std::size_t gw = preds.gw, gh = preds.gh;
  for (std::size_t gy = 0; gy < gh; ++gy)
    for (std::size_t gx = 0; gx < gw; ++gx) {
      const std::size_t row = gy * gw + gx;
      std::size_t k = 0;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          const long ny = long(gy) + dy, nx = long(gx) + dx;
          if (ny < 0 || nx < 0 || ny >= long(gh) || nx >= long(gw)) {
            k += ch;
          } else {
            const std::size_t dst = std::size_t(ny) * gw + std::size_t(nx);
            for (std::size_t c = 0; c < ch; ++c)
              d_cells(dst, c) += d_neigh(row, k++);
          }
        }
    }
}

std::vector<Proposal> decode_proposals(const LocationPredictions& preds,
                                       std::size_t top_n, double img_w,
                                       double img_h) {
  const std::size_t cells = preds.p.size();
  std::vector<std::size_t> order(cells);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<double> score(cells);
  for (std::size_t i = 0; i < cells; ++i)
    score[i] = std::sqrt(preds.c[i] * preds.p[i]);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (score[a] != score[b]) return score[a] > score[b];
    return a < b;
  });
  std::vector<Proposal> out;
  const std::size_t n = std::min(top_n, cells);
  out.reserve(n);
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t i = order[k];
    const std::size_t gy = i / preds.gw, gx = i % preds.gw;
    const double cx = (double(gx) + 0.5) * double(preds.stride);
    const double cy = (double(gy) + 0.5) * double(preds.stride);
    Proposal pr;
    pr.box = clip_box(ltrb_decode(cx, cy, preds.t[i]), img_w, img_h);
    pr.score = score[i];
    pr.source = ProposalSource::kLearned;
    out.push_back(pr);
  }
  return out;
}

namespace {
Box jitter_box(const Box& b, double sigma, Rng& rng) {
  if (sigma <= 0) return b;
  const double w = b.width(), h = b.height();
  Box j{b.x0 + rng.uniform(-sigma, sigma) * w,
        b.y0 + rng.uniform(-sigma, sigma) * h,
        b.x1 + rng.uniform(-sigma, sigma) * w,
        b.y1 + rng.uniform(-sigma, sigma) * h};
  if (j.x1 < j.x0) std::swap(j.x0, j.x1);
  if (j.y1 < j.y0) std::swap(j.y0, j.y1);
  return j;
}
}  // namespace

std::vector<Proposal> oracle_grid_proposals(const std::vector<ObjectInstance>& gt,
                                            double img_w, double img_h,
                                            std::size_t grid, double jitter_sigma,
                                            std::uint64_t seed) {
  Rng rng(hash_combine(seed, std::string("gridprop")));
  std::vector<Proposal> out;
  for (std::size_t iy = 0; iy < grid; ++iy)
    for (std::size_t ix = 0; ix < grid; ++ix) {
      const double x = (double(ix) + 0.5) * img_w / double(grid);
      const double y = (double(iy) + 0.5) * img_h / double(grid);
      // the segmenter returns the object whose extent covers the prompt point
      long hit = -1;
      for (std::size_t o = 0; o < gt.size(); ++o)
        if (gt[o].box.contains(x, y)) {
          if (hit < 0 || gt[o].box.area() < gt[std::size_t(hit)].box.area())
            hit = long(o);
        }
      if (hit < 0) continue;
      Proposal pr;
      pr.box = clip_box(jitter_box(gt[std::size_t(hit)].box, jitter_sigma, rng),
                        img_w, img_h);
      pr.score = 1.0;
      pr.source = ProposalSource::kSegmenter;
      bool dup = false;
      for (const auto& existing : out)
        if (iou(existing.box, pr.box) > 0.95) dup = true;
      if (!dup) out.push_back(pr);
    }
  return out;
}

Box oracle_box_refine(const std::vector<ObjectInstance>& gt, const Box& query,
                      double iou_floor, double jitter_sigma, std::uint64_t seed) {
  double best_iou = 0;
  long best = -1;
  for (std::size_t o = 0; o < gt.size(); ++o) {
    const double v = iou(query, gt[o].box);
    if (v > best_iou) {
      best_iou = v;
      best = long(o);
    }
  }
  if (best < 0 || best_iou < iou_floor) return query;
  Rng rng(hash_combine(seed, std::string("boxrefine")));
  return jitter_box(gt[std::size_t(best)].box, jitter_sigma, rng);
}

std::vector<Proposal> merge_proposals(const std::vector<Proposal>& learned,
                                      const std::vector<Proposal>& segmenter,
                                      std::size_t cap) {
  std::vector<Proposal> out = segmenter;
  std::vector<std::size_t> order(learned.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (learned[a].score != learned[b].score)
      return learned[a].score > learned[b].score;
    return a < b;
  });
  for (std::size_t i : order) {
    if (out.size() >= cap) break;
    bool dup = false;
    for (const auto& s : segmenter)
      if (iou(s.box, learned[i].box) > 0.95) dup = true;
    if (!dup) out.push_back(learned[i]);
  }
  if (out.size() > cap) out.resize(cap);
  return out;
}

}  // namespace wsovod
