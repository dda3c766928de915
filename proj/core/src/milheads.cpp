#include "wsovod/milheads.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <stdexcept>

#include "wsovod/rng.hpp"

namespace wsovod {

TextEmbeddingTable build_embeddings(const Vocabulary& vocab, std::uint64_t seed,
                                    std::size_t dim) {
  std::set<std::string> names;
  for (const auto& c : vocab)
    if (!names.insert(c.name).second)
      throw std::runtime_error("duplicate category name: " + c.name);
  TextEmbeddingTable table;
  table.embed = Mat(vocab.size(), dim);
  auto normalize_row = [&](std::size_t r) {
    double n = 0;
    for (std::size_t j = 0; j < dim; ++j) n += table.embed(r, j) * table.embed(r, j);
    n = std::sqrt(n);
    if (n > 0)
      for (std::size_t j = 0; j < dim; ++j) table.embed(r, j) /= n;
  };
  for (std::size_t i = 0; i < vocab.size(); ++i) {
    if (vocab[i].is_novel) continue;
    Rng rng(hash_combine(seed, vocab[i].name));
    for (std::size_t j = 0; j < dim; ++j) table.embed(i, j) = rng.normal();
    normalize_row(i);
  }
  for (std::size_t i = 0; i < vocab.size(); ++i) {
    if (!vocab[i].is_novel) continue;
    for (const auto& [b, w] : vocab[i].mixture)
      for (std::size_t j = 0; j < dim; ++j)
        table.embed(i, j) += w * table.embed(b, j);
    normalize_row(i);
  }
  return table;
}

MiningParams MiningParams::create(ParamStore& store, std::size_t d, std::size_t c,
                                  Rng& init) {
  MiningParams p;
  p.Wd = &store.add("mining.Wd", {d, c});
  p.bd = &store.add("mining.bd", {c});
  const double scale = std::sqrt(1.0 / double(d));
  for (double& v : p.Wd->values) v = scale * init.normal();
  return p;
}

namespace {
std::vector<double> row_norms(const Mat& x) {
  std::vector<double> norms(x.rows, 0.0);
  for (std::size_t r = 0; r < x.rows; ++r) {
    double n = 0;
    for (std::size_t j = 0; j < x.cols; ++j) n += x(r, j) * x(r, j);
    norms[r] = std::sqrt(n);
  }
  return norms;
}

// cosine logits against unit-norm table rows, scaled by 1/tau;
// zero-norm feature rows give cosine 0.
Mat cosine_logits(const Mat& x, const std::vector<double>& norms,
                  const TextEmbeddingTable& table, double tau) {
  Mat out(x.rows, table.num_categories());
  for (std::size_t r = 0; r < x.rows; ++r) {
    if (norms[r] <= 0) continue;
    for (std::size_t c = 0; c < table.num_categories(); ++c) {
      double dot = 0;
      for (std::size_t j = 0; j < x.cols; ++j) dot += x(r, j) * table.embed(c, j);
      out(r, c) = dot / (norms[r] * tau);
    }
  }
  return out;
}

// Accumulates d(cos_logit)/dx into dx given the upstream gradient on the
// cosine logits (already R x C).
void cosine_backward(const Mat& d_logits, const Mat& x,
                     const std::vector<double>& norms,
                     const TextEmbeddingTable& table, double tau, Mat& dx) {
  for (std::size_t r = 0; r < x.rows; ++r) {
    if (norms[r] <= 0) continue;
    const double inv = 1.0 / (norms[r] * tau);
    for (std::size_t c = 0; c < table.num_categories(); ++c) {
      const double g = d_logits(r, c);
      if (g == 0.0) continue;
      double dot = 0;
      for (std::size_t j = 0; j < x.cols; ++j) dot += x(r, j) * table.embed(c, j);
      const double coef = dot / (norms[r] * norms[r]);
      for (std::size_t j = 0; j < x.cols; ++j)
        dx(r, j) += g * inv * (table.embed(c, j) - coef * x(r, j));
    }
  }
}
}  // namespace

ScoreMatrices mining_scores(const Mat& x_fuse, const TextEmbeddingTable& table,
                            const MiningParams& p, double tau,
                            MiningCache* cache) {
  if (x_fuse.rows == 0) throw std::runtime_error("mining_scores: no proposals");
  if (p.Wd->shape[1] != table.num_categories())
    throw std::runtime_error(
        "mining_scores: classifier table has " +
        std::to_string(table.num_categories()) +
        " categories but the detection stream was trained with " +
        std::to_string(p.Wd->shape[1]));
  ScoreMatrices s;
  const std::vector<double> norms = row_norms(x_fuse);
  s.s_cls = cosine_logits(x_fuse, norms, table, tau);
  s.s_det = affine(*p.Wd, *p.bd, x_fuse);
  s.sm_cls = softmax_rows(s.s_cls);
  s.sm_det = softmax_cols(s.s_det);
  s.s = Mat(x_fuse.rows, table.num_categories());
  s.phi.assign(table.num_categories(), 0.0);
  for (std::size_t r = 0; r < s.s.rows; ++r)
    for (std::size_t c = 0; c < s.s.cols; ++c) {
      s.s(r, c) = s.sm_cls(r, c) * s.sm_det(r, c);
      s.phi[c] += s.s(r, c);
    }
  // phi feeds a clamped BCE; keep the reported score inside the open interval
  // the loss actually sees (rounding can push the sum to 1 when C is small).
  for (double& phi : s.phi) phi = std::clamp(phi, kBceEps, 1.0 - kBceEps);
  if (cache) {
    cache->x = x_fuse;
    cache->x_norm = norms;
    cache->scores = s;
  }
  return s;
}

double loss_om(const ScoreMatrices& s, const std::vector<std::size_t>& labels) {
  std::vector<char> y(s.phi.size(), 0);
  for (std::size_t c : labels) y[c] = 1;
  double loss = 0;
  for (std::size_t c = 0; c < s.phi.size(); ++c) loss += bce(s.phi[c], double(y[c]));
  return loss;
}

Mat loss_om_backward(const MiningCache& cache, const TextEmbeddingTable& table,
                     MiningParams& p, double tau,
                     const std::vector<std::size_t>& labels) {
  const ScoreMatrices& s = cache.scores;
  std::vector<char> y(s.phi.size(), 0);
  for (std::size_t c : labels) y[c] = 1;
  std::vector<double> d_phi(s.phi.size());
  for (std::size_t c = 0; c < s.phi.size(); ++c)
    d_phi[c] = bce_grad(s.phi[c], double(y[c]));
  Mat d_cls(s.s.rows, s.s.cols), d_det(s.s.rows, s.s.cols);
  for (std::size_t r = 0; r < s.s.rows; ++r)
    for (std::size_t c = 0; c < s.s.cols; ++c) {
      d_cls(r, c) = d_phi[c] * s.sm_det(r, c);
      d_det(r, c) = d_phi[c] * s.sm_cls(r, c);
    }
  Mat d_scls = softmax_rows_backward(s.sm_cls, d_cls);
  Mat d_sdet = softmax_cols_backward(s.sm_det, d_det);
  Mat dx(cache.x.rows, cache.x.cols);
  cosine_backward(d_scls, cache.x, cache.x_norm, table, tau, dx);
  Mat dx_det = affine_backward(*p.Wd, *p.bd, cache.x, d_sdet);
  for (std::size_t i = 0; i < dx.data.size(); ++i) dx.data[i] += dx_det.data[i];
  return dx;
}

RefinementSupervision pgt_assign(const Mat& prev_scores,
                                 const std::vector<Proposal>& proposals,
                                 const std::vector<std::size_t>& labels,
                                 const std::vector<ObjectInstance>* oracle_gt,
                                 double iou_fg, std::uint64_t seed) {
  const std::size_t r_count = proposals.size();
  const std::size_t bg = prev_scores.cols;
  RefinementSupervision sup;
  sup.label.assign(r_count, bg);
  sup.weight.assign(r_count, 0.0);
  sup.reg_target.assign(r_count, std::nullopt);

  struct Seed {
    Box box;
    std::size_t category;
    double weight;
  };
  std::vector<Seed> seeds;
  for (std::size_t c : labels) {
    std::size_t best_r = 0;
    double best = -1e300;
    for (std::size_t r = 0; r < r_count; ++r)
      if (prev_scores(r, c) > best) {
        best = prev_scores(r, c);
        best_r = r;
      }
    Seed s{proposals[best_r].box, c, best};
    if (oracle_gt)
      s.box = oracle_box_refine(*oracle_gt, s.box, 0.3, 0.02,
                                hash_combine(seed, c));
    seeds.push_back(s);
  }
  double max_seed_weight = seeds.empty() ? 1.0 : 0.0;
  for (const auto& s : seeds) max_seed_weight = std::max(max_seed_weight, s.weight);

  for (std::size_t r = 0; r < r_count; ++r) {
    double best_iou = 0;
    long best_seed = -1;
    for (std::size_t si = 0; si < seeds.size(); ++si) {
      const double v = iou(proposals[r].box, seeds[si].box);
      if (v > best_iou) {
        best_iou = v;
        best_seed = long(si);
      }
    }
    if (best_seed >= 0 && best_iou >= iou_fg) {
      const Seed& s = seeds[std::size_t(best_seed)];
      sup.label[r] = s.category;
      sup.weight[r] = s.weight;
      sup.reg_target[r] = s.box;
    } else {
      sup.weight[r] = max_seed_weight;
    }
  }
  return sup;
}

Mat refine_scores(const Mat& x_fuse, const std::vector<double>& x_norm,
                  const TextEmbeddingTable& table, double tau,
                  RefineCache* cache) {
  const std::size_t c = table.num_categories();
  Mat cat_logits = cosine_logits(x_fuse, x_norm, table, tau);
  Mat logits(x_fuse.rows, c + 1);
  for (std::size_t r = 0; r < x_fuse.rows; ++r)
    for (std::size_t j = 0; j < c; ++j) logits(r, j) = cat_logits(r, j);
  // background column: zero-vector classifier, cosine defined as 0
  Mat probs = softmax_rows(logits);
  if (cache) {
    cache->logits = std::move(logits);
    cache->probs = probs;
  }
  return probs;
}

std::array<double, 4> encode_deltas(const Box& prop, const Box& target) {
  const double pw = std::max(prop.width(), 1e-6);
  const double ph = std::max(prop.height(), 1e-6);
  const double tw = std::max(target.width(), 1e-6);
  const double th = std::max(target.height(), 1e-6);
  return {(target.cx() - prop.cx()) / pw, (target.cy() - prop.cy()) / ph,
          std::log(tw / pw), std::log(th / ph)};
}

Box apply_deltas(const Box& prop, const std::array<double, 4>& d) {
  const double pw = std::max(prop.width(), 1e-6);
  const double ph = std::max(prop.height(), 1e-6);
  const double cx = prop.cx() + d[0] * pw;
  const double cy = prop.cy() + d[1] * ph;
  const double w = pw * std::exp(std::clamp(d[2], -6.0, 6.0));
  const double h = ph * std::exp(std::clamp(d[3], -6.0, 6.0));
  return {cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2};
}

std::vector<BranchParams> create_refine_branches(ParamStore& store, std::size_t d,
                                                 std::size_t k, Rng& init) {
  std::vector<BranchParams> out;
  for (std::size_t i = 0; i < k; ++i) {
    BranchParams bp;
    bp.Wr = &store.add("refine" + std::to_string(i) + ".Wreg", {d, 4});
    bp.br = &store.add("refine" + std::to_string(i) + ".breg", {4});
    const double scale = 0.01 * std::sqrt(1.0 / double(d));
    for (double& v : bp.Wr->values) v = scale * init.normal();
    out.push_back(bp);
  }
  return out;
}

IrLossParts loss_ir_branch(const BranchEval& eval,
                           const std::vector<Proposal>& proposals,
                           const RefinementSupervision& sup) {
  const std::size_t r_count = proposals.size();
  IrLossParts parts;
  std::size_t n_fg = 0;
  for (std::size_t r = 0; r < r_count; ++r) {
    const double p = std::max(eval.cls.probs(r, sup.label[r]), kBceEps);
    parts.cls += sup.weight[r] * -std::log(p);
    if (sup.reg_target[r]) ++n_fg;
  }
  parts.cls /= double(r_count);
  if (n_fg > 0) {
    double reg = 0;
    for (std::size_t r = 0; r < r_count; ++r) {
      if (!sup.reg_target[r]) continue;
      const auto target = encode_deltas(proposals[r].box, *sup.reg_target[r]);
      const double* d = eval.deltas.data.data() + r * 4;
      reg += smooth_l1(std::span<const double>(d, 4),
                       std::span<const double>(target.data(), 4));
    }
    parts.reg = reg / double(n_fg);
  }
  return parts;
}

void loss_ir_branch_backward(const BranchEval& eval, const Mat& x_fuse,
                             const std::vector<double>& x_norm,
                             const std::vector<Proposal>& proposals,
                             const RefinementSupervision& sup,
                             const TextEmbeddingTable& table, double tau,
                             BranchParams& bp, Mat& dx) {
  const std::size_t r_count = proposals.size();
  const std::size_t c = table.num_categories();
  const double inv_r = 1.0 / double(r_count);
  // CE through softmax: dlogits = w/R * (probs - onehot); clamped rows give 0
  Mat d_logits(r_count, c + 1);
  for (std::size_t r = 0; r < r_count; ++r) {
    if (sup.weight[r] == 0.0) continue;
    if (eval.cls.probs(r, sup.label[r]) < kBceEps) continue;
    const double w = sup.weight[r] * inv_r;
    for (std::size_t j = 0; j <= c; ++j)
      d_logits(r, j) = w * (eval.cls.probs(r, j) - (j == sup.label[r] ? 1.0 : 0.0));
  }
  // background column logit is constant; only category columns reach x
  Mat d_cat(r_count, c);
  for (std::size_t r = 0; r < r_count; ++r)
    for (std::size_t j = 0; j < c; ++j) d_cat(r, j) = d_logits(r, j);
  cosine_backward(d_cat, x_fuse, x_norm, table, tau, dx);

  std::size_t n_fg = 0;
  for (std::size_t r = 0; r < r_count; ++r)
    if (sup.reg_target[r]) ++n_fg;
  if (n_fg > 0) {
    Mat d_deltas(r_count, 4);
    const double scale = 1.0 / double(n_fg);
    for (std::size_t r = 0; r < r_count; ++r) {
      if (!sup.reg_target[r]) continue;
      const auto target = encode_deltas(proposals[r].box, *sup.reg_target[r]);
      const double* d = eval.deltas.data.data() + r * 4;
      smooth_l1_backward(std::span<const double>(d, 4),
                         std::span<const double>(target.data(), 4),
                         std::span<double>(&d_deltas(r, 0), 4), scale);
    }
    Mat dx_reg = affine_backward(*bp.Wr, *bp.br, x_fuse, d_deltas);
    for (std::size_t i = 0; i < dx.data.size(); ++i) dx.data[i] += dx_reg.data[i];
  }
}

std::vector<Detection> mil_inference(const Mat& x_fuse,
                                     const std::vector<double>& x_norm,
                                     const std::vector<Proposal>& proposals,
                                     const TextEmbeddingTable& table,
                                     const std::vector<BranchParams>& branches,
                                     double tau, double img_w, double img_h,
                                     double nms_thr, double score_floor) {
  std::vector<Detection> out;
  if (proposals.empty()) return out;
  const std::size_t c_count = table.num_categories();
  // classifier is shared across branches; the branch mean equals one pass
  Mat probs = refine_scores(x_fuse, x_norm, table, tau);
  Mat deltas = branches.empty()
                   ? Mat(proposals.size(), 4)
                   : affine(*branches.back().Wr, *branches.back().br, x_fuse);
  std::vector<Box> boxes(proposals.size());
  for (std::size_t r = 0; r < proposals.size(); ++r) {
    const std::array<double, 4> d = {deltas(r, 0), deltas(r, 1), deltas(r, 2),
                                     deltas(r, 3)};
    boxes[r] = clip_box(apply_deltas(proposals[r].box, d), img_w, img_h);
  }
  for (std::size_t c = 0; c < c_count; ++c) {
    std::vector<Box> cand;
    std::vector<double> scores;
    std::vector<std::size_t> src;
    for (std::size_t r = 0; r < proposals.size(); ++r) {
      if (probs(r, c) < score_floor) continue;
      cand.push_back(boxes[r]);
      scores.push_back(probs(r, c));
      src.push_back(r);
    }
    for (std::size_t keep : nms(cand, scores, nms_thr)) {
      Detection det;
      det.box = cand[keep];
      det.category = c;
      det.confidence = scores[keep];
      out.push_back(det);
    }
  }
  return out;
}

}  // namespace wsovod
