#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "wsovod/features.hpp"
#include "wsovod/geometry.hpp"
#include "wsovod/param.hpp"
#include "wsovod/synthdata.hpp"

namespace wsovod {

enum class ProposalSource { kLearned, kSegmenter };

struct Proposal {
  Box box;
  double score = 1.0;  // in [0,1]
  ProposalSource source = ProposalSource::kLearned;
};

// Per-cell head outputs; t is in pixels (exp of the raw logits).
struct LocationPredictions {
  std::size_t gh = 0, gw = 0, stride = 4;
  std::vector<double> p;               // foreground probability, sigmoid
  std::vector<double> c;               // centerness, sigmoid
  std::vector<LtrbTargets> t;          // side distances, exp-parameterized
};

struct RpnParams {
  ParamTensor* Wc = nullptr;  // 3x3 conv as (9*d_feat) x width
  ParamTensor* bc = nullptr;
  ParamTensor* Wp = nullptr;  // width x 1
  ParamTensor* bp = nullptr;
  ParamTensor* Wcn = nullptr;  // width x 1
  ParamTensor* bcn = nullptr;
  ParamTensor* Wt = nullptr;  // width x 4
  ParamTensor* bt = nullptr;

  static RpnParams create(ParamStore& store, std::size_t d_feat,
                          std::size_t width, Rng& init);
};

struct RpnCache {
  Mat neigh;  // cells x (9*d_feat), zero-padded 3x3 neighborhoods
  Mat z, h;   // conv pre/post relu
  Mat p_logit, c_logit, t_logit;
  LocationPredictions preds;
};

LocationPredictions rpn_forward(const FeatureMap& fmap, const RpnParams& p,
                                RpnCache* cache = nullptr);

// Per-cell supervision for Eq.-style PG training.
struct PgTargets {
  std::vector<int> p_star;             // 0/1 per cell
  std::vector<double> c_star;          // defined for positives only
  std::vector<LtrbTargets> t_star;     // defined for positives only
  std::size_t num_pos = 0;
};

struct PgtBox {
  Box box;
  std::size_t category = 0;
};

// Cell positive iff its center is inside >=1 PGT box; min-area box wins,
// ties by lowest box index.
PgTargets assign_pg_targets(const std::vector<PgtBox>& pgt,
                            const LocationPredictions& geom);

// mean BCE(p,p*) over all cells + mean over positives of |c-c*| + iou_loss(t,t*)
double loss_pg(const LocationPredictions& preds, const PgTargets& targets);

// Backward for loss_pg through the head into the feature map gradient.
void loss_pg_backward(const PgTargets& targets, const RpnCache& cache,
                      RpnParams& p, Mat& d_cells);

// box = ltrb_decode(cell center, t) clipped to the image; score = sqrt(c*p);
// top_n by score, ties by cell index.
std::vector<Proposal> decode_proposals(const LocationPredictions& preds,
                                       std::size_t top_n, double img_w,
                                       double img_h);

// Deterministic ground-truth-backed segmenter stand-ins.
std::vector<Proposal> oracle_grid_proposals(const std::vector<ObjectInstance>& gt,
                                            double img_w, double img_h,
                                            std::size_t grid, double jitter_sigma,
                                            std::uint64_t seed);
Box oracle_box_refine(const std::vector<ObjectInstance>& gt, const Box& query,
                      double iou_floor, double jitter_sigma, std::uint64_t seed);

// Segmenter proposals first, learned by descending score after; near-duplicate
// boxes (IoU > 0.95) keep the segmenter copy. Truncated to cap.
std::vector<Proposal> merge_proposals(const std::vector<Proposal>& learned,
                                      const std::vector<Proposal>& segmenter,
                                      std::size_t cap);

}  // namespace wsovod
