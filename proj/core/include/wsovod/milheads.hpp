#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "wsovod/diffcore.hpp"
#include "wsovod/matrix.hpp"
#include "wsovod/proposals.hpp"
#include "wsovod/synthdata.hpp"

namespace wsovod {

// Fixed text-embedding classifier. Rows of `embed` are unit-norm category
// embeddings; the refinement background column is an implicit zero vector.
struct TextEmbeddingTable {
  Mat embed;  // C x D
  std::size_t num_categories() const { return embed.rows; }
  std::size_t dim() const { return embed.cols; }
};

// Base categories get deterministic pseudo-random unit vectors keyed by
// hash(seed, name); novel categories get the normalized mixture of their base
// embeddings (the same mixture that defines their appearance).
TextEmbeddingTable build_embeddings(const Vocabulary& vocab, std::uint64_t seed,
                                    std::size_t dim);

struct ScoreMatrices {
  Mat s_cls;   // cosine/tau logits, R x C
  Mat s_det;   // detection-stream logits, R x C
  Mat sm_cls;  // softmax over categories
  Mat sm_det;  // softmax over proposals
  Mat s;       // elementwise product
  std::vector<double> phi;  // per-category image scores, each in (0,1)
};

struct MiningCache {
  Mat x;                       // R x D fused features
  std::vector<double> x_norm;  // row norms
  ScoreMatrices scores;
};

struct MiningParams {
  ParamTensor* Wd = nullptr;  // D x C detection stream
  ParamTensor* bd = nullptr;

  static MiningParams create(ParamStore& store, std::size_t d, std::size_t c,
                             Rng& init);
};

ScoreMatrices mining_scores(const Mat& x_fuse, const TextEmbeddingTable& table,
                            const MiningParams& p, double tau,
                            MiningCache* cache = nullptr);

// sum over categories of bce(phi_c, y_c); y given as the present-category set.
double loss_om(const ScoreMatrices& s, const std::vector<std::size_t>& labels);

// Backward of loss_om through mining_scores; accumulates Wd/bd grads and
// returns dL/dx_fuse.
Mat loss_om_backward(const MiningCache& cache, const TextEmbeddingTable& table,
                     MiningParams& p, double tau,
                     const std::vector<std::size_t>& labels);

// ---- instance refinement ----

struct RefinementSupervision {
  // label in [0, C]; C is background
  std::vector<std::size_t> label;
  std::vector<double> weight;
  std::vector<std::optional<Box>> reg_target;  // present for foreground only
};

// Seeds are the per-present-category argmax of prev_scores. refine_with_oracle
// routes seed boxes through the segmenter box prompt (first branch only).
RefinementSupervision pgt_assign(const Mat& prev_scores,
                                 const std::vector<Proposal>& proposals,
                                 const std::vector<std::size_t>& labels,
                                 const std::vector<ObjectInstance>* oracle_gt,
                                 double iou_fg, std::uint64_t seed);

struct RefineCache {
  Mat logits;  // R x (C+1), bg column fixed at 0
  Mat probs;
};

// Softmaxed cosine scores against [T, 0].
Mat refine_scores(const Mat& x_fuse, const std::vector<double>& x_norm,
                  const TextEmbeddingTable& table, double tau,
                  RefineCache* cache = nullptr);

// center/size deltas of `target` relative to `prop`
std::array<double, 4> encode_deltas(const Box& prop, const Box& target);
Box apply_deltas(const Box& prop, const std::array<double, 4>& d);

struct BranchParams {
  ParamTensor* Wr = nullptr;  // D x 4 regression head
  ParamTensor* br = nullptr;
};
std::vector<BranchParams> create_refine_branches(ParamStore& store, std::size_t d,
                                                 std::size_t k, Rng& init);

struct BranchEval {
  RefineCache cls;
  Mat deltas;  // R x 4
};

struct IrLossParts {
  double cls = 0, reg = 0;
  double total() const { return cls + reg; }
};

// One branch: (1/R) sum_r w_r * -log S[r,label_r]
//           + (1/max(1,N_fg)) sum_fg smooth_l1(delta, delta*)
IrLossParts loss_ir_branch(const BranchEval& eval,
                           const std::vector<Proposal>& proposals,
                           const RefinementSupervision& sup);

// Backward for one branch; accumulates regression-head grads and adds to dx.
void loss_ir_branch_backward(const BranchEval& eval, const Mat& x_fuse,
                             const std::vector<double>& x_norm,
                             const std::vector<Proposal>& proposals,
                             const RefinementSupervision& sup,
                             const TextEmbeddingTable& table, double tau,
                             BranchParams& bp, Mat& dx);

struct Detection {
  std::size_t image_id = 0;
  Box box;
  std::size_t category = 0;
  double confidence = 0.0;
};

// Mean of branch scores (background dropped), boxes from the last branch's
// regressed outputs, per-category NMS at 0.3, score floor 0.01.
std::vector<Detection> mil_inference(const Mat& x_fuse,
                                     const std::vector<double>& x_norm,
                                     const std::vector<Proposal>& proposals,
                                     const TextEmbeddingTable& table,
                                     const std::vector<BranchParams>& branches,
                                     double tau, double img_w, double img_h,
                                     double nms_thr = 0.3,
                                     double score_floor = 0.01);

}  // namespace wsovod
