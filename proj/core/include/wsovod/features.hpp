#pragma once

#include <cstdint>
#include <vector>

#include "wsovod/diffcore.hpp"
#include "wsovod/geometry.hpp"
#include "wsovod/matrix.hpp"
#include "wsovod/param.hpp"
#include "wsovod/rng.hpp"
#include "wsovod/synthdata.hpp"

namespace wsovod {

// Feature grid. Cells stored row-major as a (gh*gw) x channels matrix so the
// downstream ops are plain matrix code.
struct FeatureMap {
  std::size_t gh = 0, gw = 0;
  std::size_t stride = 4;
  Mat cells;  // (gh*gw) x channels

  std::size_t channels() const { return cells.cols; }
  std::size_t cell_index(std::size_t gy, std::size_t gx) const {
    return gy * gw + gx;
  }
  // center of a cell in pixel coordinates
  double cell_cx(std::size_t gx) const { return (double(gx) + 0.5) * double(stride); }
  double cell_cy(std::size_t gy) const { return (double(gy) + 0.5) * double(stride); }
};

// ---- patch-embedding extractor (backbone stand-in) ----

struct ExtractorParams {
  ParamTensor* W = nullptr;  // (stride*stride*3) x d_feat
  ParamTensor* b = nullptr;  // d_feat
  std::size_t stride = 4;

  static ExtractorParams create(ParamStore& store, std::size_t stride,
                                std::size_t d_feat, Rng& init);
};

struct ExtractCache {
  Mat patches;  // cells x (stride*stride*3)
  Mat pre;      // pre-activation values
};

FeatureMap extract(const Image& img, const ExtractorParams& p,
                   ExtractCache* cache = nullptr);
// d_cells: gradient w.r.t. fmap.cells
void extract_backward(const Mat& d_cells, const ExtractCache& cache,
                      ExtractorParams& p);

// ---- RoI average pooling ----

struct RoiPoolCache {
  // per proposal, per bin: contributing cell indices
  std::vector<std::vector<std::vector<std::size_t>>> bins;
};

// Output row r = concatenated G x G bin means over box r. Empty boxes give a
// zero row.
Mat roi_pool(const FeatureMap& fmap, const std::vector<Box>& boxes,
             std::size_t g, RoiPoolCache* cache = nullptr);
void roi_pool_backward(const Mat& dout, const RoiPoolCache& cache,
                       std::size_t channels, Mat& d_cells);

// ---- two-layer proposal MLP ----

struct ProposalMlpParams {
  ParamTensor* W1 = nullptr;
  ParamTensor* b1 = nullptr;
  ParamTensor* W2 = nullptr;
  ParamTensor* b2 = nullptr;
  double dropout_rate = 0.0;  // active only when a mask rng is supplied

  static ProposalMlpParams create(ParamStore& store, std::size_t in,
                                  std::size_t d, Rng& init);
};

struct ProposalMlpCache {
  Mat x, z1, h1, z2;
  Mat mask;  // dropout mask, empty when dropout inactive
};

Mat proposal_mlp(const Mat& pooled, const ProposalMlpParams& p,
                 ProposalMlpCache* cache = nullptr, Rng* dropout_rng = nullptr);
Mat proposal_mlp_backward(const Mat& dout, const ProposalMlpCache& cache,
                          ProposalMlpParams& p);

// ---- data-aware feature extractor ----

struct DafeParams {
  ParamTensor* prototypes = nullptr;  // M x D
  ParamTensor* A1 = nullptr;          // d_feat x hidden
  ParamTensor* b1 = nullptr;
  ParamTensor* A2 = nullptr;          // hidden x M
  ParamTensor* b2 = nullptr;

  static DafeParams create(ParamStore& store, std::size_t d_feat,
                           std::size_t hidden, std::size_t m, std::size_t d,
                           Rng& init);
};

struct DafeCache {
  Mat g;   // 1 x d_feat global average
  Mat z1, h1, z2, alpha;
  std::size_t cells = 0;
};

// X^daf = alpha^T P with alpha = tanh(A2(relu(A1 g))), g = spatial mean.
std::vector<double> dafe(const FeatureMap& fmap, const DafeParams& p,
                         DafeCache* cache = nullptr);
// Accumulates parameter grads and adds the feature-map contribution to d_cells.
void dafe_backward(const std::vector<double>& d_xdaf, const DafeCache& cache,
                   DafeParams& p, Mat& d_cells);

// X^fuse = X^prop + broadcast X^daf
Mat fuse(const Mat& x_prop, const std::vector<double>& x_daf);

}  // namespace wsovod
