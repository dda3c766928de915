#include "wsovod/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "wsovod/rng.hpp"

namespace wsovod {

ProposalSourceMode proposal_source_from_string(const std::string& s) {
  if (s == "learned") return ProposalSourceMode::kLearnedOnly;
  if (s == "segmenter") return ProposalSourceMode::kSegmenterOnly;
  if (s == "merged") return ProposalSourceMode::kMerged;
  throw std::runtime_error("unknown proposal source: " + s);
}

std::string to_string(ProposalSourceMode m) {
  switch (m) {
    case ProposalSourceMode::kLearnedOnly: return "learned";
    case ProposalSourceMode::kSegmenterOnly: return "segmenter";
    default: return "merged";
  }
}

WsovodModel::WsovodModel(const ModelConfig& cfg, const Vocabulary& vocab)
    : cfg_(cfg), vocab_(vocab) {
  table_ = build_embeddings(vocab_, cfg_.embed_seed, cfg_.d);
  // per-component init streams so toggling one module leaves the rest bitwise
  // identical
  Rng r_ext(hash_combine(cfg_.init_seed, std::string("extractor")));
  Rng r_mlp(hash_combine(cfg_.init_seed, std::string("mlp")));
  Rng r_dafe(hash_combine(cfg_.init_seed, std::string("dafe")));
  Rng r_rpn(hash_combine(cfg_.init_seed, std::string("rpn")));
  Rng r_mine(hash_combine(cfg_.init_seed, std::string("mining")));
  Rng r_ref(hash_combine(cfg_.init_seed, std::string("refine")));
  extractor_ = ExtractorParams::create(store_, cfg_.stride, cfg_.d_feat, r_ext);
  const std::size_t pooled_w = cfg_.roi_bins * cfg_.roi_bins * cfg_.d_feat;
  mlp_ = ProposalMlpParams::create(store_, pooled_w, cfg_.d, r_mlp);
  mlp_.dropout_rate = cfg_.dropout;
  if (cfg_.dafe_on)
    dafe_ = DafeParams::create(store_, cfg_.d_feat, cfg_.dafe_hidden,
                               cfg_.dafe_protos, cfg_.d, r_dafe);
  rpn_ = RpnParams::create(store_, cfg_.d_feat, cfg_.rpn_width, r_rpn);
  mining_ = MiningParams::create(store_, cfg_.d, vocab_.size(), r_mine);
  branches_ = create_refine_branches(store_, cfg_.d, cfg_.refine_branches, r_ref);
}

void WsovodModel::set_vocabulary(const Vocabulary& vocab) {
  // inference only needs the embedding table; the width-bound detection
  // stream rejects a mismatched vocabulary on the next training pass
  vocab_ = vocab;
  table_ = build_embeddings(vocab_, cfg_.embed_seed, cfg_.d);
}

namespace {
std::vector<Box> proposal_boxes(const std::vector<Proposal>& props) {
  std::vector<Box> boxes;
  boxes.reserve(props.size());
  for (const auto& p : props) boxes.push_back(p.box);
  return boxes;
}

std::vector<double> row_norms_of(const Mat& x) {
  std::vector<double> norms(x.rows, 0.0);
  for (std::size_t r = 0; r < x.rows; ++r) {
    double n = 0;
    for (std::size_t j = 0; j < x.cols; ++j) n += x(r, j) * x(r, j);
    norms[r] = std::sqrt(n);
  }
  return norms;
}
}  // namespace

std::vector<Proposal> WsovodModel::proposals_for_image(
    const ImageRecord& rec, ProposalSourceMode source,
    std::uint64_t image_seed) const {
  const double w = double(rec.image.w), h = double(rec.image.h);
  std::vector<Proposal> learned, segmenter;
  if (source != ProposalSourceMode::kSegmenterOnly) {
    FeatureMap fmap = extract(rec.image, extractor_);
    LocationPredictions preds = rpn_forward(fmap, rpn_);
    learned = decode_proposals(preds, cfg_.top_n_infer, w, h);
  }
  if (source != ProposalSourceMode::kLearnedOnly)
    segmenter = oracle_grid_proposals(rec.gt, w, h, cfg_.oracle_grid,
                                      cfg_.oracle_jitter, image_seed);
  return merge_proposals(learned, segmenter,
                         std::max(cfg_.max_proposals, cfg_.top_n_infer));
}

LossParts WsovodModel::train_image(const ImageRecord& rec, std::size_t epoch,
                                   std::uint64_t image_seed, bool do_backward) {
  const double img_w = double(rec.image.w), img_h = double(rec.image.h);
  LossParts losses;

  ExtractCache ec;
  FeatureMap fmap = extract(rec.image, extractor_, &ec);
  RpnCache rc;
  LocationPredictions preds = rpn_forward(fmap, rpn_, &rc);

  std::vector<Proposal> learned, segmenter;
  if (cfg_.train_source != ProposalSourceMode::kSegmenterOnly)
    learned = decode_proposals(preds, cfg_.top_n_learned, img_w, img_h);
  if (cfg_.train_source != ProposalSourceMode::kLearnedOnly)
    segmenter = oracle_grid_proposals(rec.gt, img_w, img_h, cfg_.oracle_grid,
                                      cfg_.oracle_jitter, image_seed);
  std::vector<Proposal> proposals =
      merge_proposals(learned, segmenter, cfg_.max_proposals);

  std::vector<PgtBox> pgt;
  Mat dx;  // dL/dX^fuse, filled by the MIL backward passes

  RoiPoolCache pc;
  ProposalMlpCache mc;
  DafeCache dc;
  MiningCache mgc;
  std::vector<RefinementSupervision> sups;
  std::vector<BranchEval> evals;
  RefineCache ref_cache;
  std::vector<double> xdaf(cfg_.d, 0.0);
  Mat x_fuse;
  std::vector<double> x_norm;

  if (!proposals.empty()) {
    Mat pooled = roi_pool(fmap, proposal_boxes(proposals), cfg_.roi_bins, &pc);
    Rng drop_rng(hash_combine(image_seed, std::string("dropout")));
    Mat x_prop = proposal_mlp(pooled, mlp_, &mc,
                              cfg_.dropout > 0 ? &drop_rng : nullptr);
    if (cfg_.dafe_on) xdaf = dafe(fmap, dafe_, &dc);
    x_fuse = fuse(x_prop, xdaf);

    ScoreMatrices scores = mining_scores(x_fuse, table_, mining_, cfg_.tau, &mgc);
    losses.om = loss_om(scores, rec.labels);
    x_norm = mgc.x_norm;

    // refinement chain: branch 0 supervised by mining scores (with the
    // segmenter box prompt), later branches by the previous branch
    Mat probs = refine_scores(x_fuse, x_norm, table_, cfg_.tau, &ref_cache);
    Mat prev = scores.s;
    for (std::size_t k = 0; k < branches_.size(); ++k) {
      RefinementSupervision sup = pgt_assign(
          prev, proposals, rec.labels, k == 0 ? &rec.gt : nullptr, cfg_.iou_fg,
          hash_combine(image_seed, k));
      BranchEval ev;
      ev.cls = ref_cache;
      ev.deltas = affine(*branches_[k].Wr, *branches_[k].br, x_fuse);
      const IrLossParts parts = loss_ir_branch(ev, proposals, sup);
      losses.ir += parts.total();
      sups.push_back(std::move(sup));
      evals.push_back(std::move(ev));
      Mat next(probs.rows, vocab_.size());
      for (std::size_t r = 0; r < probs.rows; ++r)
        for (std::size_t c = 0; c < vocab_.size(); ++c) next(r, c) = probs(r, c);
      prev = std::move(next);
    }

    // PGT for the proposal generator: final predictions, noise-gated during
    // warmup epochs
    const Mat& final_probs = ref_cache.probs;
    const Mat& final_deltas = evals.back().deltas;
    for (std::size_t c : rec.labels) {
      std::size_t best_r = 0;
      double best = -1e300;
      for (std::size_t r = 0; r < proposals.size(); ++r)
        if (final_probs(r, c) > best) {
          best = final_probs(r, c);
          best_r = r;
        }
      if (epoch < cfg_.warmup_epochs && best < cfg_.pgt_score_floor) continue;
      const std::array<double, 4> d = {
          final_deltas(best_r, 0), final_deltas(best_r, 1),
          final_deltas(best_r, 2), final_deltas(best_r, 3)};
      Box box = clip_box(apply_deltas(proposals[best_r].box, d), img_w, img_h);
      if (box.area() > 0) pgt.push_back({box, c});
    }
  }

  PgTargets targets = assign_pg_targets(pgt, preds);
  losses.pg = loss_pg(preds, targets);

  if (do_backward) {
    Mat d_cells(fmap.cells.rows, fmap.cells.cols);
    if (!proposals.empty()) {
      dx = loss_om_backward(mgc, table_, mining_, cfg_.tau, rec.labels);
      for (std::size_t k = 0; k < branches_.size(); ++k)
        loss_ir_branch_backward(evals[k], x_fuse, x_norm, proposals, sups[k],
                                table_, cfg_.tau, branches_[k], dx);
      if (cfg_.dafe_on) {
        std::vector<double> d_xdaf(cfg_.d, 0.0);
        for (std::size_t r = 0; r < dx.rows; ++r)
          for (std::size_t j = 0; j < dx.cols; ++j) d_xdaf[j] += dx(r, j);
        dafe_backward(d_xdaf, dc, dafe_, d_cells);
      }
      Mat d_pooled = proposal_mlp_backward(dx, mc, mlp_);
      roi_pool_backward(d_pooled, pc, cfg_.d_feat, d_cells);
    }
    loss_pg_backward(targets, rc, rpn_, d_cells);
    extract_backward(d_cells, ec, extractor_);
  }
  return losses;
}

std::vector<Detection> WsovodModel::infer_image(const ImageRecord& rec,
                                                std::size_t image_id) const {
  const double img_w = double(rec.image.w), img_h = double(rec.image.h);
  FeatureMap fmap = extract(rec.image, extractor_);
  std::vector<Proposal> proposals;
  if (cfg_.infer_source == ProposalSourceMode::kLearnedOnly) {
    LocationPredictions preds = rpn_forward(fmap, rpn_);
    proposals = decode_proposals(preds, cfg_.top_n_infer, img_w, img_h);
  } else {
    proposals = proposals_for_image(rec, cfg_.infer_source,
                                    hash_combine(cfg_.init_seed, image_id));
  }
  if (proposals.empty()) return {};
  Mat pooled = roi_pool(fmap, proposal_boxes(proposals), cfg_.roi_bins);
  Mat x_prop = proposal_mlp(pooled, mlp_);
  std::vector<double> xdaf(cfg_.d, 0.0);
  if (cfg_.dafe_on) xdaf = dafe(fmap, dafe_);
  Mat x_fuse = fuse(x_prop, xdaf);
  std::vector<double> x_norm = row_norms_of(x_fuse);
  auto dets = mil_inference(x_fuse, x_norm, proposals, table_, branches_,
                            cfg_.tau, img_w, img_h);
  for (auto& d : dets) d.image_id = image_id;
  return dets;
}

void WsovodModel::save(const std::string& path, long step) const {
  // checkpoint carries the model config so eval can rebuild the shapes
  nlohmann::json tensors = nlohmann::json::object();
  for (ParamTensor* t : const_cast<ParamStore&>(store_).all())
    tensors[t->name] = {{"shape", t->shape}, {"values", t->values}};
  nlohmann::json j = {{"version", 1},
                      {"step", step},
                      {"config", nlohmann::json::parse(model_config_to_json(cfg_))},
                      {"vocab", nlohmann::json::parse(vocabulary_to_json(vocab_))},
                      {"tensors", tensors}};
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
  out << j.dump() << "\n";
}

long WsovodModel::load(const std::string& path) {
  return load_checkpoint(store_, path);
}

void WsovodModel::corrupt_gradient(const std::string& tensor, std::size_t coord,
                                   double delta) {
  store_.get(tensor).grad[coord] += delta;
}

std::string model_config_to_json(const ModelConfig& c) {
  nlohmann::json j = {
      {"stride", c.stride},
      {"d_feat", c.d_feat},
      {"roi_bins", c.roi_bins},
      {"d", c.d},
      {"dafe_protos", c.dafe_protos},
      {"dafe_hidden", c.dafe_hidden},
      {"rpn_width", c.rpn_width},
      {"refine_branches", c.refine_branches},
      {"max_proposals", c.max_proposals},
      {"top_n_learned", c.top_n_learned},
      {"top_n_infer", c.top_n_infer},
      {"oracle_grid", c.oracle_grid},
      {"oracle_jitter", c.oracle_jitter},
      {"tau", c.tau},
      {"dropout", c.dropout},
      {"iou_fg", c.iou_fg},
      {"pgt_score_floor", c.pgt_score_floor},
      {"warmup_epochs", c.warmup_epochs},
      {"dafe_on", c.dafe_on},
      {"train_source", to_string(c.train_source)},
      {"infer_source", to_string(c.infer_source)},
      {"init_seed", c.init_seed},
      {"embed_seed", c.embed_seed},
  };
  return j.dump();
}

ModelConfig model_config_from_json(const std::string& text) {
  const nlohmann::json j = nlohmann::json::parse(text);
  ModelConfig c;
  c.stride = j.value("stride", c.stride);
  c.d_feat = j.value("d_feat", c.d_feat);
  c.roi_bins = j.value("roi_bins", c.roi_bins);
  c.d = j.value("d", c.d);
  c.dafe_protos = j.value("dafe_protos", c.dafe_protos);
  c.dafe_hidden = j.value("dafe_hidden", c.dafe_hidden);
  c.rpn_width = j.value("rpn_width", c.rpn_width);
  c.refine_branches = j.value("refine_branches", c.refine_branches);
  c.max_proposals = j.value("max_proposals", c.max_proposals);
  c.top_n_learned = j.value("top_n_learned", c.top_n_learned);
  c.top_n_infer = j.value("top_n_infer", c.top_n_infer);
  c.oracle_grid = j.value("oracle_grid", c.oracle_grid);
  c.oracle_jitter = j.value("oracle_jitter", c.oracle_jitter);
  c.tau = j.value("tau", c.tau);
  c.dropout = j.value("dropout", c.dropout);
  c.iou_fg = j.value("iou_fg", c.iou_fg);
  c.pgt_score_floor = j.value("pgt_score_floor", c.pgt_score_floor);
  c.warmup_epochs = j.value("warmup_epochs", c.warmup_epochs);
  c.dafe_on = j.value("dafe_on", c.dafe_on);
  if (j.contains("train_source"))
    c.train_source = proposal_source_from_string(j["train_source"]);
  if (j.contains("infer_source"))
    c.infer_source = proposal_source_from_string(j["infer_source"]);
  c.init_seed = j.value("init_seed", c.init_seed);
  c.embed_seed = j.value("embed_seed", c.embed_seed);
  return c;
}

}  // namespace wsovod
