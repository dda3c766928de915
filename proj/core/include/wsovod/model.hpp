#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "wsovod/evalmetrics.hpp"
#include "wsovod/features.hpp"
#include "wsovod/milheads.hpp"
#include "wsovod/param.hpp"
#include "wsovod/proposals.hpp"
#include "wsovod/synthdata.hpp"

namespace wsovod {

enum class ProposalSourceMode { kLearnedOnly, kSegmenterOnly, kMerged };
ProposalSourceMode proposal_source_from_string(const std::string& s);
std::string to_string(ProposalSourceMode m);

struct ModelConfig {
  std::size_t stride = 4;
  std::size_t d_feat = 32;
  std::size_t roi_bins = 2;      // G
  std::size_t d = 64;            // proposal feature width
  std::size_t dafe_protos = 8;   // M
  std::size_t dafe_hidden = 32;
  std::size_t rpn_width = 32;    // paper-scale default-override: 256
  std::size_t refine_branches = 3;  // K
  std::size_t max_proposals = 64;   // R entering the MIL heads
  std::size_t top_n_learned = 64;
  std::size_t top_n_infer = 100;
  std::size_t oracle_grid = 8;
  double oracle_jitter = 0.1;
  double tau = 0.07;
  double dropout = 0.5;  // proposal-MLP hidden dropout, training only
  double iou_fg = 0.5;
  double pgt_score_floor = 0.1;
  std::size_t warmup_epochs = 1;
  bool dafe_on = true;
  ProposalSourceMode train_source = ProposalSourceMode::kMerged;
  ProposalSourceMode infer_source = ProposalSourceMode::kLearnedOnly;
  std::uint64_t init_seed = 42;
  std::uint64_t embed_seed = 7;
};

struct LossParts {
  double pg = 0, om = 0, ir = 0;
  double total() const { return pg + om + ir; }
};

class WsovodModel {
 public:
  WsovodModel(const ModelConfig& cfg, const Vocabulary& vocab);

  // Forward (and optionally backward) for one training image. Gradients
  // accumulate across images; the caller owns the sgd_step.
  LossParts train_image(const ImageRecord& rec, std::size_t epoch,
                        std::uint64_t image_seed, bool do_backward);

  std::vector<Detection> infer_image(const ImageRecord& rec,
                                     std::size_t image_id) const;

  // Proposals as used at a given pipeline point; for recall studies.
  std::vector<Proposal> proposals_for_image(const ImageRecord& rec,
                                            ProposalSourceMode source,
                                            std::uint64_t image_seed) const;

  ParamStore& params() { return store_; }
  const ParamStore& params() const { return store_; }
  const ModelConfig& config() const { return cfg_; }
  const Vocabulary& vocabulary() const { return vocab_; }
  const TextEmbeddingTable& embeddings() const { return table_; }

  // Re-point the classifier at a (possibly larger) vocabulary without
  // touching learned weights; this is the open-vocabulary entry point.
  void set_vocabulary(const Vocabulary& vocab);

  void save(const std::string& path, long step = 0) const;
  long load(const std::string& path);

  // test hook: corrupt one gradient coordinate after backward
  void corrupt_gradient(const std::string& tensor, std::size_t coord, double delta);

 private:
  ModelConfig cfg_;
  Vocabulary vocab_;
  TextEmbeddingTable table_;
  ParamStore store_;
  ExtractorParams extractor_;
  ProposalMlpParams mlp_;
  DafeParams dafe_;
  RpnParams rpn_;
  MiningParams mining_;
  std::vector<BranchParams> branches_;
};

std::string model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const std::string& json_text);

}  // namespace wsovod
