#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "wsovod/model.hpp"
#include "wsovod/param.hpp"
#include "wsovod/synthdata.hpp"

namespace wsovod {

enum class SamplerKind { kRandom, kBcas };
SamplerKind sampler_from_string(const std::string& s);
std::string to_string(SamplerKind s);

struct TrainConfig {
  std::size_t epochs = 20;
  std::size_t batch_size = 4;
  SgdConfig sgd;  // lr 1e-3, momentum 0.9, decay 0.1 at 75% of steps
  double lr_decay_at = 0.75;  // fraction of total steps
  std::size_t warmup_epochs = 1;
  SamplerKind sampler = SamplerKind::kRandom;
  std::vector<std::string> dataset_paths;
  std::uint64_t seed = 42;
  ModelConfig model;
  std::string out_checkpoint = "checkpoint.json";
  std::string loss_log = "loss_log.csv";
  bool checkpoint_per_epoch = false;
};

// Flat key=value config file; '#' comments. Unknown keys rejected.
TrainConfig load_train_config(const std::string& path);
void apply_config_line(TrainConfig& cfg, const std::string& key,
                       const std::string& value);
std::string format_train_config(const TrainConfig& cfg);

// One dataset held in memory plus its per-category image index.
struct LoadedDataset {
  std::vector<ImageRecord> records;
  int dataset_id = 0;
};

class BatchSampler {
 public:
  BatchSampler(const LoadedDataset& ds, SamplerKind kind, std::size_t batch_size,
               std::uint64_t seed);
  // indices into ds.records; random sampler walks an epoch permutation,
  // bcas draws a category then images containing it
  std::vector<std::size_t> next_batch();

 private:
  const LoadedDataset& ds_;
  SamplerKind kind_;
  std::size_t batch_size_;
  Rng rng_;
  std::vector<std::size_t> perm_;
  std::size_t cursor_ = 0;
  std::vector<std::vector<std::size_t>> by_category_;
  std::vector<std::size_t> labeled_categories_;
};

struct StepLog {
  std::size_t epoch = 0, step = 0;
  LossParts losses;
  double lr = 0;
};

struct TrainResult {
  std::vector<StepLog> log;
  std::string checkpoint_path;
};

LossParts train_step(WsovodModel& model, const LoadedDataset& ds,
                     const std::vector<std::size_t>& batch, std::size_t epoch,
                     const TrainConfig& cfg, double lr);

// Datasets interleave round-robin per batch. Throws on non-finite loss with
// the offending dataset/image in the message.
TrainResult run_training(WsovodModel& model, std::vector<LoadedDataset> datasets,
                         const TrainConfig& cfg);

void write_loss_log(const std::vector<StepLog>& log, const std::string& path);

}  // namespace wsovod
