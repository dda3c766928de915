#include "wsovod/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace wsovod {

SamplerKind sampler_from_string(const std::string& s) {
  if (s == "random") return SamplerKind::kRandom;
  if (s == "bcas") return SamplerKind::kBcas;
  throw std::runtime_error("unknown sampler: " + s);
}

std::string to_string(SamplerKind s) {
  return s == SamplerKind::kRandom ? "random" : "bcas";
}

void apply_config_line(TrainConfig& cfg, const std::string& key,
                       const std::string& value) {
  auto u = [&] { return std::stoull(value); };
  auto d = [&] { return std::stod(value); };
  if (key == "epochs") cfg.epochs = u();
  else if (key == "batch_size") cfg.batch_size = u();
  else if (key == "lr") cfg.sgd.lr = d();
  else if (key == "momentum") cfg.sgd.momentum = d();
  else if (key == "weight_decay") cfg.sgd.weight_decay = d();
  else if (key == "lr_decay") cfg.sgd.lr_decay = d();
  else if (key == "lr_decay_at") cfg.lr_decay_at = d();
  else if (key == "warmup_epochs") { cfg.warmup_epochs = u(); cfg.model.warmup_epochs = u(); }
  else if (key == "sampler") cfg.sampler = sampler_from_string(value);
  else if (key == "seed") { cfg.seed = u(); cfg.model.init_seed = u(); }
  else if (key == "data") cfg.dataset_paths.push_back(value);
  else if (key == "out_checkpoint") cfg.out_checkpoint = value;
  else if (key == "loss_log") cfg.loss_log = value;
  else if (key == "checkpoint_per_epoch") cfg.checkpoint_per_epoch = value == "true" || value == "1";
  else if (key == "dafe_on") cfg.model.dafe_on = value == "true" || value == "1";
  else if (key == "proposal_source") cfg.model.train_source = proposal_source_from_string(value);
  else if (key == "infer_source") cfg.model.infer_source = proposal_source_from_string(value);
  else if (key == "refine_branches") cfg.model.refine_branches = u();
  else if (key == "max_proposals") cfg.model.max_proposals = u();
  else if (key == "tau") cfg.model.tau = d();
  else if (key == "dropout") cfg.model.dropout = d();
  else if (key == "stride") cfg.model.stride = u();
  else if (key == "d_feat") cfg.model.d_feat = u();
  else if (key == "d") cfg.model.d = u();
  else if (key == "rpn_width") cfg.model.rpn_width = u();
  else if (key == "oracle_grid") cfg.model.oracle_grid = u();
  else if (key == "oracle_jitter") cfg.model.oracle_jitter = d();
  else if (key == "embed_seed") cfg.model.embed_seed = u();
  else throw std::runtime_error("unknown config key: " + key);
  if (cfg.batch_size < 1) throw std::runtime_error("batch_size must be >= 1");
  if (cfg.sgd.lr <= 0) throw std::runtime_error("lr must be > 0");
  if (cfg.sgd.momentum < 0 || cfg.sgd.momentum >= 1)
    throw std::runtime_error("momentum must be in [0,1)");
}

TrainConfig load_train_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read config: " + path);
  TrainConfig cfg;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      if (line.find_first_not_of(" \t\r") != std::string::npos)
        throw std::runtime_error(path + ":" + std::to_string(lineno) +
                                 ": expected key=value");
      continue;
    }
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
    };
    apply_config_line(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return cfg;
}

std::string format_train_config(const TrainConfig& cfg) {
  std::ostringstream os;
  os << "epochs=" << cfg.epochs << "\nbatch_size=" << cfg.batch_size
     << "\nlr=" << cfg.sgd.lr << "\nmomentum=" << cfg.sgd.momentum
     << "\nweight_decay=" << cfg.sgd.weight_decay
     << "\nlr_decay=" << cfg.sgd.lr_decay << "\nlr_decay_at=" << cfg.lr_decay_at
     << "\nwarmup_epochs=" << cfg.warmup_epochs
     << "\nsampler=" << to_string(cfg.sampler) << "\nseed=" << cfg.seed
     << "\ndafe_on=" << (cfg.model.dafe_on ? "true" : "false")
     << "\nproposal_source=" << to_string(cfg.model.train_source)
     << "\ninfer_source=" << to_string(cfg.model.infer_source)
     << "\nrefine_branches=" << cfg.model.refine_branches
     << "\nmax_proposals=" << cfg.model.max_proposals
     << "\ntau=" << cfg.model.tau << "\n";
  for (const auto& p : cfg.dataset_paths) os << "data=" << p << "\n";
  return os.str();
}

BatchSampler::BatchSampler(const LoadedDataset& ds, SamplerKind kind,
                           std::size_t batch_size, std::uint64_t seed)
    : ds_(ds), kind_(kind), batch_size_(batch_size),
      rng_(hash_combine(seed, std::string("sampler"))) {
  if (ds.records.empty()) throw std::runtime_error("sampler: empty dataset");
  if (kind_ == SamplerKind::kBcas) {
    std::size_t max_cat = 0;
    bool any = false;
    for (const auto& r : ds.records)
      for (std::size_t c : r.labels) {
        max_cat = std::max(max_cat, c);
        any = true;
      }
    if (!any) throw std::runtime_error("bcas sampler requires labeled images");
    by_category_.assign(max_cat + 1, {});
    for (std::size_t i = 0; i < ds.records.size(); ++i)
      for (std::size_t c : ds.records[i].labels) by_category_[c].push_back(i);
    for (std::size_t c = 0; c < by_category_.size(); ++c)
      if (!by_category_[c].empty()) labeled_categories_.push_back(c);
  } else {
    perm_.resize(ds.records.size());
    std::iota(perm_.begin(), perm_.end(), std::size_t{0});
  }
}

std::vector<std::size_t> BatchSampler::next_batch() {
  std::vector<std::size_t> batch;
  if (kind_ == SamplerKind::kRandom) {
    for (std::size_t k = 0; k < batch_size_; ++k) {
      if (cursor_ == 0) {  // Fisher-Yates reshuffle each epoch
        for (std::size_t i = perm_.size(); i > 1; --i)
          std::swap(perm_[i - 1], perm_[rng_.uniform_int(i)]);
      }
      batch.push_back(perm_[cursor_]);
      cursor_ = (cursor_ + 1) % perm_.size();
    }
  } else {
    const std::size_t c =
        labeled_categories_[rng_.uniform_int(labeled_categories_.size())];
    const auto& pool = by_category_[c];
    for (std::size_t k = 0; k < batch_size_; ++k)
      batch.push_back(pool[rng_.uniform_int(pool.size())]);
  }
  return batch;
}

LossParts train_step(WsovodModel& model, const LoadedDataset& ds,
                     const std::vector<std::size_t>& batch, std::size_t epoch,
                     const TrainConfig& cfg, double lr) {
  LossParts sum;
  for (std::size_t idx : batch) {
    const std::uint64_t img_seed =
        hash_combine(hash_combine(cfg.seed, std::uint64_t(ds.dataset_id)), idx);
    const LossParts l = model.train_image(ds.records[idx], epoch, img_seed, true);
    sum.pg += l.pg;
    sum.om += l.om;
    sum.ir += l.ir;
  }
  if (!std::isfinite(sum.total())) {
    std::string ids;
    for (std::size_t idx : batch) ids += std::to_string(idx) + " ";
    throw std::runtime_error("non-finite loss on dataset " +
                             std::to_string(ds.dataset_id) + " images [ " + ids +
                             "] (pg=" + std::to_string(sum.pg) +
                             " om=" + std::to_string(sum.om) +
                             " ir=" + std::to_string(sum.ir) + ")");
  }
  sgd_step(model.params(), cfg.sgd, lr);
  return sum;
}

TrainResult run_training(WsovodModel& model, std::vector<LoadedDataset> datasets,
                         const TrainConfig& cfg) {
  if (datasets.empty()) throw std::runtime_error("run_training: no datasets");
  TrainResult result;
  result.checkpoint_path = cfg.out_checkpoint;

  std::vector<BatchSampler> samplers;
  std::size_t total_images = 0;
  for (std::size_t d = 0; d < datasets.size(); ++d) {
    samplers.emplace_back(datasets[d], cfg.sampler, cfg.batch_size,
                          hash_combine(cfg.seed, d));
    total_images += datasets[d].records.size();
  }
  const std::size_t steps_per_epoch =
      std::max<std::size_t>(1, total_images / cfg.batch_size);
  const std::size_t total_steps = cfg.epochs * steps_per_epoch;
  const auto decay_step = std::size_t(double(total_steps) * cfg.lr_decay_at);

  if (cfg.epochs == 0) {
    model.save(cfg.out_checkpoint, 0);
    return result;
  }

  double lr = cfg.sgd.lr;
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t s = 0; s < steps_per_epoch; ++s, ++step) {
      if (decay_step > 0 && step == decay_step) lr *= cfg.sgd.lr_decay;
      const std::size_t d = step % datasets.size();  // round-robin
      const auto batch = samplers[d].next_batch();
      const LossParts losses =
          train_step(model, datasets[d], batch, epoch, cfg, lr);
      result.log.push_back({epoch, step, losses, lr});
    }
    if (cfg.checkpoint_per_epoch)
      model.save(cfg.out_checkpoint + ".epoch" + std::to_string(epoch),
                 long(step));
  }
  model.save(cfg.out_checkpoint, long(step));
  return result;
}

void write_loss_log(const std::vector<StepLog>& log, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write loss log: " + path);
  out << "epoch,step,loss_pg,loss_om,loss_ir,loss_total,lr\n";
  for (const auto& l : log)
    out << l.epoch << "," << l.step << "," << l.losses.pg << "," << l.losses.om
        << "," << l.losses.ir << "," << l.losses.total() << "," << l.lr << "\n";
}

}  // namespace wsovod
