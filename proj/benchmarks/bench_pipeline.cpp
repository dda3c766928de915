// Microbenchmarks for the per-image hot path: feature extraction, RoI
// pooling, the MIL scoring heads, and a full train/infer step.

#include <benchmark/benchmark.h>

#include "wsovod/features.hpp"
#include "wsovod/milheads.hpp"
#include "wsovod/model.hpp"
#include "wsovod/proposals.hpp"
#include "wsovod/rng.hpp"
#include "wsovod/synthdata.hpp"

using namespace wsovod;

namespace {

Vocabulary base_vocab() {
  Vocabulary base;
  for (const auto& c : default_vocabulary())
    if (!c.is_novel) base.push_back(c);
  return base;
}

std::vector<ImageRecord> sample_records(std::size_t n) {
  DatasetGenConfig cfg;
  cfg.profile = scene_centric_profile();
  cfg.allowed_categories = base_category_ids(default_vocabulary());
  cfg.num_images = n;
  cfg.seed = 7;
  return make_dataset(cfg, base_vocab());
}

void BM_Extract(benchmark::State& state) {
  const auto rec = sample_records(1)[0];
  ParamStore store;
  Rng init(1);
  auto p = ExtractorParams::create(store, 4, 32, init);
  for (auto _ : state) benchmark::DoNotOptimize(extract(rec.image, p));
}
BENCHMARK(BM_Extract);

void BM_RoiPool(benchmark::State& state) {
  const auto rec = sample_records(1)[0];
  ParamStore store;
  Rng init(1);
  auto p = ExtractorParams::create(store, 4, 32, init);
  const FeatureMap fmap = extract(rec.image, p);
  const auto props =
      oracle_grid_proposals(rec.gt, 64, 64, 8, 0.1, 3);
  std::vector<Box> boxes;
  for (const auto& pr : props) boxes.push_back(pr.box);
  for (auto _ : state) benchmark::DoNotOptimize(roi_pool(fmap, boxes, 2));
}
BENCHMARK(BM_RoiPool);

void BM_MiningScores(benchmark::State& state) {
  const std::size_t R = state.range(0), C = 8, D = 64;
  ParamStore store;
  Rng init(2);
  auto p = MiningParams::create(store, D, C, init);
  TextEmbeddingTable table = build_embeddings(base_vocab(), 7, D);
  Mat x(R, D);
  Rng rng(3);
  for (double& v : x.data) v = rng.normal();
  for (auto _ : state)
    benchmark::DoNotOptimize(mining_scores(x, table, p, 0.07));
}
BENCHMARK(BM_MiningScores)->Arg(16)->Arg(64);

void BM_TrainImage(benchmark::State& state) {
  const auto recs = sample_records(4);
  WsovodModel model(ModelConfig{}, base_vocab());
  std::size_t i = 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(
        model.train_image(recs[i % recs.size()], 2, i, true));
    model.params().zero_grad();
    ++i;
  }
}
BENCHMARK(BM_TrainImage);

void BM_InferImage(benchmark::State& state) {
  const auto recs = sample_records(4);
  const WsovodModel model(ModelConfig{}, base_vocab());
  std::size_t i = 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(model.infer_image(recs[i % recs.size()], i));
    ++i;
  }
}
BENCHMARK(BM_InferImage);

}  // namespace

BENCHMARK_MAIN();
