// wsovod command line: data generation, training, evaluation, ablations,
// gradient checking, and proposal recall tables.
//
// exit codes: 0 ok, 2 bad flags, 3 I/O or format, 4 non-finite loss,
//             5 shape mismatch, 6 gradient check failure

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "wsovod/diffcore.hpp"
#include "wsovod/evalmetrics.hpp"
#include "wsovod/milheads.hpp"
#include "wsovod/model.hpp"
#include "wsovod/proposals.hpp"
#include "wsovod/synthdata.hpp"
#include "wsovod/train.hpp"

using namespace wsovod;

namespace {

std::uint64_t env_seed(std::uint64_t fallback) {
  if (const char* s = std::getenv("WSOVOD_SEED")) {
    try {
      return std::stoull(s);
    } catch (...) {
      std::cerr << "warning: ignoring unparsable WSOVOD_SEED=" << s << "\n";
    }
  }
  return fallback;
}

int classify_error(const std::exception& e) {
  const std::string msg = e.what();
  if (msg.find("non-finite") != std::string::npos) return 4;
  if (msg.find("shape mismatch") != std::string::npos ||
      msg.find("categories") != std::string::npos)
    return 5;
  return 3;
}

int report_error(const std::exception& e) {
  std::cerr << "error: " << e.what() << "\n";
  return classify_error(e);
}

Vocabulary vocab_from_flag(const std::string& vocab_path) {
  return vocab_path.empty() ? default_vocabulary() : load_vocabulary(vocab_path);
}

// training covers base categories only; novel ones enter at evaluation time
Vocabulary train_vocab_from_flag(const std::string& vocab_path) {
  if (!vocab_path.empty()) return load_vocabulary(vocab_path);
  Vocabulary base;
  for (const auto& c : default_vocabulary())
    if (!c.is_novel) base.push_back(c);
  return base;
}

struct LoadedModel {
  ModelConfig cfg;
  std::unique_ptr<WsovodModel> model;
  long step = 0;
};

// the checkpoint carries its training vocabulary; callers re-point the
// classifier at an evaluation vocabulary afterwards
LoadedModel load_model(const std::string& ckpt) {
  std::ifstream in(ckpt);
  if (!in) throw std::runtime_error("cannot read checkpoint: " + ckpt);
  nlohmann::json j;
  in >> j;
  LoadedModel lm;
  lm.cfg = model_config_from_json(j.at("config").dump());
  const Vocabulary vocab = j.contains("vocab")
                               ? vocabulary_from_json(j["vocab"].dump())
                               : default_vocabulary();
  lm.model = std::make_unique<WsovodModel>(lm.cfg, vocab);
  lm.step = lm.model->load(ckpt);
  return lm;
}

// concatenates datasets; image ids are indices into the combined list
std::vector<ImageRecord> load_records(const std::vector<std::string>& paths) {
  std::vector<ImageRecord> all;
  for (const auto& p : paths) {
    auto records = read_dataset(p);
    all.insert(all.end(), std::make_move_iterator(records.begin()),
               std::make_move_iterator(records.end()));
  }
  return all;
}

std::vector<Detection> run_inference(const WsovodModel& model,
                                     const std::vector<ImageRecord>& records) {
  std::vector<Detection> dets;
  for (std::size_t i = 0; i < records.size(); ++i) {
    auto d = model.infer_image(records[i], i);
    dets.insert(dets.end(), d.begin(), d.end());
  }
  return dets;
}

std::vector<ScoredBoxes> collect_proposals(const WsovodModel& model,
                                           const std::vector<ImageRecord>& records,
                                           ProposalSourceMode source) {
  std::vector<ScoredBoxes> out;
  out.reserve(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    ScoredBoxes sb;
    for (const auto& p : model.proposals_for_image(
             records[i], source, hash_combine(model.config().init_seed, i))) {
      sb.boxes.push_back(p.box);
      sb.scores.push_back(p.score);
    }
    out.push_back(std::move(sb));
  }
  return out;
}

std::vector<std::size_t> parse_categories(const std::string& spec,
                                          const Vocabulary& vocab) {
  if (spec == "base") return base_category_ids(vocab);
  if (spec == "all") {
    std::vector<std::size_t> ids(vocab.size());
    for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = i;
    return ids;
  }
  std::vector<std::size_t> ids;
  std::stringstream ss(spec);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    const std::size_t id = std::stoull(tok);
    if (id >= vocab.size())
      throw CLI::ValidationError("--categories", "category id out of range: " + tok);
    ids.push_back(id);
  }
  if (ids.empty())
    throw CLI::ValidationError("--categories", "empty category list");
  return ids;
}

// ---- gen ----

struct GenArgs {
  std::string out, profile = "object_centric", categories = "base";
  std::size_t images = 100;
  double federated = 1.0;
  std::uint64_t seed = env_seed(42);
  int dataset_id = 0;
  bool inline_images = false;
};

int cmd_gen(const GenArgs& a) {
  std::cout << "gen: out=" << a.out << " profile=" << a.profile
            << " images=" << a.images << " categories=" << a.categories
            << " federated=" << a.federated << " seed=" << a.seed
            << " dataset_id=" << a.dataset_id << "\n";
  try {
    const Vocabulary vocab = default_vocabulary();
    DatasetGenConfig cfg;
    cfg.profile = profile_by_name(a.profile);
    cfg.allowed_categories = parse_categories(a.categories, vocab);
    cfg.num_images = a.images;
    cfg.labels.federated = a.federated < 1.0;
    cfg.labels.p_keep = a.federated;
    cfg.seed = a.seed;
    cfg.dataset_id = a.dataset_id;
    const auto records = make_dataset(cfg, vocab);
    write_dataset(a.out, records, a.inline_images);
    std::size_t objects = 0, labels = 0;
    for (const auto& r : records) {
      objects += r.gt.size();
      labels += r.labels.size();
    }
    std::cout << "wrote " << records.size() << " images, " << objects
              << " objects, label density "
              << (records.empty() ? 0.0 : double(labels) / double(records.size()))
              << " labels/image -> " << a.out << "\n";
    return 0;
  } catch (const std::exception& e) {
    return report_error(e);
  }
}

// ---- train ----

struct TrainArgs {
  std::string config_path;
  std::vector<std::pair<std::string, std::string>> overrides;  // parse order
  std::string vocab_path;
};

bool config_file_sets(const std::string& path, const std::string& wanted) {
  std::ifstream in(path);
  std::string line;
  while (std::getline(in, line)) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    std::string key = line.substr(0, eq);
    const auto b = key.find_first_not_of(" \t\r");
    const auto e = key.find_last_not_of(" \t\r");
    if (b != std::string::npos && key.substr(b, e - b + 1) == wanted) return true;
  }
  return false;
}

int cmd_train(const TrainArgs& a) {
  try {
    TrainConfig cfg;
    if (!a.config_path.empty()) cfg = load_train_config(a.config_path);
    const bool seed_in_flags =
        std::any_of(a.overrides.begin(), a.overrides.end(),
                    [](const auto& kv) { return kv.first == "seed"; });
    if (!seed_in_flags &&
        (a.config_path.empty() || !config_file_sets(a.config_path, "seed")))
      apply_config_line(cfg, "seed", std::to_string(env_seed(cfg.seed)));
    for (const auto& [key, value] : a.overrides)
      apply_config_line(cfg, key, value);
    if (cfg.dataset_paths.empty())
      throw CLI::ValidationError("--data", "at least one dataset is required");

    std::cout << "resolved config:\n" << format_train_config(cfg);
    const Vocabulary vocab = train_vocab_from_flag(a.vocab_path);
    std::vector<LoadedDataset> datasets;
    for (std::size_t i = 0; i < cfg.dataset_paths.size(); ++i)
      datasets.push_back({read_dataset(cfg.dataset_paths[i]), int(i)});

    WsovodModel model(cfg.model, vocab);
    const TrainResult result = run_training(model, std::move(datasets), cfg);
    write_loss_log(result.log, cfg.loss_log);
    if (!result.log.empty())
      std::cout << "final step loss: " << result.log.back().losses.total()
                << "\n";
    std::cout << "checkpoint -> " << result.checkpoint_path << "\nloss log -> "
              << cfg.loss_log << "\n";
    return 0;
  } catch (const CLI::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    return report_error(e);
  }
}

// ---- eval ----

struct EvalArgs {
  std::string ckpt, vocab_path, split = "all", out = "eval", infer_source;
  std::vector<std::string> data;
};

int cmd_eval(const EvalArgs& a) {
  std::cout << "eval: ckpt=" << a.ckpt << " split=" << a.split
            << " out=" << a.out << "\n";
  try {
    const Vocabulary vocab = vocab_from_flag(a.vocab_path);
    LoadedModel lm = load_model(a.ckpt);
    if (!a.infer_source.empty()) {
      lm.cfg.infer_source = proposal_source_from_string(a.infer_source);
      auto rebuilt = std::make_unique<WsovodModel>(lm.cfg, lm.model->vocabulary());
      rebuilt->load(a.ckpt);
      lm.model = std::move(rebuilt);
    }
    lm.model->set_vocabulary(vocab);
    const auto records = load_records(a.data);
    const auto gt = collect_ground_truth(records);
    const auto dets = run_inference(*lm.model, records);
    const MetricReport report = evaluate_detections(dets, gt, vocab);
    write_report_csv(report, vocab, a.out + ".csv");
    write_report_json(report, vocab, a.out + ".json");
    std::cout << format_report(report, vocab);
    if (a.split == "base")
      std::cout << "split base: mAP@0.5 = " << report.ap_base << "\n";
    else if (a.split == "novel")
      std::cout << "split novel: mAP@0.5 = " << report.ap_novel
                << (report.ap_novel < 0 ? " (no novel categories)" : "") << "\n";
    std::cout << "reports -> " << a.out << ".csv, " << a.out << ".json\n";
    return 0;
  } catch (const std::exception& e) {
    return report_error(e);
  }
}

// ---- recall ----

struct RecallArgs {
  std::string ckpt, vocab_path, out = "recall.csv";
  std::vector<std::string> data;
};

int cmd_recall(const RecallArgs& a) {
  std::cout << "recall: ckpt=" << a.ckpt << " out=" << a.out << "\n";
  try {
    const LoadedModel lm = load_model(a.ckpt);
    if (!a.vocab_path.empty())
      lm.model->set_vocabulary(load_vocabulary(a.vocab_path));
    const auto records = load_records(a.data);
    const auto gt = collect_ground_truth(records);

    std::ofstream out(a.out);
    if (!out) throw std::runtime_error("cannot write recall table: " + a.out);
    out << "source,n,ar_iou50,ar_50_95\n";
    const std::vector<std::pair<std::string, ProposalSourceMode>> sources = {
        {"learned", ProposalSourceMode::kLearnedOnly},
        {"segmenter", ProposalSourceMode::kSegmenterOnly},
        {"merged", ProposalSourceMode::kMerged}};
    for (const auto& [name, mode] : sources) {
      const auto proposals = collect_proposals(*lm.model, records, mode);
      for (std::size_t n : {std::size_t(10), std::size_t(100), std::size_t(1000)}) {
        const double ar50 = avg_recall(proposals, gt, n, {0.5});
        const double ar = avg_recall(proposals, gt, n, default_ar_grid());
        out << name << "," << n << "," << ar50 << "," << ar << "\n";
        std::cout << name << " AR@" << n << ": iou50 " << ar50 << ", 0.5:0.95 "
                  << ar << "\n";
      }
    }
    std::cout << "table -> " << a.out << "\n";
    return 0;
  } catch (const std::exception& e) {
    return report_error(e);
  }
}

// ---- gradcheck ----

TextEmbeddingTable random_table(std::size_t c, std::size_t d, Rng& rng) {
  TextEmbeddingTable table;
  table.embed = Mat(c, d);
  for (std::size_t i = 0; i < c; ++i) {
    double norm = 0;
    for (std::size_t j = 0; j < d; ++j) {
      table.embed(i, j) = rng.normal();
      norm += table.embed(i, j) * table.embed(i, j);
    }
    norm = std::sqrt(norm);
    for (std::size_t j = 0; j < d; ++j) table.embed(i, j) /= norm;
  }
  return table;
}

Mat mat_of(const ParamTensor& t) {
  Mat m(t.shape[0], t.shape[1]);
  m.data = t.values;
  return m;
}

GradCheckReport check_om(std::uint64_t seed) {
  Rng rng(hash_combine(seed, std::string("om")));
  const std::size_t R = 5, C = 4, D = 8;
  const double tau = 0.07;
  ParamStore store;
  MiningParams mp = MiningParams::create(store, D, C, rng);
  ParamTensor& x = store.add("x", {R, D});
  for (auto& v : x.values) v = 0.5 * rng.normal();
  const TextEmbeddingTable table = random_table(C, D, rng);
  const std::vector<std::size_t> labels = {0, 2};
  auto loss = [&] { return loss_om(mining_scores(mat_of(x), table, mp, tau), labels); };
  auto grads = [&] {
    store.zero_grad();
    MiningCache cache;
    mining_scores(mat_of(x), table, mp, tau, &cache);
    const Mat dx = loss_om_backward(cache, table, mp, tau, labels);
    for (std::size_t i = 0; i < dx.size(); ++i) x.grad[i] += dx.data[i];
  };
  return grad_check(loss, grads, store, 1e-5, 64, seed);
}

GradCheckReport check_ir(std::uint64_t seed) {
  Rng rng(hash_combine(seed, std::string("ir")));
  const std::size_t R = 6, C = 3, D = 8;
  const double tau = 0.07;
  ParamStore store;
  std::vector<BranchParams> branch = create_refine_branches(store, D, 1, rng);
  ParamTensor& x = store.add("x", {R, D});
  for (auto& v : x.values) v = 0.5 * rng.normal();
  const TextEmbeddingTable table = random_table(C, D, rng);
  std::vector<Proposal> proposals;
  for (std::size_t r = 0; r < R; ++r) {
    const double cx = rng.uniform(10, 54), cy = rng.uniform(10, 54);
    const double w = rng.uniform(6, 20), h = rng.uniform(6, 20);
    proposals.push_back({{cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2}, 1.0});
  }
  Mat prev(R, C);
  for (auto& v : prev.data) v = rng.uniform();
  const std::vector<std::size_t> labels = {0, 1};
  const RefinementSupervision sup =
      pgt_assign(prev, proposals, labels, nullptr, 0.5, seed);
  auto x_norms = [&] {
    std::vector<double> norms(R, 0.0);
    const Mat m = mat_of(x);
    for (std::size_t r = 0; r < R; ++r) {
      double n = 0;
      for (std::size_t j = 0; j < D; ++j) n += m(r, j) * m(r, j);
      norms[r] = std::sqrt(n);
    }
    return norms;
  };
  auto forward = [&](RefineCache* rc) {
    const Mat m = mat_of(x);
    BranchEval ev;
    refine_scores(m, x_norms(), table, tau, rc ? rc : &ev.cls);
    if (rc) ev.cls = *rc;
    ev.deltas = affine(*branch[0].Wr, *branch[0].br, m);
    return ev;
  };
  auto loss = [&] {
    RefineCache rc;
    return loss_ir_branch(forward(&rc), proposals, sup).total();
  };
  auto grads = [&] {
    store.zero_grad();
    RefineCache rc;
    const BranchEval ev = forward(&rc);
    Mat dx(R, D);
    loss_ir_branch_backward(ev, mat_of(x), x_norms(), proposals, sup, table,
                            tau, branch[0], dx);
    for (std::size_t i = 0; i < dx.size(); ++i) x.grad[i] += dx.data[i];
  };
  return grad_check(loss, grads, store, 1e-5, 64, seed);
}

GradCheckReport check_pg(std::uint64_t seed) {
  Rng rng(hash_combine(seed, std::string("pg")));
  const std::size_t gh = 4, gw = 4, d_feat = 6;
  ParamStore store;
  RpnParams rp = RpnParams::create(store, d_feat, 8, rng);
  ParamTensor& cells = store.add("cells", {gh * gw, d_feat});
  for (auto& v : cells.values) v = 0.5 * rng.normal();
  const std::vector<PgtBox> pgt = {{{5, 5, 11, 11}, 0}, {{1, 9, 7, 15}, 1}};
  auto fmap_of = [&] {
    FeatureMap f;
    f.gh = gh;
    f.gw = gw;
    f.stride = 4;
    f.cells = mat_of(cells);
    return f;
  };
  auto loss = [&] {
    const LocationPredictions preds = rpn_forward(fmap_of(), rp);
    return loss_pg(preds, assign_pg_targets(pgt, preds));
  };
  auto grads = [&] {
    store.zero_grad();
    RpnCache rc;
    const LocationPredictions preds = rpn_forward(fmap_of(), rp, &rc);
    const PgTargets targets = assign_pg_targets(pgt, preds);
    Mat d_cells(gh * gw, d_feat);
    loss_pg_backward(targets, rc, rp, d_cells);
    for (std::size_t i = 0; i < d_cells.size(); ++i)
      cells.grad[i] += d_cells.data[i];
  };
  return grad_check(loss, grads, store, 1e-5, 64, seed);
}

// Composed L_WSOVOD = L_PG + L_OM + L_IR through the shared extractor.
// Proposal boxes and pseudo targets are stop-gradients in training, so they
// are frozen at the base point here and the check covers the full
// differentiable graph under that (correct) detachment.
GradCheckReport check_composed(std::uint64_t seed, const std::string& corrupt) {
  Rng rng(hash_combine(seed, std::string("composed")));
  const std::size_t stride = 8, d_feat = 6, g = 2, d = 12;
  const std::size_t hidden = 6, protos = 3, rpn_width = 6, branches_k = 2;
  const double tau = 0.07;

  const Vocabulary vocab = default_vocabulary();
  DatasetGenConfig gen;
  gen.profile = scene_centric_profile();
  gen.allowed_categories = base_category_ids(vocab);
  gen.num_images = 1;
  gen.seed = hash_combine(seed, std::string("gradcheck"));
  const ImageRecord rec = make_dataset(gen, vocab)[0];
  const double img_w = double(rec.image.w), img_h = double(rec.image.h);

  ParamStore store;
  ExtractorParams ext = ExtractorParams::create(store, stride, d_feat, rng);
  ProposalMlpParams mlp =
      ProposalMlpParams::create(store, g * g * d_feat, d, rng);
  DafeParams daf = DafeParams::create(store, d_feat, hidden, protos, d, rng);
  RpnParams rpn = RpnParams::create(store, d_feat, rpn_width, rng);
  const TextEmbeddingTable table = build_embeddings(vocab, 7, d);
  MiningParams mining = MiningParams::create(store, d, vocab.size(), rng);
  std::vector<BranchParams> branches =
      create_refine_branches(store, d, branches_k, rng);

  // frozen structure: proposal boxes, pg targets, refinement supervision
  const std::vector<Proposal> proposals = merge_proposals(
      {}, oracle_grid_proposals(rec.gt, img_w, img_h, 3, 0.1, seed), 12);
  std::vector<Box> boxes;
  for (const auto& p : proposals) boxes.push_back(p.box);
  std::vector<PgtBox> pgt;
  for (const auto& obj : rec.gt) pgt.push_back({obj.box, obj.category});
  std::vector<RefinementSupervision> sups;
  {
    FeatureMap fmap = extract(rec.image, ext);
    Mat x = fuse(proposal_mlp(roi_pool(fmap, boxes, g), mlp), dafe(fmap, daf));
    MiningCache mgc;
    ScoreMatrices scores = mining_scores(x, table, mining, tau, &mgc);
    RefineCache ref;
    Mat probs = refine_scores(x, mgc.x_norm, table, tau, &ref);
    Mat prev = scores.s;
    for (std::size_t k = 0; k < branches_k; ++k) {
      sups.push_back(pgt_assign(prev, proposals, rec.labels,
                                k == 0 ? &rec.gt : nullptr, 0.5,
                                hash_combine(seed, k)));
      Mat next(probs.rows, vocab.size());
      for (std::size_t r = 0; r < probs.rows; ++r)
        for (std::size_t c = 0; c < vocab.size(); ++c) next(r, c) = probs(r, c);
      prev = std::move(next);
    }
  }
  PgTargets targets;
  {
    const LocationPredictions preds = rpn_forward(extract(rec.image, ext), rpn);
    targets = assign_pg_targets(pgt, preds);
  }

  auto loss = [&] {
    const FeatureMap fmap = extract(rec.image, ext);
    double total = loss_pg(rpn_forward(fmap, rpn), targets);
    const Mat x =
        fuse(proposal_mlp(roi_pool(fmap, boxes, g), mlp), dafe(fmap, daf));
    MiningCache mgc;
    total += loss_om(mining_scores(x, table, mining, tau, &mgc), rec.labels);
    RefineCache ref;
    refine_scores(x, mgc.x_norm, table, tau, &ref);
    for (std::size_t k = 0; k < branches_k; ++k) {
      BranchEval ev;
      ev.cls = ref;
      ev.deltas = affine(*branches[k].Wr, *branches[k].br, x);
      total += loss_ir_branch(ev, proposals, sups[k]).total();
    }
    return total;
  };
  auto grads = [&] {
    store.zero_grad();
    ExtractCache ec;
    const FeatureMap fmap = extract(rec.image, ext, &ec);
    RpnCache rc;
    rpn_forward(fmap, rpn, &rc);
    RoiPoolCache pc;
    ProposalMlpCache mc;
    DafeCache dc;
    const Mat pooled = roi_pool(fmap, boxes, g, &pc);
    const Mat x_prop = proposal_mlp(pooled, mlp, &mc);
    const Mat x = fuse(x_prop, dafe(fmap, daf, &dc));
    MiningCache mgc;
    mining_scores(x, table, mining, tau, &mgc);
    RefineCache ref;
    refine_scores(x, mgc.x_norm, table, tau, &ref);
    Mat dx = loss_om_backward(mgc, table, mining, tau, rec.labels);
    for (std::size_t k = 0; k < branches_k; ++k) {
      BranchEval ev;
      ev.cls = ref;
      ev.deltas = affine(*branches[k].Wr, *branches[k].br, x);
      loss_ir_branch_backward(ev, x, mgc.x_norm, proposals, sups[k], table,
                              tau, branches[k], dx);
    }
    Mat d_cells(fmap.cells.rows, fmap.cells.cols);
    std::vector<double> d_xdaf(d, 0.0);
    for (std::size_t r = 0; r < dx.rows; ++r)
      for (std::size_t j = 0; j < dx.cols; ++j) d_xdaf[j] += dx(r, j);
    dafe_backward(d_xdaf, dc, daf, d_cells);
    roi_pool_backward(proposal_mlp_backward(dx, mc, mlp), pc, d_feat, d_cells);
    loss_pg_backward(targets, rc, rpn, d_cells);
    extract_backward(d_cells, ec, ext);
    if (!corrupt.empty()) {
      const auto c1 = corrupt.find(',');
      const auto c2 = corrupt.find(',', c1 + 1);
      store.get(corrupt.substr(0, c1))
          .grad[std::stoull(corrupt.substr(c1 + 1, c2 - c1 - 1))] +=
          std::stod(corrupt.substr(c2 + 1));
    }
  };
  // fault injection hits one coordinate, so sweep them all in that mode
  return grad_check(loss, grads, store, 1e-5,
                    corrupt.empty() ? 12 : std::size_t(1) << 20, seed);
}

struct GradcheckArgs {
  std::uint64_t seed = env_seed(0);
  double tol = 1e-4;
  std::string corrupt;  // "tensor,coord,delta" fault injection
};

int cmd_gradcheck(const GradcheckArgs& a) {
  std::cout << "gradcheck: seed=" << a.seed << " tol=" << a.tol << "\n";
  try {
    const std::vector<std::pair<std::string, GradCheckReport>> checks = {
        {"L_OM", check_om(a.seed)},
        {"L_IR", check_ir(a.seed)},
        {"L_PG", check_pg(a.seed)},
        {"L_WSOVOD", check_composed(a.seed, a.corrupt)}};
    bool all_pass = true;
    for (const auto& [name, report] : checks) {
      const bool pass = report.pass(a.tol);
      all_pass = all_pass && pass;
      std::cout << name << " max_rel_err=" << report.max_rel_err << " "
                << (pass ? "PASS" : "FAIL") << "\n";
      if (!pass)
        for (const auto& entry : report.entries)
          if (entry.max_rel_err >= a.tol)
            std::cout << "  tensor " << entry.tensor << " coord "
                      << entry.worst_coord << " rel_err " << entry.max_rel_err
                      << "\n";
    }
    return all_pass ? 0 : 6;
  } catch (const std::exception& e) {
    return report_error(e);
  }
}

// ---- ablate ----

struct AblateArgs {
  std::string study, out;
  std::uint64_t seed = env_seed(42);
  std::size_t train_images = 240, test_images = 60, epochs = 12;
};

std::vector<ImageRecord> ablate_dataset(const BiasProfile& profile,
                                        const Vocabulary& vocab,
                                        std::size_t images, double p_keep,
                                        std::uint64_t seed, int dataset_id) {
  DatasetGenConfig cfg;
  cfg.profile = profile;
  cfg.allowed_categories = base_category_ids(vocab);
  cfg.num_images = images;
  cfg.labels.federated = p_keep < 1.0;
  cfg.labels.p_keep = p_keep;
  cfg.seed = seed;
  cfg.dataset_id = dataset_id;
  return make_dataset(cfg, vocab);
}

struct AblateRow {
  std::string config;
  double map50 = 0, corloc = 0, ar100 = 0;
};

AblateRow ablate_run(const std::string& name, TrainConfig cfg,
                     std::vector<LoadedDataset> train,
                     const std::vector<ImageRecord>& test,
                     const Vocabulary& vocab, ProposalSourceMode recall_source,
                     const std::string& out_prefix) {
  cfg.out_checkpoint = out_prefix + "." + name + ".ckpt.json";
  WsovodModel model(cfg.model, vocab);
  run_training(model, std::move(train), cfg);
  const auto gt = collect_ground_truth(test);
  const MetricReport report =
      evaluate_detections(run_inference(model, test), gt, vocab);
  const double ar100 =
      avg_recall(collect_proposals(model, test, recall_source), gt, 100,
                 default_ar_grid());
  return {name, report.map50, report.corloc, ar100};
}

int cmd_ablate(const AblateArgs& a) {
  const std::string out =
      a.out.empty() ? "ablate_" + a.study + ".csv" : a.out;
  std::cout << "ablate: study=" << a.study << " seed=" << a.seed
            << " train_images=" << a.train_images
            << " test_images=" << a.test_images << " epochs=" << a.epochs
            << " out=" << out << "\n";
  try {
    const Vocabulary vocab = train_vocab_from_flag("");
    TrainConfig base;
    base.epochs = a.epochs;
    base.seed = a.seed;
    base.model.init_seed = a.seed;

    std::vector<AblateRow> rows;
    if (a.study == "dafe") {
      // joint training across both bias profiles, DAFE on vs off
      std::vector<LoadedDataset> train = {
          {ablate_dataset(object_centric_profile(), vocab, a.train_images / 2,
                          1.0, a.seed, 0),
           0},
          {ablate_dataset(scene_centric_profile(), vocab, a.train_images / 2,
                          1.0, hash_combine(a.seed, std::string("d2")), 1),
           1}};
      auto test = ablate_dataset(object_centric_profile(), vocab,
                                 a.test_images / 2, 1.0,
                                 hash_combine(a.seed, std::string("test0")), 0);
      const auto test1 = ablate_dataset(
          scene_centric_profile(), vocab, a.test_images - a.test_images / 2,
          1.0, hash_combine(a.seed, std::string("test")), 1);
      test.insert(test.end(), test1.begin(), test1.end());
      for (const bool on : {true, false}) {
        TrainConfig cfg = base;
        cfg.model.dafe_on = on;
        rows.push_back(ablate_run(on ? "dafe_on" : "dafe_off", cfg, train,
                                  test, vocab, ProposalSourceMode::kLearnedOnly,
                                  out));
      }
    } else if (a.study == "proposals") {
      std::vector<LoadedDataset> train = {
          {ablate_dataset(scene_centric_profile(), vocab, a.train_images, 1.0,
                          a.seed, 0),
           0}};
      const auto test = ablate_dataset(
          scene_centric_profile(), vocab, a.test_images, 1.0,
          hash_combine(a.seed, std::string("test")), 0);
      const std::vector<std::pair<std::string, ProposalSourceMode>> sources = {
          {"learned", ProposalSourceMode::kLearnedOnly},
          {"segmenter", ProposalSourceMode::kSegmenterOnly},
          {"merged", ProposalSourceMode::kMerged}};
      for (const auto& [name, mode] : sources) {
        TrainConfig cfg = base;
        cfg.model.train_source = mode;
        rows.push_back(ablate_run(name, cfg, train, test, vocab, mode, out));
      }
    } else if (a.study == "bcas") {
      std::vector<LoadedDataset> train = {
          {ablate_dataset(scene_centric_profile(), vocab, a.train_images, 0.5,
                          a.seed, 0),
           0}};
      const auto test = ablate_dataset(
          scene_centric_profile(), vocab, a.test_images, 1.0,
          hash_combine(a.seed, std::string("test")), 0);
      for (const auto kind : {SamplerKind::kRandom, SamplerKind::kBcas}) {
        TrainConfig cfg = base;
        cfg.sampler = kind;
        rows.push_back(ablate_run(to_string(kind), cfg, train, test, vocab,
                                  ProposalSourceMode::kLearnedOnly, out));
      }
    } else {
      throw CLI::ValidationError("--study", "unknown study: " + a.study);
    }

    std::ofstream csv(out);
    if (!csv) throw std::runtime_error("cannot write ablation table: " + out);
    csv << "config,map50,corloc,ar100\n";
    for (const auto& r : rows) {
      csv << r.config << "," << r.map50 << "," << r.corloc << "," << r.ar100
          << "\n";
      std::cout << r.config << ": mAP@0.5 " << r.map50 << ", CorLoc "
                << r.corloc << ", AR@100 " << r.ar100 << "\n";
    }
    std::cout << "table -> " << out << "\n";
    return 0;
  } catch (const CLI::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    return report_error(e);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"weakly supervised open-vocabulary detection, desk scale"};
  app.require_subcommand(1);

  GenArgs gen;
  CLI::App* sub_gen = app.add_subcommand("gen", "generate a synthetic dataset");
  sub_gen->add_option("--out", gen.out, "output jsonl path")->required();
  sub_gen->add_option("--profile", gen.profile, "bias profile")
      ->check(CLI::IsMember({"object_centric", "scene_centric"}));
  sub_gen->add_option("--images", gen.images, "number of images");
  sub_gen->add_option("--categories", gen.categories,
                      "base | all | comma-separated ids");
  sub_gen->add_option("--federated", gen.federated, "label keep probability")
      ->check(CLI::Range(0.0, 1.0));
  sub_gen->add_option("--seed", gen.seed, "generation seed");
  sub_gen->add_option("--dataset-id", gen.dataset_id, "dataset id tag");
  sub_gen->add_flag("--inline-images", gen.inline_images,
                    "embed pixels in the jsonl instead of sibling .bin files");

  TrainArgs train;
  CLI::App* sub_train = app.add_subcommand("train", "train a model");
  sub_train->add_option("--config", train.config_path, "key=value config file");
  sub_train->add_option("--vocab", train.vocab_path, "vocabulary json");
  const std::vector<std::pair<std::string, std::string>> train_flags = {
      {"--data", "data"},
      {"--epochs", "epochs"},
      {"--batch-size", "batch_size"},
      {"--lr", "lr"},
      {"--momentum", "momentum"},
      {"--weight-decay", "weight_decay"},
      {"--lr-decay", "lr_decay"},
      {"--lr-decay-at", "lr_decay_at"},
      {"--warmup-epochs", "warmup_epochs"},
      {"--sampler", "sampler"},
      {"--seed", "seed"},
      {"--out-ckpt", "out_checkpoint"},
      {"--loss-log", "loss_log"},
      {"--checkpoint-per-epoch", "checkpoint_per_epoch"},
      {"--dafe-on", "dafe_on"},
      {"--proposal-source", "proposal_source"},
      {"--infer-source", "infer_source"},
      {"--refine-branches", "refine_branches"},
      {"--max-proposals", "max_proposals"},
      {"--tau", "tau"},
      {"--dropout", "dropout"},
      {"--stride", "stride"},
      {"--d-feat", "d_feat"},
      {"--d", "d"},
      {"--rpn-width", "rpn_width"},
      {"--oracle-grid", "oracle_grid"},
      {"--oracle-jitter", "oracle_jitter"},
      {"--embed-seed", "embed_seed"}};
  for (const auto& [flag, key] : train_flags) {
    const std::string k = key;
    sub_train->add_option_function<std::string>(
        flag,
        [&train, k](const std::string& v) { train.overrides.push_back({k, v}); },
        "train config key " + key);
  }
  sub_train->add_flag_callback(
      "--dafe-off", [&train] { train.overrides.push_back({"dafe_on", "false"}); },
      "disable the data-aware feature extractor");

  EvalArgs eval;
  CLI::App* sub_eval = app.add_subcommand("eval", "evaluate a checkpoint");
  sub_eval->add_option("--ckpt", eval.ckpt, "checkpoint json")->required();
  sub_eval->add_option("--data", eval.data, "dataset jsonl (repeatable)")
      ->required();
  sub_eval->add_option("--vocab", eval.vocab_path, "vocabulary json");
  sub_eval->add_option("--split", eval.split, "summary split")
      ->check(CLI::IsMember({"base", "novel", "all"}));
  sub_eval->add_option("--out", eval.out, "report path prefix");
  sub_eval->add_option("--infer-source", eval.infer_source,
                       "override the checkpoint's inference proposal source")
      ->check(CLI::IsMember({"learned", "segmenter", "merged"}));

  AblateArgs ablate;
  CLI::App* sub_ablate = app.add_subcommand("ablate", "run a paired ablation");
  sub_ablate->add_option("--study", ablate.study, "dafe | proposals | bcas")
      ->required()
      ->check(CLI::IsMember({"dafe", "proposals", "bcas"}));
  sub_ablate->add_option("--out", ablate.out, "comparison csv path");
  sub_ablate->add_option("--seed", ablate.seed, "shared seed");
  sub_ablate->add_option("--train-images", ablate.train_images,
                         "training images per study");
  sub_ablate->add_option("--test-images", ablate.test_images, "test images");
  sub_ablate->add_option("--epochs", ablate.epochs, "training epochs");

  GradcheckArgs gradcheck;
  CLI::App* sub_gc =
      app.add_subcommand("gradcheck", "finite-difference gradient check");
  sub_gc->add_option("--seed", gradcheck.seed, "instance seed");
  sub_gc->add_option("--tol", gradcheck.tol, "max relative error");
  sub_gc
      ->add_option("--corrupt", gradcheck.corrupt,
                   "fault injection: tensor,coord,delta")
      ->group("");  // hidden test hook

  RecallArgs recall;
  CLI::App* sub_recall =
      app.add_subcommand("recall", "proposal average-recall table");
  sub_recall->add_option("--ckpt", recall.ckpt, "checkpoint json")->required();
  sub_recall->add_option("--data", recall.data, "dataset jsonl (repeatable)")
      ->required();
  sub_recall->add_option("--vocab", recall.vocab_path, "vocabulary json");
  sub_recall->add_option("--out", recall.out, "csv path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  if (sub_gen->parsed()) return cmd_gen(gen);
  if (sub_train->parsed()) return cmd_train(train);
  if (sub_eval->parsed()) return cmd_eval(eval);
  if (sub_ablate->parsed()) return cmd_ablate(ablate);
  if (sub_gc->parsed()) return cmd_gradcheck(gradcheck);
  return cmd_recall(recall);
}
