#include "wsovod/evalmetrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include <json.hpp>

namespace wsovod {

namespace {
std::vector<std::size_t> sort_by_confidence(const std::vector<Detection>& dets,
                                            const std::vector<std::size_t>& idx) {
  std::vector<std::size_t> order = idx;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (dets[a].confidence != dets[b].confidence)
      return dets[a].confidence > dets[b].confidence;
    return a < b;
  });
  return order;
}

double ap_from_pr(const std::vector<double>& precision,
                  const std::vector<double>& recall, ApInterpolation interp) {
  if (interp == ApInterpolation::kElevenPoint) {
    double sum = 0;
    for (int i = 0; i <= 10; ++i) {
      const double t = double(i) / 10.0;
      double pmax = 0;
      for (std::size_t k = 0; k < recall.size(); ++k)
        if (recall[k] >= t) pmax = std::max(pmax, precision[k]);
      sum += pmax;
    }
    return sum / 11.0;
  }
  // all-points: integrate the monotone precision envelope
  std::vector<double> mrec{0.0};
  mrec.insert(mrec.end(), recall.begin(), recall.end());
  mrec.push_back(recall.empty() ? 0.0 : recall.back());
  std::vector<double> mpre{0.0};
  mpre.insert(mpre.end(), precision.begin(), precision.end());
  mpre.push_back(0.0);
  for (std::size_t i = mpre.size() - 1; i > 0; --i)
    mpre[i - 1] = std::max(mpre[i - 1], mpre[i]);
  double ap = 0;
  for (std::size_t i = 1; i < mrec.size(); ++i)
    ap += (mrec[i] - mrec[i - 1]) * mpre[i];
  return ap;
}
}  // namespace

std::map<std::size_t, double> voc_ap(const std::vector<Detection>& detections,
                                     const std::vector<GroundTruthBox>& ground_truth,
                                     double iou_thr, ApInterpolation interp) {
  std::set<std::size_t> categories;
  for (const auto& g : ground_truth) categories.insert(g.category);

  std::map<std::size_t, double> out;
  for (std::size_t cat : categories) {
    // GT of this category grouped by image, with a matched flag
    std::map<std::size_t, std::vector<std::size_t>> gt_by_image;
    std::vector<char> matched(ground_truth.size(), 0);
    std::size_t npos = 0;
    for (std::size_t g = 0; g < ground_truth.size(); ++g)
      if (ground_truth[g].category == cat) {
        gt_by_image[ground_truth[g].image_id].push_back(g);
        ++npos;
      }
    std::vector<std::size_t> det_idx;
    for (std::size_t d = 0; d < detections.size(); ++d)
      if (detections[d].category == cat) det_idx.push_back(d);
    const auto order = sort_by_confidence(detections, det_idx);

    std::vector<double> precision, recall;
    std::size_t tp = 0, fp = 0;
    for (std::size_t d : order) {
      const auto it = gt_by_image.find(detections[d].image_id);
      long best_g = -1;
      double best_iou = 0;
      if (it != gt_by_image.end()) {
        for (std::size_t g : it->second) {
          if (matched[g]) continue;
          const double v = iou(detections[d].box, ground_truth[g].box);
          if (v >= iou_thr && v > best_iou) {
            best_iou = v;
            best_g = long(g);
          }
        }
      }
      if (best_g >= 0) {
        matched[std::size_t(best_g)] = 1;
        ++tp;
      } else {
        ++fp;
      }
      precision.push_back(double(tp) / double(tp + fp));
      recall.push_back(npos ? double(tp) / double(npos) : 0.0);
    }
    out[cat] = ap_from_pr(precision, recall, interp);
  }
  return out;
}

double mean_ap(const std::map<std::size_t, double>& per_category) {
  if (per_category.empty()) return 0.0;
  double s = 0;
  for (const auto& [c, ap] : per_category) s += ap;
  return s / double(per_category.size());
}

double mean_ap(const std::map<std::size_t, double>& per_category,
               const std::vector<std::size_t>& categories) {
  double s = 0;
  std::size_t n = 0;
  for (std::size_t c : categories) {
    const auto it = per_category.find(c);
    if (it == per_category.end()) continue;
    s += it->second;
    ++n;
  }
  return n ? s / double(n) : -1.0;
}

double corloc(const std::vector<Detection>& detections,
              const std::vector<GroundTruthBox>& ground_truth, double iou_thr) {
  std::set<std::size_t> categories;
  for (const auto& g : ground_truth) categories.insert(g.category);
  double sum = 0;
  std::size_t n_cat = 0;
  for (std::size_t cat : categories) {
    std::set<std::size_t> images;
    for (const auto& g : ground_truth)
      if (g.category == cat) images.insert(g.image_id);
    if (images.empty()) continue;
    std::size_t hits = 0;
    for (std::size_t img : images) {
      long top = -1;
      for (std::size_t d = 0; d < detections.size(); ++d) {
        if (detections[d].category != cat || detections[d].image_id != img) continue;
        if (top < 0 ||
            detections[d].confidence > detections[std::size_t(top)].confidence)
          top = long(d);
      }
      if (top < 0) continue;
      for (const auto& g : ground_truth)
        if (g.category == cat && g.image_id == img &&
            iou(detections[std::size_t(top)].box, g.box) >= iou_thr) {
          ++hits;
          break;
        }
    }
    sum += double(hits) / double(images.size());
    ++n_cat;
  }
  return n_cat ? sum / double(n_cat) : 0.0;
}

double ap_range(const std::vector<Detection>& detections,
                const std::vector<GroundTruthBox>& ground_truth) {
  double sum = 0;
  for (int i = 0; i < 10; ++i) {
    const double thr = 0.5 + 0.05 * i;
    sum += mean_ap(voc_ap(detections, ground_truth, thr, ApInterpolation::kAllPoints));
  }
  return sum / 10.0;
}

std::vector<double> default_ar_grid() {
  std::vector<double> g;
  for (int i = 0; i < 10; ++i) g.push_back(0.5 + 0.05 * i);
  return g;
}

namespace {
// maximum bipartite matching between proposals and GT at an IoU threshold
std::size_t max_matching(const std::vector<Box>& props,
                         const std::vector<const GroundTruthBox*>& gts,
                         double thr) {
  std::vector<long> match_gt(gts.size(), -1);
  std::function<bool(std::size_t, std::vector<char>&)> try_assign =
      [&](std::size_t p, std::vector<char>& visited) {
        for (std::size_t g = 0; g < gts.size(); ++g) {
          if (visited[g] || iou(props[p], gts[g]->box) < thr) continue;
          visited[g] = 1;
          if (match_gt[g] < 0 || try_assign(std::size_t(match_gt[g]), visited)) {
            match_gt[g] = long(p);
            return true;
          }
        }
        return false;
      };
  std::size_t matched = 0;
  for (std::size_t p = 0; p < props.size(); ++p) {
    std::vector<char> visited(gts.size(), 0);
    if (try_assign(p, visited)) ++matched;
  }
  return matched;
}
}  // namespace

double avg_recall(const std::vector<ScoredBoxes>& proposals_per_image,
                  const std::vector<GroundTruthBox>& ground_truth, std::size_t n,
                  const std::vector<double>& iou_thrs) {
  std::size_t total_gt = ground_truth.size();
  if (total_gt == 0) return 0.0;
  double sum = 0;
  for (double thr : iou_thrs) {
    std::size_t covered = 0;
    for (std::size_t img = 0; img < proposals_per_image.size(); ++img) {
      const auto& sp = proposals_per_image[img];
      std::vector<std::size_t> order(sp.boxes.size());
      std::iota(order.begin(), order.end(), std::size_t{0});
      std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (sp.scores[a] != sp.scores[b]) return sp.scores[a] > sp.scores[b];
        return a < b;
      });
      std::vector<Box> top;
      for (std::size_t k = 0; k < std::min(n, order.size()); ++k)
        top.push_back(sp.boxes[order[k]]);
      std::vector<const GroundTruthBox*> gts;
      for (const auto& g : ground_truth)
        if (g.image_id == img) gts.push_back(&g);
      covered += max_matching(top, gts, thr);
    }
    sum += double(covered) / double(total_gt);
  }
  return sum / double(iou_thrs.size());
}

std::vector<GroundTruthBox> collect_ground_truth(
    const std::vector<ImageRecord>& records) {
  std::vector<GroundTruthBox> out;
  for (std::size_t i = 0; i < records.size(); ++i)
    for (const auto& o : records[i].gt)
      out.push_back({i, o.box, o.category});
  return out;
}

MetricReport evaluate_detections(const std::vector<Detection>& detections,
                                 const std::vector<GroundTruthBox>& ground_truth,
                                 const Vocabulary& vocab) {
  MetricReport r;
  r.per_category_ap = voc_ap(detections, ground_truth, 0.5);
  r.map50 = mean_ap(r.per_category_ap);
  r.corloc = corloc(detections, ground_truth);
  r.ap_range = ap_range(detections, ground_truth);
  r.ap_all = r.map50;
  r.ap_base = mean_ap(r.per_category_ap, base_category_ids(vocab));
  r.ap_novel = mean_ap(r.per_category_ap, novel_category_ids(vocab));
  return r;
}

void write_report_csv(const MetricReport& r, const Vocabulary& vocab,
                      const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write report: " + path);
  out << "category,metric,value\n";
  for (const auto& [c, ap] : r.per_category_ap)
    out << vocab.at(c).name << ",ap50," << ap << "\n";
  out << "all,map50," << r.map50 << "\n";
  out << "all,corloc," << r.corloc << "\n";
  out << "all,ap_50_95," << r.ap_range << "\n";
  if (r.ap_base >= 0) out << "base,map50," << r.ap_base << "\n";
  if (r.ap_novel >= 0) out << "novel,map50," << r.ap_novel << "\n";
  for (const auto& [n, ar] : r.ar_at) out << "all,ar_" << n << "," << ar << "\n";
}

void write_report_json(const MetricReport& r, const Vocabulary& vocab,
                       const std::string& path) {
  nlohmann::json per = nlohmann::json::object();
  for (const auto& [c, ap] : r.per_category_ap) per[vocab.at(c).name] = ap;
  nlohmann::json j = {{"per_category_ap50", per},
                      {"map50", r.map50},
                      {"corloc", r.corloc},
                      {"ap_50_95", r.ap_range},
                      {"ap_base", r.ap_base},
                      {"ap_novel", r.ap_novel}};
  for (const auto& [n, ar] : r.ar_at) j["ar"][std::to_string(n)] = ar;
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write report: " + path);
  out << j.dump(2) << "\n";
}

std::string format_report(const MetricReport& r, const Vocabulary& vocab) {
  std::ostringstream os;
  os << "metric        value\n";
  auto row = [&](const std::string& name, double v) {
    os << name;
    for (std::size_t i = name.size(); i < 14; ++i) os << ' ';
    os << v << "\n";
  };
  row("mAP@0.5", r.map50);
  row("CorLoc", r.corloc);
  row("AP@[.5:.95]", r.ap_range);
  if (r.ap_base >= 0) row("AP_base", r.ap_base);
  if (r.ap_novel >= 0) row("AP_novel", r.ap_novel);
  for (const auto& [c, ap] : r.per_category_ap) row("AP " + vocab.at(c).name, ap);
  return os.str();
}

}  // namespace wsovod
