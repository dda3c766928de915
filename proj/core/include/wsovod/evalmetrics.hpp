#pragma once

#include <map>
#include <string>
#include <vector>

#include "wsovod/geometry.hpp"
#include "wsovod/milheads.hpp"
#include "wsovod/synthdata.hpp"

namespace wsovod {

struct GroundTruthBox {
  std::size_t image_id = 0;
  Box box;
  std::size_t category = 0;
};

enum class ApInterpolation { kAllPoints, kElevenPoint };

// CorLoc: per category, the fraction of images containing it whose
// top-confidence detection of that category has IoU >= 0.5 with some GT of
// that category; mean over categories with at least one image.
double corloc(const std::vector<Detection>& detections,
              const std::vector<GroundTruthBox>& ground_truth,
              double iou_thr = 0.5);

// Pascal-VOC-style AP per category; greedy matching, each GT used once.
std::map<std::size_t, double> voc_ap(const std::vector<Detection>& detections,
                                     const std::vector<GroundTruthBox>& ground_truth,
                                     double iou_thr,
                                     ApInterpolation interp = ApInterpolation::kAllPoints);

double mean_ap(const std::map<std::size_t, double>& per_category);
// Restricted to a category subset; empty subset -> -1 (no value).
double mean_ap(const std::map<std::size_t, double>& per_category,
               const std::vector<std::size_t>& categories);

// mean of all-points voc_ap over IoU 0.50:0.05:0.95
double ap_range(const std::vector<Detection>& detections,
                const std::vector<GroundTruthBox>& ground_truth);

// AR@N over an IoU grid; proposals given per image, scored.
struct ScoredBoxes {
  std::vector<Box> boxes;
  std::vector<double> scores;
};
double avg_recall(const std::vector<ScoredBoxes>& proposals_per_image,
                  const std::vector<GroundTruthBox>& ground_truth, std::size_t n,
                  const std::vector<double>& iou_thrs);
std::vector<double> default_ar_grid();  // 0.50:0.05:0.95

struct MetricReport {
  std::map<std::size_t, double> per_category_ap;
  double map50 = 0;
  double corloc = 0;
  double ap_range = 0;
  std::map<std::size_t, double> ar_at;  // N -> AR
  double ap_base = -1, ap_novel = -1, ap_all = -1;
};

MetricReport evaluate_detections(const std::vector<Detection>& detections,
                                 const std::vector<GroundTruthBox>& ground_truth,
                                 const Vocabulary& vocab);

void write_report_csv(const MetricReport& r, const Vocabulary& vocab,
                      const std::string& path);
void write_report_json(const MetricReport& r, const Vocabulary& vocab,
                       const std::string& path);
std::string format_report(const MetricReport& r, const Vocabulary& vocab);

std::vector<GroundTruthBox> collect_ground_truth(
    const std::vector<ImageRecord>& records);

}  // namespace wsovod
