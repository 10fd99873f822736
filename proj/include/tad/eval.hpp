#pragma once

#include "tad/detection.hpp"

#include <cstddef>
#include <string>
#include <vector>

namespace tad {

struct EvalGroundTruth {
  std::string video_id;
  double start_s = 0.0;
  double end_s = 0.0;
  int class_id = 0;
};

// Per-class AP at each tIoU threshold plus the derived means. Classes with
// no ground truth carry the marker -1 and are excluded from every mean; a
// run with no ground truth at all sets has_gt = false and markers everywhere
// instead of reporting a silent zero.
struct EvalReport {
  std::vector<double> thresholds;
  std::vector<std::vector<double>> ap;  // [threshold][class], -1 = no ground truth
  std::vector<double> map_per_threshold;
  double average_map = -1.0;
  bool has_gt = false;
  std::size_t n_gts = 0;
  std::size_t n_detections = 0;
  std::size_t n_classes = 0;

  std::string to_json() const;
  std::string to_table() const;
  // Inverse of to_json (the `report` subcommand re-renders saved reports).
  static EvalReport from_json(const std::string& text);
};

std::vector<double> default_tiou_thresholds();  // {0.3, 0.4, 0.5, 0.6, 0.7}

// Greedy interval detection metric: per class and threshold, detections in
// descending score order claim the highest-IoU unmatched ground truth of the
// same video; a claim counts as a true positive when that IoU reaches the
// threshold. AP integrates the all-point interpolated precision envelope,
// and mAP averages over classes that have ground truth.
EvalReport evaluate_map(const std::vector<DetectionRecord>& detections,
                        const std::vector<EvalGroundTruth>& gts,
                        const std::vector<double>& thresholds,
                        std::size_t n_classes);

}  // namespace tad
