#include "tad/eval.hpp"

#include "tad/errors.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>

namespace tad {

namespace {

double interval_iou(double s1, double e1, double s2, double e2) {
  const double inter = std::min(e1, e2) - std::max(s1, s2);
  if (inter <= 0.0) return 0.0;
  const double uni = (e1 - s1) + (e2 - s2) - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

// all-point interpolated AP over the ranked TP/FP flags
double average_precision(const std::vector<bool>& is_tp, std::size_t n_gt) {
  if (is_tp.empty()) return 0.0;
  std::vector<double> prec(is_tp.size()), rec(is_tp.size());
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < is_tp.size(); ++i) {
    ++(is_tp[i] ? tp : fp);
    prec[i] = static_cast<double>(tp) / static_cast<double>(tp + fp);
    rec[i] = static_cast<double>(tp) / static_cast<double>(n_gt);
  }
  for (std::size_t i = prec.size() - 1; i-- > 0;)
    prec[i] = std::max(prec[i], prec[i + 1]);
  double ap = 0.0, prev_rec = 0.0;
  for (std::size_t i = 0; i < prec.size(); ++i) {
    if (rec[i] > prev_rec) {
      ap += (rec[i] - prev_rec) * prec[i];
      prev_rec = rec[i];
    }
  }
  return ap;
}

void format_cell(std::string& row, double v) {
  char buf[32];
  if (v < 0.0)
    std::snprintf(buf, sizeof(buf), "%9s", "-");
  else
    std::snprintf(buf, sizeof(buf), "%9.4f", v);
  row += buf;
}

}  // namespace

std::vector<double> default_tiou_thresholds() { return {0.3, 0.4, 0.5, 0.6, 0.7}; }

EvalReport evaluate_map(const std::vector<DetectionRecord>& detections,
                        const std::vector<EvalGroundTruth>& gts,
                        const std::vector<double>& thresholds,
                        std::size_t n_classes) {
  if (n_classes == 0) throw ValueError("evaluate_map: n_classes must be >= 1");
  if (thresholds.empty()) throw ValueError("evaluate_map: need at least one threshold");
  for (double t : thresholds)
    if (!(t > 0.0) || t > 1.0)
      throw ValueError("evaluate_map: thresholds must lie in (0, 1]");
  for (const auto& g : gts) {
    if (g.class_id < 0 || static_cast<std::size_t>(g.class_id) >= n_classes)
      throw ValueError("evaluate_map: ground-truth class id out of range");
    if (!(g.end_s > g.start_s))
      throw ValueError("evaluate_map: ground-truth segment must have positive length");
  }
  for (const auto& d : detections)
    if (d.class_id < 0 || static_cast<std::size_t>(d.class_id) >= n_classes)
      throw ValueError("evaluate_map: detection class id out of range");

  // per class: detections ranked by score, ground truths grouped by video
  std::vector<std::vector<const DetectionRecord*>> dets_by_class(n_classes);
  for (const auto& d : detections)
    dets_by_class[static_cast<std::size_t>(d.class_id)].push_back(&d);
  for (auto& dets : dets_by_class)
    std::sort(dets.begin(), dets.end(),
              [](const DetectionRecord* a, const DetectionRecord* b) {
                if (a->score != b->score) return a->score > b->score;
                if (a->video_id != b->video_id) return a->video_id < b->video_id;
                if (a->start_s != b->start_s) return a->start_s < b->start_s;
                return a->end_s < b->end_s;
              });
  std::vector<std::map<std::string, std::vector<const EvalGroundTruth*>>>
      gts_by_class(n_classes);
  std::vector<std::size_t> n_gt(n_classes, 0);
  for (const auto& g : gts) {
    gts_by_class[static_cast<std::size_t>(g.class_id)][g.video_id].push_back(&g);
    ++n_gt[static_cast<std::size_t>(g.class_id)];
  }

  EvalReport report;
  report.thresholds = thresholds;
  report.n_gts = gts.size();
  report.n_detections = detections.size();
  report.n_classes = n_classes;
  report.has_gt = !gts.empty();
  report.ap.assign(thresholds.size(), std::vector<double>(n_classes, -1.0));
  report.map_per_threshold.assign(thresholds.size(), -1.0);

  for (std::size_t ti = 0; ti < thresholds.size(); ++ti) {
    const double thr = thresholds[ti];
    for (std::size_t c = 0; c < n_classes; ++c) {
      if (n_gt[c] == 0) continue;
      std::map<const EvalGroundTruth*, bool> used;
      std::vector<bool> is_tp;
      is_tp.reserve(dets_by_class[c].size());
      for (const DetectionRecord* d : dets_by_class[c]) {
        const EvalGroundTruth* best = nullptr;
        double best_iou = 0.0;
        auto it = gts_by_class[c].find(d->video_id);
        if (it != gts_by_class[c].end()) {
          for (const EvalGroundTruth* g : it->second) {
            if (used[g]) continue;
            const double v = interval_iou(d->start_s, d->end_s, g->start_s, g->end_s);
            if (v > best_iou) {  // ties keep the earliest ground truth
              best_iou = v;
              best = g;
            }
          }
        }
        if (best != nullptr && best_iou >= thr) {
          used[best] = true;
          is_tp.push_back(true);
        } else {
          is_tp.push_back(false);
        }
      }
      report.ap[ti][c] = average_precision(is_tp, n_gt[c]);
    }
    double sum = 0.0;
    std::size_t counted = 0;
    for (std::size_t c = 0; c < n_classes; ++c) {
      if (n_gt[c] == 0) continue;
      sum += report.ap[ti][c];
      ++counted;
    }
    if (counted > 0) report.map_per_threshold[ti] = sum / static_cast<double>(counted);
  }

  if (report.has_gt) {
    double sum = 0.0;
    for (double m : report.map_per_threshold) sum += m;
    report.average_map = sum / static_cast<double>(thresholds.size());
  }
  return report;
}

std::string EvalReport::to_json() const {
  nlohmann::json j;
  j["thresholds"] = thresholds;
  j["ap"] = ap;
  j["map_per_threshold"] = map_per_threshold;
  j["average_map"] = average_map;
  j["has_gt"] = has_gt;
  j["n_gts"] = n_gts;
  j["n_detections"] = n_detections;
  j["n_classes"] = n_classes;
  return j.dump(2);
}

EvalReport EvalReport::from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ValueError(std::string("report: invalid JSON: ") + e.what());
  }
  EvalReport r;
  try {
    r.thresholds = j.at("thresholds").get<std::vector<double>>();
    r.ap = j.at("ap").get<std::vector<std::vector<double>>>();
    r.map_per_threshold = j.at("map_per_threshold").get<std::vector<double>>();
    r.average_map = j.at("average_map").get<double>();
    r.has_gt = j.at("has_gt").get<bool>();
    r.n_gts = j.at("n_gts").get<std::size_t>();
    r.n_detections = j.at("n_detections").get<std::size_t>();
    r.n_classes = j.at("n_classes").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw ValueError(std::string("report: missing or mistyped field: ") + e.what());
  }
  if (r.ap.size() != r.thresholds.size() ||
      r.map_per_threshold.size() != r.thresholds.size())
    throw ValueError("report: ap/map tables do not match the threshold list");
  for (const auto& row : r.ap)
    if (row.size() != r.n_classes)
      throw ValueError("report: ap row does not match n_classes");
  return r;
}

std::string EvalReport::to_table() const {
  std::string out = "tIoU     ";
  char buf[32];
  for (double t : thresholds) {
    std::snprintf(buf, sizeof(buf), "%9.2f", t);
    out += buf;
  }
  out += "     Avg.\n";
  for (std::size_t c = 0; c < n_classes; ++c) {
    std::snprintf(buf, sizeof(buf), "class %-3zu", c);
    out += buf;
    double sum = 0.0;
    bool any = true;
    for (std::size_t ti = 0; ti < thresholds.size(); ++ti) {
      format_cell(out, ap[ti][c]);
      if (ap[ti][c] < 0.0) any = false;
      sum += ap[ti][c];
    }
    format_cell(out, any ? sum / static_cast<double>(thresholds.size()) : -1.0);
    out += '\n';
  }
  out += "mAP      ";
  for (double m : map_per_threshold) format_cell(out, m);
  format_cell(out, average_map);
  out += '\n';
  if (!has_gt) out += "(no ground truth: metrics are undefined)\n";
  return out;
}

}  // namespace tad
