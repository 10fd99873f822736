#include "tad/detection.hpp"

#include "tad/errors.hpp"
#include "tad/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <utility>

namespace tad {

namespace {

double interval_iou(const DetectionRecord& a, const DetectionRecord& b) {
  const double inter =
      std::min(a.end_s, b.end_s) - std::max(a.start_s, b.start_s);
  if (inter <= 0.0) return 0.0;
  const double uni = (a.end_s - a.start_s) + (b.end_s - b.start_s) - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

}  // namespace

void InferConfig::validate() const {
  if (sigma <= 0.0) throw ConfigError("sigma must be positive");
  if (top_n < 1) throw ConfigError("top_n must be >= 1");
  if (score_floor < 0.0) throw ConfigError("score_floor must be >= 0");
  if (prune < 0.0) throw ConfigError("prune must be >= 0");
  if (snippet_seconds <= 0.0) throw ConfigError("snippet_seconds must be positive");
}

std::vector<DetectionRecord> score_detections(const Array& cls_logits,
                                              const Array& segments,
                                              const Array& quality,
                                              const WindowRef& window,
                                              const InferConfig& cfg) {
  const std::size_t lq = cls_logits.rows, c = cls_logits.cols;
  if (segments.rows != lq || segments.cols != 2 || quality.rows != lq ||
      quality.cols != 2)
    throw ShapeError("score_detections: rows must align, segments/quality [L x 2]");
  if (window.length < 2)
    throw ValueError("score_detections: window must span at least two snippets");

  struct Scored {
    double score;
    std::size_t query;
    std::size_t cls;
  };
  std::vector<Scored> scored;
  for (std::size_t q = 0; q < lq; ++q) {
    const double zeta =
        std::clamp(quality.at(q, 0) * quality.at(q, 1), 0.0, 1.0);
    for (std::size_t k = 0; k < c; ++k) {
      const double p = 1.0 / (1.0 + std::exp(-cls_logits.at(q, k)));
      const double s = std::clamp(p * zeta, 0.0, 1.0);
      if (s > cfg.score_floor) scored.push_back({s, q, k});
    }
  }
  std::sort(scored.begin(), scored.end(), [](const Scored& a, const Scored& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.query != b.query) return a.query < b.query;
    return a.cls < b.cls;
  });
  if (scored.size() > cfg.top_n) scored.resize(cfg.top_n);

  const double span = static_cast<double>(window.length - 1);
  std::vector<DetectionRecord> out;
  out.reserve(scored.size());
  for (const auto& s : scored) {
    const TemporalSegment seg{segments.at(s.query, 0), segments.at(s.query, 1)};
    // the window saw nothing outside itself, so segments are clamped to it
    const double ws = seg.clamped_start(), we = seg.clamped_end();
    if (we <= ws) continue;
    DetectionRecord rec;
    rec.video_id = window.video_id;
    rec.start_s =
        (static_cast<double>(window.origin) + ws * span) * cfg.snippet_seconds;
    rec.end_s =
        (static_cast<double>(window.origin) + we * span) * cfg.snippet_seconds;
    rec.class_id = static_cast<int>(s.cls);
    rec.score = s.score;
    out.push_back(std::move(rec));
  }
  return out;
}

std::vector<DetectionRecord> soft_nms(std::vector<DetectionRecord> records,
                                      const InferConfig& cfg) {
  std::vector<DetectionRecord> out;
  out.reserve(records.size());
  while (!records.empty()) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < records.size(); ++i)
      if (records[i].score > records[best].score) best = i;
    if (records[best].score < cfg.prune) break;
    out.push_back(records[best]);
    records.erase(records.begin() + static_cast<std::ptrdiff_t>(best));
    for (auto& r : records) {
      const double v = interval_iou(out.back(), r);
      r.score *= std::exp(-(v * v) / cfg.sigma);
    }
  }
  return out;
}

std::vector<DetectionRecord> merge_windows(
    const std::vector<std::vector<DetectionRecord>>& per_window,
    const InferConfig& cfg) {
  std::map<std::pair<std::string, int>, std::vector<DetectionRecord>> groups;
  for (const auto& window : per_window)
    for (const auto& rec : window)
      groups[{rec.video_id, rec.class_id}].push_back(rec);

  std::vector<DetectionRecord> out;
  for (auto& [key, records] : groups) {
    auto kept = soft_nms(std::move(records), cfg);
    out.insert(out.end(), kept.begin(), kept.end());
  }
  std::sort(out.begin(), out.end(),
            [](const DetectionRecord& a, const DetectionRecord& b) {
              if (a.video_id != b.video_id) return a.video_id < b.video_id;
              if (a.score != b.score) return a.score > b.score;
              if (a.class_id != b.class_id) return a.class_id < b.class_id;
              return a.start_s < b.start_s;
            });
  return out;
}

void write_detections(std::ostream& out, const std::vector<DetectionRecord>& records) {
  out << "video_id\tstart_s\tend_s\tclass_id\tscore\n";
  char buf[160];
  for (const auto& r : records) {
    std::snprintf(buf, sizeof(buf), "\t%.6f\t%.6f\t%d\t%.6f\n", r.start_s, r.end_s,
                  r.class_id, r.score);
    out << r.video_id << buf;
  }
}

void write_detections(const std::string& path,
                      const std::vector<DetectionRecord>& records) {
  std::ofstream out(path, std::ios::binary);  // binary: no platform newline games
  if (!out) throw ValueError("cannot open for writing: " + path);
  write_detections(out, records);
}

std::vector<DetectionRecord> read_detections(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != "video_id\tstart_s\tend_s\tclass_id\tscore")
    throw ValueError("detection file: missing or malformed header");
  std::vector<DetectionRecord> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    DetectionRecord r;
    std::string start, end, cls, score;
    if (!std::getline(ss, r.video_id, '\t') || !std::getline(ss, start, '\t') ||
        !std::getline(ss, end, '\t') || !std::getline(ss, cls, '\t') ||
        !std::getline(ss, score, '\t'))
      throw ValueError("detection file: malformed line: " + line);
    try {
      r.start_s = std::stod(start);
      r.end_s = std::stod(end);
      r.class_id = std::stoi(cls);
      r.score = std::stod(score);
    } catch (const std::exception&) {
      throw ValueError("detection file: unparsable numbers in line: " + line);
    }
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<DetectionRecord> read_detections(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValueError("cannot open for reading: " + path);
  return read_detections(in);
}

}  // namespace tad
