#pragma once

#include "tad/array.hpp"

#include <cstddef>
#include <iosfwd>
#include <string>
#include <vector>

namespace tad {

struct DetectionRecord {
  std::string video_id;
  double start_s = 0.0;
  double end_s = 0.0;
  int class_id = 0;
  double score = 0.0;  // classification probability * zeta1 * zeta2, in [0,1]
};

struct InferConfig {
  double sigma = 0.5;           // Gaussian soft-NMS width
  std::size_t top_n = 100;      // per-window cap before NMS
  double score_floor = 1e-4;    // raw scores below this are never emitted
  double prune = 1e-3;          // decayed scores below this are dropped
  double snippet_seconds = 1.0; // video time per snippet

  void validate() const;  // throws ConfigError
};

// Where a window sits inside its video: snippet `origin`, `length` snippets
// of features (the model's T). Window-normalized coordinates span the first
// (length - 1) snippet steps, matching the windowing renormalization.
struct WindowRef {
  std::string video_id;
  std::size_t origin = 0;
  std::size_t length = 0;
};

// Final-layer outputs -> scored detections for one window. Every (query,
// class) pair scores sigmoid(logit) * zeta1 * zeta2; pairs below the score
// floor are dropped and only the top_n survive.
std::vector<DetectionRecord> score_detections(const Array& cls_logits,
                                              const Array& segments,
                                              const Array& quality,
                                              const WindowRef& window,
                                              const InferConfig& cfg);

// Gaussian soft-NMS over records of one (video, class) group: repeatedly
// select the highest-scoring record, decay the rest by exp(-iou^2 / sigma),
// stop once the best remaining score falls under `prune`.
std::vector<DetectionRecord> soft_nms(std::vector<DetectionRecord> records,
                                      const InferConfig& cfg);

// Concatenate per-window detections and soft-NMS each (video, class) group
// globally; output sorted by video id, then descending score.
std::vector<DetectionRecord> merge_windows(
    const std::vector<std::vector<DetectionRecord>>& per_window,
    const InferConfig& cfg);

// Tab-separated detection file, one record per line after a header line;
// times and scores printed with six decimals.
void write_detections(std::ostream& out, const std::vector<DetectionRecord>& records);
void write_detections(const std::string& path,
                      const std::vector<DetectionRecord>& records);
std::vector<DetectionRecord> read_detections(std::istream& in);
std::vector<DetectionRecord> read_detections(const std::string& path);

}  // namespace tad
