#pragma once

#include "tad/array.hpp"
#include "tad/ndgrad.hpp"

#include <cstddef>
#include <utility>
#include <vector>

namespace tad {

// Interval in window-normalized time, stored as (midpoint, duration). The
// raw pair may stick out of [0,1] during refinement; geometry always works on
// the view clamped to the window, regression targets on the raw values.
struct TemporalSegment {
  double m = 0.0;
  double d = 0.0;

  double start() const { return m - d / 2.0; }
  double end() const { return m + d / 2.0; }
  double clamped_start() const { return start() < 0.0 ? 0.0 : start(); }
  double clamped_end() const { return end() > 1.0 ? 1.0 : end(); }

  static TemporalSegment from_endpoints(double s, double e) {
    return {(s + e) / 2.0, e - s};
  }
};

struct GroundTruthAction {
  TemporalSegment segment;
  int class_id = 0;
};

// ---- scalar (non-differentiable) geometry ----------------------------------

double iou(const TemporalSegment& a, const TemporalSegment& b);
double giou(const TemporalSegment& a, const TemporalSegment& b);

Array pairwise_iou(const std::vector<TemporalSegment>& segs);     // [L x L]
Array pairwise_cosine(const Array& features, double eps = 1e-8);  // [L x L]

// ---- differentiable geometry -------------------------------------------------
// a and b are [M x 2] (m, d) rows; results are [M x 1], one value per row pair.
// Gradients flow into both operands; zero where the clamp or disjointness
// flattens the function.

Var iou_pairs(Var a, Var b);
Var giou_pairs(Var a, Var b);

// Mean of `bins` equally spaced interpolated samples spanning the clamped
// segment -> [1 x D]. Degenerate segments (< one frame after clamping) sample
// the nearest single position `bins` times.
Var roi_pool(Var features, const TemporalSegment& seg, std::size_t bins);

// ---- coordinate maps ------------------------------------------------------------

// Raw endpoints mapped by t_frame = t_norm * (T-1); exact affine round-trip.
std::pair<double, double> segment_to_frame_coords(const TemporalSegment& seg,
                                                  std::size_t t);
TemporalSegment segment_from_frame_coords(double start_frame, double end_frame,
                                          std::size_t t);

}  // namespace tad
