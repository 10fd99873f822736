#include "tad/geometry.hpp"

#include "tad/errors.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace tad {

namespace {

void check_duration(const TemporalSegment& s, const char* op) {
  if (!(s.d > 0.0))
    throw ValueError(std::string(op) + ": non-positive duration " + std::to_string(s.d));
}

struct ClampedPair {
  double inter, uni, hull;
};

ClampedPair overlap(const TemporalSegment& a, const TemporalSegment& b) {
  const double as = a.clamped_start(), ae = a.clamped_end();
  const double bs = b.clamped_start(), be = b.clamped_end();
  const double inter = std::max(0.0, std::min(ae, be) - std::max(as, bs));
  const double uni = (ae - as) + (be - bs) - inter;
  const double hull = std::max(ae, be) - std::min(as, bs);
  return {inter, uni, hull};
}

}  // namespace

double iou(const TemporalSegment& a, const TemporalSegment& b) {
  check_duration(a, "iou");
  check_duration(b, "iou");
  const auto o = overlap(a, b);
  return o.uni > 0.0 ? o.inter / o.uni : 0.0;
}

double giou(const TemporalSegment& a, const TemporalSegment& b) {
  check_duration(a, "giou");
  check_duration(b, "giou");
  const auto o = overlap(a, b);
  const double i = o.uni > 0.0 ? o.inter / o.uni : 0.0;
  return o.hull > 0.0 ? i - (o.hull - o.uni) / o.hull : i;
}

Array pairwise_iou(const std::vector<TemporalSegment>& segs) {
  if (segs.empty()) throw ValueError("pairwise_iou: empty segment list");
  const std::size_t n = segs.size();
  Array out(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    out.at(i, i) = 1.0;
    for (std::size_t j = i + 1; j < n; ++j) {
      const double v = iou(segs[i], segs[j]);
      out.at(i, j) = v;
      out.at(j, i) = v;
    }
  }
  return out;
}

Array pairwise_cosine(const Array& features, double eps) {
  const std::size_t n = features.rows, d = features.cols;
  Array norm(n, 1);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) s += features.at(i, j) * features.at(i, j);
    norm.data[i] = std::max(std::sqrt(s), eps);
  }
  Array out(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    out.at(i, i) = 1.0;
    for (std::size_t j = i + 1; j < n; ++j) {
      double dot = 0.0;
      for (std::size_t k = 0; k < d; ++k) dot += features.at(i, k) * features.at(j, k);
      const double v = dot / (norm.data[i] * norm.data[j]);
      out.at(i, j) = v;
      out.at(j, i) = v;
    }
  }
  return out;
}

namespace {

struct DiffEndpoints {
  Var cs, ce, len;
};

// Clamped endpoints of [M x 2] (m, d) rows, as [M x 1] columns.
DiffEndpoints endpoints(Var segs) {
  Var m = slice_cols(segs, 0, 1);
  Var d = slice_cols(segs, 1, 2);
  Var half = mul_const(d, 0.5);
  Var cs = clamp(sub(m, half), 0.0, 1.0);
  Var ce = clamp(add(m, half), 0.0, 1.0);
  return {cs, ce, sub(ce, cs)};
}

Var floor_at(Var x, double tiny) {
  Tape& t = *x.tape();
  return maximum(x, t.constant(Array(x.rows(), x.cols(), tiny)));
}

}  // namespace

Var iou_pairs(Var a, Var b) {
  if (a.cols() != 2 || b.cols() != 2 || a.rows() != b.rows())
    throw ShapeError("iou_pairs: want matching [M x 2] operands");
  const auto ea = endpoints(a);
  const auto eb = endpoints(b);
  Var inter = relu(sub(minimum(ea.ce, eb.ce), maximum(ea.cs, eb.cs)));
  Var uni = sub(add(ea.len, eb.len), inter);
  return div(inter, floor_at(uni, 1e-12));
}

Var giou_pairs(Var a, Var b) {
  if (a.cols() != 2 || b.cols() != 2 || a.rows() != b.rows())
    throw ShapeError("giou_pairs: want matching [M x 2] operands");
  const auto ea = endpoints(a);
  const auto eb = endpoints(b);
  Var inter = relu(sub(minimum(ea.ce, eb.ce), maximum(ea.cs, eb.cs)));
  Var uni = sub(add(ea.len, eb.len), inter);
  Var hull = sub(maximum(ea.ce, eb.ce), minimum(ea.cs, eb.cs));
  Var i = div(inter, floor_at(uni, 1e-12));
  return sub(i, div(sub(hull, uni), floor_at(hull, 1e-12)));
}

Var roi_pool(Var features, const TemporalSegment& seg, std::size_t bins) {
  if (bins < 1) throw ValueError("roi_pool: bins must be >= 1");
  const std::size_t t = features.rows();
  if (t < 1) throw ShapeError("roi_pool: empty feature matrix");
  const double top = static_cast<double>(t - 1);
  const double fs = seg.clamped_start() * top;
  const double fe = seg.clamped_end() * top;

  Array pos(bins, 1);
  if (fe - fs < 1.0) {
    // Degenerate after clamping: pin all samples to the nearest position.
    const double p = std::clamp((fs + fe) / 2.0, 0.0, top);
    for (std::size_t i = 0; i < bins; ++i) pos.data[i] = p;
  } else if (bins == 1) {
    pos.data[0] = (fs + fe) / 2.0;
  } else {
    for (std::size_t i = 0; i < bins; ++i)
      pos.data[i] = fs + (fe - fs) * static_cast<double>(i) / static_cast<double>(bins - 1);
  }
  Var samples = interp_rows(features, features.tape()->constant(std::move(pos)));
  return mean_rows(samples);
}

std::pair<double, double> segment_to_frame_coords(const TemporalSegment& seg,
                                                  std::size_t t) {
  if (t < 2) throw ValueError("segment_to_frame_coords: need T >= 2");
  const double top = static_cast<double>(t - 1);
  return {seg.start() * top, seg.end() * top};
}

TemporalSegment segment_from_frame_coords(double start_frame, double end_frame,
                                          std::size_t t) {
  if (t < 2) throw ValueError("segment_from_frame_coords: need T >= 2");
  const double top = static_cast<double>(t - 1);
  return TemporalSegment::from_endpoints(start_frame / top, end_frame / top);
}

}  // namespace tad
