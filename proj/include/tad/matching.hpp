#pragma once

#include "tad/array.hpp"
#include "tad/geometry.hpp"

#include <cstddef>
#include <utility>
#include <vector>

namespace tad {

struct MatchWeights {
  double l1 = 5.0;
  double iou = 2.0;
  double cls = 2.0;
};

// Pairwise assignment cost between predictions and ground truths:
//   cost(j,k) = w_l1*(|m_j-m_k| + |d_j-d_k|) - w_iou*iou(s_j,s_k) - w_cls*p_j(c_k)
// `prob` holds per-class sigmoid probabilities [L_q x C], `segments` the
// final-layer refined (m,d) [L_q x 2]. Returns [L_q x K_gt]; plain values,
// matching never backpropagates.
Array match_cost_matrix(const Array& prob, const Array& segments,
                        const std::vector<GroundTruthAction>& gt,
                        const MatchWeights& w = {});

struct MatchResult {
  // (query index, gt index), ordered by gt index; every gt appears once
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  std::vector<std::size_t> unmatched;  // ascending query indices

  std::size_t query_of(std::size_t gt) const { return pairs[gt].first; }
};

// Cost-minimal one-to-one cover of all ground truths (columns) by queries
// (rows). Ties between optimal assignments resolve to the lexicographically
// smallest (gt-index, query-index) sequence. Throws ConfigError when
// K_gt > L_q.
MatchResult hungarian_match(const Array& cost);

}  // namespace tad
