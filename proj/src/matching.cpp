#include "tad/matching.hpp"

#include "tad/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace tad {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Assignment-problem solver over the transposed view: rows = ground truths
// (n, all covered), columns = queries (m >= n). Potentials method; returns
// the assigned query for each gt, optionally forcing some pairs and skipping
// some queries (both used by the tie-break pass). `at(i,j)` is cost(gt i,
// query j).
struct SubProblem {
  const Array* cost;                  // [L_q x K_gt]
  std::vector<int> forced_query;      // per gt; -1 = free
  std::vector<unsigned char> banned;  // per query; 1 = taken by a forced pair

  double at(std::size_t i, std::size_t j) const { return cost->at(j, i); }

  // Minimal total cost over free gts x unbanned queries plus forced pairs;
  // fills `assign` (query per gt) when non-null.
  double solve(std::vector<std::size_t>* assign) const {
    const std::size_t n = cost->cols, m = cost->rows;
    std::vector<std::size_t> rows;  // free gts
    std::vector<std::size_t> cols;  // queries still available to them
    std::vector<unsigned char> blocked = banned;
    double forced_cost = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (forced_query[i] >= 0) {
        forced_cost += at(i, static_cast<std::size_t>(forced_query[i]));
        blocked[static_cast<std::size_t>(forced_query[i])] = 1;
      } else {
        rows.push_back(i);
      }
    }
    for (std::size_t j = 0; j < m; ++j)
      if (!blocked[j]) cols.push_back(j);

    const std::size_t nn = rows.size(), mm = cols.size();
    if (assign != nullptr) {
      assign->assign(n, 0);
      for (std::size_t i = 0; i < n; ++i)
        if (forced_query[i] >= 0) (*assign)[i] = static_cast<std::size_t>(forced_query[i]);
    }
    if (nn == 0) return forced_cost;

    // 1-indexed potentials algorithm
    std::vector<double> u(nn + 1, 0.0), v(mm + 1, 0.0);
    std::vector<std::size_t> p(mm + 1, 0), way(mm + 1, 0);
    for (std::size_t i = 1; i <= nn; ++i) {
      p[0] = i;
      std::size_t j0 = 0;
      std::vector<double> minv(mm + 1, kInf);
      std::vector<unsigned char> used(mm + 1, 0);
      do {
        used[j0] = 1;
        const std::size_t i0 = p[j0];
        double delta = kInf;
        std::size_t j1 = 0;
        for (std::size_t j = 1; j <= mm; ++j) {
          if (used[j]) continue;
          const double cur = at(rows[i0 - 1], cols[j - 1]) - u[i0] - v[j];
          if (cur < minv[j]) {
            minv[j] = cur;
            way[j] = j0;
          }
          if (minv[j] < delta) {
            delta = minv[j];
            j1 = j;
          }
        }
        for (std::size_t j = 0; j <= mm; ++j) {
          if (used[j]) {
            u[p[j]] += delta;
            v[j] -= delta;
          } else {
            minv[j] -= delta;
          }
        }
        j0 = j1;
      } while (p[j0] != 0);
      do {
        const std::size_t j1 = way[j0];
        p[j0] = p[j1];
        j0 = j1;
      } while (j0 != 0);
    }

    double total = forced_cost;
    for (std::size_t j = 1; j <= mm; ++j) {
      if (p[j] == 0) continue;
      const std::size_t gt = rows[p[j] - 1], query = cols[j - 1];
      total += at(gt, query);
      if (assign != nullptr) (*assign)[gt] = query;
    }
    return total;
  }
};

}  // namespace

Array match_cost_matrix(const Array& prob, const Array& segments,
                        const std::vector<GroundTruthAction>& gt,
                        const MatchWeights& w) {
  if (prob.rows != segments.rows || segments.cols != 2)
    throw ShapeError("match_cost_matrix: prob and segments disagree");
  Array cost(prob.rows, gt.size());
  for (std::size_t j = 0; j < prob.rows; ++j) {
    const TemporalSegment sj{segments.at(j, 0), segments.at(j, 1)};
    for (std::size_t k = 0; k < gt.size(); ++k) {
      const std::size_t cls = static_cast<std::size_t>(gt[k].class_id);
      if (gt[k].class_id < 0 || cls >= prob.cols)
        throw ValueError("match_cost_matrix: gt class " +
                         std::to_string(gt[k].class_id) + " out of range");
      const double l1 = std::abs(sj.m - gt[k].segment.m) +
                        std::abs(sj.d - gt[k].segment.d);
      cost.at(j, k) = w.l1 * l1 - w.iou * iou(sj, gt[k].segment) -
                      w.cls * prob.at(j, cls);
    }
  }
  return cost;
}

MatchResult hungarian_match(const Array& cost) {
  const std::size_t lq = cost.rows, kgt = cost.cols;
  if (kgt > lq)
    throw ConfigError("hungarian_match: " + std::to_string(kgt) +
                      " ground truths exceed " + std::to_string(lq) + " queries");

  MatchResult out;
  if (kgt == 0) {
    for (std::size_t j = 0; j < lq; ++j) out.unmatched.push_back(j);
    return out;
  }

  SubProblem sp{&cost, std::vector<int>(kgt, -1),
                std::vector<unsigned char>(lq, 0)};
  const double best = sp.solve(nullptr);
  const double eps = 1e-9 * std::max(1.0, std::abs(best));

  // Lexicographic tie-break: give each gt in turn the smallest query index
  // that still admits an optimal completion.
  for (std::size_t i = 0; i < kgt; ++i) {
    for (std::size_t j = 0; j < lq; ++j) {
      if (sp.banned[j]) continue;
      sp.forced_query[i] = static_cast<int>(j);
      if (sp.solve(nullptr) <= best + eps) break;
      sp.forced_query[i] = -1;
    }
    if (sp.forced_query[i] < 0)
      throw NumericError("hungarian_match: tie-break failed to re-solve");
    sp.banned[static_cast<std::size_t>(sp.forced_query[i])] = 1;
  }

  std::vector<unsigned char> taken(lq, 0);
  for (std::size_t i = 0; i < kgt; ++i) {
    const std::size_t q = static_cast<std::size_t>(sp.forced_query[i]);
    out.pairs.push_back({q, i});
    taken[q] = 1;
  }
  for (std::size_t j = 0; j < lq; ++j)
    if (!taken[j]) out.unmatched.push_back(j);
  return out;
}

}  // namespace tad
