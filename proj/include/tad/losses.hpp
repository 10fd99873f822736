#pragma once

#include "tad/array.hpp"
#include "tad/geometry.hpp"
#include "tad/matching.hpp"
#include "tad/model.hpp"
#include "tad/ndgrad.hpp"

#include <cstddef>
#include <random>
#include <string>
#include <vector>

namespace tad {

struct LossConfig {
  double focal_alpha = 0.25;
  double focal_gamma = 2.0;
  double gamma1 = 5.0;       // L1 weight inside the regression loss
  double gamma2 = 2.0;       // gIoU weight inside the regression loss
  double lambda_enc = 1.0;   // contrastive encoder term
  double lambda_zeta = 1.0;  // quality term
  double lambda_decay = 0.1; // IoU decay term
  std::size_t k_negatives = 8;
  double xi = 0.3;           // IoU upper bound for in-segment negatives
  std::size_t roi_bins = 8;
  bool normalize_contrast = false;  // optional stability mode (off: raw dots)
  double temperature = 0.1;         // used only when normalize_contrast
  bool exclude_self_pairs = false;  // report IoU decay without the L_q/2 floor
  MatchWeights match;

  void validate() const;  // throws ConfigError
};

// Per-query target class for sigmoid focal loss (-1 = background).
std::vector<int> focal_targets(const MatchResult& match,
                               const std::vector<GroundTruthAction>& gts,
                               std::size_t n_queries);

// Sigmoid focal loss over every (row, class) channel, summed and divided by
// max(norm_count, 1). `targets[i]` picks row i's positive channel, -1 none.
Var focal_loss(Var logits, const std::vector<int>& targets, std::size_t norm_count,
               const LossConfig& cfg);

// -log( exp(s_pos) / (exp(s_pos) + sum_j exp(s_neg_j)) ) with s = dot products
// of [1 x D] features; optionally L2-normalized and temperature-scaled.
Var info_nce(Var anchor, Var positive, const std::vector<Var>& negatives,
             bool normalize, double temperature);

// One window's contribution to the contrastive encoder loss.
struct AceEncItem {
  Var x_tilde;  // [T x D] projected features, pre-encoder
  std::vector<GroundTruthAction> gts;
};

// Recorded sampling decisions, replayed so finite differences see the exact
// function backward differentiated. One entry per anchor that had a positive.
struct AceEncFreeze {
  struct Anchor {
    std::size_t positive = 0;            // bank index
    std::vector<std::size_t> n1;         // bank indices, different class
    std::vector<TemporalSegment> n2;     // in-segment sub-segments
  };
  std::vector<Anchor> anchors;
};

Var ace_enc_loss(Tape& tape, const std::vector<AceEncItem>& items,
                 const LossConfig& cfg, std::mt19937_64& rng,
                 Freeze mode = Freeze::none, AceEncFreeze* freeze = nullptr);

// Differentiable IoU decay over final-layer segments: 0.5 * sum_{i,j} IoU,
// self pairs included as printed; with `exclude_self_pairs` the constant
// L_q/2 is subtracted (gradient unchanged).
Var iou_decay(Var segments, bool exclude_self_pairs = false);

// Everything one window adds to the batch loss except the encoder term.
// All scalars are already normalized per window (focal and regression by
// max(n_matched,1), quality by n_matched).
struct WindowLoss {
  Var ace_dec;    // sum over layers: focal(queries) + focal(gt branch)
  Var quality;    // L1 to (exp(-|dm|/l_gt), IoU) targets
  Var l1;         // regression L1, normalized, summed over layers
  Var giou;       // regression (1 - gIoU), normalized, summed over layers
  Var decay;      // final-layer IoU decay (0 when relational attention is off)
  std::vector<double> layer_focal, layer_l1, layer_giou;
  std::size_t n_matched = 0;
};

// Quality targets are value snapshots of live segments; record/replay keeps
// them fixed so finite differences probe the same function backward saw.
struct WindowFreeze {
  std::vector<Array> quality_targets;  // one per layer when quality is active
};

WindowLoss window_loss(Tape& tape, const Model::DecodeOut& dec,
                       const std::vector<Var>& gt_logits,
                       const std::vector<GroundTruthAction>& gts,
                       const MatchResult& match, const ModelConfig& mcfg,
                       const LossConfig& cfg, Freeze mode = Freeze::none,
                       WindowFreeze* freeze = nullptr);

struct LossBreakdown {
  Var total;
  // components as averaged over the batch's windows (ace_enc is batch-level);
  // total = lambda_enc*ace_enc + ace_dec + lambda_zeta*quality
  //         + gamma1*l1 + gamma2*giou + lambda_decay*iou_decay
  double total_value = 0, ace_enc = 0, ace_dec = 0, quality = 0, l1 = 0,
         giou = 0, iou_decay = 0;
  std::vector<double> layer_focal, layer_l1, layer_giou;  // window means
  std::size_t n_matched = 0;

  std::string log_line(long step) const;  // one key=value line
};

LossBreakdown total_loss(Tape& tape, Var ace_enc, const std::vector<WindowLoss>& windows,
                         const LossConfig& cfg);

// Elementwise sigmoid on plain values (match costs, detection scoring).
Array sigmoid_values(const Array& logits);

}  // namespace tad
