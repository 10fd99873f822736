#include "tad/losses.hpp"

#include "tad/errors.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <iterator>
#include <string>

namespace tad {

namespace {

// keeps log() off exact zero when a channel saturates past |logit| ~ 700
constexpr double kProbFloor = 1e-300;

Var zero_scalar(Tape& tape) { return tape.constant(Array::scalar(0.0)); }

}  // namespace

void LossConfig::validate() const {
  if (focal_alpha <= 0.0 || focal_alpha >= 1.0)
    throw ConfigError("focal_alpha must lie in (0,1)");
  if (focal_gamma < 0.0) throw ConfigError("focal_gamma must be >= 0");
  if (gamma1 < 0.0 || gamma2 < 0.0 || lambda_enc < 0.0 || lambda_zeta < 0.0 ||
      lambda_decay < 0.0)
    throw ConfigError("loss weights must be >= 0");
  if (k_negatives < 1) throw ConfigError("need at least one negative sample");
  if (xi <= 0.05 || xi > 1.0)
    throw ConfigError("xi must lie in (0.05, 1] so sub-segment durations exist");
  if (roi_bins < 1) throw ConfigError("roi_bins must be >= 1");
  if (temperature <= 0.0) throw ConfigError("temperature must be positive");
  if (match.l1 < 0.0 || match.iou < 0.0 || match.cls < 0.0)
    throw ConfigError("match cost weights must be >= 0");
}

std::vector<int> focal_targets(const MatchResult& match,
                               const std::vector<GroundTruthAction>& gts,
                               std::size_t n_queries) {
  std::vector<int> targets(n_queries, -1);
  for (auto [q, g] : match.pairs) {
    if (q >= n_queries || g >= gts.size())
      throw ValueError("focal_targets: match index out of range");
    targets[q] = gts[g].class_id;
  }
  return targets;
}

Var focal_loss(Var logits, const std::vector<int>& targets, std::size_t norm_count,
               const LossConfig& cfg) {
  const std::size_t n = logits.rows(), c = logits.cols();
  if (targets.size() != n) throw ShapeError("focal_loss: one target per row");

  Array coef(n, c), off(n, c), alpha(n, c);
  for (std::size_t i = 0; i < n; ++i) {
    if (targets[i] >= static_cast<int>(c))
      throw ValueError("focal_loss: target class out of range");
    for (std::size_t j = 0; j < c; ++j) {
      const bool pos = targets[i] >= 0 && static_cast<std::size_t>(targets[i]) == j;
      // p_t = (1-t) + (2t-1)*p
      coef.at(i, j) = pos ? 1.0 : -1.0;
      off.at(i, j) = pos ? 0.0 : 1.0;
      alpha.at(i, j) = pos ? cfg.focal_alpha : 1.0 - cfg.focal_alpha;
    }
  }

  Tape& tape = *logits.tape();
  Var p = sigmoid(logits);
  Var p_t = add(mul_array(p, coef), tape.constant(off));
  Var focal = mul(pow_const(add_const(neg(p_t), 1.0), cfg.focal_gamma),
                  neg(log(clamp(p_t, kProbFloor, 1.0))));
  Var total = sum(mul_array(focal, alpha));
  return mul_const(total, 1.0 / static_cast<double>(std::max<std::size_t>(norm_count, 1)));
}

Var info_nce(Var anchor, Var positive, const std::vector<Var>& negatives,
             bool normalize, double temperature) {
  if (anchor.rows() != 1 || positive.rows() != 1 ||
      anchor.cols() != positive.cols())
    throw ShapeError("info_nce: anchor and positive must be matching [1 x D]");
  auto prep = [&](Var v) { return normalize ? l2_normalize_rows(v) : v; };

  std::vector<Var> cand;
  cand.reserve(negatives.size() + 1);
  cand.push_back(prep(positive));
  for (Var nst : negatives) {
    if (nst.rows() != 1 || nst.cols() != anchor.cols())
      throw ShapeError("info_nce: negative shape mismatch");
    cand.push_back(prep(nst));
  }
  Var scores = matmul_nt(prep(anchor), concat_rows(cand));  // [1, k+1]
  if (normalize) scores = mul_const(scores, 1.0 / temperature);
  return sub(logsumexp_rows(scores), slice_cols(scores, 0, 1));
}

Var ace_enc_loss(Tape& tape, const std::vector<AceEncItem>& items,
                 const LossConfig& cfg, std::mt19937_64& rng, Freeze mode,
                 AceEncFreeze* freeze) {
  if ((mode == Freeze::record || mode == Freeze::replay) && freeze == nullptr)
    throw ValueError("ace_enc_loss: freeze mode requires an AceEncFreeze");
  if (mode == Freeze::record) freeze->anchors.clear();

  struct BankEntry {
    Var feat;
    int cls;
    std::size_t item;
    TemporalSegment seg;
  };
  std::vector<BankEntry> bank;
  for (std::size_t w = 0; w < items.size(); ++w)
    for (const auto& gt : items[w].gts)
      bank.push_back({roi_pool(items[w].x_tilde, gt.segment, cfg.roi_bins),
                      gt.class_id, w, gt.segment});

  if (bank.empty()) {
    std::cerr << "warning: contrastive bank is empty; encoder loss contributes 0\n";
    return zero_scalar(tape);
  }

  std::uniform_real_distribution<double> draw_u(0.05, cfg.xi);
  Var acc = zero_scalar(tape);
  std::size_t used = 0, cursor = 0;

  for (std::size_t a = 0; a < bank.size(); ++a) {
    std::vector<std::size_t> positives, others;
    for (std::size_t b = 0; b < bank.size(); ++b) {
      if (b == a) continue;
      (bank[b].cls == bank[a].cls ? positives : others).push_back(b);
    }
    if (positives.empty()) continue;  // anchor has no partner: skipped

    AceEncFreeze::Anchor an;
    if (mode == Freeze::replay) {
      if (cursor >= freeze->anchors.size())
        throw ValueError("ace_enc_loss: replay state too short");
      an = freeze->anchors[cursor];
    } else {
      an.positive = positives[rng() % positives.size()];
      const std::size_t k1 = std::min(cfg.k_negatives / 2, others.size());
      std::sample(others.begin(), others.end(), std::back_inserter(an.n1), k1, rng);
      const std::size_t k2 = cfg.k_negatives - an.n1.size();
      for (std::size_t j = 0; j < k2; ++j)
        an.n2.push_back({bank[a].seg.m, bank[a].seg.d * draw_u(rng)});
    }
    if (mode == Freeze::record) freeze->anchors.push_back(an);
    ++cursor;

    std::vector<Var> negatives;
    for (std::size_t b : an.n1) negatives.push_back(bank[b].feat);
    for (const auto& seg : an.n2)
      negatives.push_back(
          roi_pool(items[bank[a].item].x_tilde, seg, cfg.roi_bins));

    acc = add(acc, info_nce(bank[a].feat, bank[an.positive].feat, negatives,
                            cfg.normalize_contrast, cfg.temperature));
    ++used;
  }

  if (mode == Freeze::replay && cursor != freeze->anchors.size())
    throw ValueError("ace_enc_loss: replay state does not match anchor count");
  if (used == 0) return zero_scalar(tape);
  return mul_const(acc, 1.0 / static_cast<double>(used));
}

Var iou_decay(Var segments, bool exclude_self_pairs) {
  if (segments.cols() != 2) throw ShapeError("iou_decay: segments must be [L x 2]");
  const std::size_t l = segments.rows();
  std::vector<std::size_t> ii, jj;
  ii.reserve(l * l);
  jj.reserve(l * l);
  for (std::size_t i = 0; i < l; ++i)
    for (std::size_t j = 0; j < l; ++j) {
      ii.push_back(i);
      jj.push_back(j);
    }
  Var all = mul_const(sum(iou_pairs(take_rows(segments, ii), take_rows(segments, jj))),
                      0.5);
  if (exclude_self_pairs) all = add_const(all, -0.5 * static_cast<double>(l));
  return all;
}

WindowLoss window_loss(Tape& tape, const Model::DecodeOut& dec,
                       const std::vector<Var>& gt_logits,
                       const std::vector<GroundTruthAction>& gts,
                       const MatchResult& match, const ModelConfig& mcfg,
                       const LossConfig& cfg, Freeze mode, WindowFreeze* freeze) {
  if (match.pairs.size() != gts.size())
    throw ValueError("window_loss: match must cover every ground truth");
  if (!gt_logits.empty() && gt_logits.size() != dec.layers.size())
    throw ShapeError("window_loss: gt-branch layer count mismatch");
  if ((mode == Freeze::record || mode == Freeze::replay) && freeze == nullptr)
    throw ValueError("window_loss: freeze mode requires a WindowFreeze");
  if (mode == Freeze::record) freeze->quality_targets.clear();
  std::size_t qt_cursor = 0;

  const std::size_t m = match.pairs.size();
  const std::size_t norm = std::max<std::size_t>(m, 1);
  const auto targets = focal_targets(match, gts, mcfg.n_queries);

  std::vector<std::size_t> qidx;
  Array gseg(m, 2);
  std::vector<int> gt_cls(m);
  for (std::size_t r = 0; r < m; ++r) {
    if (match.pairs[r].second != r)
      throw ValueError("window_loss: match pairs must be ordered by ground truth");
    qidx.push_back(match.pairs[r].first);
    gseg.at(r, 0) = gts[r].segment.m;
    gseg.at(r, 1) = gts[r].segment.d;
    gt_cls[r] = gts[r].class_id;
  }

  WindowLoss out;
  out.n_matched = m;
  out.ace_dec = zero_scalar(tape);
  out.quality = zero_scalar(tape);
  out.l1 = zero_scalar(tape);
  out.giou = zero_scalar(tape);

  Var gt_seg_const = m > 0 ? tape.constant(gseg) : Var();

  for (std::size_t l = 0; l < dec.layers.size(); ++l) {
    const auto& layer = dec.layers[l];
    Var f_layer = focal_loss(layer.cls_logits, targets, norm, cfg);
    if (m > 0 && !gt_logits.empty())
      f_layer = add(f_layer, focal_loss(gt_logits[l], gt_cls, norm, cfg));
    out.ace_dec = add(out.ace_dec, f_layer);
    out.layer_focal.push_back(f_layer.item());

    if (m == 0) {
      out.layer_l1.push_back(0.0);
      out.layer_giou.push_back(0.0);
      continue;
    }

    Var pred = take_rows(layer.segments, qidx);  // [M x 2]
    Var l1_l = mul_const(sum(abs(sub(pred, gt_seg_const))),
                         1.0 / static_cast<double>(norm));
    Var giou_l = mul_const(sum(add_const(neg(giou_pairs(pred, gt_seg_const)), 1.0)),
                           1.0 / static_cast<double>(norm));
    out.l1 = add(out.l1, l1_l);
    out.giou = add(out.giou, giou_l);
    out.layer_l1.push_back(l1_l.item());
    out.layer_giou.push_back(giou_l.item());

    if (mcfg.quality) {
      // targets from this layer's predicted segments, as plain constants
      Array qt(m, 2);
      if (mode == Freeze::replay) {
        if (qt_cursor >= freeze->quality_targets.size())
          throw ValueError("window_loss: replay state too short");
        qt = freeze->quality_targets[qt_cursor];
      } else {
        for (std::size_t r = 0; r < m; ++r) {
          const std::size_t q = qidx[r];
          const TemporalSegment sq{layer.segments.val().at(q, 0),
                                   layer.segments.val().at(q, 1)};
          qt.at(r, 0) =
              std::exp(-std::abs(sq.m - gts[r].segment.m) / gts[r].segment.d);
          qt.at(r, 1) = iou(sq, gts[r].segment);
        }
      }
      if (mode == Freeze::record) freeze->quality_targets.push_back(qt);
      ++qt_cursor;
      Var zeta = take_rows(layer.quality, qidx);
      out.quality = add(out.quality, sum(abs(sub(zeta, tape.constant(qt)))));
    }
  }
  if (mode == Freeze::replay && qt_cursor != freeze->quality_targets.size())
    throw ValueError("window_loss: replay state does not match layer count");
  if (m > 0 && mcfg.quality)
    out.quality = mul_const(out.quality, 1.0 / static_cast<double>(m));

  out.decay = mcfg.relational_attention
                  ? iou_decay(dec.layers.back().segments, cfg.exclude_self_pairs)
                  : zero_scalar(tape);
  return out;
}

LossBreakdown total_loss(Tape& tape, Var ace_enc,
                         const std::vector<WindowLoss>& windows,
                         const LossConfig& cfg) {
  if (windows.empty()) throw ValueError("total_loss: need at least one window");
  const double inv = 1.0 / static_cast<double>(windows.size());

  Var dec = zero_scalar(tape), qual = zero_scalar(tape), l1 = zero_scalar(tape),
      gio = zero_scalar(tape), decay = zero_scalar(tape);
  LossBreakdown out;
  const std::size_t n_layers = windows.front().layer_focal.size();
  out.layer_focal.assign(n_layers, 0.0);
  out.layer_l1.assign(n_layers, 0.0);
  out.layer_giou.assign(n_layers, 0.0);
  for (const auto& w : windows) {
    if (w.layer_focal.size() != n_layers)
      throw ValueError("total_loss: windows disagree on layer count");
    dec = add(dec, w.ace_dec);
    qual = add(qual, w.quality);
    l1 = add(l1, w.l1);
    gio = add(gio, w.giou);
    decay = add(decay, w.decay);
    out.n_matched += w.n_matched;
    for (std::size_t l = 0; l < n_layers; ++l) {
      out.layer_focal[l] += w.layer_focal[l] * inv;
      out.layer_l1[l] += w.layer_l1[l] * inv;
      out.layer_giou[l] += w.layer_giou[l] * inv;
    }
  }
  dec = mul_const(dec, inv);
  qual = mul_const(qual, inv);
  l1 = mul_const(l1, inv);
  gio = mul_const(gio, inv);
  decay = mul_const(decay, inv);

  Var total = add(mul_const(ace_enc, cfg.lambda_enc),
                  add(dec, add(mul_const(qual, cfg.lambda_zeta),
                               add(add(mul_const(l1, cfg.gamma1),
                                       mul_const(gio, cfg.gamma2)),
                                   mul_const(decay, cfg.lambda_decay)))));
  out.total = total;
  out.total_value = total.item();
  out.ace_enc = ace_enc.item();
  out.ace_dec = dec.item();
  out.quality = qual.item();
  out.l1 = l1.item();
  out.giou = gio.item();
  out.iou_decay = decay.item();
  return out;
}

std::string LossBreakdown::log_line(long step) const {
  char buf[512];
  std::snprintf(buf, sizeof(buf),
                "step=%ld total=%.10g ace_enc=%.10g ace_dec=%.10g quality=%.10g "
                "l1=%.10g giou=%.10g iou_decay=%.10g matched=%zu",
                step, total_value, ace_enc, ace_dec, quality, l1, giou, iou_decay,
                n_matched);
  return buf;
}

Array sigmoid_values(const Array& logits) {
  Array p(logits.rows, logits.cols);
  for (std::size_t i = 0; i < logits.size(); ++i)
    p.data[i] = 1.0 / (1.0 + std::exp(-logits.data[i]));
  return p;
}

}  // namespace tad
