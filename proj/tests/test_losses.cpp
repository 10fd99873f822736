#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "tad/fdcheck.hpp"
#include "tad/errors.hpp"
#include "tad/losses.hpp"
#include "tad/matching.hpp"
#include "tad/model.hpp"

#include <cmath>
#include <random>
#include <string>
#include <vector>

using namespace tad;

namespace {

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.d_in = 4;
  cfg.d = 8;
  cfg.ffn = 16;
  cfg.enc_layers = 0;
  cfg.dec_layers = 2;
  cfg.heads = 2;
  cfg.k = 2;
  cfg.n_queries = 4;
  cfg.n_classes = 2;
  return cfg;
}

Array random_array(std::size_t rows, std::size_t cols, std::mt19937_64& rng,
                   double scale = 1.0) {
  std::uniform_real_distribution<double> u(-scale, scale);
  Array a(rows, cols);
  for (auto& v : a.data) v = u(rng);
  return a;
}

void randomize(Model& model, const std::string& name, double scale,
               std::mt19937_64& rng) {
  Array& a = model.params().get(name);
  a = random_array(a.rows, a.cols, rng, scale);
}

// Same trick as the model tests: move the zero-initialized sampling and
// regression layers off their symmetric starting point so finite differences
// never straddle an interpolation or min/max kink.
void randomize_model(Model& model, std::mt19937_64& rng) {
  randomize(model, "ref_head.w", 0.3, rng);
  randomize(model, "ref_head.b", 0.3, rng);
  for (std::size_t l = 0; l < model.config().enc_layers; ++l) {
    const std::string lp = "encoder.layer" + std::to_string(l);
    randomize(model, lp + ".offset.w", 0.05, rng);
    randomize(model, lp + ".offset.b", 0.3, rng);
    randomize(model, lp + ".logit.w", 0.5, rng);
    randomize(model, lp + ".logit.b", 0.5, rng);
  }
  for (std::size_t l = 0; l < model.config().dec_layers; ++l) {
    const std::string lp = "decoder.layer" + std::to_string(l);
    randomize(model, lp + ".cross.offset.w", 0.5, rng);
    randomize(model, lp + ".cross.offset.b", 0.5, rng);
    randomize(model, lp + ".cross.logit.w", 0.5, rng);
    randomize(model, lp + ".cross.logit.b", 0.5, rng);
    randomize(model, lp + ".reg.l2.w", 0.3, rng);
    randomize(model, lp + ".reg.l2.b", 0.3, rng);
  }
}

// Hand-built decoder layer for loss tests: only the heads matter here.
Model::LayerOut make_layer(Tape& tape, const Array& cls, const Array& seg,
                           const Array& qual) {
  Model::LayerOut layer;
  layer.cls_logits = tape.constant(cls);
  layer.segments = tape.constant(seg);
  layer.quality = tape.constant(qual);
  layer.seg_in = seg;
  return layer;
}

MatchResult make_match(std::vector<std::pair<std::size_t, std::size_t>> pairs,
                       std::vector<std::size_t> unmatched) {
  MatchResult m;
  m.pairs = std::move(pairs);
  m.unmatched = std::move(unmatched);
  return m;
}

}  // namespace

TEST_CASE("focal loss: saturated correct predictions vanish") {
  Tape tape;
  Array logits = Array::from(2, 3, {-20.0, 20.0, -20.0, -20.0, -20.0, -20.0});
  Var loss = focal_loss(tape.constant(logits), {1, -1}, 1, LossConfig{});
  CHECK(loss.item() >= 0.0);
  CHECK(loss.item() < 1e-15);
}

TEST_CASE("focal loss: half-probability channel hits the closed form") {
  // p = p_t = 1/2, alpha = 0.25, gamma = 2: 0.25 * 0.25 * ln 2 = ln(2)/16
  Tape tape;
  Var loss = focal_loss(tape.constant(Array::scalar(0.0)), {0}, 1, LossConfig{});
  CHECK(loss.item() == doctest::Approx(0.04332169878499658).epsilon(1e-12));
}

TEST_CASE("focal loss: background-only rows still penalize confidence mass") {
  // all-background zero logits: every channel contributes (1-alpha)*0.25*ln 2
  Tape tape;
  Array logits(3, 2, 0.0);
  Var loss = focal_loss(tape.constant(logits), {-1, -1, -1}, 1, LossConfig{});
  CHECK(loss.item() == doctest::Approx(6.0 * 0.75 * 0.25 * std::log(2.0)).epsilon(1e-12));
  CHECK(loss.item() > 0.0);
}

TEST_CASE("focal loss: normalized by the matched count, floored at one") {
  Tape tape;
  std::mt19937_64 rng(17);
  Array logits = random_array(3, 2, rng, 2.0);
  const std::vector<int> targets = {0, -1, 1};
  const double base = focal_loss(tape.constant(logits), targets, 1, LossConfig{}).item();
  const double quarter = focal_loss(tape.constant(logits), targets, 4, LossConfig{}).item();
  const double floored = focal_loss(tape.constant(logits), targets, 0, LossConfig{}).item();
  CHECK(quarter == base * 0.25);
  CHECK(floored == base);
}

TEST_CASE("focal loss: shape and range validation") {
  Tape tape;
  Array logits(2, 3, 0.0);
  CHECK_THROWS_AS(focal_loss(tape.constant(logits), {0}, 1, LossConfig{}), ShapeError);
  CHECK_THROWS_AS(focal_loss(tape.constant(logits), {0, 3}, 1, LossConfig{}), ValueError);
}

TEST_CASE("focal_targets maps matched queries onto their gt classes") {
  std::vector<GroundTruthAction> gts = {{{0.3, 0.1}, 1}, {{0.6, 0.2}, 0}};
  auto targets = focal_targets(make_match({{2, 0}, {0, 1}}, {1, 3}), gts, 4);
  CHECK(targets == std::vector<int>{0, -1, 1, -1});
  CHECK_THROWS_AS(focal_targets(make_match({{5, 0}}, {}), gts, 4), ValueError);
  CHECK_THROWS_AS(focal_targets(make_match({{0, 7}}, {}), gts, 4), ValueError);
}

TEST_CASE("focal loss: gradient matches finite differences") {
  std::mt19937_64 rng(11);
  std::vector<Array> inputs = {random_array(3, 4, rng, 2.0)};
  auto r = fd_check(inputs, [](Tape&, const std::vector<Var>& xs) {
    return focal_loss(xs[0], {1, -1, 3}, 2, LossConfig{});
  });
  CHECK(r.checked >= 10);
  CHECK(r.max_rel < 1e-6);
}

TEST_CASE("info_nce: orthogonal negatives hit the closed form") {
  // f = f_p, two orthogonal negatives: -log(e / (e + 2)) = log(e + 2) - 1
  Tape tape;
  Var f = tape.constant(Array::from(1, 3, {1.0, 0.0, 0.0}));
  std::vector<Var> negs = {tape.constant(Array::from(1, 3, {0.0, 1.0, 0.0})),
                           tape.constant(Array::from(1, 3, {0.0, 0.0, 1.0}))};
  Var loss = info_nce(f, f, negs, false, 0.1);
  CHECK(loss.item() == doctest::Approx(0.5514447139320511).epsilon(1e-12));
}

TEST_CASE("info_nce: a positive with no negatives is a perfect score") {
  Tape tape;
  Var f = tape.constant(Array::from(1, 2, {0.3, -0.2}));
  CHECK(info_nce(f, f, {}, false, 0.1).item() == 0.0);
}

TEST_CASE("info_nce: normalized mode equals cosine-over-temperature arithmetic") {
  Tape tape;
  Var anchor = tape.constant(Array::from(1, 2, {3.0, 4.0}));
  Var positive = tape.constant(Array::from(1, 2, {1.0, 0.0}));
  std::vector<Var> negs = {tape.constant(Array::from(1, 2, {0.0, 2.0}))};
  Var loss = info_nce(anchor, positive, negs, true, 0.1);
  const double sp = 0.6 / 0.1, sn = 0.8 / 0.1;
  CHECK(loss.item() ==
        doctest::Approx(std::log(std::exp(sp) + std::exp(sn)) - sp).epsilon(1e-12));
}

TEST_CASE("info_nce: shape validation") {
  Tape tape;
  Var ok = tape.constant(Array(1, 3, 0.1));
  Var tall = tape.constant(Array(2, 3, 0.1));
  Var narrow = tape.constant(Array(1, 2, 0.1));
  CHECK_THROWS_AS(info_nce(tall, ok, {}, false, 0.1), ShapeError);
  CHECK_THROWS_AS(info_nce(ok, narrow, {}, false, 0.1), ShapeError);
  CHECK_THROWS_AS(info_nce(ok, ok, {narrow}, false, 0.1), ShapeError);
}

TEST_CASE("ace_enc: anchors without a same-class partner are skipped") {
  Tape tape;
  std::mt19937_64 rng(3);
  Var x = tape.constant(random_array(16, 4, rng));
  std::vector<AceEncItem> items = {{x, {{{0.3, 0.2}, 0}}}};
  CHECK(ace_enc_loss(tape, items, LossConfig{}, rng).item() == 0.0);
  items[0].gts.push_back({{0.7, 0.2}, 1});  // still no partner for either
  CHECK(ace_enc_loss(tape, items, LossConfig{}, rng).item() == 0.0);
}

TEST_CASE("ace_enc: empty bank contributes zero") {
  Tape tape;
  std::mt19937_64 rng(3);
  std::vector<AceEncItem> items = {{tape.constant(random_array(12, 4, rng)), {}}};
  CHECK(ace_enc_loss(tape, items, LossConfig{}, rng).item() == 0.0);
  CHECK(ace_enc_loss(tape, {}, LossConfig{}, rng).item() == 0.0);
}

TEST_CASE("ace_enc: cross-window partners give a positive, seed-stable loss") {
  std::mt19937_64 init(9);
  const Array xa = random_array(16, 4, init);
  const Array xb = random_array(12, 4, init);
  auto run = [&](std::uint64_t seed) {
    Tape tape;
    std::vector<AceEncItem> items = {
        {tape.constant(xa), {{{0.35, 0.25}, 0}, {{0.75, 0.125}, 1}}},
        {tape.constant(xb), {{{0.5, 0.25}, 0}}}};
    std::mt19937_64 rng(seed);
    return ace_enc_loss(tape, items, LossConfig{}, rng).item();
  };
  const double v1 = run(5), v2 = run(5);
  CHECK(v1 > 0.0);
  CHECK(v1 == v2);  // same draws, same arithmetic
}

TEST_CASE("ace_enc: recorded sampling respects the negative-split contract") {
  Tape tape;
  std::mt19937_64 init(31);
  Var x = tape.constant(random_array(20, 4, init));
  // two class-0 anchors, two different-class bank entries -> |N1| = 2 < k/2
  std::vector<GroundTruthAction> gts = {{{0.3, 0.25}, 0},
                                        {{0.7, 0.125}, 0},
                                        {{0.2, 0.1}, 1},
                                        {{0.85, 0.1}, 2}};
  std::vector<AceEncItem> items = {{x, gts}};
  LossConfig cfg;  // k = 8, xi = 0.3
  AceEncFreeze freeze;
  std::mt19937_64 rng(5);
  ace_enc_loss(tape, items, cfg, rng, Freeze::record, &freeze);

  REQUIRE(freeze.anchors.size() == 2);  // class 1/2 anchors skipped
  for (std::size_t a = 0; a < freeze.anchors.size(); ++a) {
    const auto& an = freeze.anchors[a];
    const auto& gt = gts[a].segment;
    CHECK(an.positive == (a == 0 ? 1 : 0));  // the only same-class entry
    REQUIRE(an.n1.size() == 2);              // min(k/2, |N1|)
    for (std::size_t b : an.n1) CHECK((b == 2 || b == 3));
    CHECK(an.n1[0] != an.n1[1]);
    REQUIRE(an.n2.size() == 6);  // k - |n1|
    for (const auto& seg : an.n2) {
      CHECK(seg.m == gt.m);
      const double ratio = seg.d / gt.d;
      CHECK(ratio >= 0.05);
      CHECK(ratio < cfg.xi);
      CHECK(seg.start() >= gt.start());  // completely inside
      CHECK(seg.end() <= gt.end());
      CHECK(iou(seg, gt) == doctest::Approx(ratio).epsilon(1e-12));
    }
  }
}

TEST_CASE("ace_enc: replay reproduces the recorded objective without the rng") {
  std::mt19937_64 init(41);
  const Array x = random_array(18, 4, init);
  std::vector<GroundTruthAction> gts = {{{0.3, 0.25}, 0}, {{0.7, 0.125}, 0},
                                        {{0.5, 0.1}, 1},  {{0.85, 0.1}, 1}};
  AceEncFreeze freeze;
  auto run = [&](Freeze mode, std::uint64_t seed) {
    Tape tape;
    std::vector<AceEncItem> items = {{tape.constant(x), gts}};
    std::mt19937_64 rng(seed);
    return ace_enc_loss(tape, items, LossConfig{}, rng, mode, &freeze).item();
  };
  const double recorded = run(Freeze::record, 5);
  CHECK(run(Freeze::replay, 99) == recorded);  // rng must be irrelevant

  AceEncFreeze mutated = freeze;
  mutated.anchors[0].n2[0].m += 0.1;  // moves that negative's pooled window
  auto run_with = [&](const AceEncFreeze& fz) {
    Tape tape;
    std::vector<AceEncItem> items = {{tape.constant(x), gts}};
    std::mt19937_64 rng(1);
    AceEncFreeze local = fz;
    return ace_enc_loss(tape, items, LossConfig{}, rng, Freeze::replay, &local).item();
  };
  CHECK(run_with(mutated) != recorded);  // replay really reads the freeze

  AceEncFreeze truncated = freeze;
  truncated.anchors.pop_back();
  Tape tape;
  std::vector<AceEncItem> items = {{tape.constant(x), gts}};
  std::mt19937_64 rng(1);
  CHECK_THROWS_AS(ace_enc_loss(tape, items, LossConfig{}, rng, Freeze::replay, &truncated),
                  ValueError);
  CHECK_THROWS_AS(ace_enc_loss(tape, items, LossConfig{}, rng, Freeze::record, nullptr),
                  ValueError);
}

TEST_CASE("ace_enc: gradient into clip features matches finite differences") {
  std::mt19937_64 init(21);
  std::vector<Array> inputs = {random_array(12, 3, init), random_array(10, 3, init)};
  AceEncFreeze freeze;
  bool first = true;
  auto r = fd_check(inputs, [&](Tape& t, const std::vector<Var>& xs) {
    std::vector<AceEncItem> items = {
        {xs[0], {{{0.4, 0.3}, 0}, {{0.75, 0.2}, 1}}},
        {xs[1], {{{0.5, 0.4}, 0}}}};
    LossConfig cfg;
    cfg.k_negatives = 3;
    cfg.roi_bins = 4;
    std::mt19937_64 rng(77);
    const Freeze mode = first ? Freeze::record : Freeze::replay;
    first = false;
    return ace_enc_loss(t, items, cfg, rng, mode, &freeze);
  });
  CHECK(r.checked > 30);
  CHECK(r.max_rel < 1e-6);  // fixed sample positions: linear in the features
}

TEST_CASE("iou decay: enumerated examples, self pairs as printed") {
  Tape tape;
  // dyadic coordinates keep every IoU exact
  Var one = tape.constant(Array::from(1, 2, {0.5, 0.25}));
  CHECK(iou_decay(one).item() == 0.5);
  CHECK(iou_decay(one, true).item() == 0.0);

  Var twin = tape.constant(Array::from(2, 2, {0.5, 0.25, 0.5, 0.25}));
  CHECK(iou_decay(twin).item() == 2.0);
  CHECK(iou_decay(twin, true).item() == 1.0);

  Var apart = tape.constant(Array::from(2, 2, {0.25, 0.125, 0.75, 0.125}));
  CHECK(iou_decay(apart).item() == 1.0);
  CHECK(iou_decay(apart, true).item() == 0.0);

  CHECK_THROWS_AS(iou_decay(tape.constant(Array(2, 3, 0.1))), ShapeError);
}

TEST_CASE("iou decay: one gradient step pushes overlapping segments apart") {
  Array seg = Array::from(2, 2, {0.5, 0.3, 0.52, 0.3});
  Tape tape;
  Var s = tape.leaf(seg, true);
  Var w = iou_decay(s);
  tape.backward(w);
  Array stepped = seg;
  for (std::size_t i = 0; i < stepped.size(); ++i)
    stepped.data[i] -= 0.05 * s.grad().data[i];
  Tape t2;
  CHECK(iou_decay(t2.constant(stepped)).item() < w.item());
}

TEST_CASE("iou decay: gradient matches finite differences") {
  // every segment overlaps another (else its gradient is legitimately zero)
  // and boundaries stay distinct so no min/max or ReLU kink sits under a probe
  std::vector<Array> inputs = {
      Array::from(3, 2, {0.45, 0.3, 0.6, 0.25, 0.35, 0.18})};
  auto r = fd_check(inputs, [](Tape&, const std::vector<Var>& xs) {
    return iou_decay(xs[0]);
  });
  CHECK(r.checked >= 6);
  CHECK(r.max_rel < 1e-6);
}

TEST_CASE("window loss: regression vanishes exactly when prediction equals gt") {
  Tape tape;
  ModelConfig mcfg = tiny_config();
  mcfg.n_queries = 3;
  LossConfig cfg;
  std::vector<GroundTruthAction> gts = {{{0.5, 0.25}, 1}};
  MatchResult match = make_match({{1, 0}}, {0, 2});
  Array cls(3, 2, 0.0);
  Array qual(3, 2, 0.5);
  Array seg = Array::from(3, 2, {0.2, 0.1, 0.5, 0.25, 0.8, 0.1});

  Model::DecodeOut exact;
  exact.layers.push_back(make_layer(tape, cls, seg, qual));
  auto wl = window_loss(tape, exact, {}, gts, match, mcfg, cfg);
  CHECK(wl.l1.item() == 0.0);
  CHECK(wl.giou.item() == 0.0);
  CHECK(wl.layer_l1[0] == 0.0);
  CHECK(wl.layer_giou[0] == 0.0);
  CHECK(wl.n_matched == 1);

  seg.at(1, 0) = 0.55;
  Model::DecodeOut off;
  off.layers.push_back(make_layer(tape, cls, seg, qual));
  auto wl2 = window_loss(tape, off, {}, gts, match, mcfg, cfg);
  CHECK(wl2.l1.item() > 0.0);
  CHECK(wl2.giou.item() > 0.0);
}

TEST_CASE("window loss: disjoint-segment quality target hits the closed form") {
  // |m_q - m_gt| = l_gt and zero IoU: target (1/e, 0); zeta = (0,0) reads 1/e
  Tape tape;
  ModelConfig mcfg = tiny_config();
  mcfg.n_queries = 2;
  LossConfig cfg;
  std::vector<GroundTruthAction> gts = {{{0.25, 0.125}, 0}};
  MatchResult match = make_match({{0, 0}}, {1});
  Array cls(2, 2, 0.0);
  Array qual(2, 2, 0.0);
  Array seg = Array::from(2, 2, {0.375, 0.0625, 0.7, 0.1});

  Model::DecodeOut one;
  one.layers.push_back(make_layer(tape, cls, seg, qual));
  auto wl = window_loss(tape, one, {}, gts, match, mcfg, cfg);
  CHECK(wl.quality.item() == doctest::Approx(0.36787944117144233).epsilon(1e-12));

  Model::DecodeOut two;  // summed over layers, then match-normalized
  two.layers.push_back(make_layer(tape, cls, seg, qual));
  two.layers.push_back(make_layer(tape, cls, seg, qual));
  auto wl2 = window_loss(tape, two, {}, gts, match, mcfg, cfg);
  CHECK(wl2.quality.item() ==
        doctest::Approx(2.0 * 0.36787944117144233).epsilon(1e-12));
}

TEST_CASE("window loss: ace_dec equals independently composed focal sums") {
  Tape tape;
  std::mt19937_64 rng(23);
  ModelConfig mcfg = tiny_config();
  mcfg.n_queries = 3;
  LossConfig cfg;
  std::vector<GroundTruthAction> gts = {{{0.375, 0.125}, 1}, {{0.71875, 0.15625}, 0}};
  MatchResult match = make_match({{2, 0}, {0, 1}}, {1});

  Model::DecodeOut dec;
  std::vector<Var> gt_logits;
  for (int l = 0; l < 2; ++l) {
    dec.layers.push_back(make_layer(tape, random_array(3, 2, rng, 2.0),
                                    Array::from(3, 2, {0.3, 0.1, 0.55, 0.2, 0.8, 0.1}),
                                    Array(3, 2, 0.5)));
    gt_logits.push_back(tape.constant(random_array(2, 2, rng, 2.0)));
  }
  auto wl = window_loss(tape, dec, gt_logits, gts, match, mcfg, cfg);

  const auto targets = focal_targets(match, gts, mcfg.n_queries);
  const std::vector<int> gt_cls = {1, 0};  // row order follows the gt order
  double expect = 0.0;
  for (int l = 0; l < 2; ++l) {
    const double layer =
        focal_loss(dec.layers[l].cls_logits, targets, 2, cfg).item() +
        focal_loss(gt_logits[l], gt_cls, 2, cfg).item();
    expect += layer;
    CHECK(wl.layer_focal[l] == doctest::Approx(layer).epsilon(1e-12));
  }
  CHECK(wl.ace_dec.item() == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("window loss: invariant under a simultaneous query permutation") {
  Tape tape;
  std::mt19937_64 rng(29);
  ModelConfig mcfg = tiny_config();
  LossConfig cfg;
  std::vector<GroundTruthAction> gts = {{{0.3, 0.15}, 0}, {{0.7, 0.2}, 1}};

  Array cls = random_array(4, 2, rng, 2.0);
  Array seg(4, 2);
  for (std::size_t q = 0; q < 4; ++q) {
    seg.at(q, 0) = 0.2 + 0.18 * static_cast<double>(q);
    seg.at(q, 1) = 0.1 + 0.03 * static_cast<double>(q);
  }
  Array qual = random_array(4, 2, rng, 0.4);

  // reverse the query order and rewrite the matched indices to follow
  Array cls_r(4, 2), seg_r(4, 2), qual_r(4, 2);
  for (std::size_t q = 0; q < 4; ++q)
    for (std::size_t c = 0; c < 2; ++c) {
      cls_r.at(3 - q, c) = cls.at(q, c);
      seg_r.at(3 - q, c) = seg.at(q, c);
      qual_r.at(3 - q, c) = qual.at(q, c);
    }

  Model::DecodeOut base, perm;
  base.layers.push_back(make_layer(tape, cls, seg, qual));
  perm.layers.push_back(make_layer(tape, cls_r, seg_r, qual_r));
  auto a = window_loss(tape, base, {}, gts, make_match({{1, 0}, {3, 1}}, {0, 2}),
                       mcfg, cfg);
  auto b = window_loss(tape, perm, {}, gts, make_match({{2, 0}, {0, 1}}, {1, 3}),
                       mcfg, cfg);
  CHECK(b.ace_dec.item() == doctest::Approx(a.ace_dec.item()).epsilon(1e-12));
  CHECK(b.l1.item() == doctest::Approx(a.l1.item()).epsilon(1e-12));
  CHECK(b.giou.item() == doctest::Approx(a.giou.item()).epsilon(1e-12));
  CHECK(b.quality.item() == doctest::Approx(a.quality.item()).epsilon(1e-12));
  CHECK(b.decay.item() == doctest::Approx(a.decay.item()).epsilon(1e-12));
}

TEST_CASE("window loss: zero ground truths leave pure-background focal") {
  Tape tape;
  std::mt19937_64 rng(37);
  ModelConfig mcfg = tiny_config();
  mcfg.n_queries = 3;
  LossConfig cfg;
  Array cls = random_array(3, 2, rng, 2.0);
  Array seg = Array::from(3, 2, {0.3, 0.1, 0.55, 0.2, 0.8, 0.1});

  Model::DecodeOut dec;
  dec.layers.push_back(make_layer(tape, cls, seg, Array(3, 2, 0.5)));
  auto wl = window_loss(tape, dec, {}, {}, make_match({}, {0, 1, 2}), mcfg, cfg);
  CHECK(wl.n_matched == 0);
  CHECK(wl.ace_dec.item() ==
        focal_loss(tape.constant(cls), {-1, -1, -1}, 1, cfg).item());
  CHECK(wl.l1.item() == 0.0);
  CHECK(wl.giou.item() == 0.0);
  CHECK(wl.quality.item() == 0.0);
  CHECK(wl.decay.item() > 0.0);
}

TEST_CASE("window loss: decay term is off without relational attention") {
  Tape tape;
  ModelConfig mcfg = tiny_config();
  mcfg.n_queries = 2;
  mcfg.relational_attention = false;
  LossConfig cfg;
  Model::DecodeOut dec;
  dec.layers.push_back(make_layer(tape, Array(2, 2, 0.0),
                                  Array::from(2, 2, {0.4, 0.2, 0.45, 0.2}),
                                  Array(2, 2, 0.5)));
  auto wl = window_loss(tape, dec, {}, {}, make_match({}, {0, 1}), mcfg, cfg);
  CHECK(wl.decay.item() == 0.0);
}

TEST_CASE("window loss: validation") {
  Tape tape;
  ModelConfig mcfg = tiny_config();
  mcfg.n_queries = 2;
  LossConfig cfg;
  std::vector<GroundTruthAction> gts = {{{0.4, 0.2}, 0}};
  Model::DecodeOut dec;
  dec.layers.push_back(make_layer(tape, Array(2, 2, 0.0),
                                  Array::from(2, 2, {0.4, 0.2, 0.7, 0.1}),
                                  Array(2, 2, 0.5)));

  // match must cover every gt, in gt order
  CHECK_THROWS_AS(window_loss(tape, dec, {}, gts, make_match({}, {0, 1}), mcfg, cfg),
                  ValueError);
  std::vector<GroundTruthAction> two = {gts[0], {{0.7, 0.1}, 1}};
  CHECK_THROWS_AS(window_loss(tape, dec, {}, two,
                              make_match({{0, 1}, {1, 0}}, {}), mcfg, cfg),
                  ValueError);
  // one gt-branch logits block per decoder layer
  std::vector<Var> bad_gt = {tape.constant(Array(1, 2, 0.0)),
                             tape.constant(Array(1, 2, 0.0))};
  CHECK_THROWS_AS(window_loss(tape, dec, bad_gt, gts, make_match({{0, 0}}, {1}),
                              mcfg, cfg),
                  ShapeError);
  // freeze modes need a freeze
  CHECK_THROWS_AS(window_loss(tape, dec, {}, gts, make_match({{0, 0}}, {1}), mcfg,
                              cfg, Freeze::record, nullptr),
                  ValueError);
}

TEST_CASE("window loss: quality targets record and replay") {
  Tape tape;
  ModelConfig mcfg = tiny_config();
  mcfg.n_queries = 2;
  LossConfig cfg;
  std::vector<GroundTruthAction> gts = {{{0.4, 0.2}, 0}};
  MatchResult match = make_match({{0, 0}}, {1});
  Model::DecodeOut dec;
  for (int l = 0; l < 2; ++l)
    dec.layers.push_back(make_layer(tape, Array(2, 2, 0.0),
                                    Array::from(2, 2, {0.45, 0.25, 0.7, 0.1}),
                                    Array(2, 2, 0.5)));

  WindowFreeze freeze;
  auto rec = window_loss(tape, dec, {}, gts, match, mcfg, cfg, Freeze::record, &freeze);
  REQUIRE(freeze.quality_targets.size() == 2);  // one per layer
  auto rep = window_loss(tape, dec, {}, gts, match, mcfg, cfg, Freeze::replay, &freeze);
  CHECK(rep.quality.item() == rec.quality.item());

  WindowFreeze mutated = freeze;
  mutated.quality_targets[0].at(0, 0) += 1.0;
  auto moved = window_loss(tape, dec, {}, gts, match, mcfg, cfg, Freeze::replay, &mutated);
  CHECK(moved.quality.item() != rec.quality.item());

  WindowFreeze padded = freeze;
  padded.quality_targets.push_back(Array(1, 2, 0.0));
  CHECK_THROWS_AS(
      window_loss(tape, dec, {}, gts, match, mcfg, cfg, Freeze::replay, &padded),
      ValueError);
}

TEST_CASE("total loss: breakdown sums to the weighted total") {
  Tape tape;
  std::mt19937_64 rng(43);
  ModelConfig mcfg = tiny_config();
  mcfg.n_queries = 3;
  std::vector<GroundTruthAction> gts = {{{0.375, 0.125}, 1}};
  MatchResult match = make_match({{1, 0}}, {0, 2});
  Array seg = Array::from(3, 2, {0.3, 0.1, 0.5, 0.22, 0.8, 0.1});

  auto make_window = [&](const LossConfig& cfg, unsigned shift) {
    Model::DecodeOut dec;
    std::vector<Var> gt_logits;
    for (unsigned l = 0; l < 2; ++l) {
      dec.layers.push_back(make_layer(tape, random_array(3, 2, rng, 1.0 + shift),
                                      seg, random_array(3, 2, rng, 0.4)));
      gt_logits.push_back(tape.constant(random_array(1, 2, rng, 2.0)));
    }
    return window_loss(tape, dec, gt_logits, gts, match, mcfg, cfg);
  };

  for (LossConfig cfg : {LossConfig{}, [] {
         LossConfig c;
         c.gamma1 = 3.5;
         c.gamma2 = 0.7;
         c.lambda_enc = 2.0;
         c.lambda_zeta = 0.5;
         c.lambda_decay = 0.25;
         return c;
       }()}) {
    std::vector<WindowLoss> windows = {make_window(cfg, 0), make_window(cfg, 1)};
    Var enc = tape.constant(Array::scalar(0.37));
    LossBreakdown bd = total_loss(tape, enc, windows, cfg);

    const double expect = cfg.lambda_enc * bd.ace_enc + bd.ace_dec +
                          cfg.lambda_zeta * bd.quality + cfg.gamma1 * bd.l1 +
                          cfg.gamma2 * bd.giou + cfg.lambda_decay * bd.iou_decay;
    CHECK(std::abs(bd.total_value - expect) < 1e-10);
    CHECK(bd.total.item() == bd.total_value);
    CHECK(bd.ace_enc == 0.37);
    CHECK(bd.n_matched == 2);
    for (std::size_t l = 0; l < 2; ++l) {
      CHECK(bd.layer_focal[l] ==
            doctest::Approx(0.5 * (windows[0].layer_focal[l] + windows[1].layer_focal[l]))
                .epsilon(1e-12));
      CHECK(bd.layer_l1[l] ==
            doctest::Approx(0.5 * (windows[0].layer_l1[l] + windows[1].layer_l1[l]))
                .epsilon(1e-12));
    }
  }
}

TEST_CASE("total loss: log line names every component") {
  Tape tape;
  ModelConfig mcfg = tiny_config();
  mcfg.n_queries = 2;
  LossConfig cfg;
  Model::DecodeOut dec;
  dec.layers.push_back(make_layer(tape, Array(2, 2, 0.0),
                                  Array::from(2, 2, {0.4, 0.2, 0.7, 0.1}),
                                  Array(2, 2, 0.5)));
  auto wl = window_loss(tape, dec, {}, {}, make_match({}, {0, 1}), mcfg, cfg);
  LossBreakdown bd = total_loss(tape, tape.constant(Array::scalar(0.0)), {wl}, cfg);
  const std::string line = bd.log_line(3);
  for (const char* key : {"step=3", "total=", "ace_enc=", "ace_dec=", "quality=",
                          "l1=", "giou=", "iou_decay=", "matched=0"})
    CHECK(line.find(key) != std::string::npos);
}

TEST_CASE("total loss: validation") {
  Tape tape;
  LossConfig cfg;
  CHECK_THROWS_AS(total_loss(tape, tape.constant(Array::scalar(0.0)), {}, cfg),
                  ValueError);

  ModelConfig mcfg = tiny_config();
  mcfg.n_queries = 2;
  Array seg = Array::from(2, 2, {0.4, 0.2, 0.7, 0.1});
  Model::DecodeOut one, two;
  one.layers.push_back(make_layer(tape, Array(2, 2, 0.0), seg, Array(2, 2, 0.5)));
  two.layers.push_back(make_layer(tape, Array(2, 2, 0.0), seg, Array(2, 2, 0.5)));
  two.layers.push_back(make_layer(tape, Array(2, 2, 0.0), seg, Array(2, 2, 0.5)));
  auto wa = window_loss(tape, one, {}, {}, make_match({}, {0, 1}), mcfg, cfg);
  auto wb = window_loss(tape, two, {}, {}, make_match({}, {0, 1}), mcfg, cfg);
  CHECK_THROWS_AS(total_loss(tape, tape.constant(Array::scalar(0.0)), {wa, wb}, cfg),
                  ValueError);
}

TEST_CASE("losses stay finite under saturated logits") {
  Tape tape;
  std::mt19937_64 rng(47);
  ModelConfig mcfg = tiny_config();
  mcfg.n_queries = 3;
  LossConfig cfg;
  std::vector<GroundTruthAction> gts = {{{0.5, 0.9}, 1}, {{0.05, 0.02}, 0}};
  MatchResult match = make_match({{1, 0}, {2, 1}}, {0});

  Array cls(3, 2), qual(3, 2);
  for (std::size_t i = 0; i < cls.size(); ++i) cls.data[i] = (i % 2 ? 30.0 : -30.0);
  for (std::size_t i = 0; i < qual.size(); ++i) qual.data[i] = (i % 2 ? 1.0 : 0.0);
  Array seg = Array::from(3, 2, {0.001, 0.998, 0.5, 0.001, 0.97, 0.05});

  Model::DecodeOut dec;
  std::vector<Var> gt_logits;
  for (int l = 0; l < 2; ++l) {
    dec.layers.push_back(make_layer(tape, cls, seg, qual));
    gt_logits.push_back(tape.constant(Array(2, 2, 30.0)));
  }
  auto wl = window_loss(tape, dec, gt_logits, gts, match, mcfg, cfg);
  LossBreakdown bd = total_loss(tape, tape.constant(Array::scalar(0.0)), {wl}, cfg);
  for (double v : {bd.total_value, bd.ace_dec, bd.quality, bd.l1, bd.giou, bd.iou_decay})
    CHECK(std::isfinite(v));
}

TEST_CASE("loss config validation rejects out-of-range settings") {
  auto bad = [](auto mutate) {
    LossConfig cfg;
    mutate(cfg);
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
  };
  LossConfig ok;
  CHECK_NOTHROW(ok.validate());
  bad([](LossConfig& c) { c.focal_alpha = 0.0; });
  bad([](LossConfig& c) { c.focal_alpha = 1.0; });
  bad([](LossConfig& c) { c.focal_gamma = -0.5; });
  bad([](LossConfig& c) { c.gamma1 = -1.0; });
  bad([](LossConfig& c) { c.lambda_decay = -0.1; });
  bad([](LossConfig& c) { c.k_negatives = 0; });
  bad([](LossConfig& c) { c.xi = 0.05; });
  bad([](LossConfig& c) { c.xi = 1.5; });
  bad([](LossConfig& c) { c.roi_bins = 0; });
  bad([](LossConfig& c) { c.temperature = 0.0; });
  bad([](LossConfig& c) { c.match.cls = -2.0; });
}

TEST_CASE("end-to-end gradient of the total objective matches finite differences") {
  ModelConfig cfg = tiny_config();
  cfg.enc_layers = 1;
  Model model(cfg);
  std::mt19937_64 rng(19);
  model.init_params(rng);
  randomize_model(model, rng);

  const Array raw = random_array(10, cfg.d_in, rng);
  const std::vector<GroundTruthAction> gts = {
      {{0.25, 0.125}, 1}, {{0.5, 0.125}, 0}, {{0.78125, 0.125}, 1}};
  LossConfig lcfg;
  lcfg.k_negatives = 2;
  lcfg.roi_bins = 4;

  DecodeFreeze dfz;
  WindowFreeze wfz;
  AceEncFreeze afz;
  MatchResult match;
  bool first = true;

  auto builder = [&](Tape& t, const ParamBinding& p) {
    const Freeze mode = first ? Freeze::record : Freeze::replay;
    auto enc = model.encode(t, p, t.constant(raw));
    auto dec = model.decode(t, p, enc.encoded, mode, &dfz);
    if (first) {  // assignment fixed from the recorded pass
      const auto& last = dec.layers.back();
      match = hungarian_match(match_cost_matrix(sigmoid_values(last.cls_logits.val()),
                                                last.segments.val(), gts, lcfg.match));
    }
    std::vector<std::size_t> qidx;
    std::vector<TemporalSegment> gsegs;
    for (auto [q, g] : match.pairs) {
      qidx.push_back(q);
      gsegs.push_back(gts[g].segment);
    }
    auto gt_logits = model.decode_gt_branch(t, p, enc.encoded, dec, qidx, gsegs);
    auto wl = window_loss(t, dec, gt_logits, gts, match, cfg, lcfg, mode, &wfz);
    std::mt19937_64 sample_rng(4);  // consumed on record only
    Var enc_loss = ace_enc_loss(t, {{enc.x_tilde, gts}}, lcfg, sample_rng, mode, &afz);
    LossBreakdown bd = total_loss(t, enc_loss, {wl}, lcfg);
    first = false;
    return bd.total;
  };

  auto r = fd_check_params(model.params(), builder, 1e-5, 1e-8, 1e-4);
  CHECK(match.pairs.size() == 3);
  CHECK(r.checked > 500);
  // kink-straddling / roundoff-floored coordinates the oracle can't certify
  CHECK(r.unreliable < r.checked / 10);
  INFO("worst coordinate: ", r.worst);
  CHECK(r.max_rel < 1e-4);
}
