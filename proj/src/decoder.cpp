#include "tad/errors.hpp"
#include "tad/model.hpp"

#include "model_internal.hpp"

#include <cmath>
#include <string>

namespace tad {

namespace {

std::vector<TemporalSegment> to_segments(const Array& seg) {
  std::vector<TemporalSegment> out(seg.rows);
  for (std::size_t i = 0; i < seg.rows; ++i) out[i] = {seg.at(i, 0), seg.at(i, 1)};
  return out;
}

}  // namespace

RaidAttention relational_attention(Var q, Var wq, Var wk, Var wv,
                                   std::vector<unsigned char> mask) {
  if (mask.size() != q.rows() * q.rows())
    throw ShapeError("relational_attention: mask must be L_q x L_q");
  Var qh = matmul(q, wq);
  Var kh = matmul(q, wk);
  Var vh = matmul(q, wv);
  Var logits = mul_const(matmul_nt(qh, kh), 1.0 / std::sqrt(static_cast<double>(wq.cols())));
  Var weights = softmax_rows(logits, std::move(mask));
  return {weights, matmul(weights, vh)};
}

Model::DecodeOut Model::decode(Tape& tape, const ParamBinding& p, Var encoded,
                               Freeze mode, DecodeFreeze* freeze) const {
  if (encoded.cols() != cfg_.d)
    throw ShapeError("decode: encoded dim " + std::to_string(encoded.cols()) +
                     " != configured " + std::to_string(cfg_.d));
  if ((mode == Freeze::record || mode == Freeze::replay) && freeze == nullptr)
    throw ValueError("decode: freeze mode requires a DecodeFreeze");
  if (mode == Freeze::record) {
    freeze->masks.clear();
    freeze->seg_in.clear();
  }
  if (mode == Freeze::replay &&
      (freeze->masks.size() != cfg_.dec_layers || freeze->seg_in.size() != cfg_.dec_layers))
    throw ValueError("decode: replay state does not match layer count");

  const std::size_t lq = cfg_.n_queries;
  DecodeOut out;

  Var q = p["queries"];
  Var init_seg = sigmoid(affine(q, p["ref_head.w"], p["ref_head.b"]));
  out.init_segments = init_seg;

  Var seg_live = init_seg;  // live only into layer 0
  Array seg_vals = init_seg.val();

  for (std::size_t l = 0; l < cfg_.dec_layers; ++l) {
    const std::string lp = "decoder.layer" + std::to_string(l);

    Var seg_in;
    if (l == 0) {
      seg_in = seg_live;
    } else {
      if (mode == Freeze::replay) seg_vals = freeze->seg_in[l];
      seg_in = tape.constant(seg_vals);
    }
    if (mode == Freeze::record)
      freeze->seg_in.push_back(l == 0 ? Array() : seg_vals);

    // RAID mask from the layer's input values (constants by construction)
    std::vector<unsigned char> mask;
    if (mode == Freeze::replay) {
      mask = freeze->masks[l];
    } else if (!cfg_.relational_attention) {
      mask.assign(lq * lq, 1);
    } else {
      const Array a = pairwise_cosine(q.val());
      const Array b = pairwise_iou(to_segments(seg_vals));
      mask = build_relational_mask(a, b, cfg_.gamma, cfg_.tau, cfg_.set_mode);
    }
    if (mode == Freeze::record) freeze->masks.push_back(mask);

    RaidAttention ra = relational_attention(q, p[lp + ".raid.wq"], p[lp + ".raid.wk"],
                                            p[lp + ".raid.wv"], std::move(mask));
    Var q_mid = layer_norm(add(q, ra.context), p[lp + ".raid_ln.gamma"],
                           p[lp + ".raid_ln.beta"], cfg_.ln_eps);

    Var q_out = detail::cross_ffn_block(tape, p, lp, q_mid, seg_in, encoded, cfg_);

    Var cls = detail::mlp3(q_out, p, lp + ".cls");
    Var delta = detail::mlp3(q_out, p, lp + ".reg");
    Var refined = sigmoid(add(logit(clamp(seg_in, 1e-6, 1.0 - 1e-6)), delta));
    // ablated quality pins zeta = (1,1): scores reduce to the class probability
    Var quality =
        cfg_.quality
            ? sigmoid(affine(q_out, p[lp + ".quality.w"], p[lp + ".quality.b"]))
            : tape.constant(Array(lq, 2, 1.0));

    out.layers.push_back({q_mid, q_out, cls, refined, quality, seg_vals});

    q = q_out;
    seg_vals = refined.val();
  }
  return out;
}

std::vector<Var> Model::decode_gt_branch(Tape& tape, const ParamBinding& p, Var encoded,
                                         const DecodeOut& main,
                                         const std::vector<std::size_t>& query_idx,
                                         const std::vector<TemporalSegment>& gt) const {
  if (query_idx.size() != gt.size())
    throw ShapeError("decode_gt_branch: query/gt count mismatch");
  std::vector<Var> out;
  if (query_idx.empty()) return out;
  if (main.layers.size() != cfg_.dec_layers)
    throw ShapeError("decode_gt_branch: main decode has wrong layer count");

  Array seg(gt.size(), 2);
  for (std::size_t i = 0; i < gt.size(); ++i) {
    seg.at(i, 0) = gt[i].m;
    seg.at(i, 1) = gt[i].d;
  }

  for (std::size_t l = 0; l < cfg_.dec_layers; ++l) {
    const std::string lp = "decoder.layer" + std::to_string(l);
    Var qf = take_rows(main.layers[l].post_raid, query_idx);
    Var seg_c = tape.constant(seg);
    Var q_out = detail::cross_ffn_block(tape, p, lp, qf, seg_c, encoded, cfg_);
    out.push_back(detail::mlp3(q_out, p, lp + ".cls"));
  }
  return out;
}

}  // namespace tad
