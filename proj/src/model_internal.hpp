#pragma once

// Building blocks shared between the encoder, the decoder main path, and the
// gt-conditioned classification branch.

#include "tad/model.hpp"
#include "tad/ndgrad.hpp"
#include "tad/params.hpp"

#include <cmath>
#include <string>

namespace tad::detail {

// Softmax over the k samples within each head: x is [rows x heads*k].
inline Var softmax_per_head(Var x, std::size_t heads, std::size_t k) {
  const std::size_t rows = x.rows();
  Var grouped = reshape(x, rows * heads, k);
  return reshape(softmax_rows(grouped), rows, heads * k);
}

inline Var mlp3(Var x, const ParamBinding& p, const std::string& prefix) {
  Var h = relu(affine(x, p[prefix + ".l0.w"], p[prefix + ".l0.b"]));
  h = relu(affine(h, p[prefix + ".l1.w"], p[prefix + ".l1.b"]));
  return affine(h, p[prefix + ".l2.w"], p[prefix + ".l2.b"]);
}

// One deformable self-attention encoder layer (defined in encoder.cpp).
Var encoder_layer(Tape& tape, const ParamBinding& p, Var h, const std::string& lp,
                  const ModelConfig& cfg);

// Deformable cross-attention + FFN sublayers of one decoder layer. `seg` is a
// live [M x 2] (m, d) Var; sampling positions are confined to the clamped
// segment, so every sample lands inside it by construction. `out_pos`, when
// given, receives the frame-coordinate sample positions [M x heads*k];
// `out_sampled` the pre-projection gathered features [M x D].
inline Var cross_ffn_block(Tape& tape, const ParamBinding& p, const std::string& lp,
                           Var q, Var seg, Var encoded, const ModelConfig& cfg,
                           Var* out_pos = nullptr, Var* out_sampled = nullptr) {
  Var m = slice_cols(seg, 0, 1);
  Var half = mul_const(slice_cols(seg, 1, 2), 0.5);
  Var cs = clamp(sub(m, half), 0.0, 1.0);
  Var ce = clamp(add(m, half), 0.0, 1.0);
  Var len = sub(ce, cs);

  Var off = affine(q, p[lp + ".cross.offset.w"], p[lp + ".cross.offset.b"]);
  Var pos_norm = add_colvec(mul_colvec(sigmoid(off), len), cs);
  Var pos = mul_const(pos_norm, static_cast<double>(encoded.rows() - 1));
  if (out_pos != nullptr) *out_pos = pos;
  Var logits = affine(q, p[lp + ".cross.logit.w"], p[lp + ".cross.logit.b"]);
  Var w = softmax_per_head(logits, cfg.heads, cfg.k);

  Var sampled = deform_sample(encoded, pos, w, cfg.heads, cfg.k);
  if (out_sampled != nullptr) *out_sampled = sampled;
  Var attn = affine(sampled, p[lp + ".cross.out.w"], p[lp + ".cross.out.b"]);
  Var h = layer_norm(add(q, attn), p[lp + ".cross_ln.gamma"], p[lp + ".cross_ln.beta"],
                     cfg.ln_eps);
  Var f = affine(relu(affine(h, p[lp + ".ffn1.w"], p[lp + ".ffn1.b"])),
                 p[lp + ".ffn2.w"], p[lp + ".ffn2.b"]);
  (void)tape;
  return layer_norm(add(h, f), p[lp + ".ffn_ln.gamma"], p[lp + ".ffn_ln.beta"],
                    cfg.ln_eps);
}

}  // namespace tad::detail
