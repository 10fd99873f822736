#include "tad/errors.hpp"
#include "tad/model.hpp"

#include "model_internal.hpp"

#include <string>

namespace tad::detail {

Var encoder_layer(Tape& tape, const ParamBinding& p, Var h, const std::string& lp,
                  const ModelConfig& cfg) {
  const std::size_t t = h.rows(), hk = cfg.heads * cfg.k;

  Var off = affine(h, p[lp + ".offset.w"], p[lp + ".offset.b"]);
  Array base(t, hk);
  for (std::size_t i = 0; i < t; ++i)
    for (std::size_t j = 0; j < hk; ++j) base.at(i, j) = static_cast<double>(i);
  Var pos = add(off, tape.constant(std::move(base)));  // clamped at sampling

  Var logits = affine(h, p[lp + ".logit.w"], p[lp + ".logit.b"]);
  Var w = detail::softmax_per_head(logits, cfg.heads, cfg.k);

  Var value = affine(h, p[lp + ".value.w"], p[lp + ".value.b"]);
  Var sampled = deform_sample(value, pos, w, cfg.heads, cfg.k);
  Var attn = affine(sampled, p[lp + ".out.w"], p[lp + ".out.b"]);
  h = layer_norm(add(h, attn), p[lp + ".attn_ln.gamma"], p[lp + ".attn_ln.beta"],
                 cfg.ln_eps);
  Var f = affine(relu(affine(h, p[lp + ".ffn1.w"], p[lp + ".ffn1.b"])),
                 p[lp + ".ffn2.w"], p[lp + ".ffn2.b"]);
  return layer_norm(add(h, f), p[lp + ".ffn_ln.gamma"], p[lp + ".ffn_ln.beta"],
                    cfg.ln_eps);
}

}  // namespace tad::detail

namespace tad {

Model::EncodeOut Model::encode(Tape& tape, const ParamBinding& p, Var raw) const {
  if (raw.cols() != cfg_.d_in)
    throw ShapeError("encode: raw feature dim " + std::to_string(raw.cols()) +
                     " != configured " + std::to_string(cfg_.d_in));
  if (raw.rows() < 2) throw ShapeError("encode: need at least 2 snippets");

  Var x_tilde = affine(raw, p["input_proj.w"], p["input_proj.b"]);
  Var h = add(x_tilde, tape.constant(sinusoidal_pe(raw.rows(), cfg_.d)));
  for (std::size_t l = 0; l < cfg_.enc_layers; ++l)
    h = detail::encoder_layer(tape, p, h, "encoder.layer" + std::to_string(l), cfg_);
  return {x_tilde, h};
}

}  // namespace tad
