#include "tad/model.hpp"

#include "tad/errors.hpp"

#include <cmath>
#include <string>

namespace tad {

void ModelConfig::validate() const {
  if (d == 0 || d_in == 0 || ffn == 0) throw ConfigError("model dims must be positive");
  if (heads == 0 || d % heads != 0)
    throw ConfigError("hidden dim " + std::to_string(d) + " not divisible by heads " +
                      std::to_string(heads));
  if (k < 1) throw ConfigError("need at least one sample offset per head");
  if (dec_layers < 1) throw ConfigError("need at least one decoder layer");
  if (n_queries < 1 || n_classes < 1)
    throw ConfigError("need at least one query and one class");
  if (gamma < -1.0 || gamma > 1.0)
    throw ConfigError("similarity threshold gamma outside [-1,1]");
  if (tau < 0.0 || tau > 1.0) throw ConfigError("iou threshold tau outside [0,1]");
  if (set_mode != "intersection" && set_mode != "paper-verbatim" &&
      set_mode != "difference")
    throw ConfigError("set_mode must be 'intersection' or 'paper-verbatim', got " +
                      set_mode);
}

Array sinusoidal_pe(std::size_t t, std::size_t d) {
  Array pe(t, d);
  for (std::size_t i = 0; i < t; ++i) {
    for (std::size_t j = 0; j + 1 < d; j += 2) {
      const double freq = std::pow(10000.0, -static_cast<double>(j) / static_cast<double>(d));
      pe.at(i, j) = std::sin(static_cast<double>(i) * freq);
      pe.at(i, j + 1) = std::cos(static_cast<double>(i) * freq);
    }
    if (d % 2 == 1) {
      const double freq = std::pow(10000.0, -static_cast<double>(d - 1) / static_cast<double>(d));
      pe.at(i, d - 1) = std::sin(static_cast<double>(i) * freq);
    }
  }
  return pe;
}

std::vector<unsigned char> build_relational_mask(const Array& a, const Array& b,
                                                 double gamma, double tau,
                                                 const std::string& mode) {
  if (!a.same_shape(b) || a.rows != a.cols)
    throw ShapeError("build_relational_mask: A and B must be square and same shape");
  const bool difference = mode == "paper-verbatim" || mode == "difference";
  if (!difference && mode != "intersection")
    throw ValueError("build_relational_mask: unknown mode " + mode);
  const std::size_t n = a.rows;
  std::vector<unsigned char> mask(n * n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const bool e_sim = a.at(i, j) - gamma > 0.0;
      const bool e_iou = b.at(i, j) - tau < 0.0;
      const bool edge = difference ? (e_iou && !e_sim) : (e_iou && e_sim);
      mask[i * n + j] = (edge || i == j) ? 1 : 0;
    }
  }
  return mask;
}

Model::Model(ModelConfig cfg) : cfg_(std::move(cfg)) { cfg_.validate(); }

void Model::init_params(std::mt19937_64& rng) {
  const std::size_t d = cfg_.d, hk = cfg_.heads * cfg_.k;

  params_.add("input_proj.w", init_linear(cfg_.d_in, d, rng));
  params_.add("input_proj.b", init_bias(cfg_.d_in, d, rng));

  for (std::size_t l = 0; l < cfg_.enc_layers; ++l) {
    const std::string lp = "encoder.layer" + std::to_string(l);
    // zero-init offsets/logits: the first pass samples each frame at itself
    // with uniform weights
    params_.add(lp + ".offset.w", init_zeros(d, hk));
    params_.add(lp + ".offset.b", init_zeros(1, hk));
    params_.add(lp + ".logit.w", init_zeros(d, hk));
    params_.add(lp + ".logit.b", init_zeros(1, hk));
    params_.add(lp + ".value.w", init_linear(d, d, rng));
    params_.add(lp + ".value.b", init_bias(d, d, rng));
    params_.add(lp + ".out.w", init_linear(d, d, rng));
    params_.add(lp + ".out.b", init_bias(d, d, rng));
    params_.add(lp + ".attn_ln.gamma", Array(1, d, 1.0));
    params_.add(lp + ".attn_ln.beta", init_zeros(1, d));
    params_.add(lp + ".ffn1.w", init_linear(d, cfg_.ffn, rng));
    params_.add(lp + ".ffn1.b", init_bias(d, cfg_.ffn, rng));
    params_.add(lp + ".ffn2.w", init_linear(cfg_.ffn, d, rng));
    params_.add(lp + ".ffn2.b", init_bias(cfg_.ffn, d, rng));
    params_.add(lp + ".ffn_ln.gamma", Array(1, d, 1.0));
    params_.add(lp + ".ffn_ln.beta", init_zeros(1, d));
  }

  params_.add("queries", init_normal(cfg_.n_queries, d, 0.02, rng));
  // zero-init: every query starts at reference segment (0.5, 0.5)
  params_.add("ref_head.w", init_zeros(d, 2));
  params_.add("ref_head.b", init_zeros(1, 2));

  for (std::size_t l = 0; l < cfg_.dec_layers; ++l) {
    const std::string lp = "decoder.layer" + std::to_string(l);
    params_.add(lp + ".raid.wq", init_linear(d, d, rng));
    params_.add(lp + ".raid.wk", init_linear(d, d, rng));
    params_.add(lp + ".raid.wv", init_linear(d, d, rng));
    params_.add(lp + ".raid_ln.gamma", Array(1, d, 1.0));
    params_.add(lp + ".raid_ln.beta", init_zeros(1, d));
    params_.add(lp + ".cross.offset.w", init_zeros(d, hk));
    params_.add(lp + ".cross.offset.b", init_zeros(1, hk));
    params_.add(lp + ".cross.logit.w", init_zeros(d, hk));
    params_.add(lp + ".cross.logit.b", init_zeros(1, hk));
    params_.add(lp + ".cross.out.w", init_linear(d, d, rng));
    params_.add(lp + ".cross.out.b", init_bias(d, d, rng));
    params_.add(lp + ".cross_ln.gamma", Array(1, d, 1.0));
    params_.add(lp + ".cross_ln.beta", init_zeros(1, d));
    params_.add(lp + ".ffn1.w", init_linear(d, cfg_.ffn, rng));
    params_.add(lp + ".ffn1.b", init_bias(d, cfg_.ffn, rng));
    params_.add(lp + ".ffn2.w", init_linear(cfg_.ffn, d, rng));
    params_.add(lp + ".ffn2.b", init_bias(cfg_.ffn, d, rng));
    params_.add(lp + ".ffn_ln.gamma", Array(1, d, 1.0));
    params_.add(lp + ".ffn_ln.beta", init_zeros(1, d));
    params_.add(lp + ".cls.l0.w", init_linear(d, d, rng));
    params_.add(lp + ".cls.l0.b", init_bias(d, d, rng));
    params_.add(lp + ".cls.l1.w", init_linear(d, d, rng));
    params_.add(lp + ".cls.l1.b", init_bias(d, d, rng));
    params_.add(lp + ".cls.l2.w", init_linear(d, cfg_.n_classes, rng));
    params_.add(lp + ".cls.l2.b", init_bias(d, cfg_.n_classes, rng));
    params_.add(lp + ".reg.l0.w", init_linear(d, d, rng));
    params_.add(lp + ".reg.l0.b", init_bias(d, d, rng));
    params_.add(lp + ".reg.l1.w", init_linear(d, d, rng));
    params_.add(lp + ".reg.l1.b", init_bias(d, d, rng));
    // zero-init final delta layer: refinement starts as the identity
    params_.add(lp + ".reg.l2.w", init_zeros(d, 2));
    params_.add(lp + ".reg.l2.b", init_zeros(1, 2));
    params_.add(lp + ".quality.w", init_linear(d, 2, rng));
    params_.add(lp + ".quality.b", init_bias(d, 2, rng));
  }
}

}  // namespace tad
