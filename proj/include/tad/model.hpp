#pragma once

#include "tad/array.hpp"
#include "tad/geometry.hpp"
#include "tad/ndgrad.hpp"
#include "tad/params.hpp"

#include <random>
#include <string>
#include <vector>

namespace tad {

struct ModelConfig {
  std::size_t d_in = 64;        // raw snippet feature dim
  std::size_t d = 256;          // hidden dim
  std::size_t ffn = 1024;       // feedforward hidden dim
  std::size_t enc_layers = 2;
  std::size_t dec_layers = 4;
  std::size_t heads = 8;        // deformable attention heads
  std::size_t k = 4;            // sample offsets per head
  std::size_t n_queries = 40;
  std::size_t n_classes = 4;
  double gamma = 0.2;           // query-similarity threshold
  double tau = 0.5;             // query-IoU threshold
  std::string set_mode = "intersection";  // or "paper-verbatim" (formula as printed)
  double ln_eps = 1e-5;
  // Ablation switches (architecture keeps all heads; these gate behavior).
  bool relational_attention = true;  // off -> plain full self-attention over queries
  bool quality = true;               // off -> quality ignored by loss and scoring
  bool gt_class_branch = true;       // off -> no gt-conditioned classification loss
  bool contrastive_enc = true;       // off -> no encoder contrastive loss

  void validate() const;  // throws ConfigError
};

// Sinusoidal position encoding, added to the encoder input only.
Array sinusoidal_pe(std::size_t t, std::size_t d);

// RAID edge construction from constant similarity/IoU matrices. Returns a
// row-major [L x L] boolean mask; the diagonal always survives.
// mode "paper-verbatim": E = (E_IoU \ E_sim) ∪ E_s  (formula as printed)
// mode "intersection": E = (E_IoU ∩ E_sim) ∪ E_s (prose reading: similar AND
// low-overlap)
std::vector<unsigned char> build_relational_mask(const Array& a, const Array& b,
                                                 double gamma, double tau,
                                                 const std::string& mode);

// Single-head attention over queries under a relational mask: weights are the
// masked softmax of (q W_q)(q W_k)^T / sqrt(D), context = weights * (q W_v).
// Residual + layer norm are applied by the caller.
struct RaidAttention {
  Var weights;  // [L_q x L_q], exactly 0 outside the mask
  Var context;  // [L_q x D]
};
RaidAttention relational_attention(Var q, Var wq, Var wk, Var wv,
                                   std::vector<unsigned char> mask);

// Record/replay state for the decoder's non-differentiable boundary values
// (RAID masks and the detached per-layer input segments). Finite-difference
// checks replay a recorded pass so FD and backward differentiate the exact
// same function.
struct DecodeFreeze {
  std::vector<std::vector<unsigned char>> masks;  // per layer
  std::vector<Array> seg_in;                      // per layer; layer 0 unused
};

enum class Freeze { none, record, replay };

class Model {
 public:
  explicit Model(ModelConfig cfg);

  // Registers and initializes every parameter (idempotent-once; call on a
  // fresh model). Deterministic for a given rng state.
  void init_params(std::mt19937_64& rng);

  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }
  const ModelConfig& config() const { return cfg_; }

  struct EncodeOut {
    Var x_tilde;  // post-projection, pre-encoder (contrastive feature site)
    Var encoded;  // after position encoding + enc_layers
  };
  EncodeOut encode(Tape& tape, const ParamBinding& p, Var raw) const;

  struct LayerOut {
    Var post_raid;   // [L_q x D] query features after relational attention
    Var features;    // [L_q x D] after cross-attention + FFN (head input)
    Var cls_logits;  // [L_q x C]
    Var segments;    // [L_q x 2] refined (m, d), live
    Var quality;     // [L_q x 2] (zeta1, zeta2)
    Array seg_in;    // the layer's input segments (value snapshot)
  };
  struct DecodeOut {
    Var init_segments;  // layer-0 reference segments, live
    std::vector<LayerOut> layers;
  };
  DecodeOut decode(Tape& tape, const ParamBinding& p, Var encoded,
                   Freeze mode = Freeze::none, DecodeFreeze* freeze = nullptr) const;

  // Ground-truth-conditioned classification branch: for each decoder layer,
  // re-runs that layer's cross-attention block with the matched queries'
  // post-RAID features and the gt segments as references, then that layer's
  // classification head. Returns one [M x C] logits Var per layer.
  std::vector<Var> decode_gt_branch(Tape& tape, const ParamBinding& p, Var encoded,
                                    const DecodeOut& main,
                                    const std::vector<std::size_t>& query_idx,
                                    const std::vector<TemporalSegment>& gt) const;

 private:
  ModelConfig cfg_;
  ParamStore params_;
};

}  // namespace tad
