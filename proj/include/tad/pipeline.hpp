#pragma once

#include "tad/config.hpp"
#include "tad/data.hpp"
#include "tad/detection.hpp"
#include "tad/eval.hpp"
#include "tad/losses.hpp"
#include "tad/matching.hpp"
#include "tad/model.hpp"

#include <iosfwd>
#include <random>
#include <string>
#include <vector>

namespace tad {

// Every non-differentiable decision one batch-loss evaluation makes: matches,
// RAID masks, detached reference segments, contrastive sampling, quality
// targets. Recording then replaying pins the batch loss to a fixed function
// of the parameters, which finite-difference checks require.
struct BatchFreeze {
  std::vector<DecodeFreeze> decode;         // per window
  std::vector<WindowFreeze> window;         // per window
  std::vector<MatchResult> matches;         // per window
  AceEncFreeze ace;                         // batch level
};

// Forward + loss over a batch of windows on one tape. ace_rng drives the
// contrastive negative sampling (advanced only when that loss is active).
LossBreakdown batch_loss(Tape& tape, const ParamBinding& p, const Model& model,
                         const std::vector<const WindowedSample*>& batch,
                         const RunConfig& cfg, std::mt19937_64& ace_rng,
                         Freeze mode = Freeze::none, BatchFreeze* freeze = nullptr);

struct TrainOptions {
  std::string out_dir;          // checkpoints land here
  std::ostream* log = nullptr;  // per-step key=value lines
  std::size_t max_steps = 0;    // 0 = run every epoch to completion
};

struct TrainResult {
  std::size_t steps = 0;
  std::vector<double> step_losses;
  std::string checkpoint_prefix;  // final checkpoint, config embedded
};

// Seeded training over the dataset's train split: shuffle windows per epoch,
// batch, forward, backward, clip, AdamW. Writes one checkpoint per completed
// epoch plus a final one. Non-finite losses abort naming the component.
TrainResult train_model(const RunConfig& cfg, const Dataset& ds,
                        const TrainOptions& opt);

// Rebuild a model from a checkpoint written by train_model, validating that
// every parameter exists with the stored shape. When cfg_out is non-null the
// embedded config is returned through it.
Model model_from_checkpoint(const std::string& path_prefix, RunConfig* cfg_out);

// Full-video inference: window (keeping gt-empty windows), decode, score,
// merge across windows.
std::vector<DetectionRecord> run_inference(const Model& model, const RunConfig& cfg,
                                           const std::vector<const VideoClip*>& videos);

// Dataset ground truths converted to seconds for the evaluator.
std::vector<EvalGroundTruth> eval_ground_truths(const Dataset& ds,
                                                const std::vector<std::size_t>& video_idx,
                                                double snippet_seconds);

struct GradcheckReport {
  std::size_t checked = 0;
  std::size_t unreliable = 0;  // kink-straddling coordinates the oracle skips
  double max_rel = 0.0;
  std::string worst;
  double seconds = 0.0;
  bool pass(double tol = 1e-4) const { return checked > 0 && max_rel < tol; }
};

// The stock configuration `gradcheck` runs when none is supplied: one window
// of 32 snippets, 16 input dims, a 32-dim model with 1 encoder and 2 decoder
// layers, 5 queries, 3 classes.
RunConfig gradcheck_config();

// Central finite differences over every trainable parameter of the full batch
// loss (one recorded pass, replayed per probe so both sides differentiate the
// same function). The regression/offset heads are nudged off their symmetric
// zero initialization first so segments are distinct and probes avoid min/max
// kinks.
GradcheckReport run_gradcheck(const RunConfig& cfg, std::ostream* log = nullptr);

}  // namespace tad
