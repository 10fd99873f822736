#include "tad/pipeline.hpp"

#include "tad/errors.hpp"
#include "tad/fdcheck.hpp"
#include "tad/params.hpp"
#include "tad/rng.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <numeric>
#include <ostream>

namespace tad {

namespace {

void check_finite(const LossBreakdown& b, std::size_t step) {
  const std::pair<const char*, double> parts[] = {
      {"ace_enc", b.ace_enc}, {"ace_dec", b.ace_dec}, {"quality", b.quality},
      {"l1", b.l1},           {"giou", b.giou},       {"iou_decay", b.iou_decay},
      {"total", b.total_value}};
  for (const auto& [name, value] : parts)
    if (!std::isfinite(value))
      throw NumericError("train: non-finite " + std::string(name) +
                         " loss at step " + std::to_string(step));
}

MatchResult all_unmatched(std::size_t n_queries) {
  MatchResult match;
  match.unmatched.resize(n_queries);
  std::iota(match.unmatched.begin(), match.unmatched.end(), 0);
  return match;
}

}  // namespace

LossBreakdown batch_loss(Tape& tape, const ParamBinding& p, const Model& model,
                         const std::vector<const WindowedSample*>& batch,
                         const RunConfig& cfg, std::mt19937_64& ace_rng,
                         Freeze mode, BatchFreeze* freeze) {
  if (batch.empty()) throw ValueError("batch_loss: empty batch");
  if (mode != Freeze::none && freeze == nullptr)
    throw ValueError("batch_loss: record/replay needs freeze state");
  if (mode == Freeze::record) {
    freeze->decode.assign(batch.size(), {});
    freeze->window.assign(batch.size(), {});
    freeze->matches.assign(batch.size(), {});
    freeze->ace = {};
  }
  if (mode == Freeze::replay &&
      (freeze->decode.size() != batch.size() || freeze->window.size() != batch.size() ||
       freeze->matches.size() != batch.size()))
    throw ValueError("batch_loss: replay state does not match the batch");

  const ModelConfig& mcfg = model.config();
  std::vector<AceEncItem> ace_items;
  std::vector<WindowLoss> window_losses;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const WindowedSample& sample = *batch[i];
    const Var raw = tape.constant(sample.features);
    const Model::EncodeOut enc = model.encode(tape, p, raw);
    if (mcfg.contrastive_enc && !sample.actions.empty())
      ace_items.push_back({enc.x_tilde, sample.actions});

    const Model::DecodeOut dec = model.decode(tape, p, enc.encoded, mode,
                                              freeze ? &freeze->decode[i] : nullptr);
    const Model::LayerOut& last = dec.layers.back();

    MatchResult match = all_unmatched(mcfg.n_queries);
    if (!sample.actions.empty()) {
      if (mode == Freeze::replay) {
        match = freeze->matches[i];
      } else {
        // a diverged forward pass must abort with the component named, not
        // stall the assignment solver on non-finite costs
        const auto finite = [](const Array& a) {
          return std::all_of(a.data.begin(), a.data.end(),
                             [](double x) { return std::isfinite(x); });
        };
        if (!finite(last.cls_logits.val()))
          throw NumericError("batch_loss: non-finite classification logits");
        if (!finite(last.segments.val()))
          throw NumericError("batch_loss: non-finite refined segments");
        match = hungarian_match(match_cost_matrix(sigmoid_values(last.cls_logits.val()),
                                                  last.segments.val(), sample.actions,
                                                  cfg.loss.match));
        if (mode == Freeze::record) freeze->matches[i] = match;
      }
    }

    std::vector<Var> gt_logits;
    if (mcfg.gt_class_branch && !match.pairs.empty()) {
      std::vector<std::size_t> query_idx;
      std::vector<TemporalSegment> gt_segments;
      for (const auto& [q, g] : match.pairs) {
        query_idx.push_back(q);
        gt_segments.push_back(sample.actions[g].segment);
      }
      gt_logits = model.decode_gt_branch(tape, p, enc.encoded, dec, query_idx,
                                         gt_segments);
    }

    window_losses.push_back(window_loss(tape, dec, gt_logits, sample.actions, match,
                                        mcfg, cfg.loss, mode,
                                        freeze ? &freeze->window[i] : nullptr));
  }

  const Var ace = ace_items.empty()
                      ? tape.constant(Array(1, 1, 0.0))
                      : ace_enc_loss(tape, ace_items, cfg.loss, ace_rng, mode,
                                     freeze ? &freeze->ace : nullptr);
  return total_loss(tape, ace, window_losses, cfg.loss);
}

TrainResult train_model(const RunConfig& cfg, const Dataset& ds,
                        const TrainOptions& opt) {
  cfg.validate();
  if (opt.out_dir.empty()) throw ConfigError("train: output directory required");
  std::filesystem::create_directories(opt.out_dir);

  const std::vector<WindowedSample> windows =
      window_dataset(ds, ds.train_videos, cfg.window, /*drop_empty=*/true);
  if (windows.empty())
    throw ConfigError("train: the training split has no windows with ground truth");

  Model model(cfg.model);
  std::mt19937_64 init_rng(stream_seed(cfg.train.seed, 0));
  model.init_params(init_rng);
  std::mt19937_64 order_rng(stream_seed(cfg.train.seed, 1));
  std::mt19937_64 ace_rng(stream_seed(cfg.train.seed, 2));
  AdamW optimizer({cfg.train.lr, cfg.train.beta1, cfg.train.beta2, cfg.train.adam_eps,
                   cfg.train.weight_decay});

  const std::string cfg_json = cfg.to_json();
  TrainResult result;
  std::vector<std::size_t> order(windows.size());
  std::iota(order.begin(), order.end(), 0);

  bool stopped = false;
  for (std::size_t epoch = 0; epoch < cfg.train.epochs && !stopped; ++epoch) {
    std::shuffle(order.begin(), order.end(), order_rng);
    for (std::size_t start = 0; start < order.size(); start += cfg.train.batch) {
      std::vector<const WindowedSample*> batch;
      const std::size_t stop = std::min(order.size(), start + cfg.train.batch);
      for (std::size_t i = start; i < stop; ++i) batch.push_back(&windows[order[i]]);

      Tape tape;
      const ParamBinding p(tape, model.params());
      const LossBreakdown breakdown = batch_loss(tape, p, model, batch, cfg, ace_rng);
      check_finite(breakdown, result.steps);
      tape.backward(breakdown.total);
      auto grads = p.grads();
      const double norm = clip_grad_norm(grads, cfg.train.clip_norm);
      if (!std::isfinite(norm))
        throw NumericError("train: non-finite gradient norm at step " +
                           std::to_string(result.steps));
      optimizer.step(model.params(), grads);

      if (opt.log) *opt.log << breakdown.log_line(static_cast<long>(result.steps)) << '\n';
      result.step_losses.push_back(breakdown.total_value);
      ++result.steps;
      if (opt.max_steps != 0 && result.steps >= opt.max_steps) {
        stopped = true;
        break;
      }
    }
    if (!stopped)
      save_checkpoint(opt.out_dir + "/checkpoint_epoch" + std::to_string(epoch),
                      model.params(), cfg_json);
  }

  result.checkpoint_prefix = opt.out_dir + "/checkpoint_final";
  save_checkpoint(result.checkpoint_prefix, model.params(), cfg_json);
  return result;
}

Model model_from_checkpoint(const std::string& path_prefix, RunConfig* cfg_out) {
  ParamStore loaded;
  const std::string cfg_json = load_checkpoint(path_prefix, loaded);
  if (cfg_json.empty())
    throw ConfigError("checkpoint " + path_prefix + " carries no embedded config");
  const RunConfig cfg = RunConfig::from_json(cfg_json);

  Model model(cfg.model);
  std::mt19937_64 rng(0);  // shapes only; every value is overwritten below
  model.init_params(rng);

  ParamStore& params = model.params();
  if (params.count() != loaded.count())
    throw ConfigError("checkpoint " + path_prefix + " holds " +
                      std::to_string(loaded.count()) + " parameters, model expects " +
                      std::to_string(params.count()));
  for (const std::string& name : params.names()) {
    if (!loaded.has(name))
      throw ConfigError("checkpoint " + path_prefix + " is missing parameter " + name);
    const Array& src = loaded.get(name);
    Array& dst = params.get(name);
    if (src.rows != dst.rows || src.cols != dst.cols)
      throw ConfigError("checkpoint parameter " + name + " has shape " +
                        std::to_string(src.rows) + "x" + std::to_string(src.cols) +
                        ", model expects " + std::to_string(dst.rows) + "x" +
                        std::to_string(dst.cols));
    dst = src;
  }
  if (cfg_out != nullptr) *cfg_out = cfg;
  return model;
}

std::vector<DetectionRecord> run_inference(const Model& model, const RunConfig& cfg,
                                           const std::vector<const VideoClip*>& videos) {
  std::vector<std::vector<DetectionRecord>> per_window;
  for (const VideoClip* video : videos) {
    const auto windows = window_video(*video, cfg.window, /*drop_empty=*/false);
    for (const WindowedSample& w : windows) {
      Tape tape;
      const ParamBinding p(tape, model.params());
      const Model::EncodeOut enc = model.encode(tape, p, tape.constant(w.features));
      const Model::DecodeOut dec = model.decode(tape, p, enc.encoded);
      const Model::LayerOut& last = dec.layers.back();
      per_window.push_back(score_detections(
          last.cls_logits.val(), last.segments.val(), last.quality.val(),
          WindowRef{w.video_id, w.origin, cfg.window.length}, cfg.infer));
    }
  }
  return merge_windows(per_window, cfg.infer);
}

std::vector<EvalGroundTruth> eval_ground_truths(const Dataset& ds,
                                                const std::vector<std::size_t>& video_idx,
                                                double snippet_seconds) {
  std::vector<EvalGroundTruth> out;
  for (std::size_t v : video_idx) {
    if (v >= ds.videos.size())
      throw ValueError("eval_ground_truths: video index out of range");
    const VideoClip& video = ds.videos[v];
    const double span =
        static_cast<double>(video.features.rows - 1) * snippet_seconds;
    for (const GroundTruthAction& gt : video.actions)
      out.push_back({video.id, gt.segment.start() * span, gt.segment.end() * span,
                     gt.class_id});
  }
  return out;
}

RunConfig gradcheck_config() {
  return RunConfig::from_json(R"({
    "model": {"d": 32, "ffn": 32, "enc_layers": 1, "dec_layers": 2, "heads": 2,
              "k": 2, "n_queries": 5},
    "loss": {"k_negatives": 2, "roi_bins": 4},
    "data": {"num_videos": 1, "snippets_per_video": 32, "feature_dim": 16,
             "num_classes": 3, "max_actions": 2,
             "min_duration": 0.2, "max_duration": 0.45},
    "window": {"length": 32, "overlap": 16},
    "train": {"batch": 1, "seed": 7}
  })");
}

namespace {

// The sampling, regression and reference heads initialize to zero, which
// parks every query on the same symmetric point: segments coincide (IoU
// min/max kinks under every probe) and offsets sample identical positions.
// Move them to a generic point first; the check compares gradients wherever
// the parameters are.
void nudge_heads(Model& model, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  auto nudge = [&](const std::string& name, double scale) {
    for (double& v : model.params().get(name).data) v = scale * u(rng);
  };
  nudge("ref_head.w", 0.3);
  nudge("ref_head.b", 0.3);
  for (std::size_t l = 0; l < model.config().enc_layers; ++l) {
    const std::string lp = "encoder.layer" + std::to_string(l);
    nudge(lp + ".offset.w", 0.05);
    nudge(lp + ".offset.b", 0.3);
    nudge(lp + ".logit.w", 0.5);
    nudge(lp + ".logit.b", 0.5);
  }
  for (std::size_t l = 0; l < model.config().dec_layers; ++l) {
    const std::string lp = "decoder.layer" + std::to_string(l);
    nudge(lp + ".cross.offset.w", 0.5);
    nudge(lp + ".cross.offset.b", 0.5);
    nudge(lp + ".cross.logit.w", 0.5);
    nudge(lp + ".cross.logit.b", 0.5);
    nudge(lp + ".reg.l2.w", 0.3);
    nudge(lp + ".reg.l2.b", 0.3);
  }
}

}  // namespace

GradcheckReport run_gradcheck(const RunConfig& cfg, std::ostream* log) {
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();

  const Dataset ds = generate_dataset(cfg.data);
  const auto windows = window_dataset(ds, ds.train_videos, cfg.window, true);
  if (windows.empty())
    throw ConfigError("gradcheck: the data spec yields no training windows");
  std::vector<const WindowedSample*> batch;
  for (const auto& w : windows) {
    if (batch.size() == cfg.train.batch) break;
    batch.push_back(&w);
  }

  Model model(cfg.model);
  std::mt19937_64 init_rng(stream_seed(cfg.train.seed, 0));
  model.init_params(init_rng);
  nudge_heads(model, init_rng);

  BatchFreeze freeze;
  bool recorded = false;
  auto builder = [&](Tape& t, const ParamBinding& p) {
    std::mt19937_64 ace_rng(stream_seed(cfg.train.seed, 2));
    const Freeze mode = recorded ? Freeze::replay : Freeze::record;
    const LossBreakdown bd = batch_loss(t, p, model, batch, cfg, ace_rng, mode, &freeze);
    recorded = true;
    return bd.total;
  };
  // h = 1e-4: the total runs ~O(10), so central differences at 1e-5 bottom out
  // near |grad| ~ 1e-7 (cancellation); the larger step keeps the roundoff floor
  // three decades under the 1e-8 comparison floor.
  const FdResult r = fd_check_params(model.params(), builder, 1e-4, 1e-8, 1e-4);

  GradcheckReport report;
  report.checked = r.checked;
  report.unreliable = r.unreliable;
  report.max_rel = r.max_rel;
  report.worst = r.worst;
  report.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (log != nullptr)
    *log << "gradcheck: checked=" << report.checked
         << " unreliable=" << report.unreliable << " max_rel=" << report.max_rel
         << " seconds=" << report.seconds
         << (report.worst.empty() ? "" : "\n  worst: " + report.worst) << "\n";
  return report;
}

}  // namespace tad
