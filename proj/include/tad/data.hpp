#pragma once

#include "tad/array.hpp"
#include "tad/geometry.hpp"

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace tad {

struct DataSpec {
  std::size_t num_videos = 16;
  std::size_t snippets_per_video = 256;  // T_v
  std::size_t feature_dim = 64;          // D'
  std::size_t num_classes = 4;
  std::size_t min_actions = 1;
  std::size_t max_actions = 3;
  double min_duration = 0.05;  // fraction of the video span
  double max_duration = 0.3;
  double noise_std = 0.5;
  double train_fraction = 0.8;
  std::uint64_t seed = 7;

  void validate() const;  // throws ConfigError
};

struct VideoClip {
  std::string id;
  Array features;  // [T_v x D'], values quantized to f32 at generation
  std::vector<GroundTruthAction> actions;  // segments normalized over the video span
};

struct Dataset {
  DataSpec spec;
  std::vector<VideoClip> videos;
  std::vector<std::size_t> train_videos;  // indices into `videos`
  std::vector<std::size_t> val_videos;
};

// Fixed per-seed class prototypes [C x D']: orthogonalized Gaussian draws,
// rescaled to a common norm so in-span snippets separate from background.
Array class_prototypes(const DataSpec& spec);

// Background snippets ~ N(0,1); action spans carry prototype + N(0, noise^2)
// with a two-snippet linear ramp at each end. Actions never overlap (minimum
// gap enforced by rejection sampling; count reduced with a warning after 1000
// failed attempts). Deterministic from the seed, including across threads.
Dataset generate_dataset(const DataSpec& spec);

struct WindowSpec {
  std::size_t length = 256;
  std::size_t overlap = 192;
  double min_keep = 0.75;  // fraction of a gt's duration required inside

  void validate() const;  // throws ConfigError
  std::size_t stride() const { return length - overlap; }
};

struct WindowedSample {
  std::string video_id;
  std::size_t origin = 0;  // snippet index in the video
  Array features;          // [W x D']
  std::vector<GroundTruthAction> actions;  // renormalized over the window span
  bool padded = false;     // video shorter than W, zero-padded at the end
};

// Slide windows of `length` snippets at stride length-overlap (final window
// aligned to the video end); keep ground truths with >= min_keep of their
// duration inside, clipped and renormalized. drop_empty removes windows with
// no retained ground truth (training behavior; inference keeps everything).
std::vector<WindowedSample> window_video(const VideoClip& video,
                                         const WindowSpec& wspec, bool drop_empty);
std::vector<WindowedSample> window_dataset(const Dataset& ds,
                                           const std::vector<std::size_t>& video_idx,
                                           const WindowSpec& wspec, bool drop_empty);

// Inverse of the window renormalization (exact for unclipped ground truths).
TemporalSegment window_to_video(const TemporalSegment& seg, std::size_t origin,
                                std::size_t window_len, std::size_t t_video);

// Manifest (JSON, ground truths embedded) plus one little-endian f32 feature
// blob per video; the round-trip is bit-exact because features are f32 values.
void save_dataset(const std::string& dir, const Dataset& ds);
Dataset load_dataset(const std::string& dir);

}  // namespace tad
