#include "tad/data.hpp"

#include "tad/errors.hpp"
#include "tad/rng.hpp"

#include "json.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <random>

static_assert(std::endian::native == std::endian::little,
              "feature blobs are little-endian");

namespace tad {

namespace {

constexpr double kPrototypeNorm = 3.0;  // in-span signal vs unit background noise
constexpr double kMinGapSnippets = 4.0;
constexpr std::size_t kPlacementAttempts = 1000;

double quantize(double x) { return static_cast<double>(static_cast<float>(x)); }

std::string video_name(std::size_t v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "video_%04zu", v);
  return buf;
}

VideoClip make_video(const DataSpec& spec, const Array& protos, std::size_t v) {
  std::mt19937_64 rng(stream_seed(spec.seed, 1 + v));
  const double span = static_cast<double>(spec.snippets_per_video - 1);

  VideoClip clip;
  clip.id = video_name(v);

  const std::size_t wanted =
      std::uniform_int_distribution<std::size_t>(spec.min_actions,
                                                 spec.max_actions)(rng);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  struct Placed {
    double s, e;
    int cls;
  };
  std::vector<Placed> placed;
  for (std::size_t a = 0; a < wanted; ++a) {
    bool ok = false;
    for (std::size_t attempt = 0; attempt < kPlacementAttempts && !ok; ++attempt) {
      const int cls = static_cast<int>(std::uniform_int_distribution<std::size_t>(
          0, spec.num_classes - 1)(rng));
      const double dur =
          (spec.min_duration + (spec.max_duration - spec.min_duration) * u01(rng)) *
          span;
      const double s = u01(rng) * (span - dur);
      const double e = s + dur;
      ok = true;
      for (const auto& p : placed)
        if (!(s > p.e + kMinGapSnippets || e < p.s - kMinGapSnippets)) {
          ok = false;
          break;
        }
      if (ok) placed.push_back({s, e, cls});
    }
    if (!ok) {
      std::cerr << "warning: " << clip.id << ": could not place action "
                << placed.size() + 1 << " of " << wanted << " after "
                << kPlacementAttempts << " attempts; reducing count\n";
      break;
    }
  }
  std::sort(placed.begin(), placed.end(),
            [](const Placed& a, const Placed& b) { return a.s < b.s; });

  std::normal_distribution<double> background(0.0, 1.0);
  clip.features = Array(spec.snippets_per_video, spec.feature_dim);
  for (double& x : clip.features.data) x = background(rng);

  std::normal_distribution<double> noise(0.0, spec.noise_std);
  for (const auto& p : placed) {
    const auto first = static_cast<std::size_t>(std::ceil(p.s));
    const auto last = static_cast<std::size_t>(std::floor(p.e));
    const std::size_t n = last - first + 1;
    for (std::size_t i = 0; i < n; ++i) {
      // two-snippet linear onset/offset ramps on the prototype amplitude
      const double w = std::min({(static_cast<double>(i) + 1.0) / 3.0,
                                 (static_cast<double>(n - i)) / 3.0, 1.0});
      for (std::size_t j = 0; j < spec.feature_dim; ++j) {
        double val = w * protos.at(static_cast<std::size_t>(p.cls), j);
        if (spec.noise_std > 0.0) val += noise(rng);
        clip.features.at(first + i, j) = val;
      }
    }
    GroundTruthAction gt;
    gt.segment = TemporalSegment::from_endpoints(p.s / span, p.e / span);
    gt.class_id = p.cls;
    clip.actions.push_back(gt);
  }
  for (double& x : clip.features.data) x = quantize(x);
  return clip;
}

}  // namespace

void DataSpec::validate() const {
  if (num_videos == 0) throw ConfigError("data: num_videos must be >= 1");
  if (snippets_per_video < 8)
    throw ConfigError("data: snippets_per_video must be >= 8");
  if (feature_dim == 0) throw ConfigError("data: feature_dim must be >= 1");
  if (num_classes == 0) throw ConfigError("data: num_classes must be >= 1");
  if (num_classes > feature_dim)
    throw ConfigError("data: prototypes need num_classes <= feature_dim");
  if (min_actions == 0 || min_actions > max_actions)
    throw ConfigError("data: need 1 <= min_actions <= max_actions");
  if (!(min_duration > 0.0) || min_duration > max_duration || max_duration >= 1.0)
    throw ConfigError("data: need 0 < min_duration <= max_duration < 1");
  if (min_duration * static_cast<double>(snippets_per_video - 1) < 5.0)
    throw ConfigError("data: shortest action must span at least 5 snippets");
  if (noise_std < 0.0) throw ConfigError("data: noise_std must be >= 0");
  if (!(train_fraction >= 0.0) || train_fraction > 1.0)
    throw ConfigError("data: train_fraction must lie in [0, 1]");
}

Array class_prototypes(const DataSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(stream_seed(spec.seed, 0));
  std::normal_distribution<double> normal(0.0, 1.0);
  Array protos(spec.num_classes, spec.feature_dim);
  for (double& x : protos.data) x = normal(rng);
  for (std::size_t c = 0; c < spec.num_classes; ++c) {
    for (std::size_t prev = 0; prev < c; ++prev) {
      double dot = 0.0;
      for (std::size_t j = 0; j < spec.feature_dim; ++j)
        dot += protos.at(c, j) * protos.at(prev, j);
      for (std::size_t j = 0; j < spec.feature_dim; ++j)
        protos.at(c, j) -= dot * protos.at(prev, j);
    }
    double norm = 0.0;
    for (std::size_t j = 0; j < spec.feature_dim; ++j)
      norm += protos.at(c, j) * protos.at(c, j);
    norm = std::sqrt(norm);
    if (norm < 1e-9) throw NumericError("class_prototypes: degenerate draw");
    for (std::size_t j = 0; j < spec.feature_dim; ++j) protos.at(c, j) /= norm;
  }
  for (double& x : protos.data) x = quantize(x * kPrototypeNorm);
  return protos;
}

Dataset generate_dataset(const DataSpec& spec) {
  spec.validate();
  const Array protos = class_prototypes(spec);

  Dataset ds;
  ds.spec = spec;
  ds.videos.resize(spec.num_videos);
#pragma omp parallel for schedule(dynamic)
  for (std::size_t v = 0; v < spec.num_videos; ++v)
    ds.videos[v] = make_video(spec, protos, v);

  std::vector<std::size_t> order(spec.num_videos);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 split_rng(stream_seed(spec.seed, 1 + spec.num_videos));
  std::shuffle(order.begin(), order.end(), split_rng);
  auto n_train = static_cast<std::size_t>(
      std::llround(spec.train_fraction * static_cast<double>(spec.num_videos)));
  n_train = std::min(n_train, spec.num_videos);
  ds.train_videos.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  ds.val_videos.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train), order.end());
  std::sort(ds.train_videos.begin(), ds.train_videos.end());
  std::sort(ds.val_videos.begin(), ds.val_videos.end());
  return ds;
}

void WindowSpec::validate() const {
  if (length < 2) throw ConfigError("window: length must be >= 2");
  if (overlap >= length) throw ConfigError("window: overlap must be < length");
  if (!(min_keep > 0.0) || min_keep > 1.0)
    throw ConfigError("window: min_keep must lie in (0, 1]");
}

std::vector<WindowedSample> window_video(const VideoClip& video,
                                         const WindowSpec& wspec, bool drop_empty) {
  wspec.validate();
  const std::size_t t_v = video.features.rows;
  const std::size_t w = wspec.length;

  std::vector<std::size_t> origins;
  if (t_v <= w) {
    origins.push_back(0);
  } else {
    for (std::size_t o = 0; o + w <= t_v; o += wspec.stride()) origins.push_back(o);
    if (origins.back() != t_v - w) origins.push_back(t_v - w);
  }

  const double video_span = static_cast<double>(t_v - 1);
  const double window_span = static_cast<double>(w - 1);
  std::vector<WindowedSample> out;
  for (std::size_t o : origins) {
    WindowedSample sample;
    sample.video_id = video.id;
    sample.origin = o;
    sample.padded = t_v < w;
    sample.features = Array(w, video.features.cols);
    const std::size_t copy = std::min(w, t_v - o);
    for (std::size_t t = 0; t < copy; ++t)
      for (std::size_t j = 0; j < video.features.cols; ++j)
        sample.features.at(t, j) = video.features.at(o + t, j);

    const double lo = static_cast<double>(o);
    const double hi = static_cast<double>(o) + window_span;
    for (const auto& gt : video.actions) {
      const double s = gt.segment.start() * video_span;
      const double e = gt.segment.end() * video_span;
      const double cs = std::max(s, lo), ce = std::min(e, hi);
      if (ce - cs >= wspec.min_keep * (e - s) && ce > cs) {
        GroundTruthAction kept;
        kept.segment =
            TemporalSegment::from_endpoints((cs - lo) / window_span, (ce - lo) / window_span);
        kept.class_id = gt.class_id;
        sample.actions.push_back(kept);
      }
    }
    if (drop_empty && sample.actions.empty()) continue;
    out.push_back(std::move(sample));
  }
  return out;
}

std::vector<WindowedSample> window_dataset(const Dataset& ds,
                                           const std::vector<std::size_t>& video_idx,
                                           const WindowSpec& wspec, bool drop_empty) {
  std::vector<WindowedSample> out;
  for (std::size_t v : video_idx) {
    if (v >= ds.videos.size()) throw ValueError("window_dataset: video index out of range");
    auto windows = window_video(ds.videos[v], wspec, drop_empty);
    for (auto& sample : windows) out.push_back(std::move(sample));
  }
  return out;
}

TemporalSegment window_to_video(const TemporalSegment& seg, std::size_t origin,
                                std::size_t window_len, std::size_t t_video) {
  if (window_len < 2 || t_video < 2)
    throw ValueError("window_to_video: spans need at least two snippets");
  const double window_span = static_cast<double>(window_len - 1);
  const double video_span = static_cast<double>(t_video - 1);
  const double s = static_cast<double>(origin) + seg.start() * window_span;
  const double e = static_cast<double>(origin) + seg.end() * window_span;
  return TemporalSegment::from_endpoints(s / video_span, e / video_span);
}

void save_dataset(const std::string& dir, const Dataset& ds) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);

  nlohmann::json j;
  j["spec"] = {{"num_videos", ds.spec.num_videos},
               {"snippets_per_video", ds.spec.snippets_per_video},
               {"feature_dim", ds.spec.feature_dim},
               {"num_classes", ds.spec.num_classes},
               {"min_actions", ds.spec.min_actions},
               {"max_actions", ds.spec.max_actions},
               {"min_duration", ds.spec.min_duration},
               {"max_duration", ds.spec.max_duration},
               {"noise_std", ds.spec.noise_std},
               {"train_fraction", ds.spec.train_fraction},
               {"seed", ds.spec.seed}};
  j["train_videos"] = ds.train_videos;
  j["val_videos"] = ds.val_videos;
  j["videos"] = nlohmann::json::array();
  for (const auto& video : ds.videos) {
    nlohmann::json actions = nlohmann::json::array();
    for (const auto& gt : video.actions)
      actions.push_back({{"m", gt.segment.m}, {"d", gt.segment.d},
                         {"class_id", gt.class_id}});
    const std::string file = video.id + ".f32";
    j["videos"].push_back({{"id", video.id},
                           {"snippets", video.features.rows},
                           {"feature_dim", video.features.cols},
                           {"file", file},
                           {"actions", std::move(actions)}});

    std::vector<float> blob(video.features.data.size());
    for (std::size_t i = 0; i < blob.size(); ++i)
      blob[i] = static_cast<float>(video.features.data[i]);
    std::ofstream out(fs::path(dir) / file, std::ios::binary);
    if (!out) throw ValueError("save_dataset: cannot write " + file);
    out.write(reinterpret_cast<const char*>(blob.data()),
              static_cast<std::streamsize>(blob.size() * sizeof(float)));
  }

  std::ofstream manifest(fs::path(dir) / "manifest.json", std::ios::binary);
  if (!manifest) throw ValueError("save_dataset: cannot write manifest.json");
  manifest << j.dump(2) << '\n';
}

Dataset load_dataset(const std::string& dir) {
  namespace fs = std::filesystem;
  nlohmann::json j;
  {
    std::ifstream manifest(fs::path(dir) / "manifest.json", std::ios::binary);
    if (!manifest) throw ConfigError("load_dataset: missing manifest.json in " + dir);
    try {
      manifest >> j;
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("load_dataset: bad manifest: ") + e.what());
    }
  }

  Dataset ds;
  try {
    const auto& s = j.at("spec");
    ds.spec.num_videos = s.at("num_videos").get<std::size_t>();
    ds.spec.snippets_per_video = s.at("snippets_per_video").get<std::size_t>();
    ds.spec.feature_dim = s.at("feature_dim").get<std::size_t>();
    ds.spec.num_classes = s.at("num_classes").get<std::size_t>();
    ds.spec.min_actions = s.at("min_actions").get<std::size_t>();
    ds.spec.max_actions = s.at("max_actions").get<std::size_t>();
    ds.spec.min_duration = s.at("min_duration").get<double>();
    ds.spec.max_duration = s.at("max_duration").get<double>();
    ds.spec.noise_std = s.at("noise_std").get<double>();
    ds.spec.train_fraction = s.at("train_fraction").get<double>();
    ds.spec.seed = s.at("seed").get<std::uint64_t>();
    ds.train_videos = j.at("train_videos").get<std::vector<std::size_t>>();
    ds.val_videos = j.at("val_videos").get<std::vector<std::size_t>>();

    for (const auto& jv : j.at("videos")) {
      VideoClip video;
      video.id = jv.at("id").get<std::string>();
      const auto rows = jv.at("snippets").get<std::size_t>();
      const auto cols = jv.at("feature_dim").get<std::size_t>();
      for (const auto& ja : jv.at("actions")) {
        GroundTruthAction gt;
        gt.segment.m = ja.at("m").get<double>();
        gt.segment.d = ja.at("d").get<double>();
        gt.class_id = ja.at("class_id").get<int>();
        video.actions.push_back(gt);
      }

      const auto file = jv.at("file").get<std::string>();
      std::ifstream in(fs::path(dir) / file, std::ios::binary);
      if (!in) throw ValueError("load_dataset: missing feature blob " + file);
      std::vector<float> blob(rows * cols);
      in.read(reinterpret_cast<char*>(blob.data()),
              static_cast<std::streamsize>(blob.size() * sizeof(float)));
      if (in.gcount() != static_cast<std::streamsize>(blob.size() * sizeof(float)))
        throw ValueError("load_dataset: feature blob " + file + " truncated");
      in.peek();
      if (!in.eof())
        throw ValueError("load_dataset: feature blob " + file +
                         " larger than the manifest shape");
      video.features = Array(rows, cols);
      for (std::size_t i = 0; i < blob.size(); ++i)
        video.features.data[i] = static_cast<double>(blob[i]);
      ds.videos.push_back(std::move(video));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("load_dataset: bad manifest: ") + e.what());
  }

  for (std::size_t v : ds.train_videos)
    if (v >= ds.videos.size()) throw ConfigError("load_dataset: split index out of range");
  for (std::size_t v : ds.val_videos)
    if (v >= ds.videos.size()) throw ConfigError("load_dataset: split index out of range");
  return ds;
}

}  // namespace tad
