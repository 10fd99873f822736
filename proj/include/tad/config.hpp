#pragma once

#include "tad/data.hpp"
#include "tad/detection.hpp"
#include "tad/losses.hpp"
#include "tad/model.hpp"

#include <cstdint>
#include <string>

namespace tad {

struct TrainConfig {
  double lr = 2e-4;
  double weight_decay = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double clip_norm = 0.1;
  std::size_t batch = 16;
  std::size_t epochs = 10;
  std::uint64_t seed = 7;

  void validate() const;  // throws ConfigError
};

// One experiment, one JSON document. Sections: model, raid, loss, infer,
// train, data, window, ablation — all optional, every field defaulted, any
// unknown key rejected. model.d_in and model.n_classes always mirror the
// data section; the ablation section writes the ModelConfig switches.
struct RunConfig {
  ModelConfig model;
  LossConfig loss;
  InferConfig infer;
  TrainConfig train;
  DataSpec data;
  WindowSpec window;

  void validate() const;  // sub-configs plus cross-field constraints

  std::string to_json() const;  // round-trips through from_json exactly
  static RunConfig from_json(const std::string& text);
  static RunConfig from_file(const std::string& path);
};

}  // namespace tad
