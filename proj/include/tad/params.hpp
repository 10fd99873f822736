#pragma once

#include "tad/array.hpp"
#include "tad/ndgrad.hpp"

#include <cstdint>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

namespace tad {

// All learnable state, keyed by dotted path ("decoder.layer0.cls_head.weight").
// Insertion order is preserved — it fixes the tape-binding order, the
// checkpoint layout, and therefore bit-level reproducibility.
class ParamStore {
 public:
  Array& add(const std::string& name, Array init, bool trainable = true);
  Array& get(const std::string& name);
  const Array& get(const std::string& name) const;
  bool has(const std::string& name) const { return index_.count(name) != 0; }
  bool trainable(const std::string& name) const;

  const std::vector<std::string>& names() const { return order_; }
  std::size_t count() const { return order_.size(); }

 private:
  struct Entry {
    Array value;
    bool trainable = true;
  };
  std::vector<std::string> order_;
  std::unordered_map<std::string, Entry> index_;
};

// Leafs every parameter into one tape (in store order) so a forward pass can
// look Vars up by name; collects gradients back out after backward().
class ParamBinding {
 public:
  ParamBinding(Tape& tape, const ParamStore& store);
  Var operator[](const std::string& name) const;
  // Gradient of each bound parameter after tape.backward(); zero arrays for
  // parameters the loss never touched.
  std::unordered_map<std::string, Array> grads() const;

 private:
  const ParamStore* store_;
  std::unordered_map<std::string, Var> vars_;
};

// Deterministic initializers (all parameters are created through these).
Array init_linear(std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng);
Array init_bias(std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng);
Array init_normal(std::size_t rows, std::size_t cols, double stddev,
                  std::mt19937_64& rng);
Array init_zeros(std::size_t rows, std::size_t cols);

// ---- optimizer -------------------------------------------------------------

struct AdamWConfig {
  double lr = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;
};

class AdamW {
 public:
  explicit AdamW(AdamWConfig cfg) : cfg_(cfg) {}

  // One update over every trainable parameter. Parameters with no entry in
  // `grads` are treated as zero-gradient (decay still applies).
  void step(ParamStore& params, const std::unordered_map<std::string, Array>& grads);

  std::int64_t steps_taken() const { return t_; }
  const AdamWConfig& config() const { return cfg_; }

 private:
  AdamWConfig cfg_;
  std::unordered_map<std::string, Array> m_, v_;
  std::int64_t t_ = 0;
};

// Scales all gradients in place so the global L2 norm is at most max_norm;
// returns the pre-clip norm.
double clip_grad_norm(std::unordered_map<std::string, Array>& grads, double max_norm);

// ---- checkpoint ------------------------------------------------------------
// Two files: <path>.json (manifest: per-parameter name/shape/dtype/byte range,
// plus an optional embedded config object) and <path>.bin (flat little-endian
// f32 blob). Round-trips are f32-exact.

void save_checkpoint(const std::string& path_prefix, const ParamStore& params,
                     const std::string& config_json = "");
// Loads into an empty store; returns the embedded config JSON ("" if absent).
std::string load_checkpoint(const std::string& path_prefix, ParamStore& params);

}  // namespace tad
