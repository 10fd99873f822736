#include "tad/params.hpp"

#include "tad/errors.hpp"

#include "json.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

static_assert(std::endian::native == std::endian::little,
              "checkpoint blobs are written via raw f32 stores");

namespace tad {

using nlohmann::json;

Array& ParamStore::add(const std::string& name, Array init, bool trainable) {
  if (index_.count(name)) throw ValueError("ParamStore::add: duplicate name " + name);
  order_.push_back(name);
  auto& e = index_[name];
  e.value = std::move(init);
  e.trainable = trainable;
  return e.value;
}

Array& ParamStore::get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ValueError("ParamStore::get: unknown name " + name);
  return it->second.value;
}

const Array& ParamStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ValueError("ParamStore::get: unknown name " + name);
  return it->second.value;
}

bool ParamStore::trainable(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ValueError("ParamStore::trainable: unknown name " + name);
  return it->second.trainable;
}

ParamBinding::ParamBinding(Tape& tape, const ParamStore& store) : store_(&store) {
  for (const auto& name : store.names())
    vars_.emplace(name, tape.leaf(store.get(name), store.trainable(name)));
}

Var ParamBinding::operator[](const std::string& name) const {
  auto it = vars_.find(name);
  if (it == vars_.end()) throw ValueError("ParamBinding: unknown name " + name);
  return it->second;
}

std::unordered_map<std::string, Array> ParamBinding::grads() const {
  std::unordered_map<std::string, Array> out;
  for (const auto& name : store_->names()) {
    const Var& v = vars_.at(name);
    if (v.needs_grad())
      out.emplace(name, v.grad());
    else
      out.emplace(name, Array(v.rows(), v.cols(), 0.0));
  }
  return out;
}

Array init_linear(std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> u(-bound, bound);
  Array w(fan_in, fan_out);
  for (auto& x : w.data) x = u(rng);
  return w;
}

Array init_bias(std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> u(-bound, bound);
  Array b(1, fan_out);
  for (auto& x : b.data) x = u(rng);
  return b;
}

Array init_normal(std::size_t rows, std::size_t cols, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, stddev);
  Array a(rows, cols);
  for (auto& x : a.data) x = n(rng);
  return a;
}

Array init_zeros(std::size_t rows, std::size_t cols) { return Array(rows, cols, 0.0); }

// ---- optimizer ---------------------------------------------------------------

void AdamW::step(ParamStore& params,
                 const std::unordered_map<std::string, Array>& grads) {
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (const auto& name : params.names()) {
    if (!params.trainable(name)) continue;
    Array& p = params.get(name);
    const Array* g = nullptr;
    if (auto it = grads.find(name); it != grads.end()) {
      if (!it->second.same_shape(p))
        throw ShapeError("AdamW::step: gradient shape mismatch for " + name);
      g = &it->second;
    }
    Array& m = m_.try_emplace(name, Array(p.rows, p.cols, 0.0)).first->second;
    Array& v = v_.try_emplace(name, Array(p.rows, p.cols, 0.0)).first->second;
    if (!m.same_shape(p) || !v.same_shape(p))
      throw ShapeError("AdamW::step: state shape mismatch for " + name);
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = g ? g->data[i] : 0.0;
      m.data[i] = cfg_.beta1 * m.data[i] + (1.0 - cfg_.beta1) * gi;
      v.data[i] = cfg_.beta2 * v.data[i] + (1.0 - cfg_.beta2) * gi * gi;
      const double mhat = m.data[i] / bc1;
      const double vhat = v.data[i] / bc2;
      p.data[i] -= cfg_.lr * (mhat / (std::sqrt(vhat) + cfg_.eps) +
                              cfg_.weight_decay * p.data[i]);
    }
  }
}

double clip_grad_norm(std::unordered_map<std::string, Array>& grads, double max_norm) {
  double sq = 0.0;
  for (const auto& [name, g] : grads)
    for (double x : g.data) sq += x * x;
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const double scale = max_norm / norm;
    for (auto& [name, g] : grads)
      for (double& x : g.data) x *= scale;
  }
  return norm;
}

// ---- checkpoint ----------------------------------------------------------------

void save_checkpoint(const std::string& path_prefix, const ParamStore& params,
                     const std::string& config_json) {
  json manifest;
  manifest["format"] = "tadet-checkpoint-v1";
  manifest["params"] = json::array();

  std::vector<float> blob;
  std::size_t offset = 0;
  for (const auto& name : params.names()) {
    const Array& a = params.get(name);
    json entry;
    entry["name"] = name;
    entry["shape"] = {a.rows, a.cols};
    entry["dtype"] = "f32";
    entry["byte_offset"] = offset;
    entry["byte_length"] = a.size() * sizeof(float);
    manifest["params"].push_back(entry);
    for (double x : a.data) blob.push_back(static_cast<float>(x));
    offset += a.size() * sizeof(float);
  }
  if (!config_json.empty()) manifest["config"] = json::parse(config_json);

  std::ofstream jf(path_prefix + ".json");
  if (!jf) throw ConfigError("save_checkpoint: cannot write " + path_prefix + ".json");
  jf << manifest.dump(2) << "\n";
  jf.close();

  std::ofstream bf(path_prefix + ".bin", std::ios::binary);
  if (!bf) throw ConfigError("save_checkpoint: cannot write " + path_prefix + ".bin");
  bf.write(reinterpret_cast<const char*>(blob.data()),
           static_cast<std::streamsize>(blob.size() * sizeof(float)));
}

std::string load_checkpoint(const std::string& path_prefix, ParamStore& params) {
  std::ifstream jf(path_prefix + ".json");
  if (!jf) throw ConfigError("load_checkpoint: cannot open " + path_prefix + ".json");
  json manifest;
  try {
    jf >> manifest;
  } catch (const json::exception& e) {
    throw ConfigError("load_checkpoint: bad manifest: " + std::string(e.what()));
  }
  if (manifest.value("format", "") != "tadet-checkpoint-v1")
    throw ConfigError("load_checkpoint: unknown format tag");

  std::ifstream bf(path_prefix + ".bin", std::ios::binary);
  if (!bf) throw ConfigError("load_checkpoint: cannot open " + path_prefix + ".bin");
  std::vector<char> raw((std::istreambuf_iterator<char>(bf)),
                        std::istreambuf_iterator<char>());

  for (const auto& entry : manifest.at("params")) {
    const std::string name = entry.at("name");
    const auto shape = entry.at("shape");
    if (shape.size() != 2) throw ConfigError("load_checkpoint: bad shape for " + name);
    const std::size_t rows = shape[0], cols = shape[1];
    if (entry.value("dtype", "") != "f32")
      throw ConfigError("load_checkpoint: unsupported dtype for " + name);
    const std::size_t off = entry.at("byte_offset");
    const std::size_t len = entry.at("byte_length");
    if (len != rows * cols * sizeof(float) || off + len > raw.size())
      throw ConfigError("load_checkpoint: byte range mismatch for " + name);
    Array a(rows, cols);
    const float* src = reinterpret_cast<const float*>(raw.data() + off);
    for (std::size_t i = 0; i < a.size(); ++i) a.data[i] = static_cast<double>(src[i]);
    params.add(name, std::move(a));
  }
  if (manifest.contains("config")) return manifest["config"].dump();
  return "";
}

}  // namespace tad
