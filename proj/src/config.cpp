#include "tad/config.hpp"

#include "tad/errors.hpp"

#include "json.hpp"

#include <fstream>
#include <initializer_list>
#include <limits>
#include <sstream>
#include <string>

namespace tad {

namespace {

using nlohmann::json;

void reject_unknown(const json& j, const std::string& section,
                    std::initializer_list<const char*> allowed) {
  if (!j.is_object())
    throw ConfigError("config: section '" + section + "' must be an object");
  for (const auto& item : j.items()) {
    bool known = false;
    for (const char* key : allowed)
      if (item.key() == key) {
        known = true;
        break;
      }
    if (!known)
      throw ConfigError("config: unknown key " +
                        (section.empty() ? item.key() : section + "." + item.key()));
  }
}

std::string dotted(const std::string& section, const char* key) {
  return section.empty() ? key : section + "." + key;
}

void read_double(const json& j, const std::string& section, const char* key,
                 double& out) {
  if (!j.contains(key)) return;
  if (!j.at(key).is_number())
    throw ConfigError("config: " + dotted(section, key) + " must be a number");
  out = j.at(key).get<double>();
}

void read_size(const json& j, const std::string& section, const char* key,
               std::size_t& out) {
  if (!j.contains(key)) return;
  const auto& v = j.at(key);
  if (!v.is_number_integer() && !v.is_number_unsigned())
    throw ConfigError("config: " + dotted(section, key) + " must be an integer");
  if (v.is_number_integer() && !v.is_number_unsigned() && v.get<std::int64_t>() < 0)
    throw ConfigError("config: " + dotted(section, key) + " must be non-negative");
  out = v.get<std::size_t>();
}

void read_u64(const json& j, const std::string& section, const char* key,
              std::uint64_t& out) {
  std::size_t tmp = 0;
  if (!j.contains(key)) return;
  read_size(j, section, key, tmp);
  out = tmp;
}

void read_bool(const json& j, const std::string& section, const char* key, bool& out) {
  if (!j.contains(key)) return;
  if (!j.at(key).is_boolean())
    throw ConfigError("config: " + dotted(section, key) + " must be a boolean");
  out = j.at(key).get<bool>();
}

void read_string(const json& j, const std::string& section, const char* key,
                 std::string& out) {
  if (!j.contains(key)) return;
  if (!j.at(key).is_string())
    throw ConfigError("config: " + dotted(section, key) + " must be a string");
  out = j.at(key).get<std::string>();
}

}  // namespace

void TrainConfig::validate() const {
  if (!(lr > 0.0)) throw ConfigError("train: lr must be positive");
  if (weight_decay < 0.0) throw ConfigError("train: weight_decay must be >= 0");
  if (!(beta1 >= 0.0) || beta1 >= 1.0 || !(beta2 >= 0.0) || beta2 >= 1.0)
    throw ConfigError("train: betas must lie in [0, 1)");
  if (!(adam_eps > 0.0)) throw ConfigError("train: adam_eps must be positive");
  if (!(clip_norm > 0.0)) throw ConfigError("train: clip_norm must be positive");
  if (batch == 0) throw ConfigError("train: batch must be >= 1");
}

void RunConfig::validate() const {
  model.validate();
  loss.validate();
  infer.validate();
  train.validate();
  data.validate();
  window.validate();
  if (model.d_in != data.feature_dim)
    throw ConfigError("config: model input dim must match data.feature_dim");
  if (model.n_classes != data.num_classes)
    throw ConfigError("config: model classes must match data.num_classes");
  if (model.n_queries < data.max_actions)
    throw ConfigError("config: n_queries must cover the maximum actions per window");
}

RunConfig RunConfig::from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: invalid JSON: ") + e.what());
  }
  reject_unknown(j, "", {"model", "raid", "loss", "infer", "train", "data",
                         "window", "ablation"});

  RunConfig cfg;
  if (j.contains("model")) {
    const auto& m = j.at("model");
    reject_unknown(m, "model",
                   {"n_queries", "enc_layers", "dec_layers", "d", "ffn", "k",
                    "heads", "ln_eps"});
    read_size(m, "model", "n_queries", cfg.model.n_queries);
    read_size(m, "model", "enc_layers", cfg.model.enc_layers);
    read_size(m, "model", "dec_layers", cfg.model.dec_layers);
    read_size(m, "model", "d", cfg.model.d);
    read_size(m, "model", "ffn", cfg.model.ffn);
    read_size(m, "model", "k", cfg.model.k);
    read_size(m, "model", "heads", cfg.model.heads);
    read_double(m, "model", "ln_eps", cfg.model.ln_eps);
  }
  if (j.contains("raid")) {
    const auto& r = j.at("raid");
    reject_unknown(r, "raid", {"gamma", "tau", "set_mode"});
    read_double(r, "raid", "gamma", cfg.model.gamma);
    read_double(r, "raid", "tau", cfg.model.tau);
    read_string(r, "raid", "set_mode", cfg.model.set_mode);
  }
  if (j.contains("loss")) {
    const auto& l = j.at("loss");
    reject_unknown(l, "loss",
                   {"focal_alpha", "focal_gamma", "gamma1", "gamma2", "lambda_enc",
                    "lambda_zeta", "lambda_decay", "k_negatives", "xi", "roi_bins",
                    "normalize_contrast", "temperature", "match"});
    read_double(l, "loss", "focal_alpha", cfg.loss.focal_alpha);
    read_double(l, "loss", "focal_gamma", cfg.loss.focal_gamma);
    read_double(l, "loss", "gamma1", cfg.loss.gamma1);
    read_double(l, "loss", "gamma2", cfg.loss.gamma2);
    read_double(l, "loss", "lambda_enc", cfg.loss.lambda_enc);
    read_double(l, "loss", "lambda_zeta", cfg.loss.lambda_zeta);
    read_double(l, "loss", "lambda_decay", cfg.loss.lambda_decay);
    read_size(l, "loss", "k_negatives", cfg.loss.k_negatives);
    read_double(l, "loss", "xi", cfg.loss.xi);
    read_size(l, "loss", "roi_bins", cfg.loss.roi_bins);
    read_bool(l, "loss", "normalize_contrast", cfg.loss.normalize_contrast);
    read_double(l, "loss", "temperature", cfg.loss.temperature);
    if (l.contains("match")) {
      const auto& mw = l.at("match");
      reject_unknown(mw, "loss.match", {"l1", "iou", "cls"});
      read_double(mw, "loss.match", "l1", cfg.loss.match.l1);
      read_double(mw, "loss.match", "iou", cfg.loss.match.iou);
      read_double(mw, "loss.match", "cls", cfg.loss.match.cls);
    }
  }
  if (j.contains("infer")) {
    const auto& i = j.at("infer");
    reject_unknown(i, "infer",
                   {"sigma", "top_n", "score_floor", "prune", "snippet_seconds"});
    read_double(i, "infer", "sigma", cfg.infer.sigma);
    read_size(i, "infer", "top_n", cfg.infer.top_n);
    read_double(i, "infer", "score_floor", cfg.infer.score_floor);
    read_double(i, "infer", "prune", cfg.infer.prune);
    read_double(i, "infer", "snippet_seconds", cfg.infer.snippet_seconds);
  }
  if (j.contains("train")) {
    const auto& t = j.at("train");
    reject_unknown(t, "train",
                   {"lr", "weight_decay", "beta1", "beta2", "adam_eps", "clip_norm",
                    "batch", "epochs", "seed"});
    read_double(t, "train", "lr", cfg.train.lr);
    read_double(t, "train", "weight_decay", cfg.train.weight_decay);
    read_double(t, "train", "beta1", cfg.train.beta1);
    read_double(t, "train", "beta2", cfg.train.beta2);
    read_double(t, "train", "adam_eps", cfg.train.adam_eps);
    read_double(t, "train", "clip_norm", cfg.train.clip_norm);
    read_size(t, "train", "batch", cfg.train.batch);
    read_size(t, "train", "epochs", cfg.train.epochs);
    read_u64(t, "train", "seed", cfg.train.seed);
  }
  if (j.contains("data")) {
    const auto& d = j.at("data");
    reject_unknown(d, "data",
                   {"num_videos", "snippets_per_video", "feature_dim", "num_classes",
                    "min_actions", "max_actions", "min_duration", "max_duration",
                    "noise_std", "train_fraction", "seed"});
    read_size(d, "data", "num_videos", cfg.data.num_videos);
    read_size(d, "data", "snippets_per_video", cfg.data.snippets_per_video);
    read_size(d, "data", "feature_dim", cfg.data.feature_dim);
    read_size(d, "data", "num_classes", cfg.data.num_classes);
    read_size(d, "data", "min_actions", cfg.data.min_actions);
    read_size(d, "data", "max_actions", cfg.data.max_actions);
    read_double(d, "data", "min_duration", cfg.data.min_duration);
    read_double(d, "data", "max_duration", cfg.data.max_duration);
    read_double(d, "data", "noise_std", cfg.data.noise_std);
    read_double(d, "data", "train_fraction", cfg.data.train_fraction);
    read_u64(d, "data", "seed", cfg.data.seed);
  }
  if (j.contains("window")) {
    const auto& w = j.at("window");
    reject_unknown(w, "window", {"length", "overlap", "min_keep"});
    read_size(w, "window", "length", cfg.window.length);
    read_size(w, "window", "overlap", cfg.window.overlap);
    read_double(w, "window", "min_keep", cfg.window.min_keep);
  }
  if (j.contains("ablation")) {
    const auto& a = j.at("ablation");
    reject_unknown(a, "ablation", {"raid", "ace_enc", "ace_dec_gt", "quality"});
    read_bool(a, "ablation", "raid", cfg.model.relational_attention);
    read_bool(a, "ablation", "ace_enc", cfg.model.contrastive_enc);
    read_bool(a, "ablation", "ace_dec_gt", cfg.model.gt_class_branch);
    read_bool(a, "ablation", "quality", cfg.model.quality);
  }

  cfg.model.d_in = cfg.data.feature_dim;
  cfg.model.n_classes = cfg.data.num_classes;
  cfg.validate();
  return cfg;
}

RunConfig RunConfig::from_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("config: cannot open " + path);
  std::ostringstream text;
  text << in.rdbuf();
  return from_json(text.str());
}

std::string RunConfig::to_json() const {
  json j;
  j["model"] = {{"n_queries", model.n_queries}, {"enc_layers", model.enc_layers},
                {"dec_layers", model.dec_layers}, {"d", model.d},
                {"ffn", model.ffn},             {"k", model.k},
                {"heads", model.heads},         {"ln_eps", model.ln_eps}};
  j["raid"] = {{"gamma", model.gamma}, {"tau", model.tau}, {"set_mode", model.set_mode}};
  j["loss"] = {{"focal_alpha", loss.focal_alpha},
               {"focal_gamma", loss.focal_gamma},
               {"gamma1", loss.gamma1},
               {"gamma2", loss.gamma2},
               {"lambda_enc", loss.lambda_enc},
               {"lambda_zeta", loss.lambda_zeta},
               {"lambda_decay", loss.lambda_decay},
               {"k_negatives", loss.k_negatives},
               {"xi", loss.xi},
               {"roi_bins", loss.roi_bins},
               {"normalize_contrast", loss.normalize_contrast},
               {"temperature", loss.temperature},
               {"match", {{"l1", loss.match.l1}, {"iou", loss.match.iou},
                          {"cls", loss.match.cls}}}};
  j["infer"] = {{"sigma", infer.sigma},
                {"top_n", infer.top_n},
                {"score_floor", infer.score_floor},
                {"prune", infer.prune},
                {"snippet_seconds", infer.snippet_seconds}};
  j["train"] = {{"lr", train.lr},
                {"weight_decay", train.weight_decay},
                {"beta1", train.beta1},
                {"beta2", train.beta2},
                {"adam_eps", train.adam_eps},
                {"clip_norm", train.clip_norm},
                {"batch", train.batch},
                {"epochs", train.epochs},
                {"seed", train.seed}};
  j["data"] = {{"num_videos", data.num_videos},
               {"snippets_per_video", data.snippets_per_video},
               {"feature_dim", data.feature_dim},
               {"num_classes", data.num_classes},
               {"min_actions", data.min_actions},
               {"max_actions", data.max_actions},
               {"min_duration", data.min_duration},
               {"max_duration", data.max_duration},
               {"noise_std", data.noise_std},
               {"train_fraction", data.train_fraction},
               {"seed", data.seed}};
  j["window"] = {{"length", window.length},
                 {"overlap", window.overlap},
                 {"min_keep", window.min_keep}};
  j["ablation"] = {{"raid", model.relational_attention},
                   {"ace_enc", model.contrastive_enc},
                   {"ace_dec_gt", model.gt_class_branch},
                   {"quality", model.quality}};
  return j.dump(2);
}

}  // namespace tad
