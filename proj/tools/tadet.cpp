// Command-line surface: gen-data | train | eval | infer | gradcheck | report.
// Exit codes: 0 success, 2 configuration/usage error, 3 numeric failure.

#include "tad/errors.hpp"
#include "tad/pipeline.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace tad;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitNumeric = 3;

struct CommonFlags {
  std::string config_path;
  std::string out_dir;
  std::uint64_t seed = 0;
  bool seed_set = false;
};

void add_common(CLI::App* cmd, CommonFlags& f, bool config_required) {
  auto* c = cmd->add_option("--config", f.config_path, "run configuration (JSON)");
  if (config_required) c->required();
  cmd->add_option("--seed", f.seed, "override the train and data seeds")
      ->each([&f](const std::string&) { f.seed_set = true; });
  cmd->add_option("--out", f.out_dir, "output directory");
}

RunConfig load_config(const CommonFlags& f) {
  RunConfig cfg = f.config_path.empty() ? RunConfig{}
                                        : RunConfig::from_file(f.config_path);
  if (f.seed_set) {
    cfg.train.seed = f.seed;
    cfg.data.seed = f.seed;
  }
  cfg.validate();
  return cfg;
}

// Dataset for a command: an explicit --data directory wins, otherwise the
// config's synthetic spec is generated in place.
Dataset obtain_dataset(const RunConfig& cfg, const std::string& data_dir) {
  if (data_dir.empty()) return generate_dataset(cfg.data);
  Dataset ds = load_dataset(data_dir);
  if (ds.spec.feature_dim != cfg.data.feature_dim ||
      ds.spec.num_classes != cfg.data.num_classes)
    throw ConfigError("dataset at " + data_dir + " has feature_dim/num_classes " +
                      std::to_string(ds.spec.feature_dim) + "/" +
                      std::to_string(ds.spec.num_classes) +
                      ", config expects " + std::to_string(cfg.data.feature_dim) +
                      "/" + std::to_string(cfg.data.num_classes));
  return ds;
}

std::vector<std::size_t> split_indices(const Dataset& ds, const std::string& split) {
  if (split == "train") return ds.train_videos;
  if (split == "val") return ds.val_videos;
  if (split == "all") {
    std::vector<std::size_t> all(ds.videos.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    return all;
  }
  throw ConfigError("unknown split '" + split + "' (train|val|all)");
}

std::string require_out(const CommonFlags& f, const char* cmd) {
  if (f.out_dir.empty())
    throw ConfigError(std::string(cmd) + ": --out is required");
  fs::create_directories(f.out_dir);
  return f.out_dir;
}

int cmd_gen_data(const CommonFlags& f) {
  const RunConfig cfg = load_config(f);
  const std::string out = require_out(f, "gen-data");
  const Dataset ds = generate_dataset(cfg.data);
  save_dataset(out, ds);
  std::size_t actions = 0;
  for (const auto& v : ds.videos) actions += v.actions.size();
  std::cout << "gen-data: videos=" << ds.videos.size() << " actions=" << actions
            << " train=" << ds.train_videos.size() << " val=" << ds.val_videos.size()
            << " dir=" << out << "\n";
  return kExitOk;
}

int cmd_train(const CommonFlags& f, const std::string& data_dir,
              std::size_t max_steps) {
  const RunConfig cfg = load_config(f);
  const std::string out = require_out(f, "train");
  const Dataset ds = obtain_dataset(cfg, data_dir);

  std::ofstream log(out + "/train.log");
  if (!log.good()) throw ConfigError("train: cannot write " + out + "/train.log");
  TrainOptions opt;
  opt.out_dir = out;
  opt.log = &log;
  opt.max_steps = max_steps;
  const TrainResult result = train_model(cfg, ds, opt);
  std::cout << "train: steps=" << result.steps << " final_loss="
            << (result.step_losses.empty() ? 0.0 : result.step_losses.back())
            << " checkpoint=" << result.checkpoint_prefix << "\n";
  return kExitOk;
}

int cmd_infer(const CommonFlags& f, const std::string& checkpoint,
              const std::string& data_dir, const std::string& split) {
  RunConfig ck_cfg;
  const Model model = model_from_checkpoint(checkpoint, &ck_cfg);
  RunConfig cfg = ck_cfg;
  if (!f.config_path.empty()) {
    cfg = load_config(f);
    // The network itself is pinned by the checkpoint; only data/window/infer
    // settings may be overridden.
    const auto want = nlohmann::json::parse(cfg.to_json());
    const auto have = nlohmann::json::parse(ck_cfg.to_json());
    for (const char* section : {"model", "raid", "ablation"})
      if (want.at(section) != have.at(section))
        throw ConfigError(std::string("infer: --config ") + section +
                          " section differs from the checkpoint's");
  }
  const std::string out = require_out(f, "infer");
  const Dataset ds = obtain_dataset(cfg, data_dir);

  std::vector<const VideoClip*> videos;
  for (std::size_t v : split_indices(ds, split)) videos.push_back(&ds.videos[v]);
  const auto detections = run_inference(model, cfg, videos);
  const std::string path = out + "/detections.tsv";
  write_detections(path, detections);
  std::cout << "infer: videos=" << videos.size() << " detections="
            << detections.size() << " file=" << path << "\n";
  return kExitOk;
}

int cmd_eval(const CommonFlags& f, const std::string& detections_path,
             const std::string& data_dir, const std::string& split) {
  const RunConfig cfg = load_config(f);
  const Dataset ds = obtain_dataset(cfg, data_dir);
  const auto detections = read_detections(detections_path);
  const auto gts = eval_ground_truths(ds, split_indices(ds, split),
                                      cfg.infer.snippet_seconds);
  const EvalReport report = evaluate_map(detections, gts, default_tiou_thresholds(),
                                         cfg.data.num_classes);
  std::cout << report.to_table();
  if (!f.out_dir.empty()) {
    fs::create_directories(f.out_dir);
    std::ofstream out(f.out_dir + "/report.json");
    if (!out.good())
      throw ConfigError("eval: cannot write " + f.out_dir + "/report.json");
    out << report.to_json() << "\n";
    std::cout << "report: " << f.out_dir << "/report.json\n";
  }
  return kExitOk;
}

int cmd_gradcheck(const CommonFlags& f) {
  const RunConfig cfg =
      f.config_path.empty() ? gradcheck_config() : load_config(f);
  const GradcheckReport report = run_gradcheck(cfg, &std::cout);
  if (!report.pass()) {
    std::cerr << "gradcheck: FAILED (max_rel " << report.max_rel << " >= 1e-4)\n";
    return kExitNumeric;
  }
  return kExitOk;
}

int cmd_report(const std::string& in_path) {
  std::ifstream in(in_path);
  if (!in.good()) throw ConfigError("report: cannot read " + in_path);
  std::stringstream buf;
  buf << in.rdbuf();
  std::cout << EvalReport::from_json(buf.str()).to_table();
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"temporal action detector over synthetic snippet features"};
  app.require_subcommand(1);

  CommonFlags gen_f, train_f, infer_f, eval_f, grad_f;
  std::string train_data, infer_data, eval_data;
  std::string infer_checkpoint, infer_split = "val";
  std::string eval_detections, eval_split = "val";
  std::string report_in;
  std::size_t train_max_steps = 0;

  auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
  add_common(gen, gen_f, /*config_required=*/true);

  auto* train = app.add_subcommand("train", "train a model");
  add_common(train, train_f, /*config_required=*/true);
  train->add_option("--data", train_data, "saved dataset directory (default: generate)");
  train->add_option("--max-steps", train_max_steps, "stop after N steps (0 = all)");

  auto* infer = app.add_subcommand("infer", "detect actions with a checkpoint");
  add_common(infer, infer_f, /*config_required=*/false);
  infer->add_option("--checkpoint", infer_checkpoint, "checkpoint path prefix")
      ->required();
  infer->add_option("--data", infer_data, "saved dataset directory (default: generate)");
  infer->add_option("--split", infer_split, "video split: train|val|all");

  auto* eval = app.add_subcommand("eval", "score a detection file");
  add_common(eval, eval_f, /*config_required=*/true);
  eval->add_option("--detections", eval_detections, "detection file (TSV)")
      ->required();
  eval->add_option("--data", eval_data, "saved dataset directory (default: generate)");
  eval->add_option("--split", eval_split, "video split: train|val|all");

  auto* grad = app.add_subcommand("gradcheck", "finite-difference gradient check");
  add_common(grad, grad_f, /*config_required=*/false);

  auto* report = app.add_subcommand("report", "render a saved report as a table");
  report->add_option("--in", report_in, "report JSON file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);  // prints help, exit 0
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n\n" << app.help();
    return kExitConfig;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(gen_f);
    if (train->parsed()) return cmd_train(train_f, train_data, train_max_steps);
    if (infer->parsed())
      return cmd_infer(infer_f, infer_checkpoint, infer_data, infer_split);
    if (eval->parsed()) return cmd_eval(eval_f, eval_detections, eval_data, eval_split);
    if (grad->parsed()) return cmd_gradcheck(grad_f);
    if (report->parsed()) return cmd_report(report_in);
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  }
  return kExitConfig;  // unreachable: require_subcommand guarantees a branch
}
