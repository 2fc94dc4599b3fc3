// d2s: dataset generation, training, evaluation, profiling and gradient
// checking for the decoder-free binary segmentation models.
//
// Exit codes: 0 success, 1 runtime failure, 2 usage/validation error.

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "d2s/datagen.hpp"
#include "d2s/gradcheck.hpp"
#include "d2s/metrics.hpp"
#include "d2s/model.hpp"
#include "d2s/profiler.hpp"
#include "d2s/trainer.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Flat `key value` lines, '#' comments. Unknown keys are rejected.
std::map<std::string, std::string> read_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open config file: " + path);
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(in, line)) {
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    std::string key;
    if (!(ls >> key)) continue;
    std::string value, word;
    while (ls >> word) {
      if (!value.empty()) value += ' ';
      value += word;
    }
    if (value.empty()) throw UsageError("config key '" + key + "' has no value");
    kv[key] = value;
  }
  return kv;
}

void apply_config(d2s::TrainConfig& cfg, const std::map<std::string, std::string>& kv) {
  for (const auto& [key, value] : kv) {
    try {
      if (key == "model")
        cfg.model = value;
      else if (key == "data")
        cfg.data_dir = value;
      else if (key == "ckpt")
        cfg.ckpt_path = value;
      else if (key == "epochs")
        cfg.epochs = std::stoi(value);
      else if (key == "batch")
        cfg.batch_size = std::stoi(value);
      else if (key == "lr")
        cfg.base_lr = std::stod(value);
      else if (key == "plateau_factor")
        cfg.plateau_factor = std::stod(value);
      else if (key == "patience")
        cfg.patience = std::stoi(value);
      else if (key == "dropout")
        cfg.dropout = std::stod(value);
      else if (key == "w_bg")
        cfg.weight_background = std::stod(value);
      else if (key == "w_fg")
        cfg.weight_foreground = std::stod(value);
      else if (key == "seed")
        cfg.seed = std::stoull(value);
      else if (key == "warmup")
        cfg.warmup_epochs = std::stoi(value);
      else if (key == "jitter")
        cfg.jitter = std::stoi(value) != 0;
      else
        throw UsageError("unknown config key '" + key + "'");
    } catch (const std::invalid_argument&) {
      throw UsageError("bad value for config key '" + key + "': " + value);
    } catch (const std::out_of_range&) {
      throw UsageError("value out of range for config key '" + key + "': " + value);
    }
  }
}

d2s::Shape4 parse_input_shape(const std::string& text) {
  int64_t c = 0, h = 0, w = 0;
  char x1 = 0, x2 = 0;
  std::istringstream ss(text);
  if (!(ss >> c >> x1 >> h >> x2 >> w) || x1 != 'x' || x2 != 'x' || !ss.eof())
    throw UsageError("--input must look like CxHxW, got '" + text + "'");
  if (c < 1 || h < 1 || w < 1) throw UsageError("--input dims must be >= 1");
  return d2s::Shape4{1, c, h, w};
}

int cmd_gen_data(const std::string& out_dir, int n_train, int n_val, int size,
                 uint64_t seed) {
  if (size < 32 || size % 8 != 0)
    throw UsageError("--size must be >= 32 and divisible by 8");
  if (n_train < 1 || n_val < 0) throw UsageError("--train must be >= 1, --val >= 0");
  const d2s::DatasetManifest manifest =
      d2s::make_dataset(n_train, n_val, size, seed, out_dir);
  std::printf("manifest %s/manifest.txt\n", manifest.root.c_str());
  std::printf("train %zu\nval %zu\n", manifest.train.size(), manifest.val.size());
  return kExitOk;
}

int cmd_train(const d2s::TrainConfig& cfg) {
  try {
    cfg.validate();
  } catch (const d2s::ValueError& e) {
    throw UsageError(e.what());
  }
  if (cfg.data_dir.empty() || cfg.ckpt_path.empty())
    throw UsageError("--data and --ckpt are required");
  const d2s::TrainResult result = d2s::train(cfg, [](const d2s::EpochRecord& r) {
    std::printf("%s\n", d2s::format_epoch(r).c_str());
    std::fflush(stdout);
  });
  std::printf("best_iou %.6f\ncheckpoint %s\nhistory %s\n", result.best_iou,
              result.ckpt_path.c_str(), result.history_path.c_str());
  return kExitOk;
}

int cmd_eval(const std::string& data_dir, const std::string& split_name,
             const std::string& ckpt_path) {
  d2s::Split split;
  if (split_name == "train")
    split = d2s::Split::train;
  else if (split_name == "val")
    split = d2s::Split::val;
  else
    throw UsageError("--split must be train or val");
  const d2s::DatasetManifest manifest = d2s::load_manifest(data_dir);
  const d2s::IouReport report = d2s::evaluate(ckpt_path, manifest, split);
  std::fputs(d2s::format_report(report).c_str(), stdout);
  return kExitOk;
}

int cmd_profile(const std::string& model_name, const std::string& input,
                const std::string& compare_with) {
  const d2s::Shape4 shape = parse_input_shape(input);
  bool known = false;
  for (const std::string& name : d2s::model_names()) known = known || name == model_name;
  if (!known)
    throw UsageError("unknown model '" + model_name + "' (valid: vgg_d2s, resnet_d2s, segnet)");
  d2s::Rng rng(0);
  d2s::ModelGraph model = d2s::build_model(model_name, {}, rng);
  if (shape.h % model.downsample != 0 || shape.w % model.downsample != 0)
    throw UsageError("input spatial dims must be divisible by " +
                     std::to_string(model.downsample));
  const d2s::CostReport report = d2s::count_macs(model, shape);
  std::fputs(d2s::format_cost_table(model, report).c_str(), stdout);
  std::fputs(d2s::format_cost_lines(report).c_str(), stdout);
  if (!compare_with.empty()) {
    bool known_b = false;
    for (const std::string& name : d2s::model_names())
      known_b = known_b || name == compare_with;
    if (!known_b) throw UsageError("unknown comparison model '" + compare_with + "'");
    d2s::Rng rng_b(0);
    d2s::ModelGraph other = d2s::build_model(compare_with, {}, rng_b);
    std::fputs(
        d2s::format_compare_report(d2s::compare_models(model, other, shape)).c_str(),
        stdout);
  }
  return kExitOk;
}

int cmd_gradcheck(uint64_t seed, int cases) {
  if (cases < 1) throw UsageError("--cases must be >= 1");
  const auto t0 = std::chrono::steady_clock::now();
  const auto results = d2s::run_gradcheck_suite(seed, cases);
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::fputs(d2s::format_gradcheck(results).c_str(), stdout);
  const bool ok = d2s::gradcheck_passed(results, 1e-3);
  std::printf("gradcheck %s in %.2f s (tolerance 1e-3)\n", ok ? "passed" : "FAILED", secs);
  return ok ? kExitOk : kExitRuntime;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"decoder-free binary segmentation workbench"};
  app.require_subcommand(1);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "generate a synthetic road dataset");
  std::string gen_out;
  int gen_train = 500, gen_val = 100, gen_size = 64;
  uint64_t gen_seed = 1;
  gen->add_option("--out", gen_out, "output directory")->required();
  gen->add_option("--train", gen_train, "number of training scenes");
  gen->add_option("--val", gen_val, "number of validation scenes");
  gen->add_option("--size", gen_size, "square image size (>= 32, divisible by 8)");
  gen->add_option("--seed", gen_seed, "generator seed");

  // train
  auto* tr = app.add_subcommand("train", "train a model");
  d2s::TrainConfig cfg;
  std::string config_path;
  tr->add_option("--config", config_path, "flat key-value config file");
  auto* opt_data = tr->add_option("--data", cfg.data_dir, "dataset directory");
  auto* opt_model = tr->add_option("--model", cfg.model, "vgg_d2s | resnet_d2s | segnet");
  auto* opt_epochs = tr->add_option("--epochs", cfg.epochs, "epoch count");
  auto* opt_seed = tr->add_option("--seed", cfg.seed, "training seed");
  auto* opt_ckpt = tr->add_option("--ckpt", cfg.ckpt_path, "checkpoint path");
  auto* opt_lr = tr->add_option("--lr", cfg.base_lr, "initial learning rate");
  auto* opt_batch = tr->add_option("--batch", cfg.batch_size, "batch size [1, 64]");
  auto* opt_dropout = tr->add_option("--dropout", cfg.dropout, "dropout2d probability");
  auto* opt_warmup = tr->add_option("--warmup", cfg.warmup_epochs, "patch warm-up epochs");
  auto* opt_patience = tr->add_option("--patience", cfg.patience, "plateau patience");
  auto* opt_factor = tr->add_option("--plateau-factor", cfg.plateau_factor, "lr drop factor");
  auto* opt_wbg = tr->add_option("--w-bg", cfg.weight_background, "background class weight");
  auto* opt_wfg = tr->add_option("--w-fg", cfg.weight_foreground, "foreground class weight");
  auto* opt_jitter = tr->add_flag("--no-jitter", "disable color jitter");

  // eval
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
  std::string ev_data, ev_split = "val", ev_ckpt;
  ev->add_option("--data", ev_data, "dataset directory")->required();
  ev->add_option("--split", ev_split, "train | val");
  ev->add_option("--ckpt", ev_ckpt, "checkpoint path")->required();

  // profile
  auto* pr = app.add_subcommand("profile", "static MAC/parameter accounting");
  std::string pr_model, pr_input = "3x64x64", pr_compare;
  pr->add_option("--model", pr_model, "model name")->required();
  pr->add_option("--input", pr_input, "input shape CxHxW");
  pr->add_option("--compare", pr_compare, "second model for a ratio report");

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient suite");
  uint64_t gc_seed = 7;
  int gc_cases = 20;
  gc->add_option("--seed", gc_seed, "suite seed");
  gc->add_option("--cases", gc_cases, "randomized cases per op");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(gen_out, gen_train, gen_val, gen_size, gen_seed);
    if (tr->parsed()) {
      if (!config_path.empty()) {
        // config first, then re-apply any flags given on the command line
        d2s::TrainConfig merged;
        apply_config(merged, read_config_file(config_path));
        if (!opt_data->count()) cfg.data_dir = merged.data_dir;
        if (!opt_model->count()) cfg.model = merged.model;
        if (!opt_epochs->count()) cfg.epochs = merged.epochs;
        if (!opt_seed->count()) cfg.seed = merged.seed;
        if (!opt_ckpt->count()) cfg.ckpt_path = merged.ckpt_path;
        if (!opt_lr->count()) cfg.base_lr = merged.base_lr;
        if (!opt_batch->count()) cfg.batch_size = merged.batch_size;
        if (!opt_dropout->count()) cfg.dropout = merged.dropout;
        if (!opt_warmup->count()) cfg.warmup_epochs = merged.warmup_epochs;
        if (!opt_patience->count()) cfg.patience = merged.patience;
        if (!opt_factor->count()) cfg.plateau_factor = merged.plateau_factor;
        if (!opt_wbg->count()) cfg.weight_background = merged.weight_background;
        if (!opt_wfg->count()) cfg.weight_foreground = merged.weight_foreground;
        if (!opt_jitter->count()) cfg.jitter = merged.jitter;
        else cfg.jitter = false;
      } else if (opt_jitter->count()) {
        cfg.jitter = false;
      }
      return cmd_train(cfg);
    }
    if (ev->parsed()) return cmd_eval(ev_data, ev_split, ev_ckpt);
    if (pr->parsed()) return cmd_profile(pr_model, pr_input, pr_compare);
    if (gc->parsed()) return cmd_gradcheck(gc_seed, gc_cases);
  } catch (const UsageError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitUsage;
  } catch (const d2s::ValueError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitUsage;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitRuntime;
  }
  return kExitUsage;
}
