// Command-line front end: dataset synthesis, training, evaluation,
// attention-map export and gradient verification.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "saunet/gradcheck.hpp"
#include "saunet/interpret.hpp"
#include "saunet/ops.hpp"
#include "saunet/runconfig.hpp"
#include "saunet/synth.hpp"

namespace fs = std::filesystem;
using namespace saunet;

namespace {

// Exit codes: 0 ok, 2 config error, 3 data error, 4 numeric failure,
// 5 verification failure.
enum ExitCode { kOk = 0, kConfigError = 2, kDataError = 3, kNumericError = 4,
                kVerifyError = 5 };

int run_synth(const std::string& out, int n, int size, uint64_t seed,
              const std::string& texture, bool force) {
  if (fs::exists(out) && !fs::is_empty(out) && !force) {
    std::cerr << "error: output directory '" << out
              << "' is not empty (use --force to overwrite)\n";
    return kDataError;
  }
  SynthOptions opt;
  opt.n = n;
  opt.size = size;
  opt.seed = seed;
  opt.texture = texture;
  uint64_t checksum;
  try {
    checksum = synth_generate(out, opt);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kDataError;
  }
  std::cout << "wrote " << n << " samples to " << out << "\nchecksum "
            << std::hex << checksum << std::dec << "\n";
  return kOk;
}

int run_train(const std::string& config_path, bool no_shape_stream,
              const std::string& out_override, int epochs_override,
              int64_t seed_override, bool deterministic) {
  RunConfig cfg;
  try {
    cfg = RunConfig::from_json_file(config_path);
    if (no_shape_stream) {
      cfg.model.with_shape_stream = false;
      cfg.train.loss_weights.lambda3 = 0.f;
    }
    if (!out_override.empty()) cfg.train.out_dir = out_override;
    if (epochs_override > 0) cfg.train.epochs = epochs_override;
    if (seed_override >= 0) {
      cfg.seed = static_cast<uint64_t>(seed_override);
      cfg.train.seed = cfg.seed;
    }
    if (deterministic) cfg.train.deterministic = true;
    cfg.train.validate();
    if (cfg.data_root.empty()) fail("config: data.root is required for training");
    if (cfg.train.out_dir.empty()) fail("config: train.out_dir is required");
  } catch (const Error& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigError;
  }

  DatasetManifest data;
  try {
    data = manifest_read(cfg.data_root);
    if (data.num_classes != cfg.model.num_classes)
      fail("dataset has ", data.num_classes, " classes but the model expects ",
           cfg.model.num_classes);
  } catch (const Error& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kDataError;
  }

  try {
    ModelF model(cfg.model, cfg.seed);
    Trainer trainer(model, cfg.train, data);
    trainer.fit(std::cout);
    std::cout << "best epoch " << trainer.best_epoch() + 1 << " mean val dice "
              << trainer.best_val_dice() << "\n";
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    const std::string what = e.what();
    return what.find("non-finite") != std::string::npos ? kNumericError : 1;
  }
  return kOk;
}

int run_eval(const std::string& ckpt, const std::string& data_root,
             const std::string& split, const std::string& tsv_path, int threads,
             int crop) {
  CheckpointInfo info;
  DatasetManifest data;
  try {
    info = checkpoint_peek(ckpt);
    data = manifest_read(data_root);
    if (data.num_classes != info.config.num_classes)
      fail("dataset has ", data.num_classes, " classes but the checkpoint expects ",
           info.config.num_classes);
  } catch (const Error& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kDataError;
  }
  try {
    if (threads > 0) set_num_threads(threads);
    ModelF model(info.config, 0);
    checkpoint_load(model, nullptr, ckpt);
    TrainConfig tc;
    tc.seed = 0;
    tc.pipeline.crop = crop;
    ValidationResult val = evaluate_split(model, data, tc, split);
    std::cout << val.report.to_json() << "\n";
    const std::string tsv =
        tsv_path.empty() ? (fs::path(ckpt).parent_path() / ("eval_" + split + ".tsv")).string()
                         : tsv_path;
    std::ofstream os(tsv, std::ios::trunc);
    if (!os) fail("cannot write '", tsv, "'");
    for (const auto& row : val.rows)
      os << row.id << '\t' << row.cls << '\t' << row.dice << '\t' << row.iou << '\n';
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return kOk;
}

int run_explain(const std::string& ckpt, const std::string& data_root,
                const std::string& ids_csv, const std::string& thresholds_csv,
                int smoothgrad_n, const std::string& out_dir, uint64_t seed,
                int crop) {
  CheckpointInfo info;
  DatasetManifest data;
  std::vector<std::string> ids;
  try {
    info = checkpoint_peek(ckpt);
    data = manifest_read(data_root);
    std::stringstream ss(ids_csv);
    std::string id;
    while (std::getline(ss, id, ','))
      if (!id.empty()) ids.push_back(id);
    if (ids.empty()) fail("no sample ids given");
    for (const auto& i : ids) data.find(i);  // validates ids up front
  } catch (const Error& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kDataError;
  }
  std::vector<float> thresholds;
  {
    std::stringstream ss(thresholds_csv);
    std::string tok;
    while (std::getline(ss, tok, ','))
      if (!tok.empty()) thresholds.push_back(std::stof(tok));
  }
  try {
    ModelF model(info.config, 0);
    checkpoint_load(model, nullptr, ckpt);
    PipelineOptions opt;
    opt.crop = crop;
    for (const auto& id : ids) {
      const ManifestRow& row = data.find(id);
      SegSample sample = load_sample(data, row, opt, 0);
      ExplainStats stats = explain_sample(model, sample, out_dir, thresholds,
                                          smoothgrad_n, info.config.num_classes - 1,
                                          seed);
      std::cout << id << ": wrote " << stats.files_written << " files\n";
      if (stats.smoothgrad_passes > 0)
        std::cout << id << ": passes: extract=1 smoothgrad=" << stats.smoothgrad_passes
                  << " extract_s=" << stats.extract_seconds
                  << " smoothgrad_s=" << stats.smoothgrad_seconds << " ratio="
                  << stats.smoothgrad_seconds / std::max(stats.extract_seconds, 1e-9)
                  << "\n";
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return kOk;
}

int run_gradcheck(uint64_t seed) {
  const auto results = run_standard_gradchecks(seed);
  std::cout << format_gradcheck_report(results);
  int failures = 0;
  for (const auto& r : results) failures += r.pass ? 0 : 1;
  if (failures > 0) {
    std::cerr << failures << " gradient check(s) failed\n";
    return kVerifyError;
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"shape-attentive segmentation engine"};
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  std::string synth_out = "data/synth";
  int synth_n = 250, synth_size = 64;
  int64_t synth_seed = -1;
  std::string synth_texture = "speckle";
  bool synth_force = false;
  synth->add_option("--out", synth_out, "output directory");
  synth->add_option("--n", synth_n, "number of samples");
  synth->add_option("--size", synth_size, "image side length");
  synth->add_option("--seed", synth_seed, "rng seed");
  synth->add_option("--texture", synth_texture, "texture family: speckle|stripes");
  synth->add_flag("--force", synth_force, "overwrite a non-empty directory");

  // train
  auto* train = app.add_subcommand("train", "train a model from a JSON config");
  std::string train_config, train_out;
  bool no_shape_stream = false, train_det = false;
  int train_epochs = -1;
  int64_t train_seed = -1;
  train->add_option("--config", train_config, "run config JSON")->required();
  train->add_flag("--no-shape-stream", no_shape_stream,
                  "ablate the shape stream and zero its loss weight");
  train->add_option("--out", train_out, "override train.out_dir");
  train->add_option("--epochs", train_epochs, "override train.epochs");
  train->add_option("--seed", train_seed, "override seed");
  train->add_flag("--deterministic", train_det, "single-thread numerics");

  // eval
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  std::string eval_ckpt, eval_data, eval_split = "val", eval_tsv;
  int eval_threads = 0;
  eval->add_option("--ckpt", eval_ckpt, "checkpoint file")->required();
  eval->add_option("--data", eval_data, "dataset root")->required();
  eval->add_option("--split", eval_split, "val|test");
  eval->add_option("--tsv", eval_tsv, "per-sample TSV output path");
  eval->add_option("--threads", eval_threads, "worker cap");
  int eval_crop = 64;
  eval->add_option("--crop", eval_crop, "center crop/pad size");

  // explain
  auto* explain = app.add_subcommand("explain", "export attention maps");
  std::string ex_ckpt, ex_data, ex_ids, ex_thresholds = "0.6,0.8", ex_out = "explain";
  int ex_smoothgrad = 25;
  int64_t ex_seed = -1;
  explain->add_option("--ckpt", ex_ckpt, "checkpoint file")->required();
  explain->add_option("--data", ex_data, "dataset root")->required();
  explain->add_option("--ids", ex_ids, "comma-separated sample ids")->required();
  explain->add_option("--thresholds", ex_thresholds, "comma-separated taus");
  explain->add_option("--smoothgrad", ex_smoothgrad,
                      "noisy passes for the baseline (0 disables)");
  explain->add_option("--out", ex_out, "output root");
  explain->add_option("--seed", ex_seed, "rng seed");
  int ex_crop = 64;
  explain->add_option("--crop", ex_crop, "center crop/pad size");

  // gradcheck
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference verification");
  int64_t gc_seed = -1;
  gradcheck->add_option("--seed", gc_seed, "rng seed");

  CLI11_PARSE(app, argc, argv);

  auto seed_of = [](int64_t flag) {
    return resolve_seed(flag >= 0, flag >= 0 ? static_cast<uint64_t>(flag) : 0);
  };

  try {
    if (*synth)
      return run_synth(synth_out, synth_n, synth_size, seed_of(synth_seed),
                       synth_texture, synth_force);
    if (*train)
      return run_train(train_config, no_shape_stream, train_out, train_epochs,
                       train_seed, train_det);
    if (*eval)
      return run_eval(eval_ckpt, eval_data, eval_split, eval_tsv, eval_threads,
                      eval_crop);
    if (*explain)
      return run_explain(ex_ckpt, ex_data, ex_ids, ex_thresholds, ex_smoothgrad, ex_out,
                         seed_of(ex_seed), ex_crop);
    if (*gradcheck) return run_gradcheck(seed_of(gc_seed));
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return kOk;
}
