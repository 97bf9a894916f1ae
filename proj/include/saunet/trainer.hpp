#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "saunet/data.hpp"
#include "saunet/losses.hpp"
#include "saunet/metrics.hpp"
#include "saunet/model.hpp"
#include "saunet/optim.hpp"

namespace saunet {

struct TrainConfig {
  int epochs = 30;
  int batch_size = 8;
  double lr0 = 5e-4;
  double lr_gamma = 0.99;
  float weight_decay = 1e-4f;
  LossWeights<float> loss_weights;
  uint64_t seed = 7;
  int checkpoint_every = 0;  // extra periodic checkpoints, 0 = off
  std::string out_dir;
  int threads = 0;           // 0 = hardware default
  bool deterministic = false;
  PipelineOptions pipeline;

  void validate() const;
};

struct EpochStats {
  double ce = 0, dice = 0, edge = 0, total = 0;
  int steps = 0;
};

/// A prepared mini-batch in NCHW layout.
struct Batch {
  Tensor<float> x, canny, y_onehot, boundary;
  std::vector<std::string> ids;
};

/// Deterministic batch producer: the shuffle order is a function of
/// (seed, epoch) and each sample's augmentation of (seed, epoch, row).
class BatchLoader {
 public:
  BatchLoader(const DatasetManifest& data, const TrainConfig& cfg,
              std::string split, bool augment);
  std::vector<Batch> epoch_batches(int epoch) const;
  size_t sample_count() const { return rows_.size(); }

 private:
  const DatasetManifest& data_;
  TrainConfig cfg_;
  std::vector<const ManifestRow*> rows_;
  bool augment_;
};

struct ValidationResult {
  MetricReport report;
  // per-sample rows for TSV output: (sample id, class, dice, iou)
  struct Row {
    std::string id;
    int cls;
    double dice, iou;
  };
  std::vector<Row> rows;
};

/// Eval-mode metrics of a model over one split; usable without a Trainer.
ValidationResult evaluate_split(const ModelF& model, const DatasetManifest& data,
                                const TrainConfig& cfg, const std::string& split);

class Trainer {
 public:
  Trainer(ModelF& model, const TrainConfig& cfg, const DatasetManifest& data);

  EpochStats train_epoch(int epoch);
  ValidationResult validate(const std::string& split = "val");

  /// Full loop with JSON-lines logging, best-checkpoint tracking by mean
  /// validation Dice, and optional resume from a prior epoch.
  void fit(std::ostream& log, int start_epoch = 0);

  RAdam<float>& optimizer() { return optim_; }
  double best_val_dice() const { return best_dice_; }
  int best_epoch() const { return best_epoch_; }

 private:
  ModelF& model_;
  TrainConfig cfg_;
  const DatasetManifest& data_;
  BatchLoader train_loader_, val_loader_;
  RAdam<float> optim_;
  double best_dice_ = -1.0;
  int best_epoch_ = -1;
};

/// Checkpoint = SAUC container (model params + optimizer moments + epoch)
/// plus a JSON sidecar at <path>.json carrying the model config.
void checkpoint_save(const ModelF& model, const RAdam<float>* optim, int epoch,
                     const std::string& path);

struct CheckpointInfo {
  ModelConfig config;
  int epoch = 0;
};

CheckpointInfo checkpoint_peek(const std::string& path);
/// Restores parameters (and optimizer state when optim != nullptr).
CheckpointInfo checkpoint_load(ModelF& model, RAdam<float>* optim,
                               const std::string& path);

/// Batch assembly shared by the trainer and the tools.
Batch make_batch(const std::vector<SegSample>& samples, int num_classes);

}  // namespace saunet
