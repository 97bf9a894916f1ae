#include "saunet/trainer.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <random>

#include <json.hpp>

#include "saunet/ops.hpp"

namespace saunet {

namespace fs = std::filesystem;

void TrainConfig::validate() const {
  if (epochs < 1) fail("train config: epochs must be >= 1");
  if (batch_size < 2) fail("train config: batch_size must be >= 2 (batch norm)");
  if (lr0 < 0) fail("train config: lr must be nonnegative");
  if (lr_gamma <= 0 || lr_gamma > 1) fail("train config: lr_gamma must be in (0,1]");
  if (weight_decay < 0) fail("train config: weight_decay must be >= 0");
  loss_weights.validate();
  if (pipeline.crop % 8 != 0)
    fail("train config: crop size ", pipeline.crop, " must be divisible by 8");
}

Batch make_batch(const std::vector<SegSample>& samples, int num_classes) {
  if (samples.empty()) fail("make_batch: no samples");
  const int b = static_cast<int>(samples.size());
  const int h = samples[0].labels.h, w = samples[0].labels.w;
  Batch out;
  out.x = Tensor<float>::zeros({b, 1, h, w});
  out.canny = Tensor<float>::zeros({b, 1, h, w});
  out.y_onehot = Tensor<float>::zeros({b, num_classes, h, w});
  out.boundary = Tensor<float>::zeros({b, 1, h, w});
  const int64_t hw = static_cast<int64_t>(h) * w;
  for (int i = 0; i < b; ++i) {
    const SegSample& s = samples[static_cast<size_t>(i)];
    if (s.labels.h != h || s.labels.w != w)
      fail("make_batch: mixed sample dims in one batch");
    out.ids.push_back(s.id);
    std::copy(s.image.data().begin(), s.image.data().end(),
              out.x.raw() + static_cast<int64_t>(i) * hw);
    for (int64_t p = 0; p < hw; ++p) {
      out.canny.raw()[i * hw + p] = static_cast<float>(s.canny_edges.v[static_cast<size_t>(p)]);
      out.boundary.raw()[i * hw + p] =
          static_cast<float>(s.boundary.v[static_cast<size_t>(p)]);
      const int32_t cls = s.labels.v[static_cast<size_t>(p)];
      out.y_onehot.raw()[(static_cast<int64_t>(i) * num_classes + cls) * hw + p] = 1.f;
    }
  }
  return out;
}

BatchLoader::BatchLoader(const DatasetManifest& data, const TrainConfig& cfg,
                         std::string split, bool augment)
    : data_(data), cfg_(cfg), augment_(augment) {
  rows_ = data.split_rows(split);
  if (rows_.empty()) fail("dataset has no samples in split '", split, "'");
}

std::vector<Batch> BatchLoader::epoch_batches(int epoch) const {
  std::vector<size_t> order(rows_.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  if (augment_) {
    std::mt19937_64 rng(mix_seed(cfg_.seed, 0x10000u + static_cast<uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), rng);
  }
  PipelineOptions opt = cfg_.pipeline;
  opt.augment = augment_;

  std::vector<Batch> batches;
  std::vector<SegSample> bucket;
  for (size_t k = 0; k < order.size(); ++k) {
    const ManifestRow& row = *rows_[order[k]];
    const uint64_t aug_seed =
        mix_seed(mix_seed(cfg_.seed, static_cast<uint64_t>(epoch)), order[k]);
    bucket.push_back(load_sample(data_, row, opt, aug_seed));
    if (static_cast<int>(bucket.size()) == cfg_.batch_size) {
      batches.push_back(make_batch(bucket, data_.num_classes));
      bucket.clear();
    }
  }
  // batch norm needs at least 2 samples; drop a trailing singleton
  if (bucket.size() >= 2) batches.push_back(make_batch(bucket, data_.num_classes));
  return batches;
}

Trainer::Trainer(ModelF& model, const TrainConfig& cfg, const DatasetManifest& data)
    : model_(model),
      cfg_(cfg),
      data_(data),
      train_loader_(data, cfg, "train", true),
      val_loader_(data, cfg, "val", false),
      optim_(model.registry(), RAdamConfig<float>{0.9f, 0.999f, cfg.weight_decay, 1e-8f}) {
  cfg_.validate();
  if (cfg_.threads > 0 || cfg_.deterministic)
    set_num_threads(cfg_.deterministic ? 1 : cfg_.threads);
}

EpochStats Trainer::train_epoch(int epoch) {
  const float lr = static_cast<float>(lr_schedule(cfg_.lr0, cfg_.lr_gamma, epoch));
  EpochStats stats;
  const bool shape_stream = model_.config().with_shape_stream;
  for (Batch& batch : train_loader_.epoch_batches(epoch)) {
    model_.registry().zero_grad();
    Tape<float> tape;
    try {
      auto out = model_.forward(batch.x, batch.canny, true, &tape);
      Tensor<float> ce = cross_entropy(&tape, out.seg_logits, batch.y_onehot);
      Tensor<float> dl = dice_loss(
          &tape, softmax_channels(&tape, out.seg_logits), batch.y_onehot);
      Tensor<float> eb;
      if (shape_stream) eb = edge_bce(&tape, out.edge_logits, batch.boundary);
      Tensor<float> total = total_loss(&tape, ce, dl, eb, cfg_.loss_weights);
      const float total_v = total.item();
      if (!std::isfinite(total_v)) fail("non-finite loss");
      backward(total, tape);
      tape.clear();
      optim_.step(lr);
      stats.ce += ce.item();
      stats.dice += dl.item();
      if (shape_stream) stats.edge += eb.item();
      stats.total += total_v;
      ++stats.steps;
    } catch (const Error& e) {
      std::string ids;
      for (const auto& id : batch.ids) ids += (ids.empty() ? "" : ",") + id;
      fail("training step failed (batch ids ", ids, "): ", e.what());
    }
  }
  if (stats.steps > 0) {
    stats.ce /= stats.steps;
    stats.dice /= stats.steps;
    stats.edge /= stats.steps;
    stats.total /= stats.steps;
  }
  return stats;
}

ValidationResult Trainer::validate(const std::string& split) {
  return evaluate_split(model_, data_, cfg_, split);
}

ValidationResult evaluate_split(const ModelF& model, const DatasetManifest& data,
                                const TrainConfig& cfg, const std::string& split) {
  BatchLoader loader(data, cfg, split, false);
  ValidationResult res;
  MetricAccumulator acc(data.num_classes, 1);
  for (Batch& batch : loader.epoch_batches(0)) {
    auto out = model.forward(batch.x, batch.canny, false, nullptr);
    const int b = batch.x.dim(0), k = data.num_classes;
    const int h = batch.x.dim(2), w = batch.x.dim(3);
    const int64_t hw = static_cast<int64_t>(h) * w;
    for (int i = 0; i < b; ++i) {
      IntMap pred(h, w), truth(h, w);
      for (int64_t p = 0; p < hw; ++p) {
        int best = 0;
        float best_v = out.seg_logits.raw()[(static_cast<int64_t>(i) * k) * hw + p];
        for (int c = 1; c < k; ++c) {
          const float v = out.seg_logits.raw()[(static_cast<int64_t>(i) * k + c) * hw + p];
          if (v > best_v) {
            best_v = v;
            best = c;
          }
        }
        pred.v[static_cast<size_t>(p)] = best;
        for (int c = 0; c < k; ++c)
          if (batch.y_onehot.raw()[(static_cast<int64_t>(i) * k + c) * hw + p] == 1.f)
            truth.v[static_cast<size_t>(p)] = c;
      }
      auto per_class = acc.add(pred, truth);
      for (size_t ci = 0; ci < per_class.size(); ++ci)
        res.rows.push_back({batch.ids[static_cast<size_t>(i)], static_cast<int>(ci) + 1,
                            per_class[ci].first, per_class[ci].second});
    }
  }
  res.report = acc.report();
  return res;
}

void Trainer::fit(std::ostream& log, int start_epoch) {
  if (!cfg_.out_dir.empty()) fs::create_directories(cfg_.out_dir);
  std::ofstream jsonl;
  if (!cfg_.out_dir.empty()) {
    jsonl.open(fs::path(cfg_.out_dir) / "train_log.jsonl",
               start_epoch == 0 ? std::ios::trunc : std::ios::app);
    if (!jsonl) fail("cannot open training log under '", cfg_.out_dir, "'");
  }
  for (int epoch = start_epoch; epoch < cfg_.epochs; ++epoch) {
    const EpochStats stats = train_epoch(epoch);
    const ValidationResult val = validate();
    nlohmann::json j;
    j["epoch"] = epoch;
    j["lr"] = lr_schedule(cfg_.lr0, cfg_.lr_gamma, epoch);
    j["ce"] = stats.ce;
    j["dice_loss"] = stats.dice;
    j["edge"] = stats.edge;
    j["val_dice"] = val.report.dice;
    const std::string line = j.dump();
    log << line << "\n";
    log.flush();
    if (jsonl) jsonl << line << "\n";

    if (val.report.mean_dice > best_dice_) {
      best_dice_ = val.report.mean_dice;
      best_epoch_ = epoch;
      if (!cfg_.out_dir.empty())
        checkpoint_save(model_, &optim_, epoch + 1,
                        (fs::path(cfg_.out_dir) / "best.ckpt").string());
    }
    if (!cfg_.out_dir.empty() && cfg_.checkpoint_every > 0 &&
        (epoch + 1) % cfg_.checkpoint_every == 0) {
      char name[32];
      std::snprintf(name, sizeof(name), "epoch_%03d.ckpt", epoch + 1);
      checkpoint_save(model_, &optim_, epoch + 1, (fs::path(cfg_.out_dir) / name).string());
    }
  }
  if (!cfg_.out_dir.empty())
    checkpoint_save(model_, &optim_, cfg_.epochs,
                    (fs::path(cfg_.out_dir) / "final.ckpt").string());
}

void checkpoint_save(const ModelF& model, const RAdam<float>* optim, int epoch,
                     const std::string& path) {
  std::vector<SaucEntry> entries = model.registry().to_entries();
  if (optim) {
    auto oe = optim->to_entries();
    entries.insert(entries.end(), oe.begin(), oe.end());
  }
  entries.push_back(SaucEntry{"trainer.epoch", {1}, {static_cast<float>(epoch)}});
  sauc_write(path, entries);

  nlohmann::json side;
  side["model"] = nlohmann::json::parse(model_config_to_json(model.config()));
  side["epoch"] = epoch;
  std::ofstream os(path + ".json", std::ios::trunc);
  if (!os) fail("cannot write checkpoint sidecar '", path, ".json'");
  os << side.dump(2) << "\n";
}

CheckpointInfo checkpoint_peek(const std::string& path) {
  std::ifstream is(path + ".json");
  if (!is) fail("cannot open checkpoint sidecar '", path, ".json'");
  nlohmann::json j;
  try {
    is >> j;
  } catch (const std::exception& e) {
    fail("invalid checkpoint sidecar '", path, ".json': ", e.what());
  }
  CheckpointInfo info;
  info.config = model_config_from_json(j.at("model").dump());
  info.epoch = j.value("epoch", 0);
  return info;
}

CheckpointInfo checkpoint_load(ModelF& model, RAdam<float>* optim,
                               const std::string& path) {
  CheckpointInfo info = checkpoint_peek(path);
  const std::vector<SaucEntry> entries = sauc_read(path);
  model.registry().load_entries(entries, /*allow_extra=*/true);
  if (optim) optim->load_entries(entries);
  return info;
}

}  // namespace saunet
