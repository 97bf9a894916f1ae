#include "saunet/runconfig.hpp"

#include <cstdlib>
#include <fstream>

#include <json.hpp>

namespace saunet {

namespace {

using nlohmann::json;

void check_keys(const json& j, const std::vector<std::string>& allowed,
                const std::string& context) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const auto& k : allowed) ok = ok || it.key() == k;
    if (!ok) fail("unknown key '", it.key(), "' in ", context);
  }
}

}  // namespace

RunConfig RunConfig::from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const std::exception& e) {
    fail("invalid run config JSON: ", e.what());
  }
  check_keys(j, {"seed", "data", "model", "train"}, "run config");
  RunConfig c;
  if (j.contains("seed")) {
    c.seed = j["seed"].get<uint64_t>();
    c.seed_given = true;
  }
  if (j.contains("data")) {
    const json& d = j["data"];
    check_keys(d, {"root", "crop", "boundary_dilation", "augment", "target_spacing"},
               "run config data section");
    c.data_root = d.value("root", std::string());
    c.train.pipeline.crop = d.value("crop", c.train.pipeline.crop);
    c.train.pipeline.boundary_dilation =
        d.value("boundary_dilation", c.train.pipeline.boundary_dilation);
    c.train.pipeline.augment = d.value("augment", true);
    if (d.contains("target_spacing")) {
      c.train.pipeline.target_spacing.first = d["target_spacing"][0].get<float>();
      c.train.pipeline.target_spacing.second = d["target_spacing"][1].get<float>();
    }
  }
  if (j.contains("model")) c.model = model_config_from_json(j["model"].dump());
  if (j.contains("train")) {
    const json& t = j["train"];
    check_keys(t,
               {"epochs", "batch_size", "lr", "lr_gamma", "weight_decay", "loss_weights",
                "checkpoint_every", "out_dir", "threads", "deterministic"},
               "run config train section");
    c.train.epochs = t.value("epochs", c.train.epochs);
    c.train.batch_size = t.value("batch_size", c.train.batch_size);
    c.train.lr0 = t.value("lr", c.train.lr0);
    c.train.lr_gamma = t.value("lr_gamma", c.train.lr_gamma);
    c.train.weight_decay = t.value("weight_decay", c.train.weight_decay);
    if (t.contains("loss_weights")) {
      const json& w = t["loss_weights"];
      if (!w.is_array() || w.size() != 3)
        fail("loss_weights must be an array of 3 values");
      c.train.loss_weights.lambda1 = w[0].get<float>();
      c.train.loss_weights.lambda2 = w[1].get<float>();
      c.train.loss_weights.lambda3 = w[2].get<float>();
    }
    c.train.checkpoint_every = t.value("checkpoint_every", 0);
    c.train.out_dir = t.value("out_dir", std::string());
    c.train.threads = t.value("threads", 0);
    c.train.deterministic = t.value("deterministic", false);
  }
  c.train.seed = resolve_seed(c.seed_given, c.seed);
  c.seed = c.train.seed;
  c.model.validate();
  return c;
}

RunConfig RunConfig::from_json_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) fail("cannot open config file '", path, "'");
  std::string text((std::istreambuf_iterator<char>(is)),
                   std::istreambuf_iterator<char>());
  return from_json_text(text);
}

std::string RunConfig::to_json() const {
  json j;
  j["seed"] = seed;
  j["data"]["root"] = data_root;
  j["data"]["crop"] = train.pipeline.crop;
  j["data"]["boundary_dilation"] = train.pipeline.boundary_dilation;
  j["data"]["augment"] = train.pipeline.augment;
  j["model"] = json::parse(model_config_to_json(model));
  j["train"]["epochs"] = train.epochs;
  j["train"]["batch_size"] = train.batch_size;
  j["train"]["lr"] = train.lr0;
  j["train"]["lr_gamma"] = train.lr_gamma;
  j["train"]["weight_decay"] = train.weight_decay;
  j["train"]["loss_weights"] = {train.loss_weights.lambda1, train.loss_weights.lambda2,
                                train.loss_weights.lambda3};
  j["train"]["checkpoint_every"] = train.checkpoint_every;
  j["train"]["out_dir"] = train.out_dir;
  j["train"]["threads"] = train.threads;
  j["train"]["deterministic"] = train.deterministic;
  return j.dump(2);
}

uint64_t resolve_seed(bool given, uint64_t value) {
  if (given) return value;
  if (const char* env = std::getenv("SAUNET_SEED")) {
    char* end = nullptr;
    const unsigned long long v = std::strtoull(env, &end, 10);
    if (end && *end == '\0') return static_cast<uint64_t>(v);
    fail("SAUNET_SEED is set but not a number: '", env, "'");
  }
  return 7;
}

}  // namespace saunet
