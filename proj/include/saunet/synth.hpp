#pragma once

#include <cstdint>
#include <string>

#include "saunet/data.hpp"

namespace saunet {

/// Synthetic cardiac-like scenes: a bright disc (class 1) wrapped by an
/// annulus (class 2) with an irregular crescent (class 3) hugging it, over a
/// textured background. Texture families let train/eval distributions be
/// shifted while keeping the same shapes.
struct SynthOptions {
  int n = 250;
  int size = 64;
  int num_classes = 4;
  uint64_t seed = 7;
  std::string texture = "speckle";  // "speckle" | "stripes"
  float noise = 0.12f;              // per-pixel intensity noise amplitude
  double train_fraction = 0.8;
};

/// Writes images/, labels/ and manifest.tsv under out_dir; returns a
/// checksum over all generated bytes.
uint64_t synth_generate(const std::string& out_dir, const SynthOptions& opt);

/// In-memory variant of one sample, exposed for tests.
void synth_sample(int index, const SynthOptions& opt, FloatMap& image, IntMap& labels);

}  // namespace saunet
