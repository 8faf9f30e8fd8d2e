#pragma once

#include <string>
#include <vector>

#include "sagate/model.hpp"
#include "sagate/synth.hpp"
#include "sagate/train.hpp"

namespace sagate {

/// Fully declarative description of one run, parsed from a plain-text
/// key=value file (one key per line, '#' comments). Unknown and duplicate
/// keys are rejected with their line number. Every field has a default, and
/// the resolved form (all keys, canonical formatting) is written alongside
/// run outputs; its FNV-1a hash (out.dir excluded) stamps every emitted table.
struct ExperimentConfig {
  uint64_t seed = 7;
  std::string out_dir = "out";
  int threads = 1;

  SceneRecipe data;  // data.* keys; data.seed is overwritten by `seed`
  int64_t train_count = 200;
  int64_t test_count = 50;
  bool hha_fixed_scale = false;

  Modality modality = Modality::Both;
  std::vector<int64_t> stage_channels{16, 32, 64, 128};
  std::vector<bool> gate_mask{true, true, true, true};
  FusionKind fusion = FusionKind::Proposed;
  bool bmp = true;
  HeadMode head = HeadMode::Auto;
  bool fs_shared_mlp = true;
  double mlp_ratio = 2.0;
  bool blend_recalibrated = false;
  int64_t decoder_mid = 32;
  bool aux_enabled = true;

  TrainConfig train;  // train.seed is overwritten by `seed`

  bool eval_flip = false;  // test-time horizontal-flip averaging

  int64_t ablate_seeds = 3;
  std::vector<double> noise_stds{0, 10, 40, 80, 120};
  int64_t viz_stage = -1;  // -1 = first enabled gate
  int64_t viz_count = 4;

  static ExperimentConfig from_file(const std::string& path);
  static ExperimentConfig from_text(const std::string& text, const std::string& origin = "<text>");

  SceneRecipe scene_recipe() const;
  ModelConfig model_config() const;
  TrainConfig train_config() const;

  /// Canonical key=value dump of every field, in schema order.
  std::string resolved_text(bool include_out_dir = true) const;
  uint64_t hash() const;
  std::string hash_hex() const;
};

}  // namespace sagate
