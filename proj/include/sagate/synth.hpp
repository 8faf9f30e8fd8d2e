#pragma once

#include <string>
#include <vector>

#include "sagate/hha.hpp"
#include "sagate/labels.hpp"

namespace sagate {

enum class Visibility { RgbOnly, DepthOnly, Both };

inline Visibility visibility_from_string(const std::string& s) {
  if (s == "rgb-only") return Visibility::RgbOnly;
  if (s == "depth-only") return Visibility::DepthOnly;
  if (s == "both") return Visibility::Both;
  throw UnknownVariant("unknown visibility: " + s);
}

inline const char* visibility_name(Visibility v) {
  switch (v) {
    case Visibility::RgbOnly: return "rgb-only";
    case Visibility::DepthOnly: return "depth-only";
    case Visibility::Both: return "both";
  }
  throw UnknownVariant("bad visibility enum");
}

/// Procedural scene description. Class 0 is always the background plane;
/// classes 1..K-1 carry a visibility tag that controls which modality can
/// separate them from the background:
///   rgb-only   -> distinct colour, coplanar with the background
///   depth-only -> background colour, raised depth
///   both       -> distinct colour and raised depth
/// Class colours and the background colour are drawn once per recipe, so a
/// class looks the same across samples and stays learnable.
struct SceneRecipe {
  int64_t height = 64, width = 64;
  int64_t num_classes = 4;
  std::vector<Visibility> class_visibility{Visibility::RgbOnly, Visibility::DepthOnly,
                                           Visibility::Both};
  int64_t objects_min = 3, objects_max = 6;
  double size_min_frac = 0.15, size_max_frac = 0.30;  // of min(H, W)
  double texture_amp = 0.05;   // per-pixel uniform colour jitter
  double color_margin = 0.35;  // min per-channel max distance between colours
  double depth_step = 0.4;     // raised objects are at least this much closer (m)
  double depth_range = 0.8;    // additional random closeness (m)
  double depth_noise = 0.0;    // per-pixel uniform depth jitter (m)
  double bg_depth = 3.0;
  // Per-sample modality corruption: with the given probability a sample's HHA
  // map gets Gaussian noise (std drawn in [0.3, 1] x the 0-255-scale maximum)
  // or its colour jitter amplitude is raised by rgb_corrupt_amp. This is what
  // makes per-image modality reliability vary.
  double hha_corrupt_prob = 0.0;
  double hha_corrupt_std = 40.0;
  double rgb_corrupt_prob = 0.0;
  double rgb_corrupt_amp = 0.25;
  // With this probability the depth map is translated by up to the given
  // number of pixels before HHA encoding (edge-clamped). Labels keep
  // following the true geometry, so a misaligned sample carries locally
  // plausible but globally inconsistent depth evidence.
  double hha_misalign_prob = 0.0;
  int64_t hha_misalign_px = 6;
  // Sensor dropout: with this probability the depth map collapses to the bare
  // background plane (objects leave no depth footprint at all).
  double hha_dropout_prob = 0.0;
  uint64_t seed = 1;

  void validate() const;
};

struct Sample {
  Tensor<float> rgb;  // [3 x H x W] in [0,1]
  Tensor<float> hha;  // [3 x H x W] in [0,1]
  DepthFrame depth;
  LabelMap labels;  // [1 x H x W]
};

/// Deterministic: (recipe, index) fully determines a sample's bytes.
Sample generate_sample(const SceneRecipe& recipe, int64_t index);
std::vector<Sample> generate(const SceneRecipe& recipe, int64_t count, int64_t index_offset = 0);

/// The background-only render of sample `index` (background colour plus the
/// same texture jitter field); depth-only object pixels match it exactly.
Tensor<float> render_background_rgb(const SceneRecipe& recipe, int64_t index);

/// Gaussian corruption of the HHA map: noise is specified on the 0-255 scale
/// (std/255 in [0,1] units), then clamped to [0,1]. std = 0 is the identity.
/// With on_raw_depth the noise (interpreted as millimeters) is applied to the
/// depth map instead and HHA is re-encoded.
Sample corrupt_depth(const Sample& sample, double std255, uint64_t seed,
                     bool on_raw_depth = false);

uint64_t fnv1a64(const std::string& text);
std::string recipe_canonical(const SceneRecipe& recipe);
uint64_t recipe_hash(const SceneRecipe& recipe);

/// Shard layout: one directory with per-sample STNS/PGM files and a JSON
/// manifest (ids, relative paths, recipe hash, camera model). Round-trips are
/// bit-exact.
void save_shard(const std::string& dir, const SceneRecipe& recipe,
                const std::vector<Sample>& samples);
std::vector<Sample> load_shard(const std::string& dir);

}  // namespace sagate
