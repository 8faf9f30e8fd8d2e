#pragma once

#include <ostream>

#include "sagate/config.hpp"
#include "sagate/metrics.hpp"

namespace sagate {

// ---------------------------------------------------------------------------
// Training / evaluation driver (f32 pipeline)
// ---------------------------------------------------------------------------

struct TrainLogRow {
  int64_t iter;
  double lr, loss, aux_loss;
  double miou = 0;
  bool has_miou = false;
};

struct TrainResult {
  std::vector<TrainLogRow> history;
  double best_miou = -1;   // only meaningful when periodic eval ran
  int64_t best_iter = -1;
};

struct AugmentedSample {
  Tensor<float> rgb, hha;
  LabelMap labels;  // n = 1
};

/// One training-time augmentation draw: optional horizontal flip (mirrors
/// RGB, HHA and labels alike; channel values are untouched), optional random
/// scale from {0.5,0.75,1,1.25,1.5,1.75} followed by crop/pad back to the
/// original extent (pad labels with ignore), optional HHA Gaussian noise.
AugmentedSample augment_sample(const Sample& s, const TrainConfig& cfg, SplitMix64& rng);

/// Runs the SGD loop. When val_data is given and eval_every_epochs > 0, mIoU
/// is logged periodically and the best parameter values are restored into the
/// model before returning. Throws Divergence on a non-finite loss.
TrainResult train_model(SegModel<float>& model, const std::vector<Sample>& train_data,
                        const std::vector<Sample>* val_data, const TrainConfig& cfg);

LabelMap predict_labels(const SegModel<float>& model, const Sample& s, bool flip_average = false);
double evaluate_miou(const SegModel<float>& model, const std::vector<Sample>& data,
                     bool flip_average = false, ConfusionMatrix* cm_out = nullptr);

std::string history_to_csv(const TrainResult& result, const std::string& hash_hex);

/// Builds a model for (cfg, seed) and either restores it from cache_path or
/// trains it on train_data (writing the checkpoint back when a path is given).
SegModel<float> train_or_load(const ExperimentConfig& cfg, const std::vector<Sample>& train_data,
                              uint64_t seed, const std::string& cache_path);

// ---------------------------------------------------------------------------
// Experiment suites
// ---------------------------------------------------------------------------

struct AblationRow {
  std::string label;
  std::vector<double> per_seed_miou;
  double mean = 0, stddev = 0;
};

struct AblationResult {
  std::string suite;
  std::vector<AblationRow> rows;
  std::string csv, text;
};

/// suite in {fs, fa, placement, factors}; mirrors the published row layouts.
AblationResult run_ablate(const ExperimentConfig& cfg, const std::string& suite);

struct NoiseCell {
  double miou_mean = 0;
  double degr_permille_mean = 0;  // (clean - noisy)/clean * 1000, averaged over seeds
  std::vector<double> per_seed_miou;
};

struct NoiseSweepResult {
  std::vector<double> stds;
  std::vector<std::string> methods;
  std::vector<std::vector<NoiseCell>> cells;  // [method][std]
  std::vector<double> clean_mean;             // per method
  std::string csv, text;
};

NoiseSweepResult run_noise_sweep(const ExperimentConfig& cfg);

struct GradCheckReport {
  std::string variant;
  double max_rel_err = 0;
  int64_t checked = 0;
  bool pass = false;
};

/// Central finite differences (f64) over every parameter of a toy full model
/// (encoder + gates + decoder + CE loss), one report per fusion variant.
std::vector<GradCheckReport> full_model_gradcheck(double step = 1e-4, double tol = 1e-4,
                                                  std::ostream* log = nullptr);

// ---------------------------------------------------------------------------
// CLI commands; these write their outputs under out_dir.
// ---------------------------------------------------------------------------

void cmd_generate(const ExperimentConfig& cfg, const std::string& out_dir);
void cmd_train(const ExperimentConfig& cfg, const std::string& data_dir,
               const std::string& out_dir);
void cmd_eval(const ExperimentConfig& cfg, const std::string& data_dir,
              const std::string& checkpoint, const std::string& out_dir);
void cmd_ablate(const ExperimentConfig& cfg, const std::string& suite, const std::string& out_dir);
void cmd_noise_sweep(const ExperimentConfig& cfg, const std::string& out_dir);
void cmd_visualize(const ExperimentConfig& cfg, const std::string& checkpoint,
                   const std::string& data_dir, const std::string& out_dir);
int cmd_gradcheck(std::ostream& os);

}  // namespace sagate
