#pragma once

#include "microseq/data_io.hpp"
#include "microseq/inference.hpp"
#include "microseq/losses.hpp"
#include "microseq/model.hpp"
#include "microseq/preprocessing.hpp"
#include "microseq/types.hpp"
#include "microseq/warping.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace microseq::training {

struct TrainConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  int epochs = 50;
  int accumulation_size = 8;   // cases per optimizer step
  int patience = 10;           // non-improving epochs before stopping
  int target_len = 75;
  warping::TargetKind target_kind = warping::TargetKind::implicit;
  losses::LossWeights weights;
  warping::SoftDtwConfig dtw;
  double align_temperature = 0.1;
  losses::AlignMode align_mode = losses::AlignMode::soft_argmax;
  std::uint64_t seed = 1;
  double duplicate_fraction = 0.25;   // removal target for tau calibration
  std::optional<double> tau_override;
  int knn_k = 5;
  int val_knn_bank = 64;       // bank subsample for per-epoch validation scoring

  // ablation switches
  bool use_wavelet = true;
  bool use_implicit_target = true;
  bool use_ideal_reference = true;
  bool use_align = true;
  bool use_attention = true;
  bool use_ap = true;

  // Stamped with the manifest dimensions and the ablation switches by
  // effective_model_config(); train_epoch and friends read it as-is.
  model::ModelConfig model;

  void validate() const;
  warping::TargetKind effective_target_kind() const {
    return use_implicit_target ? target_kind : warping::TargetKind::constant;
  }
  model::ModelConfig effective_model_config(int feature_dim, int num_classes) const;
  inference::InferenceConfig inference_config() const;
};

struct AdamState {
  model::ModelParams m;
  model::ModelParams v;
  std::int64_t step = 0;
};

// standard bias-corrected update; deterministic, shapes must match
void adam_step(model::ModelParams& params, const model::ModelParams& grads,
               AdamState& state, const TrainConfig& cfg);

struct CaseLoss {
  losses::LossBreakdown breakdown;
  model::ModelParams grads;
};

// forward + all enabled loss terms + full backward for a single case
CaseLoss case_loss_and_gradient(const preprocessing::PreparedCase& pc,
                                const model::ModelParams& params, const TrainConfig& cfg);

struct EpochStats {
  double dtw = 0.0;
  double ap = 0.0;
  double align = 0.0;
  double align_reported = 0.0;
  double total = 0.0;
};

// One seeded pass: shuffle, per-case forward/backward, gradients averaged over
// each accumulation window, one Adam step per window.
EpochStats train_epoch(const std::vector<preprocessing::PreparedCase>& cases,
                       model::ModelParams& params, AdamState& state,
                       const TrainConfig& cfg, Rng& order_rng);

struct EpochRecord {
  int epoch = 0;
  EpochStats train;
  std::map<std::string, double> val_accuracy;
  std::map<std::string, double> val_f1;
};

struct FitResult {
  model::ModelParams best_params;
  AdamState best_state;
  model::ModelConfig model_cfg;
  double tau = 0.0;
  std::vector<EpochRecord> history;
  int best_epoch = 0;
  double best_val_f1 = 0.0;
};

// Calibrates tau on the pooled train+val statistics, trains with per-epoch
// validation voting-F1 model selection and patience-based early stopping.
FitResult fit(const DatasetManifest& manifest, const std::filesystem::path& base_dir,
              const TrainConfig& cfg);

struct Checkpoint {
  model::ModelParams params;
  AdamState state;
  TrainConfig cfg;       // cfg.model carries the effective dimensions
  double tau = 0.0;
  int epochs_done = 0;
};

// ".mckpt": magic "MCKP", u32 version, u32 block_count; blocks of u16 name
// length + name + u8 rank + u32 dims + float64 LE payload; then a u32
// length-prefixed JSON config blob.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// strict parsers for the JSON representation embedded in checkpoints and used
// by the CLI config file; unknown keys are rejected by name
std::string train_config_to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const std::string& text);

}  // namespace microseq::training
