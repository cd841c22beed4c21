#pragma once

#include "lfa/model.hpp"

namespace lfa {

struct DiceLossConfig {
  float weight_vessel = 0.7f;
  float weight_background = 0.3f;
  float smoothing = 1e-6f;  // xi

  void validate() const;
};

struct DiceLossResult {
  double loss = 0.0;
  Tensor grad;  // d loss / d S
};

// Two-class weighted dice: class 1 over (S, G), class 2 over (1-S, 1-G).
// S must lie in [0,1]; G must be binary.
DiceLossResult weighted_dice_loss(const Tensor& s, const Tensor& g, const DiceLossConfig& cfg);

struct AdamState {
  long long step = 0;
  float learning_rate = 0.002f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float epsilon = 1e-8f;
  std::vector<std::vector<float>> m, v;  // aligned with the parameter list

  void init(const NamedTensors& params);
};

struct AdamStepResult {
  bool applied = false;
  std::string message;
};

// Bias-corrected Adam over params' accumulated gradients; clears gradients
// after a successful step. Non-finite gradients reject the whole step.
AdamStepResult adam_step(NamedTensors& params, AdamState& state);

struct Sample {
  Tensor image;  // (1,3,H,W)
  Tensor mask;   // (1,1,H,W), binary
};

struct Dataset {
  std::vector<Sample> samples;
  std::vector<int> train_idx, val_idx;
};

struct TrainRunConfig {
  int batch_size = 8;
  int epochs = 1;
  uint64_t seed = 0;
  float split_fraction = 0.8f;
  int checkpoint_every = 0;  // 0 = only at the end
  int augment_multiplicity = 0;
  bool clip_grads = false;
  float clip_max_norm = 5.0f;
  float threshold = 0.5f;
};

struct EpochStats {
  double mean_loss = 0.0;
  double train_dice = 0.0;
  double val_dice = 0.0;
};

std::string epoch_log_line(int epoch, const EpochStats& stats);

// One pass over the training split: seeded shuffle, batches of batch_size
// (remainder kept), forward in train mode, dice loss, backward, Adam.
EpochStats train_epoch(Model& model, const Dataset& data, const TrainRunConfig& run_cfg,
                       const DiceLossConfig& loss_cfg, AdamState& adam, int epoch);

}  // namespace lfa
