#pragma once

#include "lfa/training.hpp"

namespace lfa {

// 8-bit PNG in, values scaled to [0,1], channels R,G,B.
Tensor load_image(const std::string& path);
// Grayscale or RGB mask; luminance > 127 maps to 1, else 0.
Tensor load_mask(const std::string& path);
// 8-bit grayscale PNG, 255 where p >= threshold else 0.
void write_mask_png(const Tensor& probabilities, float threshold, const std::string& path);

enum class ResizeFilter { Bilinear, Nearest };

// Square resize to target x target; target must be >= 8 and divisible by 8.
// Bilinear for images, nearest for masks. Source-extent target is identity.
Tensor resize(const Tensor& t, int target, ResizeFilter filter);

// Random rotation in [-20, +20] degrees (bilinear image / nearest mask,
// zero-fill) plus a contrast rescale s in [0.8, 1.25] on the image only.
Sample augment(const Sample& sample, std::mt19937& rng);

struct ManifestEntry {
  std::string image_path;
  std::string mask_path;
};

struct Manifest {
  std::vector<ManifestEntry> entries;
  uint64_t split_seed = 0;
  float split_fraction = 0.8f;
};

// One image_path<TAB>mask_path pair per line, '#' comments; all paths must
// exist.
Manifest read_manifest(const std::string& path);

// Deterministic shuffle + disjoint partition; floor(fraction * n) train rows.
void split_indices(int count, uint64_t seed, float fraction, std::vector<int>& train_idx,
                   std::vector<int>& val_idx);

Dataset load_dataset(const Manifest& manifest, int target_extent);

// Versioned binary container: magic, version, config text, named f32 tensors
// (parameters and batch-norm running stats), optional Adam state, crc32.
void save_checkpoint(Model& model, const AdamState* adam, const std::string& path);
Model load_checkpoint(const std::string& path, AdamState* adam = nullptr);

}  // namespace lfa
