#pragma once

// Deterministic generator for the synthetic multi-scale shapes corpus: each
// 64x64 image carries a large distractor shape and a small shape whose kind
// (square / circle / cross / triangle) is the class label. Small-shape
// colors come from the same palette as large-shape colors, so the global
// mean color carries no label information.

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "shunted/tensor.hpp"

namespace shunted {

struct DatasetSpec {
  long image_size = 64;
  long num_classes = 4;
  long train_count = 2000;
  long test_count = 500;
  long large_min = 24, large_max = 40;  // distractor side length, pixels
  long small_min = 3, small_max = 6;    // labeled shape side length, pixels
  double noise_std = 0.02;
  std::uint64_t seed = 0;
  bool draw_shapes = true;  // diagnostic: false leaves background + noise only

  void validate() const {
    if (image_size < 8) throw ConfigError("dataset: image_size too small");
    if (num_classes != 4) throw ConfigError("dataset: num_classes must be 4");
    if (train_count < 0 || test_count < 0)
      throw ConfigError("dataset: negative sample count");
    if (small_min < 1 || small_min > small_max)
      throw ConfigError("dataset: bad small shape range");
    if (large_min < 1 || large_min > large_max)
      throw ConfigError("dataset: bad large shape range");
    if (small_max >= large_min)
      throw ConfigError("dataset: small max " + std::to_string(small_max) +
                        " must stay below large min " + std::to_string(large_min));
    if (image_size < large_max + 2)
      throw ConfigError("dataset: image_size " + std::to_string(image_size) +
                        " must be >= large max + 2 = " + std::to_string(large_max + 2));
    if (noise_std < 0) throw ConfigError("dataset: negative noise_std");
  }
};

struct Dataset {
  Tensor images;  // [count, 3, S, S], values in [0,1]
  std::vector<int> labels;

  long size() const { return static_cast<long>(labels.size()); }
  long image_size() const { return images.ndim() == 4 ? images.dim(2) : 0; }

  /// View of image i as a standalone [3,S,S] tensor (copy).
  Tensor image(long i) const;
};

std::pair<Dataset, Dataset> generate(const DatasetSpec& spec);

/// Writes <split>_images.sten / <split>_labels.sten into dir.
void save_set(const Dataset& set, const std::string& dir, const std::string& split);
Dataset load_set(const std::string& dir, const std::string& split);

/// Full corpus: both splits, manifest.json (spec + seed), and PPM previews.
void save_dataset(const DatasetSpec& spec, const Dataset& train, const Dataset& test,
                  const std::string& dir, int preview_count = 8);
DatasetSpec load_manifest(const std::string& dir);

void export_ppm(const Tensor& image, const std::string& path);

}  // namespace shunted
