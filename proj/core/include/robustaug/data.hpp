#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "robustaug/tensor.hpp"

namespace robustaug {

// Images stored as one flat N*C*H*W buffer with pixels in [0,1].
struct Dataset {
  std::string name;
  std::size_t channels = 3;
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t classes = 0;
  std::vector<double> pixels;
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
  bool empty() const { return labels.empty(); }
  std::size_t image_size() const { return channels * height * width; }
  Shape image_shape() const { return {channels, height, width}; }
  std::span<const double> image(std::size_t i) const;

  // Images [B,C,H,W] for the given example indices.
  Tensor gather(std::span<const std::size_t> indices) const;
  std::vector<int> gather_labels(std::span<const std::size_t> indices) const;
  Dataset subset(std::span<const std::size_t> indices) const;
  // Keeps the listed classes and relabels them 0..k-1 in list order.
  Dataset select_classes(std::span<const int> keep) const;

  void validate() const;
};

// CIFAR-10 binary layout: 3073-byte records, one label byte then the R, G and
// B planes (1024 bytes each, row-major 32x32). Pixels become byte / 255.
Dataset load_cifar10_binary(std::span<const std::filesystem::path> paths);
// data_batch_1..5.bin (train) or test_batch.bin under `dir`.
Dataset load_cifar10_dir(const std::filesystem::path& dir, bool train);
// Directory from ROBUSTAUG_DATA_DIR, or empty.
std::filesystem::path data_dir_from_env();

enum class SyntheticKind { GaussianBlobs, StripedPatterns };

std::string to_string(SyntheticKind kind);
SyntheticKind parse_synthetic_kind(const std::string& name);

struct SyntheticParams {
  std::size_t classes = 2;
  std::size_t channels = 3;
  std::size_t size = 16;
  // Contrast of the class signal and per-pixel noise level.
  double signal = 0.25;
  double noise = 0.1;
  // Fraction of examples whose label is resampled uniformly at random.
  double label_noise = 0.0;
};

// gaussian_blobs_img: smooth per-class prototype plus i.i.d. pixel noise.
// striped_patterns: per-class stripe orientation with random phase, a small
// per-class tint and pixel noise. Labels cycle 0..K-1 so classes are balanced.
// `split` separates independent draws (train vs test) under one seed.
Dataset synthetic_dataset(SyntheticKind kind, std::size_t n, std::uint64_t seed, const SyntheticParams& params = {},
                          std::uint32_t split = 0);

std::vector<double> dataset_mean(const Dataset& ds);

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
  std::vector<std::size_t> test;
};

// Validation indices are drawn from the training pool; test indices (if any)
// enumerate a separate test set of `test_size` examples.
Split make_split(const Dataset& train_pool, std::size_t val_size, std::uint64_t seed, std::size_t test_size = 0);

}  // namespace robustaug
