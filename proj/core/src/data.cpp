#include "robustaug/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <numbers>
#include <numeric>

#include "robustaug/errors.hpp"
#include "robustaug/rng.hpp"

namespace robustaug {

std::span<const double> Dataset::image(std::size_t i) const {
  if (i >= size()) throw ValidationError("example index " + std::to_string(i) + " out of range");
  return {pixels.data() + i * image_size(), image_size()};
}

Tensor Dataset::gather(std::span<const std::size_t> indices) const {
  if (indices.empty()) throw ValidationError("cannot gather an empty batch");
  Tensor out(Shape{indices.size(), channels, height, width}, 0.0);
  const std::size_t sz = image_size();
  for (std::size_t b = 0; b < indices.size(); ++b) {
    const auto img = image(indices[b]);
    std::copy(img.begin(), img.end(), out.data.begin() + static_cast<std::ptrdiff_t>(b * sz));
  }
  return out;
}

std::vector<int> Dataset::gather_labels(std::span<const std::size_t> indices) const {
  std::vector<int> out;
  out.reserve(indices.size());
  for (auto i : indices) {
    if (i >= size()) throw ValidationError("example index " + std::to_string(i) + " out of range");
    out.push_back(labels[i]);
  }
  return out;
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  Dataset out;
  out.name = name;
  out.channels = channels;
  out.height = height;
  out.width = width;
  out.classes = classes;
  out.pixels.reserve(indices.size() * image_size());
  for (auto i : indices) {
    const auto img = image(i);
    out.pixels.insert(out.pixels.end(), img.begin(), img.end());
    out.labels.push_back(labels[i]);
  }
  return out;
}

Dataset Dataset::select_classes(std::span<const int> keep) const {
  if (keep.size() < 2) throw ValidationError("select_classes needs at least two classes");
  std::vector<std::size_t> idx;
  std::vector<int> relabel(classes, -1);
  for (std::size_t j = 0; j < keep.size(); ++j) {
    if (keep[j] < 0 || static_cast<std::size_t>(keep[j]) >= classes) {
      throw ValidationError("class " + std::to_string(keep[j]) + " out of range");
    }
    relabel[static_cast<std::size_t>(keep[j])] = static_cast<int>(j);
  }
  for (std::size_t i = 0; i < size(); ++i) {
    if (relabel[static_cast<std::size_t>(labels[i])] >= 0) idx.push_back(i);
  }
  Dataset out = subset(idx);
  for (auto& l : out.labels) l = relabel[static_cast<std::size_t>(l)];
  out.classes = keep.size();
  return out;
}

void Dataset::validate() const {
  if (pixels.size() != size() * image_size()) throw ValidationError("dataset pixel buffer has the wrong size");
  for (double p : pixels) {
    if (!(p >= 0.0 && p <= 1.0)) throw ValidationError("dataset pixel outside [0,1]");
  }
  for (int l : labels) {
    if (l < 0 || static_cast<std::size_t>(l) >= classes) throw ValidationError("dataset label out of range");
  }
}

// ---------------------------------------------------------------- CIFAR-10

namespace {
constexpr std::size_t kCifarSide = 32;
constexpr std::size_t kCifarPixels = 3 * kCifarSide * kCifarSide;
constexpr std::size_t kCifarRecord = 1 + kCifarPixels;
}  // namespace

Dataset load_cifar10_binary(std::span<const std::filesystem::path> paths) {
  Dataset ds;
  ds.name = "cifar10";
  ds.channels = 3;
  ds.height = kCifarSide;
  ds.width = kCifarSide;
  ds.classes = 10;
  std::vector<unsigned char> record(kCifarRecord);
  for (const auto& path : paths) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open CIFAR-10 file " + path.string());
    is.seekg(0, std::ios::end);
    const auto bytes = static_cast<std::size_t>(is.tellg());
    is.seekg(0, std::ios::beg);
    if (bytes % kCifarRecord != 0) {
      throw FormatError(path.string() + ": length " + std::to_string(bytes) + " is not a multiple of " +
                        std::to_string(kCifarRecord));
    }
    const std::size_t n = bytes / kCifarRecord;
    ds.pixels.reserve(ds.pixels.size() + n * kCifarPixels);
    for (std::size_t r = 0; r < n; ++r) {
      is.read(reinterpret_cast<char*>(record.data()), static_cast<std::streamsize>(kCifarRecord));
      if (!is) throw IoError("short read in " + path.string());
      if (record[0] > 9) {
        throw FormatError(path.string() + ": record " + std::to_string(r) + " has label byte " +
                          std::to_string(record[0]));
      }
      ds.labels.push_back(record[0]);
      for (std::size_t k = 1; k < kCifarRecord; ++k) ds.pixels.push_back(record[k] / 255.0);
    }
  }
  return ds;
}

Dataset load_cifar10_dir(const std::filesystem::path& dir, bool train) {
  std::vector<std::filesystem::path> files;
  if (train) {
    for (int i = 1; i <= 5; ++i) files.push_back(dir / ("data_batch_" + std::to_string(i) + ".bin"));
  } else {
    files.push_back(dir / "test_batch.bin");
  }
  for (const auto& f : files) {
    if (!std::filesystem::exists(f)) throw IoError("missing CIFAR-10 file " + f.string());
  }
  return load_cifar10_binary(files);
}

std::filesystem::path data_dir_from_env() {
  const char* v = std::getenv("ROBUSTAUG_DATA_DIR");
  return v ? std::filesystem::path(v) : std::filesystem::path{};
}

// ---------------------------------------------------------------- synthetic

std::string to_string(SyntheticKind kind) {
  return kind == SyntheticKind::GaussianBlobs ? "gaussian_blobs_img" : "striped_patterns";
}

SyntheticKind parse_synthetic_kind(const std::string& name) {
  if (name == "gaussian_blobs_img") return SyntheticKind::GaussianBlobs;
  if (name == "striped_patterns") return SyntheticKind::StripedPatterns;
  throw ValidationError("unknown synthetic dataset '" + name + "' (expected gaussian_blobs_img or striped_patterns)");
}

namespace {

// Smooth pattern in [-1,1]: a few low-frequency plane waves.
std::vector<double> smooth_pattern(RngStream& rng, std::size_t side) {
  std::vector<double> img(side * side, 0.0);
  for (int wave = 0; wave < 3; ++wave) {
    const double fx = rng.uniform(-2.0, 2.0), fy = rng.uniform(-2.0, 2.0);
    const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    for (std::size_t y = 0; y < side; ++y) {
      for (std::size_t x = 0; x < side; ++x) {
        img[y * side + x] +=
            std::cos(2.0 * std::numbers::pi * (fx * x + fy * y) / static_cast<double>(side) + phase);
      }
    }
  }
  const double peak = std::max(1e-12, std::abs(*std::max_element(img.begin(), img.end(), [](double a, double b) {
    return std::abs(a) < std::abs(b);
  })));
  for (auto& v : img) v /= peak;
  return img;
}

}  // namespace

Dataset synthetic_dataset(SyntheticKind kind, std::size_t n, std::uint64_t seed, const SyntheticParams& params,
                          std::uint32_t split) {
  if (params.classes < 2 || params.classes > 10) throw ValidationError("synthetic datasets have 2..10 classes");
  if (params.size == 0 || params.channels == 0) throw ValidationError("synthetic image extents must be positive");
  Dataset ds;
  ds.name = to_string(kind);
  ds.channels = params.channels;
  ds.height = params.size;
  ds.width = params.size;
  ds.classes = params.classes;
  const std::size_t side = params.size;
  const std::size_t plane = side * side;

  // Class-level structure is shared by every split drawn under this seed.
  std::vector<std::vector<double>> prototypes(params.classes);
  std::vector<std::vector<double>> tints(params.classes);
  for (std::size_t k = 0; k < params.classes; ++k) {
    RngStream rng(seed, "synthetic/class", k);
    for (std::size_t c = 0; c < params.channels; ++c) {
      auto p = smooth_pattern(rng, side);
      prototypes[k].insert(prototypes[k].end(), p.begin(), p.end());
      tints[k].push_back(rng.uniform(-1.0, 1.0));
    }
  }

  ds.pixels.resize(n * ds.image_size());
  ds.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    RngStream rng(seed, "synthetic/example", i, split + 1);
    const std::size_t k = i % params.classes;
    double* img = ds.pixels.data() + i * ds.image_size();
    if (kind == SyntheticKind::GaussianBlobs) {
      for (std::size_t q = 0; q < ds.image_size(); ++q) {
        img[q] = 0.5 + params.signal * prototypes[k][q] + params.noise * rng.normal();
      }
    } else {
      const double angle = std::numbers::pi * static_cast<double>(k) / static_cast<double>(params.classes);
      const double freq = 2.0 + static_cast<double>(k % 3);
      const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
      for (std::size_t c = 0; c < params.channels; ++c) {
        for (std::size_t y = 0; y < side; ++y) {
          for (std::size_t x = 0; x < side; ++x) {
            const double u = (std::cos(angle) * x + std::sin(angle) * y) / static_cast<double>(side);
            img[c * plane + y * side + x] = 0.5 + 0.3 * params.signal * tints[k][c] +
                                            params.signal * std::sin(2.0 * std::numbers::pi * freq * u + phase) +
                                            params.noise * rng.normal();
          }
        }
      }
    }
    for (std::size_t q = 0; q < ds.image_size(); ++q) img[q] = std::clamp(img[q], 0.0, 1.0);
    int label = static_cast<int>(k);
    if (params.label_noise > 0.0 && rng.bernoulli(params.label_noise)) {
      label = static_cast<int>(rng.uniform_int(0, static_cast<std::int64_t>(params.classes) - 1));
    }
    ds.labels[i] = label;
  }
  return ds;
}

std::vector<double> dataset_mean(const Dataset& ds) {
  if (ds.empty()) throw ValidationError("dataset_mean of an empty dataset");
  const std::size_t plane = ds.height * ds.width;
  std::vector<double> mean(ds.channels, 0.0);
  for (std::size_t c = 0; c < ds.channels; ++c) {
    double s = 0.0;
    for (std::size_t i = 0; i < ds.size(); ++i) {
      const double* p = ds.pixels.data() + i * ds.image_size() + c * plane;
      for (std::size_t q = 0; q < plane; ++q) s += p[q];
    }
    mean[c] = s / static_cast<double>(ds.size() * plane);
  }
  return mean;
}

Split make_split(const Dataset& train_pool, std::size_t val_size, std::uint64_t seed, std::size_t test_size) {
  const std::size_t n = train_pool.size();
  if (val_size > 0 && val_size >= n) {
    throw ValidationError("validation size " + std::to_string(val_size) + " must be smaller than the training pool (" +
                          std::to_string(n) + ")");
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  RngStream rng(seed, "split");
  for (std::size_t i = n; i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i) - 1));
    std::swap(order[i - 1], order[j]);
  }
  Split s;
  s.validation.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(val_size));
  s.train.assign(order.begin() + static_cast<std::ptrdiff_t>(val_size), order.end());
  std::sort(s.validation.begin(), s.validation.end());
  std::sort(s.train.begin(), s.train.end());
  s.test.resize(test_size);
  std::iota(s.test.begin(), s.test.end(), std::size_t{0});
  return s;
}

}  // namespace robustaug
