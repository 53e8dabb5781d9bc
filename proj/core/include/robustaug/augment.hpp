#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "robustaug/data.hpp"
#include "robustaug/rng.hpp"
#include "robustaug/tensor.hpp"

namespace robustaug {

// A batch as seen by the augmentation pipeline and the attack: images in
// [0,1], soft labels whose rows are distributions, the original hard labels
// and the dataset index of every example (used to key its random stream).
struct ImageBatch {
  Tensor images;       // [B,C,H,W]
  Tensor soft_labels;  // [B,K]
  std::vector<int> labels;
  std::vector<std::size_t> ids;

  std::size_t size() const { return labels.size(); }
  std::size_t classes() const { return soft_labels.shape.at(1); }
  std::size_t image_size() const { return images.size() / size(); }
  void validate() const;
};

ImageBatch make_batch(const Dataset& ds, std::span<const std::size_t> indices);
Tensor one_hot(std::span<const int> labels, std::size_t classes);

// Keys every random draw of one pipeline application: (seed, step) plus the
// operator tag and the example id.
struct AugmentContext {
  std::uint64_t seed = 0;
  std::uint32_t step = 0;
  // Position in the pipeline, so repeated operators draw independently.
  std::uint32_t stage = 0;
};

// Square window; rows [cy - size/2, cy - size/2 + size) and likewise for
// columns. The center lies inside the image, the window may overflow and is
// clipped.
struct Window {
  std::int64_t cy = 0;
  std::int64_t cx = 0;
  std::int64_t height = 0;
  std::int64_t width = 0;

  struct Rect {
    std::size_t y0, y1, x0, x1;
    std::size_t area() const { return (y1 - y0) * (x1 - x0); }
  };
  Rect clipped(std::size_t img_h, std::size_t img_w) const;
};

// ---------------------------------------------------------------- parameters

struct PadCropParams {
  std::size_t pad = 4;
  bool flip = true;
};
struct MixupParams {
  double alpha = 0.2;
  bool per_example = true;
};
struct CutoutParams {
  std::size_t window = 16;
};
struct CutmixParams {
  double alpha = 1.0;
  double beta = 1.0;
  // When set, a fixed window side replaces the Beta-distributed area ratio.
  std::optional<std::size_t> fixed_window;
};
struct RicapParams {
  double beta = 0.3;
};
struct RandAugmentParams {
  std::size_t n = 2;
  double magnitude = 5.0;
  bool curated = true;
  // Empty means the default pool (curated or full).
  std::vector<std::string> pool;
};

struct AugmentSpec {
  std::variant<PadCropParams, MixupParams, CutoutParams, CutmixParams, RicapParams, RandAugmentParams> params;

  std::string name() const;
};

// ---------------------------------------------------------------- operators

// Deterministic kernels the random operators are built on; exposed so their
// geometry can be checked directly.
std::vector<double> pad_crop_image(std::span<const double> img, std::size_t c, std::size_t h, std::size_t w,
                                   std::size_t pad, std::size_t off_y, std::size_t off_x, bool flip);
void fill_window(std::span<double> img, std::size_t c, std::size_t h, std::size_t w, const Window& win,
                 std::span<const double> fill);

ImageBatch pad_and_crop(const ImageBatch& batch, const PadCropParams& p, const AugmentContext& ctx);
ImageBatch mixup(const ImageBatch& batch, const MixupParams& p, const AugmentContext& ctx);
ImageBatch cutout(const ImageBatch& batch, const CutoutParams& p, std::span<const double> fill,
                  const AugmentContext& ctx);
ImageBatch cutmix(const ImageBatch& batch, const CutmixParams& p, const AugmentContext& ctx);
ImageBatch ricap(const ImageBatch& batch, const RicapParams& p, const AugmentContext& ctx);

// Mixing weight used by mixup for example b (exposed for label checks).
double mixup_lambda(const MixupParams& p, const AugmentContext& ctx, std::size_t id);

// ---------------------------------------------------------------- RandAugment

enum class PrimitiveOp {
  AutoContrast,
  Equalize,
  Invert,
  Rotate,
  Posterize,
  Solarize,
  Color,
  Contrast,
  Brightness,
  Sharpness,
  ShearX,
  ShearY,
  TranslateX,
  TranslateY,
  SolarizeAdd,
};

std::string_view to_string(PrimitiveOp op);
PrimitiveOp parse_primitive(std::string_view name);
std::span<const PrimitiveOp> full_pool();
std::span<const PrimitiveOp> curated_pool();
bool is_geometric(PrimitiveOp op);

// One row of the magnitude table: what the operator does at magnitude M.
struct MagnitudeRule {
  PrimitiveOp op;
  const char* parameter;
  const char* mapping;
  bool random_sign;
};
std::span<const MagnitudeRule> magnitude_table();
std::string describe_magnitude_table();

// Operator parameter at magnitude M in [0,10] (before any random sign).
double primitive_level(PrimitiveOp op, double magnitude, std::size_t image_width);

// Applies one operator to a single C*H*W image. `sign` is +1 or -1 for the
// operators that take a random direction.
std::vector<double> apply_primitive(std::span<const double> img, std::size_t c, std::size_t h, std::size_t w,
                                    PrimitiveOp op, double magnitude, double sign = 1.0);
// Same, drawing the direction from `rng`.
std::vector<double> apply_primitive(std::span<const double> img, std::size_t c, std::size_t h, std::size_t w,
                                    PrimitiveOp op, double magnitude, RngStream& rng);

// Ops chosen for one example, drawn from the op-choice stream.
std::vector<PrimitiveOp> sample_ops(std::span<const PrimitiveOp> pool, std::size_t n, RngStream& rng);

ImageBatch rand_augment(const ImageBatch& batch, const RandAugmentParams& p, const AugmentContext& ctx);

// ---------------------------------------------------------------- pipeline

// Applies the specs in order. `fill` is the per-channel dataset mean used by
// cutout.
ImageBatch pipeline(const ImageBatch& batch, std::span<const AugmentSpec> specs, std::span<const double> fill,
                    const AugmentContext& ctx);

}  // namespace robustaug
