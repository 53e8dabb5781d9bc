#pragma once

// Consistency checks for the mixing augmentations, shared by the unit tests
// and the acceptance binary. Each returns the number of violations.
//
// The mixing checks use batches whose images are constant and pairwise
// distinct and whose labels are distinct one-hot rows, so every output pixel
// names its source example and every label weight can be compared with a
// pixel count.

#include <cmath>
#include <map>
#include <random>

#include "robustaug/augment.hpp"
#include "support.hpp"

namespace testing {

inline robustaug::ImageBatch tagged_batch(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
  using namespace robustaug;
  ImageBatch b;
  b.images = Tensor({n, c, h, w});
  const std::size_t sz = c * h * w;
  for (std::size_t i = 0; i < n; ++i) {
    std::fill(b.images.data.begin() + i * sz, b.images.data.begin() + (i + 1) * sz,
              static_cast<double>(i + 1) / static_cast<double>(n + 1));
  }
  for (std::size_t i = 0; i < n; ++i) {
    b.labels.push_back(static_cast<int>(i));
    b.ids.push_back(100 + i);
  }
  b.soft_labels = one_hot(b.labels, n);
  return b;
}

inline robustaug::ImageBatch random_batch(std::size_t n, std::size_t c, std::size_t h, std::size_t w,
                                          std::mt19937_64& gen) {
  robustaug::ImageBatch b = tagged_batch(n, c, h, w);
  b.images = random_tensor({n, c, h, w}, gen, 0.0, 1.0);
  return b;
}

// Label weight of every source equals the fraction of pixels copied from it.
inline std::size_t area_weight_violations(const robustaug::ImageBatch& in, const robustaug::ImageBatch& out) {
  const std::size_t n = in.size(), sz = in.image_size();
  const double total = static_cast<double>(sz);
  std::size_t bad = 0;
  for (std::size_t i = 0; i < n; ++i) {
    std::map<std::size_t, std::size_t> count;
    for (std::size_t q = 0; q < sz; ++q) {
      const double v = out.images.data[i * sz + q];
      const auto src = static_cast<std::size_t>(std::llround(v * static_cast<double>(n + 1))) - 1;
      if (src >= n || in.images.data[src * sz] != v) {
        ++bad;
        break;
      }
      ++count[src];
    }
    double sum = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double weight = out.soft_labels.data[i * n + j];
      sum += weight;
      const double fraction = static_cast<double>(count[j]) / total;
      // The example's own weight is computed as 1 - pasted, which may round.
      const double tol = j == i ? 1e-15 : 0.0;
      if (std::abs(weight - fraction) > tol) ++bad;
    }
    if (std::abs(sum - 1.0) > 1e-12) ++bad;
  }
  return bad;
}

inline std::size_t cutmix_violations(std::size_t draws, std::size_t batch = 8) {
  using namespace robustaug;
  const ImageBatch in = tagged_batch(batch, 3, 16, 16);
  std::size_t bad = 0;
  for (std::size_t d = 0; d < draws; ++d) {
    const AugmentContext ctx{.seed = 17, .step = static_cast<std::uint32_t>(d)};
    bad += area_weight_violations(in, cutmix(in, CutmixParams{}, ctx));
  }
  return bad;
}

inline std::size_t ricap_violations(std::size_t draws, std::size_t batch = 8) {
  using namespace robustaug;
  const ImageBatch in = tagged_batch(batch, 3, 16, 16);
  std::size_t bad = 0;
  for (std::size_t d = 0; d < draws; ++d) {
    const AugmentContext ctx{.seed = 23, .step = static_cast<std::uint32_t>(d)};
    const ImageBatch out = ricap(in, RicapParams{}, ctx);
    bad += area_weight_violations(in, out);
  }
  return bad;
}

// Output image equals lambda * x_a + (1 - lambda) * x_b, with the partner read
// back from the label row.
inline std::size_t mixup_violations(std::size_t draws, std::size_t batch = 8) {
  using namespace robustaug;
  std::mt19937_64 gen(29);
  std::size_t bad = 0;
  for (std::size_t d = 0; d < draws; ++d) {
    const ImageBatch in = random_batch(batch, 3, 8, 8, gen);
    const AugmentContext ctx{.seed = 31, .step = static_cast<std::uint32_t>(d)};
    const MixupParams p{};
    const ImageBatch out = mixup(in, p, ctx);
    const std::size_t sz = in.image_size();
    for (std::size_t i = 0; i < batch; ++i) {
      const double lam = mixup_lambda(p, ctx, in.ids[i]);
      std::size_t partner = i;
      for (std::size_t j = 0; j < batch; ++j) {
        if (j != i && out.soft_labels.data[i * batch + j] > 0.0) partner = j;
      }
      if (partner != i && out.soft_labels.data[i * batch + i] != lam) ++bad;
      for (std::size_t q = 0; q < sz; ++q) {
        const double expect = lam * in.images.data[i * sz + q] + (1.0 - lam) * in.images.data[partner * sz + q];
        if (std::abs(out.images.data[i * sz + q] - expect) > 1e-15) {
          ++bad;
          break;
        }
      }
    }
  }
  return bad;
}

// Changed pixels form one filled rectangle (the clipped window) and nothing
// else moves.
inline std::size_t cutout_violations(std::size_t draws, std::size_t window = 8) {
  using namespace robustaug;
  std::mt19937_64 gen(37);
  std::size_t bad = 0;
  const std::size_t c = 3, h = 16, w = 16, n = 4;
  const std::vector<double> fill{0.25, 0.5, 0.75};
  for (std::size_t d = 0; d < draws; ++d) {
    const ImageBatch in = random_batch(n, c, h, w, gen);
    const AugmentContext ctx{.seed = 41, .step = static_cast<std::uint32_t>(d)};
    const ImageBatch out = cutout(in, CutoutParams{window}, fill, ctx);
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t y0 = h, y1 = 0, x0 = w, x1 = 0, changed = 0;
      for (std::size_t ch = 0; ch < c; ++ch) {
        for (std::size_t y = 0; y < h; ++y) {
          for (std::size_t x = 0; x < w; ++x) {
            const std::size_t q = ((i * c + ch) * h + y) * w + x;
            if (out.images.data[q] == in.images.data[q]) continue;
            ++changed;
            if (out.images.data[q] != fill[ch]) ++bad;
            y0 = std::min(y0, y), y1 = std::max(y1, y + 1), x0 = std::min(x0, x), x1 = std::max(x1, x + 1);
          }
        }
      }
      if (changed == 0) {
        ++bad;  // a window of positive size always covers its center
        continue;
      }
      if (changed != c * (y1 - y0) * (x1 - x0)) ++bad;
      if (y1 - y0 > window || x1 - x0 > window) ++bad;
    }
    if (out.soft_labels.data != in.soft_labels.data) ++bad;
  }
  return bad;
}

// Draws of the curated pool that land on Invert, Posterize or Solarize.
inline std::size_t curated_pool_violations(std::size_t samples) {
  using namespace robustaug;
  std::size_t bad = 0;
  for (std::size_t s = 0; s < samples; ++s) {
    RngStream rng(43, "test/randaugment", s);
    for (const auto op : sample_ops(curated_pool(), 2, rng)) {
      bad += op == PrimitiveOp::Invert || op == PrimitiveOp::Posterize || op == PrimitiveOp::Solarize;
    }
  }
  return bad;
}

}  // namespace testing
