#include "robustaug/augment.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>

#include "robustaug/errors.hpp"

namespace robustaug {

void ImageBatch::validate() const {
  if (images.rank() != 4 || images.shape[0] != labels.size() || soft_labels.rank() != 2 ||
      soft_labels.shape[0] != labels.size() || ids.size() != labels.size()) {
    throw DimensionError("inconsistent image batch");
  }
}

Tensor one_hot(std::span<const int> labels, std::size_t classes) {
  Tensor t(Shape{labels.size(), classes}, 0.0);
  for (std::size_t b = 0; b < labels.size(); ++b) {
    if (labels[b] < 0 || static_cast<std::size_t>(labels[b]) >= classes) throw ValidationError("label out of range");
    t.data[b * classes + static_cast<std::size_t>(labels[b])] = 1.0;
  }
  return t;
}

ImageBatch make_batch(const Dataset& ds, std::span<const std::size_t> indices) {
  ImageBatch b;
  b.images = ds.gather(indices);
  b.labels = ds.gather_labels(indices);
  b.soft_labels = one_hot(b.labels, ds.classes);
  b.ids.assign(indices.begin(), indices.end());
  return b;
}

Window::Rect Window::clipped(std::size_t img_h, std::size_t img_w) const {
  const auto clip = [](std::int64_t v, std::size_t hi) {
    return static_cast<std::size_t>(std::clamp<std::int64_t>(v, 0, static_cast<std::int64_t>(hi)));
  };
  const std::int64_t y0 = cy - height / 2, x0 = cx - width / 2;
  return {clip(y0, img_h), clip(y0 + height, img_h), clip(x0, img_w), clip(x0 + width, img_w)};
}

std::string AugmentSpec::name() const {
  static constexpr std::array<const char*, 6> names{"pad_crop", "mixup", "cutout", "cutmix", "ricap", "randaugment"};
  return names[params.index()];
}

namespace {

struct Geometry {
  std::size_t c, h, w;
  std::size_t plane() const { return h * w; }
  std::size_t size() const { return c * h * w; }
};

Geometry geometry_of(const ImageBatch& b) {
  b.validate();
  return {b.images.shape[1], b.images.shape[2], b.images.shape[3]};
}

std::string tag(const AugmentContext& ctx, std::string_view op, std::string_view what) {
  return "augment/" + std::to_string(ctx.stage) + "/" + std::string(op) + "/" + std::string(what);
}

RngStream example_stream(const AugmentContext& ctx, std::string_view op, std::size_t id) {
  return RngStream(ctx.seed, tag(ctx, op, "example"), id, ctx.step);
}

// Uniform random permutation of the batch positions; self-pairing allowed.
std::vector<std::size_t> partner_permutation(const AugmentContext& ctx, std::string_view op, std::size_t n) {
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  RngStream rng(ctx.seed, tag(ctx, op, "partners"), 0, ctx.step);
  for (std::size_t i = n; i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i) - 1));
    std::swap(perm[i - 1], perm[j]);
  }
  return perm;
}

std::span<const double> image_of(const ImageBatch& b, std::size_t i) {
  const std::size_t sz = b.image_size();
  return {b.images.data.data() + i * sz, sz};
}

std::span<double> image_of(ImageBatch& b, std::size_t i) {
  const std::size_t sz = b.image_size();
  return {b.images.data.data() + i * sz, sz};
}

void require_pairs(const ImageBatch& b, std::size_t minimum, std::string_view op) {
  if (b.size() < minimum) {
    throw ValidationError(std::string(op) + " needs a batch of at least " + std::to_string(minimum) + " examples");
  }
}

}  // namespace

// ---------------------------------------------------------------- pad & crop

std::vector<double> pad_crop_image(std::span<const double> img, std::size_t c, std::size_t h, std::size_t w,
                                   std::size_t pad, std::size_t off_y, std::size_t off_x, bool flip) {
  if (off_y > 2 * pad || off_x > 2 * pad) throw ValidationError("crop offset outside the padded image");
  std::vector<double> out(c * h * w, 0.0);
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        const std::size_t cx = flip ? w - 1 - x : x;
        // Padded coordinates (y + off_y, cx + off_x) map to source minus pad.
        const auto sy = static_cast<std::int64_t>(y + off_y) - static_cast<std::int64_t>(pad);
        const auto sx = static_cast<std::int64_t>(cx + off_x) - static_cast<std::int64_t>(pad);
        if (sy < 0 || sx < 0 || sy >= static_cast<std::int64_t>(h) || sx >= static_cast<std::int64_t>(w)) continue;
        out[(ch * h + y) * w + x] = img[(ch * h + static_cast<std::size_t>(sy)) * w + static_cast<std::size_t>(sx)];
      }
    }
  }
  return out;
}

ImageBatch pad_and_crop(const ImageBatch& batch, const PadCropParams& p, const AugmentContext& ctx) {
  const Geometry g = geometry_of(batch);
  ImageBatch out = batch;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    RngStream rng = example_stream(ctx, "pad_crop", batch.ids[i]);
    const auto off_y = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(2 * p.pad)));
    const auto off_x = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(2 * p.pad)));
    const bool coin = rng.bernoulli(0.5);
    auto img = pad_crop_image(image_of(batch, i), g.c, g.h, g.w, p.pad, off_y, off_x, p.flip && coin);
    std::copy(img.begin(), img.end(), image_of(out, i).begin());
  }
  return out;
}

// ---------------------------------------------------------------- mixup

double mixup_lambda(const MixupParams& p, const AugmentContext& ctx, std::size_t id) {
  if (!(p.alpha > 0)) throw ValidationError("mixup alpha must be positive");
  if (p.per_example) {
    RngStream rng = example_stream(ctx, "mixup", id);
    return rng.beta(p.alpha, p.alpha);
  }
  RngStream rng(ctx.seed, tag(ctx, "mixup", "batch"), 0, ctx.step);
  return rng.beta(p.alpha, p.alpha);
}

ImageBatch mixup(const ImageBatch& batch, const MixupParams& p, const AugmentContext& ctx) {
  require_pairs(batch, 2, "mixup");
  const Geometry g = geometry_of(batch);
  const auto perm = partner_permutation(ctx, "mixup", batch.size());
  const std::size_t k = batch.classes();
  ImageBatch out = batch;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const double lam = mixup_lambda(p, ctx, batch.ids[i]);
    const auto xa = image_of(batch, i);
    const auto xb = image_of(batch, perm[i]);
    auto dst = image_of(out, i);
    for (std::size_t q = 0; q < g.size(); ++q) dst[q] = lam * xa[q] + (1.0 - lam) * xb[q];
    for (std::size_t j = 0; j < k; ++j) {
      out.soft_labels.data[i * k + j] =
          lam * batch.soft_labels.data[i * k + j] + (1.0 - lam) * batch.soft_labels.data[perm[i] * k + j];
    }
  }
  return out;
}

// ---------------------------------------------------------------- cutout

void fill_window(std::span<double> img, std::size_t c, std::size_t h, std::size_t w, const Window& win,
                 std::span<const double> fill) {
  if (fill.size() != c) throw DimensionError("cutout fill needs one value per channel");
  const auto r = win.clipped(h, w);
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t y = r.y0; y < r.y1; ++y) {
      for (std::size_t x = r.x0; x < r.x1; ++x) img[(ch * h + y) * w + x] = fill[ch];
    }
  }
}

ImageBatch cutout(const ImageBatch& batch, const CutoutParams& p, std::span<const double> fill,
                  const AugmentContext& ctx) {
  const Geometry g = geometry_of(batch);
  ImageBatch out = batch;
  const auto side = static_cast<std::int64_t>(p.window);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    RngStream rng = example_stream(ctx, "cutout", batch.ids[i]);
    Window win;
    win.cy = rng.uniform_int(0, static_cast<std::int64_t>(g.h) - 1);
    win.cx = rng.uniform_int(0, static_cast<std::int64_t>(g.w) - 1);
    win.height = side;
    win.width = side;
    fill_window(image_of(out, i), g.c, g.h, g.w, win, fill);
  }
  return out;
}

// ---------------------------------------------------------------- cutmix

ImageBatch cutmix(const ImageBatch& batch, const CutmixParams& p, const AugmentContext& ctx) {
  require_pairs(batch, 2, "cutmix");
  const Geometry g = geometry_of(batch);
  const auto perm = partner_permutation(ctx, "cutmix", batch.size());
  const std::size_t k = batch.classes();
  const double total = static_cast<double>(g.plane());
  ImageBatch out = batch;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    RngStream rng = example_stream(ctx, "cutmix", batch.ids[i]);
    std::int64_t side = 0;
    if (p.fixed_window) {
      side = static_cast<std::int64_t>(*p.fixed_window);
    } else {
      const double ratio = rng.beta(p.alpha, p.beta);
      side = std::llround(static_cast<double>(g.h) * std::sqrt(ratio));
    }
    Window win;
    win.cy = rng.uniform_int(0, static_cast<std::int64_t>(g.h) - 1);
    win.cx = rng.uniform_int(0, static_cast<std::int64_t>(g.w) - 1);
    win.height = side;
    win.width = side;
    const auto r = win.clipped(g.h, g.w);
    const auto src = image_of(batch, perm[i]);
    auto dst = image_of(out, i);
    for (std::size_t ch = 0; ch < g.c; ++ch) {
      for (std::size_t y = r.y0; y < r.y1; ++y) {
        for (std::size_t x = r.x0; x < r.x1; ++x) dst[(ch * g.h + y) * g.w + x] = src[(ch * g.h + y) * g.w + x];
      }
    }
    const double pasted = static_cast<double>(r.area()) / total;
    const double lam = 1.0 - pasted;
    for (std::size_t j = 0; j < k; ++j) {
      out.soft_labels.data[i * k + j] =
          lam * batch.soft_labels.data[i * k + j] + pasted * batch.soft_labels.data[perm[i] * k + j];
    }
  }
  return out;
}

// ---------------------------------------------------------------- RICAP

ImageBatch ricap(const ImageBatch& batch, const RicapParams& p, const AugmentContext& ctx) {
  require_pairs(batch, 4, "ricap");
  const Geometry g = geometry_of(batch);
  const std::size_t n = batch.size();
  const std::size_t k = batch.classes();
  const double total = static_cast<double>(g.plane());
  ImageBatch out = batch;
  std::vector<std::size_t> pool(n);
  for (std::size_t i = 0; i < n; ++i) {
    RngStream rng = example_stream(ctx, "ricap", batch.ids[i]);
    const auto bh = static_cast<std::size_t>(std::llround(static_cast<double>(g.h) * rng.beta(p.beta, p.beta)));
    const auto bw = static_cast<std::size_t>(std::llround(static_cast<double>(g.w) * rng.beta(p.beta, p.beta)));
    // Four distinct partners by partial Fisher-Yates.
    std::iota(pool.begin(), pool.end(), std::size_t{0});
    std::array<std::size_t, 4> partner{};
    for (std::size_t q = 0; q < 4; ++q) {
      const auto j = static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(q), static_cast<std::int64_t>(n) - 1));
      std::swap(pool[q], pool[j]);
      partner[q] = pool[q];
    }
    // Quadrants: top-left, top-right, bottom-left, bottom-right.
    const std::array<std::size_t, 4> qy{0, 0, bh, bh}, qx{0, bw, 0, bw};
    const std::array<std::size_t, 4> qh{bh, bh, g.h - bh, g.h - bh}, qw{bw, g.w - bw, bw, g.w - bw};
    auto dst = image_of(out, i);
    std::vector<double> label(k, 0.0);
    for (std::size_t q = 0; q < 4; ++q) {
      const auto oy = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(g.h - qh[q])));
      const auto ox = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(g.w - qw[q])));
      const std::size_t area = qh[q] * qw[q];
      if (area == 0) continue;
      const auto src = image_of(batch, partner[q]);
      for (std::size_t ch = 0; ch < g.c; ++ch) {
        for (std::size_t y = 0; y < qh[q]; ++y) {
          for (std::size_t x = 0; x < qw[q]; ++x) {
            dst[(ch * g.h + qy[q] + y) * g.w + qx[q] + x] = src[(ch * g.h + oy + y) * g.w + ox + x];
          }
        }
      }
      const double weight = static_cast<double>(area) / total;
      for (std::size_t j = 0; j < k; ++j) label[j] += weight * batch.soft_labels.data[partner[q] * k + j];
    }
    std::copy(label.begin(), label.end(), out.soft_labels.data.begin() + static_cast<std::ptrdiff_t>(i * k));
  }
  return out;
}

// ---------------------------------------------------------------- primitives

namespace {

constexpr std::array<PrimitiveOp, 15> kFullPool{
    PrimitiveOp::AutoContrast, PrimitiveOp::Equalize,   PrimitiveOp::Invert,     PrimitiveOp::Rotate,
    PrimitiveOp::Posterize,    PrimitiveOp::Solarize,   PrimitiveOp::Color,      PrimitiveOp::Contrast,
    PrimitiveOp::Brightness,   PrimitiveOp::Sharpness,  PrimitiveOp::ShearX,     PrimitiveOp::ShearY,
    PrimitiveOp::TranslateX,   PrimitiveOp::TranslateY, PrimitiveOp::SolarizeAdd};

constexpr std::array<PrimitiveOp, 12> kCuratedPool{
    PrimitiveOp::AutoContrast, PrimitiveOp::Equalize,   PrimitiveOp::Rotate,     PrimitiveOp::Color,
    PrimitiveOp::Contrast,     PrimitiveOp::Brightness, PrimitiveOp::Sharpness,  PrimitiveOp::ShearX,
    PrimitiveOp::ShearY,       PrimitiveOp::TranslateX, PrimitiveOp::TranslateY, PrimitiveOp::SolarizeAdd};

constexpr std::array<MagnitudeRule, 15> kMagnitudeTable{{
    {PrimitiveOp::AutoContrast, "-", "per-channel min/max stretched to [0,1]; ignores M", false},
    {PrimitiveOp::Equalize, "-", "per-channel histogram equalization on 256 levels; ignores M", false},
    {PrimitiveOp::Invert, "-", "p -> 1 - p; ignores M", false},
    {PrimitiveOp::Rotate, "angle (deg)", "30 * M/10, random sign", true},
    {PrimitiveOp::Posterize, "bits kept", "8 - floor(M*4/10)", false},
    {PrimitiveOp::Solarize, "threshold", "1 - M/10; p >= t -> 1 - p", false},
    {PrimitiveOp::Color, "factor", "1 + 0.9 * M/10, random sign on the offset", true},
    {PrimitiveOp::Contrast, "factor", "1 + 0.9 * M/10, random sign on the offset", true},
    {PrimitiveOp::Brightness, "factor", "1 + 0.9 * M/10, random sign on the offset", true},
    {PrimitiveOp::Sharpness, "factor", "1 + 0.9 * M/10, random sign on the offset", true},
    {PrimitiveOp::ShearX, "shear", "0.3 * M/10, random sign", true},
    {PrimitiveOp::ShearY, "shear", "0.3 * M/10, random sign", true},
    {PrimitiveOp::TranslateX, "pixels", "10 * M/10 * width/32, random sign", true},
    {PrimitiveOp::TranslateY, "pixels", "10 * M/10 * width/32, random sign", true},
    {PrimitiveOp::SolarizeAdd, "addend", "(110/255) * M/10 added to p < 128/255", false},
}};

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

// Bilinear sample with zero fill outside the image.
double sample(std::span<const double> plane, std::size_t h, std::size_t w, double sy, double sx) {
  const double fy0 = std::floor(sy), fx0 = std::floor(sx);
  const double ty = sy - fy0, tx = sx - fx0;
  const auto y0 = static_cast<std::int64_t>(fy0), x0 = static_cast<std::int64_t>(fx0);
  auto at = [&](std::int64_t y, std::int64_t x) {
    if (y < 0 || x < 0 || y >= static_cast<std::int64_t>(h) || x >= static_cast<std::int64_t>(w)) return 0.0;
    return plane[static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x)];
  };
  double v = (1.0 - ty) * (1.0 - tx) * at(y0, x0);
  if (tx != 0.0) v += (1.0 - ty) * tx * at(y0, x0 + 1);
  if (ty != 0.0) v += ty * (1.0 - tx) * at(y0 + 1, x0);
  if (ty != 0.0 && tx != 0.0) v += ty * tx * at(y0 + 1, x0 + 1);
  return v;
}

template <typename Map>
std::vector<double> warp(std::span<const double> img, std::size_t c, std::size_t h, std::size_t w, Map source) {
  std::vector<double> out(c * h * w, 0.0);
  for (std::size_t ch = 0; ch < c; ++ch) {
    const auto plane = img.subspan(ch * h * w, h * w);
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        const auto [sy, sx] = source(static_cast<double>(y), static_cast<double>(x));
        out[(ch * h + y) * w + x] = clamp01(sample(plane, h, w, sy, sx));
      }
    }
  }
  return out;
}

std::vector<double> grayscale(std::span<const double> img, std::size_t c, std::size_t plane) {
  std::vector<double> gray(plane, 0.0);
  for (std::size_t q = 0; q < plane; ++q) {
    if (c == 3) {
      gray[q] = 0.299 * img[q] + 0.587 * img[plane + q] + 0.114 * img[2 * plane + q];
    } else {
      double s = 0.0;
      for (std::size_t ch = 0; ch < c; ++ch) s += img[ch * plane + q];
      gray[q] = s / static_cast<double>(c);
    }
  }
  return gray;
}

// out = base + factor * (img - base), clipped.
std::vector<double> blend(std::span<const double> img, std::span<const double> base, double factor) {
  std::vector<double> out(img.size());
  for (std::size_t i = 0; i < img.size(); ++i) out[i] = clamp01(base[i] + factor * (img[i] - base[i]));
  return out;
}

int to_byte(double p) { return static_cast<int>(std::lround(clamp01(p) * 255.0)); }

std::vector<double> equalize(std::span<const double> img, std::size_t c, std::size_t plane) {
  std::vector<double> out(img.begin(), img.end());
  for (std::size_t ch = 0; ch < c; ++ch) {
    std::array<std::size_t, 256> hist{};
    for (std::size_t q = 0; q < plane; ++q) ++hist[static_cast<std::size_t>(to_byte(img[ch * plane + q]))];
    std::size_t last_nonzero = 0, nonzero_bins = 0;
    for (std::size_t v = 0; v < 256; ++v) {
      if (hist[v]) {
        last_nonzero = hist[v];
        ++nonzero_bins;
      }
    }
    if (nonzero_bins <= 1) continue;
    const std::size_t step = (plane - last_nonzero) / 255;
    if (step == 0) continue;
    std::array<double, 256> lut{};
    std::size_t acc = step / 2;
    for (std::size_t v = 0; v < 256; ++v) {
      lut[v] = static_cast<double>(std::min<std::size_t>(acc / step, 255)) / 255.0;
      acc += hist[v];
    }
    for (std::size_t q = 0; q < plane; ++q) {
      out[ch * plane + q] = lut[static_cast<std::size_t>(to_byte(img[ch * plane + q]))];
    }
  }
  return out;
}

}  // namespace

std::string_view to_string(PrimitiveOp op) {
  switch (op) {
    case PrimitiveOp::AutoContrast: return "AutoContrast";
    case PrimitiveOp::Equalize: return "Equalize";
    case PrimitiveOp::Invert: return "Invert";
    case PrimitiveOp::Rotate: return "Rotate";
    case PrimitiveOp::Posterize: return "Posterize";
    case PrimitiveOp::Solarize: return "Solarize";
    case PrimitiveOp::Color: return "Color";
    case PrimitiveOp::Contrast: return "Contrast";
    case PrimitiveOp::Brightness: return "Brightness";
    case PrimitiveOp::Sharpness: return "Sharpness";
    case PrimitiveOp::ShearX: return "ShearX";
    case PrimitiveOp::ShearY: return "ShearY";
    case PrimitiveOp::TranslateX: return "TranslateX";
    case PrimitiveOp::TranslateY: return "TranslateY";
    case PrimitiveOp::SolarizeAdd: return "SolarizeAdd";
  }
  return "unknown";
}

PrimitiveOp parse_primitive(std::string_view name) {
  for (auto op : kFullPool) {
    if (to_string(op) == name) return op;
  }
  throw ValidationError("unknown augmentation op '" + std::string(name) + "'");
}

std::span<const PrimitiveOp> full_pool() { return kFullPool; }
std::span<const PrimitiveOp> curated_pool() { return kCuratedPool; }

bool is_geometric(PrimitiveOp op) {
  return op == PrimitiveOp::Rotate || op == PrimitiveOp::ShearX || op == PrimitiveOp::ShearY ||
         op == PrimitiveOp::TranslateX || op == PrimitiveOp::TranslateY;
}

std::span<const MagnitudeRule> magnitude_table() { return kMagnitudeTable; }

std::string describe_magnitude_table() {
  std::ostringstream os;
  os << "op,parameter,mapping at magnitude M in [0,10],random_sign\n";
  for (const auto& r : kMagnitudeTable) {
    os << to_string(r.op) << "," << r.parameter << ",\"" << r.mapping << "\"," << (r.random_sign ? "yes" : "no")
       << "\n";
  }
  return os.str();
}

double primitive_level(PrimitiveOp op, double magnitude, std::size_t image_width) {
  if (!(magnitude >= 0.0 && magnitude <= 10.0)) throw ValidationError("magnitude must lie in [0,10]");
  const double m = magnitude / 10.0;
  switch (op) {
    case PrimitiveOp::Rotate: return 30.0 * m;
    case PrimitiveOp::Posterize: return 8.0 - std::floor(magnitude * 4.0 / 10.0);
    case PrimitiveOp::Solarize: return 1.0 - m;
    case PrimitiveOp::Color:
    case PrimitiveOp::Contrast:
    case PrimitiveOp::Brightness:
    case PrimitiveOp::Sharpness: return 0.9 * m;
    case PrimitiveOp::ShearX:
    case PrimitiveOp::ShearY: return 0.3 * m;
    case PrimitiveOp::TranslateX:
    case PrimitiveOp::TranslateY: return 10.0 * m * static_cast<double>(image_width) / 32.0;
    case PrimitiveOp::SolarizeAdd: return 110.0 / 255.0 * m;
    default: return 0.0;
  }
}

std::vector<double> apply_primitive(std::span<const double> img, std::size_t c, std::size_t h, std::size_t w,
                                    PrimitiveOp op, double magnitude, double sign) {
  if (img.size() != c * h * w) throw DimensionError("apply_primitive: image size mismatch");
  const std::size_t plane = h * w;
  const double level = primitive_level(op, magnitude, w) * sign;
  switch (op) {
    case PrimitiveOp::AutoContrast: {
      std::vector<double> out(img.begin(), img.end());
      for (std::size_t ch = 0; ch < c; ++ch) {
        const auto pl = img.subspan(ch * plane, plane);
        const auto [lo, hi] = std::minmax_element(pl.begin(), pl.end());
        if (*hi <= *lo) continue;
        for (std::size_t q = 0; q < plane; ++q) out[ch * plane + q] = clamp01((pl[q] - *lo) / (*hi - *lo));
      }
      return out;
    }
    case PrimitiveOp::Equalize: return equalize(img, c, plane);
    case PrimitiveOp::Invert: {
      std::vector<double> out(img.size());
      for (std::size_t i = 0; i < img.size(); ++i) out[i] = 1.0 - img[i];
      return out;
    }
    case PrimitiveOp::Posterize: {
      const int bits = static_cast<int>(primitive_level(op, magnitude, w));
      const int mask = (0xFF << (8 - bits)) & 0xFF;
      std::vector<double> out(img.size());
      for (std::size_t i = 0; i < img.size(); ++i) out[i] = static_cast<double>(to_byte(img[i]) & mask) / 255.0;
      return out;
    }
    case PrimitiveOp::Solarize: {
      const double t = primitive_level(op, magnitude, w);
      std::vector<double> out(img.size());
      for (std::size_t i = 0; i < img.size(); ++i) out[i] = img[i] >= t ? 1.0 - img[i] : img[i];
      return out;
    }
    case PrimitiveOp::SolarizeAdd: {
      const double add = primitive_level(op, magnitude, w);
      std::vector<double> out(img.size());
      for (std::size_t i = 0; i < img.size(); ++i) out[i] = img[i] < 128.0 / 255.0 ? clamp01(img[i] + add) : img[i];
      return out;
    }
    case PrimitiveOp::Color: {
      const auto gray = grayscale(img, c, plane);
      std::vector<double> base(img.size());
      for (std::size_t ch = 0; ch < c; ++ch) std::copy(gray.begin(), gray.end(), base.begin() + static_cast<std::ptrdiff_t>(ch * plane));
      return blend(img, base, 1.0 + level);
    }
    case PrimitiveOp::Contrast: {
      const auto gray = grayscale(img, c, plane);
      const double mean = std::accumulate(gray.begin(), gray.end(), 0.0) / static_cast<double>(plane);
      std::vector<double> base(img.size(), mean);
      return blend(img, base, 1.0 + level);
    }
    case PrimitiveOp::Brightness: {
      std::vector<double> base(img.size(), 0.0);
      return blend(img, base, 1.0 + level);
    }
    case PrimitiveOp::Sharpness: {
      std::vector<double> smooth(img.begin(), img.end());
      for (std::size_t ch = 0; ch < c; ++ch) {
        for (std::size_t y = 1; y + 1 < h; ++y) {
          for (std::size_t x = 1; x + 1 < w; ++x) {
            double s = 0.0;
            for (int dy = -1; dy <= 1; ++dy) {
              for (int dx = -1; dx <= 1; ++dx) {
                const double weight = (dy == 0 && dx == 0) ? 5.0 : 1.0;
                s += weight * img[(ch * h + y + static_cast<std::size_t>(dy + 1) - 1) * w + x +
                                  static_cast<std::size_t>(dx + 1) - 1];
              }
            }
            smooth[(ch * h + y) * w + x] = s / 13.0;
          }
        }
      }
      return blend(img, smooth, 1.0 + level);
    }
    case PrimitiveOp::Rotate: {
      const double rad = level * std::numbers::pi / 180.0;
      const double cs = std::cos(rad), sn = std::sin(rad);
      const double cy = (static_cast<double>(h) - 1.0) / 2.0, cx = (static_cast<double>(w) - 1.0) / 2.0;
      return warp(img, c, h, w, [=](double y, double x) {
        return std::pair{-sn * (x - cx) + cs * (y - cy) + cy, cs * (x - cx) + sn * (y - cy) + cx};
      });
    }
    case PrimitiveOp::ShearX:
      return warp(img, c, h, w, [=](double y, double x) { return std::pair{y, x + level * y}; });
    case PrimitiveOp::ShearY:
      return warp(img, c, h, w, [=](double y, double x) { return std::pair{y + level * x, x}; });
    case PrimitiveOp::TranslateX:
      return warp(img, c, h, w, [=](double y, double x) { return std::pair{y, x + level}; });
    case PrimitiveOp::TranslateY:
      return warp(img, c, h, w, [=](double y, double x) { return std::pair{y + level, x}; });
  }
  throw ValidationError("unknown augmentation op");
}

std::vector<double> apply_primitive(std::span<const double> img, std::size_t c, std::size_t h, std::size_t w,
                                    PrimitiveOp op, double magnitude, RngStream& rng) {
  const bool negate = rng.bernoulli(0.5);
  return apply_primitive(img, c, h, w, op, magnitude, negate ? -1.0 : 1.0);
}

std::vector<PrimitiveOp> sample_ops(std::span<const PrimitiveOp> pool, std::size_t n, RngStream& rng) {
  if (pool.empty()) throw ValidationError("empty augmentation pool");
  std::vector<PrimitiveOp> ops;
  ops.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    // One draw per op: multiply-high maps 64 random bits onto the pool.
    const auto wide = static_cast<unsigned __int128>(rng.next_u64()) * pool.size();
    ops.push_back(pool[static_cast<std::size_t>(wide >> 64)]);
  }
  return ops;
}

ImageBatch rand_augment(const ImageBatch& batch, const RandAugmentParams& p, const AugmentContext& ctx) {
  if (p.n < 1) throw ValidationError("randaugment needs N >= 1");
  const Geometry g = geometry_of(batch);
  std::vector<PrimitiveOp> pool;
  if (p.pool.empty()) {
    const auto base = p.curated ? curated_pool() : full_pool();
    pool.assign(base.begin(), base.end());
  } else {
    for (const auto& name : p.pool) pool.push_back(parse_primitive(name));
    if (p.curated) {
      std::erase_if(pool, [](PrimitiveOp op) {
        return op == PrimitiveOp::Invert || op == PrimitiveOp::Posterize || op == PrimitiveOp::Solarize;
      });
    }
  }
  ImageBatch out = batch;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    RngStream choices(ctx.seed, tag(ctx, "randaugment", "ops"), batch.ids[i], ctx.step);
    RngStream signs(ctx.seed, tag(ctx, "randaugment", "signs"), batch.ids[i], ctx.step);
    std::vector<double> img(image_of(batch, i).begin(), image_of(batch, i).end());
    for (auto op : sample_ops(pool, p.n, choices)) img = apply_primitive(img, g.c, g.h, g.w, op, p.magnitude, signs);
    std::copy(img.begin(), img.end(), image_of(out, i).begin());
  }
  return out;
}

// ---------------------------------------------------------------- pipeline

ImageBatch pipeline(const ImageBatch& batch, std::span<const AugmentSpec> specs, std::span<const double> fill,
                    const AugmentContext& ctx) {
  if (specs.empty()) throw ValidationError("augmentation pipeline needs at least one operator");
  ImageBatch cur = batch;
  for (std::size_t s = 0; s < specs.size(); ++s) {
    AugmentContext stage_ctx = ctx;
    stage_ctx.stage = static_cast<std::uint32_t>(s);
    cur = std::visit(
        [&](const auto& p) -> ImageBatch {
          using P = std::decay_t<decltype(p)>;
          if constexpr (std::is_same_v<P, PadCropParams>) return pad_and_crop(cur, p, stage_ctx);
          if constexpr (std::is_same_v<P, MixupParams>) return mixup(cur, p, stage_ctx);
          if constexpr (std::is_same_v<P, CutoutParams>) return cutout(cur, p, fill, stage_ctx);
          if constexpr (std::is_same_v<P, CutmixParams>) return cutmix(cur, p, stage_ctx);
          if constexpr (std::is_same_v<P, RicapParams>) return ricap(cur, p, stage_ctx);
          if constexpr (std::is_same_v<P, RandAugmentParams>) return rand_augment(cur, p, stage_ctx);
        },
        specs[s].params);
  }
  return cur;
}

}  // namespace robustaug
