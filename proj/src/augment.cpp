#include "tonguerx/augment.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace tonguerx::augment {

namespace {

constexpr double kPi = 3.14159265358979323846;

struct Mat3 {
  // Row-major 3x3 affine, last row implicitly (0, 0, 1).
  double a = 1, b = 0, c = 0;
  double d = 0, e = 1, f = 0;
};

Mat3 mul(const Mat3& l, const Mat3& r) {
  Mat3 out;
  out.a = l.a * r.a + l.b * r.d;
  out.b = l.a * r.b + l.b * r.e;
  out.c = l.a * r.c + l.b * r.f + l.c;
  out.d = l.d * r.a + l.e * r.d;
  out.e = l.d * r.b + l.e * r.e;
  out.f = l.d * r.c + l.e * r.f + l.f;
  return out;
}

Mat3 translate(double tx, double ty) {
  Mat3 m;
  m.c = tx;
  m.f = ty;
  return m;
}

Mat3 rotate(double deg) {
  Mat3 m;
  const double rad = deg * kPi / 180.0;
  m.a = std::cos(rad);
  m.b = -std::sin(rad);
  m.d = std::sin(rad);
  m.e = std::cos(rad);
  return m;
}

Mat3 shear_x(double factor) {
  Mat3 m;
  m.b = factor;
  return m;
}

Mat3 zoom(double zx, double zy) {
  Mat3 m;
  m.a = zx;
  m.e = zy;
  return m;
}

}  // namespace

void AugmentConfig::validate() const {
  if (!(rotation_range_deg >= 0.0 && rotation_range_deg <= 180.0))
    throw std::invalid_argument("augment: rotation range must be in [0,180]");
  if (width_shift_range < 0.0 || height_shift_range < 0.0 ||
      shear_range < 0.0 || zoom_range < 0.0)
    throw std::invalid_argument("augment: ranges must be non-negative");
  if (zoom_range >= 1.0)
    throw std::invalid_argument("augment: zoom range must leave scale positive");
}

TransformParams sample_params(Rng& rng, const AugmentConfig& config,
                              std::size_t height, std::size_t width) {
  config.validate();
  if (height == 0 || width == 0)
    throw std::invalid_argument("augment: image extents must be positive");
  TransformParams p;
  p.rotation_deg =
      rng.uniform(-config.rotation_range_deg, config.rotation_range_deg);
  p.shift_x = rng.uniform(-config.width_shift_range * static_cast<double>(width),
                          config.width_shift_range * static_cast<double>(width));
  p.shift_y =
      rng.uniform(-config.height_shift_range * static_cast<double>(height),
                  config.height_shift_range * static_cast<double>(height));
  p.shear = rng.uniform(-config.shear_range, config.shear_range);
  p.zoom_x = rng.uniform(1.0 - config.zoom_range, 1.0 + config.zoom_range);
  p.zoom_y = rng.uniform(1.0 - config.zoom_range, 1.0 + config.zoom_range);
  p.flip = config.horizontal_flip && rng.uniform() < 0.5;
  return p;
}

AffineTransform compose(const TransformParams& params, std::size_t height,
                        std::size_t width) {
  const double cx = (static_cast<double>(width) - 1.0) / 2.0;
  const double cy = (static_cast<double>(height) - 1.0) / 2.0;

  // Forward content map: un-center ∘ shift ∘ zoom ∘ shear ∘ rotate ∘ center.
  // The sampler needs output→input, so compose the inverses in reverse.
  Mat3 inv = translate(cx, cy);
  inv = mul(inv, rotate(-params.rotation_deg));
  inv = mul(inv, shear_x(-params.shear));
  inv = mul(inv, zoom(1.0 / params.zoom_x, 1.0 / params.zoom_y));
  inv = mul(inv, translate(-params.shift_x, -params.shift_y));
  inv = mul(inv, translate(-cx, -cy));

  AffineTransform t;
  t.m = {inv.a, inv.b, inv.c, inv.d, inv.e, inv.f};
  t.flip = params.flip;
  for (double v : t.m)
    if (!std::isfinite(v))
      throw std::invalid_argument("augment: non-finite transform");
  return t;
}

Tensor apply(const Tensor& image, const AffineTransform& transform) {
  if (image.rank() != 3)
    throw std::invalid_argument("augment: image must be [H,W,C]");
  const std::size_t h = image.shape[0], w = image.shape[1], c = image.shape[2];
  Tensor out(image.shape);
  const auto& m = transform.m;
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const double xq = transform.flip
                            ? static_cast<double>(w - 1 - x)
                            : static_cast<double>(x);
      const double yq = static_cast<double>(y);
      const double sx = m[0] * xq + m[1] * yq + m[2];
      const double sy = m[3] * xq + m[4] * yq + m[5];
      const long ix = std::clamp<long>(std::lround(sx), 0,
                                       static_cast<long>(w) - 1);
      const long iy = std::clamp<long>(std::lround(sy), 0,
                                       static_cast<long>(h) - 1);
      const std::size_t src =
          (static_cast<std::size_t>(iy) * w + static_cast<std::size_t>(ix)) * c;
      const std::size_t dst = (y * w + x) * c;
      for (std::size_t ch = 0; ch < c; ++ch)
        out.data[dst + ch] = image.data[src + ch];
    }
  return out;
}

void augment_round(const std::vector<Tensor>& images,
                   const AugmentConfig& config, std::size_t batch,
                   std::size_t rounds, const AugmentSink& sink) {
  if (images.empty())
    throw std::invalid_argument("augment: dataset is empty");
  config.validate();
  Rng rng(config.seed);
  for (std::size_t round = 0; round < rounds; ++round)
    for (std::size_t slot = 0; slot < batch; ++slot) {
      const std::size_t source = rng.uniform_index(images.size());
      const Tensor& image = images[source];
      TransformParams params =
          sample_params(rng, config, image.shape[0], image.shape[1]);
      sink(source, params, apply(image, compose(params, image.shape[0],
                                                image.shape[1])));
    }
}

}  // namespace tonguerx::augment
