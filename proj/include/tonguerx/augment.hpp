#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <vector>

#include "tonguerx/rng.hpp"
#include "tonguerx/tensor.hpp"

namespace tonguerx::augment {

struct AugmentConfig {
  double rotation_range_deg = 25.0;
  double width_shift_range = 0.05;
  double height_shift_range = 0.05;
  double shear_range = 0.05;
  double zoom_range = 0.2;
  bool horizontal_flip = true;
  std::uint64_t seed = 0;

  /// Throws std::invalid_argument when a range is outside its domain.
  void validate() const;
};

/// The raw draws behind one transform, kept for reproducibility manifests
/// and for range checks.
struct TransformParams {
  double rotation_deg = 0.0;
  double shift_x = 0.0;  // pixels
  double shift_y = 0.0;
  double shear = 0.0;    // dimensionless factor, x' = x + shear*y
  double zoom_x = 1.0;
  double zoom_y = 1.0;
  bool flip = false;
};

/// Maps output pixel coordinates to input coordinates (inverse mapping);
/// the horizontal flip applies to the output coordinate first.
struct AffineTransform {
  std::array<double, 6> m = {1, 0, 0, 0, 1, 0};  // row-major 2x3
  bool flip = false;
};

TransformParams sample_params(Rng& rng, const AugmentConfig& config,
                              std::size_t height, std::size_t width);

/// Center-translate, rotate, shear, zoom, shift, un-center; flip last.
AffineTransform compose(const TransformParams& params, std::size_t height,
                        std::size_t width);

inline AffineTransform sample_transform(Rng& rng, const AugmentConfig& config,
                                        std::size_t height, std::size_t width) {
  return compose(sample_params(rng, config, height, width), height, width);
}

/// Nearest-neighbor resampling of an [H,W,C] image; source coordinates
/// outside the image clamp to the nearest edge pixel.
Tensor apply(const Tensor& image, const AffineTransform& transform);

using AugmentSink = std::function<void(
    std::size_t source, const TransformParams& params, const Tensor& image)>;

/// The fixed augmentation regime: each round draws `batch` source images at
/// random and transforms each once, for batch*rounds emitted samples. Labels
/// stay with the source index, which is reported to the sink untouched.
void augment_round(const std::vector<Tensor>& images,
                   const AugmentConfig& config, std::size_t batch,
                   std::size_t rounds, const AugmentSink& sink);

}  // namespace tonguerx::augment
