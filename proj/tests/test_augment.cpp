#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "tonguerx/augment.hpp"
#include "tonguerx/image_io.hpp"
#include "tonguerx/rng.hpp"

using namespace tonguerx;
using namespace tonguerx::augment;

namespace {

Tensor random_image(std::size_t h, std::size_t w, Rng& rng) {
  Tensor t({h, w, 3});
  for (double& v : t.data)
    v = static_cast<double>(rng.uniform_index(256));
  return t;
}

AugmentConfig zero_config() {
  AugmentConfig config;
  config.rotation_range_deg = 0.0;
  config.width_shift_range = 0.0;
  config.height_shift_range = 0.0;
  config.shear_range = 0.0;
  config.zoom_range = 0.0;
  config.horizontal_flip = false;
  return config;
}

}  // namespace

TEST_CASE("zero-range config yields the exact identity") {
  Rng rng(1);
  AffineTransform t = sample_transform(rng, zero_config(), 15, 11);
  CHECK(t.m == std::array<double, 6>{1, 0, 0, 0, 1, 0});
  CHECK_FALSE(t.flip);

  Tensor image = random_image(15, 11, rng);
  Tensor out = apply(image, t);
  CHECK(out.data == image.data);
}

TEST_CASE("fixed seed reproduces the transform") {
  AugmentConfig config;
  Rng a(42), b(42);
  TransformParams pa = sample_params(a, config, 20, 20);
  TransformParams pb = sample_params(b, config, 20, 20);
  CHECK(pa.rotation_deg == pb.rotation_deg);
  CHECK(pa.shift_x == pb.shift_x);
  CHECK(pa.shift_y == pb.shift_y);
  CHECK(pa.shear == pb.shear);
  CHECK(pa.zoom_x == pb.zoom_x);
  CHECK(pa.zoom_y == pb.zoom_y);
  CHECK(pa.flip == pb.flip);
}

TEST_CASE("sampled parameters respect the configured ranges") {
  AugmentConfig config;
  Rng rng(7);
  bool saw_low = false, saw_high = false, saw_flip = false, saw_noflip = false;
  for (int i = 0; i < 10000; ++i) {
    TransformParams p = sample_params(rng, config, 64, 64);
    CHECK(std::fabs(p.rotation_deg) <= 25.0);
    CHECK(std::fabs(p.shift_x) <= 0.05 * 64.0);
    CHECK(std::fabs(p.shift_y) <= 0.05 * 64.0);
    CHECK(std::fabs(p.shear) <= 0.05);
    CHECK(p.zoom_x >= 0.8);
    CHECK(p.zoom_x <= 1.2);
    CHECK(p.zoom_y >= 0.8);
    CHECK(p.zoom_y <= 1.2);
    saw_low = saw_low || p.rotation_deg < -20.0;
    saw_high = saw_high || p.rotation_deg > 20.0;
    saw_flip = saw_flip || p.flip;
    saw_noflip = saw_noflip || !p.flip;
  }
  CHECK(saw_low);
  CHECK(saw_high);
  CHECK(saw_flip);
  CHECK(saw_noflip);
}

TEST_CASE("horizontal flip swaps columns") {
  TransformParams params;
  params.flip = true;
  AffineTransform t = compose(params, 2, 2);
  Tensor image({2, 2, 3});
  for (std::size_t i = 0; i < image.size(); ++i)
    image.data[i] = static_cast<double>(i);
  Tensor out = apply(image, t);
  for (std::size_t y = 0; y < 2; ++y)
    for (std::size_t c = 0; c < 3; ++c) {
      CHECK(out.data[(y * 2 + 0) * 3 + c] == image.data[(y * 2 + 1) * 3 + c]);
      CHECK(out.data[(y * 2 + 1) * 3 + c] == image.data[(y * 2 + 0) * 3 + c]);
    }
}

TEST_CASE("resampling never invents pixel values") {
  Rng rng(19);
  AugmentConfig config;
  Tensor image = random_image(24, 18, rng);
  const double lo = *std::min_element(image.data.begin(), image.data.end());
  const double hi = *std::max_element(image.data.begin(), image.data.end());
  for (int i = 0; i < 50; ++i) {
    Tensor out = apply(image, sample_transform(rng, config, 24, 18));
    CHECK(out.shape == image.shape);
    for (double v : out.data) {
      CHECK(v >= lo);
      CHECK(v <= hi);
    }
  }
}

TEST_CASE("the 64x200 regime emits exactly 12800 samples") {
  Rng rng(3);
  std::vector<Tensor> images;
  for (int i = 0; i < 5; ++i) images.push_back(random_image(6, 6, rng));

  AugmentConfig config;
  config.seed = 11;
  std::size_t count = 0;
  std::vector<std::size_t> sources;
  augment_round(images, config, 64, 200,
                [&](std::size_t source, const TransformParams&, const Tensor& t) {
                  ++count;
                  sources.push_back(source);
                  CHECK(t.shape == images[source].shape);
                });
  CHECK(count == 12800);
  CHECK(*std::max_element(sources.begin(), sources.end()) < images.size());

  std::vector<std::size_t> replay;
  augment_round(images, config, 64, 200,
                [&](std::size_t source, const TransformParams&, const Tensor&) {
                  replay.push_back(source);
                });
  CHECK(replay == sources);
}

TEST_CASE("config validation rejects bad ranges") {
  AugmentConfig config;
  config.rotation_range_deg = 200.0;
  CHECK_THROWS_AS(config.validate(), std::invalid_argument);
  config = AugmentConfig{};
  config.zoom_range = 1.0;
  CHECK_THROWS_AS(config.validate(), std::invalid_argument);
  config = AugmentConfig{};
  config.shear_range = -0.1;
  CHECK_THROWS_AS(config.validate(), std::invalid_argument);
}

TEST_CASE("png files round-trip 8-bit data exactly") {
  Rng rng(31);
  Tensor image = random_image(9, 13, rng);
  const std::string path = "augment_roundtrip.png";
  imageio::write_png(path, image);
  Tensor loaded = imageio::read_png(path);
  CHECK(loaded.shape == image.shape);
  CHECK(loaded.data == image.data);
  std::remove(path.c_str());

  CHECK_THROWS_AS(imageio::read_png("missing_file.png"), std::runtime_error);
  CHECK_THROWS_AS(imageio::write_png("bad.png", Tensor({3, 3})),
                  std::invalid_argument);
}
