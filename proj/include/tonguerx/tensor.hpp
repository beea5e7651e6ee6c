#pragma once

#include <cstddef>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <vector>

namespace tonguerx {

/// Dense multi-dimensional array of 64-bit floats, row-major.
/// Invariant: numel(shape) == data.size().
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> s) : shape(std::move(s)) {
    data.assign(numel(shape), 0.0);
  }
  Tensor(std::vector<std::size_t> s, std::vector<double> d)
      : shape(std::move(s)), data(std::move(d)) {
    if (numel(shape) != data.size())
      throw std::invalid_argument("Tensor: shape/data size mismatch");
  }

  static std::size_t numel(const std::vector<std::size_t>& s) {
    std::size_t n = 1;
    for (std::size_t e : s) n *= e;
    return n;
  }

  static Tensor zeros(std::vector<std::size_t> s) { return Tensor(std::move(s)); }
  static Tensor full(std::vector<std::size_t> s, double v) {
    Tensor t(std::move(s));
    for (double& x : t.data) x = v;
    return t;
  }
  static Tensor scalar(double v) { return Tensor({1}, {v}); }

  std::size_t size() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }
  std::size_t dim(std::size_t i) const { return shape.at(i); }

  double& operator[](std::size_t i) { return data[i]; }
  double operator[](std::size_t i) const { return data[i]; }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  // 4-d accessors for NHWC feature maps.
  double& at4(std::size_t n, std::size_t y, std::size_t x, std::size_t c) {
    return data[((n * shape[1] + y) * shape[2] + x) * shape[3] + c];
  }
  const double& at4(std::size_t n, std::size_t y, std::size_t x,
                    std::size_t c) const {
    return data[((n * shape[1] + y) * shape[2] + x) * shape[3] + c];
  }
  double& at2(std::size_t r, std::size_t c) { return data[r * shape[1] + c]; }
  const double& at2(std::size_t r, std::size_t c) const {
    return data[r * shape[1] + c];
  }
};

std::string shape_str(const std::vector<std::size_t>& s);

/// Throws std::invalid_argument when the value contains NaN/Inf.
void require_finite(const Tensor& t, const char* what);

}  // namespace tonguerx
