#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace kwd {

// Dense row-major double tensor. Shape and storage are public; operations
// validate shapes at their boundaries and keep numel(shape) == data.size().
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> s);
  Tensor(std::vector<std::size_t> s, std::vector<double> d);

  static Tensor zeros(std::vector<std::size_t> s) { return Tensor(std::move(s)); }
  static Tensor full(std::vector<std::size_t> s, double v);

  std::size_t numel() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }
  std::size_t dim(std::size_t i) const;

  double& at2(std::size_t i, std::size_t j);
  double at2(std::size_t i, std::size_t j) const;
  double& at4(std::size_t n, std::size_t c, std::size_t y, std::size_t x);
  double at4(std::size_t n, std::size_t c, std::size_t y, std::size_t x) const;

  bool same_shape(const Tensor& o) const { return shape == o.shape; }
  void fill(double v);
};

std::size_t shape_numel(const std::vector<std::size_t>& s);
std::string shape_str(const std::vector<std::size_t>& s);

// Throws std::runtime_error naming `what` if any element is NaN or infinite.
void ensure_finite(const Tensor& t, const std::string& what);
void ensure_rank(const Tensor& t, std::size_t r, const std::string& what);

}  // namespace kwd
