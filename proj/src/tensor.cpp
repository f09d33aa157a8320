#include "kwd/tensor.hpp"

#include <cmath>
#include <stdexcept>

namespace kwd {

Tensor::Tensor(std::vector<std::size_t> s) : shape(std::move(s)), data(shape_numel(shape), 0.0) {}

Tensor::Tensor(std::vector<std::size_t> s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
  if (data.size() != shape_numel(shape))
    throw std::invalid_argument("tensor: data size " + std::to_string(data.size()) +
                                " does not match shape " + shape_str(shape));
}

Tensor Tensor::full(std::vector<std::size_t> s, double v) {
  Tensor t(std::move(s));
  t.fill(v);
  return t;
}

std::size_t Tensor::dim(std::size_t i) const {
  if (i >= shape.size()) throw std::invalid_argument("tensor: dim index out of range");
  return shape[i];
}

double& Tensor::at2(std::size_t i, std::size_t j) { return data[i * shape[1] + j]; }
double Tensor::at2(std::size_t i, std::size_t j) const { return data[i * shape[1] + j]; }

double& Tensor::at4(std::size_t n, std::size_t c, std::size_t y, std::size_t x) {
  return data[((n * shape[1] + c) * shape[2] + y) * shape[3] + x];
}
double Tensor::at4(std::size_t n, std::size_t c, std::size_t y, std::size_t x) const {
  return data[((n * shape[1] + c) * shape[2] + y) * shape[3] + x];
}

void Tensor::fill(double v) {
  for (double& x : data) x = v;
}

std::size_t shape_numel(const std::vector<std::size_t>& s) {
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  return s.empty() ? 0 : n;
}

std::string shape_str(const std::vector<std::size_t>& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

void ensure_finite(const Tensor& t, const std::string& what) {
  for (double v : t.data)
    if (!std::isfinite(v)) throw std::runtime_error(what + ": non-finite value encountered");
}

void ensure_rank(const Tensor& t, std::size_t r, const std::string& what) {
  if (t.rank() != r)
    throw std::invalid_argument(what + ": expected rank-" + std::to_string(r) + " tensor, got shape " +
                                shape_str(t.shape));
}

}  // namespace kwd
