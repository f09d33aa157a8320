#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "kwd/layers.hpp"

namespace kwd {

struct SgdConfig {
  double momentum = 0.9;
  double weight_decay = 1e-4;
};

// SGD with classical momentum and decoupled-from-nothing weight decay folded
// into the gradient: v <- mu*v + g + wd*theta; theta <- theta - lr*v.
class SgdState {
 public:
  SgdState() = default;
  explicit SgdState(const std::vector<ParamView>& params);

  void step(const std::vector<ParamView>& params, double lr, const SgdConfig& cfg);

  std::size_t slots() const { return velocity_.size(); }
  Tensor& velocity(std::size_t i) { return velocity_[i]; }
  const Tensor& velocity(std::size_t i) const { return velocity_[i]; }

 private:
  std::vector<Tensor> velocity_;
};

// Half-cosine decay over `total` steps: lr(t) = 0.5*lr0*(1 + cos(pi*t/total)).
// t counts global batches from 0; t > total is an error.
double cosine_lr(std::size_t t, std::size_t total, double lr0);

// Central-difference gradient check. `loss` must run the model: with
// want_grad=true it zeroes gradients, runs forward+backward and leaves
// analytic gradients in the params; with want_grad=false it only needs to
// return the loss value. Returns the maximum relative error
// |analytic - numeric| / max(1, |analytic|) over every coordinate.
double finite_diff_check(const std::function<double(bool want_grad)>& loss,
                         const std::vector<ParamView>& params, double h = 1e-5);

}  // namespace kwd
