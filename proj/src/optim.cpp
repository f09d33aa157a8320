#include "kwd/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace kwd {

SgdState::SgdState(const std::vector<ParamView>& params) {
  velocity_.reserve(params.size());
  for (const auto& p : params) velocity_.emplace_back(p.value->shape);
}

void SgdState::step(const std::vector<ParamView>& params, double lr, const SgdConfig& cfg) {
  if (params.size() != velocity_.size())
    throw std::invalid_argument("sgd: parameter count does not match optimizer state");
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw std::invalid_argument("sgd: learning rate must be finite and >= 0");
  for (std::size_t i = 0; i < params.size(); ++i) {
    const ParamView& p = params[i];
    Tensor& v = velocity_[i];
    if (v.shape != p.value->shape)
      throw std::invalid_argument("sgd: shape mismatch for parameter " + p.name);
    for (std::size_t j = 0; j < v.data.size(); ++j) {
      const double g = p.grad->data[j];
      if (!std::isfinite(g)) throw std::runtime_error("sgd: non-finite gradient in parameter " + p.name);
      v.data[j] = cfg.momentum * v.data[j] + g + cfg.weight_decay * p.value->data[j];
      p.value->data[j] -= lr * v.data[j];
    }
  }
}

double cosine_lr(std::size_t t, std::size_t total, double lr0) {
  if (total == 0) throw std::invalid_argument("cosine_lr: total steps must be positive");
  if (t > total)
    throw std::invalid_argument("cosine_lr: step " + std::to_string(t) + " beyond schedule of " +
                                std::to_string(total));
  return 0.5 * lr0 * (1.0 + std::cos(M_PI * static_cast<double>(t) / static_cast<double>(total)));
}

double finite_diff_check(const std::function<double(bool)>& loss, const std::vector<ParamView>& params,
                         double h) {
  if (!(h > 0.0)) throw std::invalid_argument("finite_diff_check: step size must be positive");
  const double l0 = loss(true);
  if (!std::isfinite(l0)) throw std::runtime_error("finite_diff_check: loss is non-finite");

  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  for (const auto& p : params) analytic.push_back(p.grad->data);

  double max_rel = 0.0;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor& value = *params[pi].value;
    for (std::size_t j = 0; j < value.data.size(); ++j) {
      const double keep = value.data[j];
      value.data[j] = keep + h;
      const double lp = loss(false);
      value.data[j] = keep - h;
      const double lm = loss(false);
      value.data[j] = keep;
      if (!std::isfinite(lp) || !std::isfinite(lm))
        throw std::runtime_error("finite_diff_check: perturbed loss is non-finite at " + params[pi].name);
      const double numeric = (lp - lm) / (2.0 * h);
      const double a = analytic[pi][j];
      const double rel = std::fabs(a - numeric) / std::max(1.0, std::fabs(a));
      if (rel > max_rel) max_rel = rel;
    }
  }
  return max_rel;
}

}  // namespace kwd
