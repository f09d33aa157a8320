#include "kwd/layers.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace kwd {

using MatMap = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using ConstMatMap = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

void Layer::zero_grads() {
  for (auto& p : params()) p.grad->fill(0.0);
}

static void check_ctx(const LayerCtx& ctx, const std::string& name) {
  if (!ctx.ready) throw std::invalid_argument(name + ": backward called without a matching forward");
}

static void check_grad_shape(const Tensor& g, const std::vector<std::size_t>& expect, const std::string& name) {
  if (g.shape != expect)
    throw std::invalid_argument(name + ": gradient shape " + shape_str(g.shape) + " does not match output " +
                                shape_str(expect));
}

// ---------------------------------------------------------------- Conv2d

Conv2d::Conv2d(std::string name, std::size_t in_ch, std::size_t out_ch)
    : Layer(std::move(name)), in_ch_(in_ch), out_ch_(out_ch) {
  if (in_ch == 0 || out_ch == 0) throw std::invalid_argument("conv2d: channel counts must be positive");
  weight = Tensor({out_ch, in_ch, 3, 3});
  bias = Tensor({out_ch});
  dweight = Tensor({out_ch, in_ch, 3, 3});
  dbias = Tensor({out_ch});
}

// Expand x [N,C,H,W] into [N*H*W, C*9]; row (n,y,x) holds the padded 3x3
// neighbourhood of every input channel.
static Tensor im2col3x3(const Tensor& x) {
  const std::size_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3];
  Tensor cols({n * h * w, c * 9});
  const std::size_t row_len = c * 9;
  for (std::size_t in = 0; in < n; ++in) {
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t ix = 0; ix < w; ++ix) {
        double* row = cols.data.data() + ((in * h + y) * w + ix) * row_len;
        for (std::size_t ic = 0; ic < c; ++ic) {
          const double* plane = x.data.data() + (in * c + ic) * h * w;
          double* dst = row + ic * 9;
          for (int ky = -1; ky <= 1; ++ky) {
            const long yy = static_cast<long>(y) + ky;
            if (yy < 0 || yy >= static_cast<long>(h)) {
              dst[0] = dst[1] = dst[2] = 0.0;
            } else {
              const double* src = plane + static_cast<std::size_t>(yy) * w;
              const long x0 = static_cast<long>(ix) - 1;
              dst[0] = (x0 >= 0) ? src[x0] : 0.0;
              dst[1] = src[ix];
              dst[2] = (ix + 1 < w) ? src[ix + 1] : 0.0;
            }
            dst += 3;
          }
        }
      }
    }
  }
  return cols;
}

Tensor Conv2d::forward(const Tensor& x, LayerCtx& ctx) const {
  ensure_rank(x, 4, name());
  if (x.shape[1] != in_ch_)
    throw std::invalid_argument(name() + ": expected " + std::to_string(in_ch_) + " input channels, got " +
                                std::to_string(x.shape[1]));
  if (x.shape[0] == 0 || x.shape[2] == 0 || x.shape[3] == 0)
    throw std::invalid_argument(name() + ": empty input " + shape_str(x.shape));

  const std::size_t n = x.shape[0], h = x.shape[2], w = x.shape[3];
  ctx.cols = im2col3x3(x);
  ctx.in_shape = x.shape;
  ctx.out_shape = {n, out_ch_, h, w};
  ctx.ready = true;

  Tensor y(ctx.out_shape);
  const std::size_t rows = n * h * w, k = in_ch_ * 9;
  ConstMatMap cm(ctx.cols.data.data(), rows, k);
  ConstMatMap wm(weight.data.data(), out_ch_, k);
  // Per-row output is [rows, out_ch]; transpose into channel planes.
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> prod = cm * wm.transpose();
  for (std::size_t in = 0; in < n; ++in)
    for (std::size_t oc = 0; oc < out_ch_; ++oc) {
      double* plane = y.data.data() + (in * out_ch_ + oc) * h * w;
      const double b = bias.data[oc];
      for (std::size_t p = 0; p < h * w; ++p) plane[p] = prod(in * h * w + p, oc) + b;
    }
  ensure_finite(y, name() + " forward");
  return y;
}

Tensor Conv2d::backward(const Tensor& grad_out, LayerCtx& ctx) {
  check_ctx(ctx, name());
  check_grad_shape(grad_out, ctx.out_shape, name());
  const std::size_t n = ctx.in_shape[0], h = ctx.in_shape[2], w = ctx.in_shape[3];
  const std::size_t rows = n * h * w, k = in_ch_ * 9;

  // Reorder grad_out planes into row-per-pixel layout [rows, out_ch].
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> go(rows, out_ch_);
  for (std::size_t in = 0; in < n; ++in)
    for (std::size_t oc = 0; oc < out_ch_; ++oc) {
      const double* plane = grad_out.data.data() + (in * out_ch_ + oc) * h * w;
      for (std::size_t p = 0; p < h * w; ++p) go(in * h * w + p, oc) = plane[p];
    }

  ConstMatMap cm(ctx.cols.data.data(), rows, k);
  MatMap dwm(dweight.data.data(), out_ch_, k);
  dwm.noalias() += go.transpose() * cm;
  for (std::size_t oc = 0; oc < out_ch_; ++oc) dbias.data[oc] += go.col(oc).sum();

  // dcols = go * W, then fold the 3x3 neighbourhoods back (col2im).
  ConstMatMap wm(weight.data.data(), out_ch_, k);
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> dcols = go * wm;

  Tensor dx(ctx.in_shape);
  for (std::size_t in = 0; in < n; ++in)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t ix = 0; ix < w; ++ix) {
        const double* row = dcols.data() + ((in * h + y) * w + ix) * k;
        for (std::size_t ic = 0; ic < in_ch_; ++ic) {
          double* plane = dx.data.data() + (in * in_ch_ + ic) * h * w;
          const double* src = row + ic * 9;
          for (int ky = -1; ky <= 1; ++ky) {
            const long yy = static_cast<long>(y) + ky;
            if (yy < 0 || yy >= static_cast<long>(h)) continue;
            double* drow = plane + static_cast<std::size_t>(yy) * w;
            const long x0 = static_cast<long>(ix) - 1;
            if (x0 >= 0) drow[x0] += src[(ky + 1) * 3 + 0];
            drow[ix] += src[(ky + 1) * 3 + 1];
            if (ix + 1 < w) drow[ix + 1] += src[(ky + 1) * 3 + 2];
          }
        }
      }
  ensure_finite(dx, name() + " backward");
  return dx;
}

std::vector<ParamView> Conv2d::params() {
  return {{name() + "/weight", &weight, &dweight}, {name() + "/bias", &bias, &dbias}};
}

std::unique_ptr<Layer> Conv2d::clone() const { return std::make_unique<Conv2d>(*this); }

// ------------------------------------------------------------------ Relu

Tensor Relu::forward(const Tensor& x, LayerCtx& ctx) const {
  ctx.input = x;
  ctx.in_shape = x.shape;
  ctx.out_shape = x.shape;
  ctx.ready = true;
  Tensor y = x;
  for (double& v : y.data) v = v > 0.0 ? v : 0.0;
  return y;
}

Tensor Relu::backward(const Tensor& grad_out, LayerCtx& ctx) {
  check_ctx(ctx, name());
  check_grad_shape(grad_out, ctx.out_shape, name());
  Tensor dx = grad_out;
  for (std::size_t i = 0; i < dx.data.size(); ++i)
    if (ctx.input.data[i] <= 0.0) dx.data[i] = 0.0;
  return dx;
}

// -------------------------------------------------------------- MaxPool2

Tensor MaxPool2::forward(const Tensor& x, LayerCtx& ctx) const {
  ensure_rank(x, 4, name());
  const std::size_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3];
  if (h < 2 || w < 2)
    throw std::invalid_argument(name() + ": input " + shape_str(x.shape) + " too small for 2x2 pooling");
  const std::size_t oh = h / 2, ow = w / 2;
  Tensor y({n, c, oh, ow});
  ctx.argmax.assign(n * c * oh * ow, 0);
  ctx.in_shape = x.shape;
  ctx.out_shape = y.shape;
  ctx.ready = true;
  std::size_t oi = 0;
  for (std::size_t in = 0; in < n; ++in)
    for (std::size_t ic = 0; ic < c; ++ic) {
      const double* plane = x.data.data() + (in * c + ic) * h * w;
      for (std::size_t oy = 0; oy < oh; ++oy)
        for (std::size_t ox = 0; ox < ow; ++ox, ++oi) {
          std::size_t best = (2 * oy) * w + 2 * ox;
          double bv = plane[best];
          const std::size_t cand[3] = {(2 * oy) * w + 2 * ox + 1, (2 * oy + 1) * w + 2 * ox,
                                       (2 * oy + 1) * w + 2 * ox + 1};
          for (std::size_t idx : cand)
            if (plane[idx] > bv) {  // strict: ties keep the first in scan order
              bv = plane[idx];
              best = idx;
            }
          y.data[oi] = bv;
          ctx.argmax[oi] = static_cast<std::uint32_t>(best);
        }
    }
  return y;
}

Tensor MaxPool2::backward(const Tensor& grad_out, LayerCtx& ctx) {
  check_ctx(ctx, name());
  check_grad_shape(grad_out, ctx.out_shape, name());
  const std::size_t n = ctx.in_shape[0], c = ctx.in_shape[1], h = ctx.in_shape[2], w = ctx.in_shape[3];
  const std::size_t oh = ctx.out_shape[2], ow = ctx.out_shape[3];
  Tensor dx(ctx.in_shape);
  std::size_t oi = 0;
  for (std::size_t in = 0; in < n; ++in)
    for (std::size_t ic = 0; ic < c; ++ic) {
      double* plane = dx.data.data() + (in * c + ic) * h * w;
      for (std::size_t p = 0; p < oh * ow; ++p, ++oi) plane[ctx.argmax[oi]] += grad_out.data[oi];
    }
  return dx;
}

// --------------------------------------------------------- GlobalAvgPool

Tensor GlobalAvgPool::forward(const Tensor& x, LayerCtx& ctx) const {
  ensure_rank(x, 4, name());
  const std::size_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3];
  if (h == 0 || w == 0) throw std::invalid_argument(name() + ": empty spatial extent");
  ctx.in_shape = x.shape;
  ctx.out_shape = {n, c};
  ctx.ready = true;
  Tensor y({n, c});
  const double inv = 1.0 / static_cast<double>(h * w);
  for (std::size_t in = 0; in < n; ++in)
    for (std::size_t ic = 0; ic < c; ++ic) {
      const double* plane = x.data.data() + (in * c + ic) * h * w;
      double s = 0.0;
      for (std::size_t p = 0; p < h * w; ++p) s += plane[p];
      y.at2(in, ic) = s * inv;
    }
  return y;
}

Tensor GlobalAvgPool::backward(const Tensor& grad_out, LayerCtx& ctx) {
  check_ctx(ctx, name());
  check_grad_shape(grad_out, ctx.out_shape, name());
  const std::size_t n = ctx.in_shape[0], c = ctx.in_shape[1], h = ctx.in_shape[2], w = ctx.in_shape[3];
  Tensor dx(ctx.in_shape);
  const double inv = 1.0 / static_cast<double>(h * w);
  for (std::size_t in = 0; in < n; ++in)
    for (std::size_t ic = 0; ic < c; ++ic) {
      const double g = grad_out.at2(in, ic) * inv;
      double* plane = dx.data.data() + (in * c + ic) * h * w;
      for (std::size_t p = 0; p < h * w; ++p) plane[p] = g;
    }
  return dx;
}

// ---------------------------------------------------------------- Linear

Linear::Linear(std::string name, std::size_t in_dim, std::size_t out_dim)
    : Layer(std::move(name)), in_dim_(in_dim), out_dim_(out_dim) {
  if (in_dim == 0 || out_dim == 0) throw std::invalid_argument("linear: dimensions must be positive");
  weight = Tensor({out_dim, in_dim});
  bias = Tensor({out_dim});
  dweight = Tensor({out_dim, in_dim});
  dbias = Tensor({out_dim});
}

Tensor Linear::forward(const Tensor& x, LayerCtx& ctx) const {
  ensure_rank(x, 2, name());
  if (x.shape[1] != in_dim_)
    throw std::invalid_argument(name() + ": expected input dim " + std::to_string(in_dim_) + ", got " +
                                std::to_string(x.shape[1]));
  ctx.input = x;
  ctx.in_shape = x.shape;
  ctx.out_shape = {x.shape[0], out_dim_};
  ctx.ready = true;
  Tensor y(ctx.out_shape);
  ConstMatMap xm(x.data.data(), x.shape[0], in_dim_);
  ConstMatMap wm(weight.data.data(), out_dim_, in_dim_);
  MatMap ym(y.data.data(), x.shape[0], out_dim_);
  ym.noalias() = xm * wm.transpose();
  for (std::size_t i = 0; i < x.shape[0]; ++i)
    for (std::size_t j = 0; j < out_dim_; ++j) y.at2(i, j) += bias.data[j];
  ensure_finite(y, name() + " forward");
  return y;
}

Tensor Linear::backward(const Tensor& grad_out, LayerCtx& ctx) {
  check_ctx(ctx, name());
  check_grad_shape(grad_out, ctx.out_shape, name());
  const std::size_t n = ctx.in_shape[0];
  ConstMatMap gm(grad_out.data.data(), n, out_dim_);
  ConstMatMap xm(ctx.input.data.data(), n, in_dim_);
  MatMap dwm(dweight.data.data(), out_dim_, in_dim_);
  dwm.noalias() += gm.transpose() * xm;
  for (std::size_t j = 0; j < out_dim_; ++j) dbias.data[j] += gm.col(j).sum();
  Tensor dx(ctx.in_shape);
  ConstMatMap wm(weight.data.data(), out_dim_, in_dim_);
  MatMap dxm(dx.data.data(), n, in_dim_);
  dxm.noalias() = gm * wm;
  ensure_finite(dx, name() + " backward");
  return dx;
}

std::vector<ParamView> Linear::params() {
  return {{name() + "/weight", &weight, &dweight}, {name() + "/bias", &bias, &dbias}};
}

std::unique_ptr<Layer> Linear::clone() const { return std::make_unique<Linear>(*this); }

// ----------------------------------------------------------------- Stack

Stack::Stack(const Stack& o) {
  layers_.reserve(o.layers_.size());
  for (const auto& l : o.layers_) layers_.push_back(l->clone());
}

Stack& Stack::operator=(const Stack& o) {
  if (this != &o) {
    layers_.clear();
    layers_.reserve(o.layers_.size());
    for (const auto& l : o.layers_) layers_.push_back(l->clone());
  }
  return *this;
}

Layer& Stack::add(std::unique_ptr<Layer> l) {
  layers_.push_back(std::move(l));
  return *layers_.back();
}

Tensor Stack::forward(const Tensor& x, Ctx& ctx) const {
  ctx.assign(layers_.size(), LayerCtx{});
  Tensor cur = x;
  for (std::size_t i = 0; i < layers_.size(); ++i) cur = layers_[i]->forward(cur, ctx[i]);
  return cur;
}

Tensor Stack::backward(const Tensor& grad_out, Ctx& ctx) {
  if (ctx.size() != layers_.size())
    throw std::invalid_argument("stack: backward called without a matching forward");
  Tensor cur = grad_out;
  for (std::size_t i = layers_.size(); i-- > 0;) cur = layers_[i]->backward(cur, ctx[i]);
  return cur;
}

std::vector<ParamView> Stack::params() {
  std::vector<ParamView> out;
  for (auto& l : layers_)
    for (auto& p : l->params()) out.push_back(p);
  return out;
}

void Stack::zero_grads() {
  for (auto& l : layers_) l->zero_grads();
}

// ------------------------------------------------------------------ init

void he_init(Conv2d& layer, Rng& rng) {
  const double s = std::sqrt(2.0 / static_cast<double>(layer.in_ch() * 9));
  for (double& v : layer.weight.data) v = rng.normal(0.0, s);
  layer.bias.fill(0.0);
}

void he_init(Linear& layer, Rng& rng) {
  const double s = std::sqrt(2.0 / static_cast<double>(layer.in_dim()));
  for (double& v : layer.weight.data) v = rng.normal(0.0, s);
  layer.bias.fill(0.0);
}

}  // namespace kwd
