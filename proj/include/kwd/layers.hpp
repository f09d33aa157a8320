#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "kwd/rng.hpp"
#include "kwd/tensor.hpp"

namespace kwd {

// One named parameter with its gradient accumulator.
struct ParamView {
  std::string name;
  Tensor* value = nullptr;
  Tensor* grad = nullptr;
};

// Forward-pass state consumed by the matching backward call. Each forward
// fills its own ctx, so several live activations can coexist (e.g. the two
// query branches reuse one encoder and are backpropagated one after the
// other without re-running forward).
struct LayerCtx {
  bool ready = false;
  Tensor input;                       // cached input where backward needs it
  Tensor cols;                        // conv im2col buffer
  std::vector<std::uint32_t> argmax;  // maxpool winner offsets
  std::vector<std::size_t> in_shape;
  std::vector<std::size_t> out_shape;
};

class Layer {
 public:
  explicit Layer(std::string name) : name_(std::move(name)) {}
  virtual ~Layer() = default;

  const std::string& name() const { return name_; }
  virtual std::string kind() const = 0;
  virtual Tensor forward(const Tensor& x, LayerCtx& ctx) const = 0;
  // Accumulates parameter gradients (if any) and returns grad w.r.t. input.
  virtual Tensor backward(const Tensor& grad_out, LayerCtx& ctx) = 0;
  virtual std::vector<ParamView> params() { return {}; }
  virtual std::unique_ptr<Layer> clone() const = 0;

  void zero_grads();

 private:
  std::string name_;
};

// 3x3 convolution, stride 1, zero padding 1, with bias. Spatial size is
// preserved. Implemented as im2col followed by one matrix product.
class Conv2d final : public Layer {
 public:
  Conv2d(std::string name, std::size_t in_ch, std::size_t out_ch);

  std::string kind() const override { return "conv2d"; }
  Tensor forward(const Tensor& x, LayerCtx& ctx) const override;
  Tensor backward(const Tensor& grad_out, LayerCtx& ctx) override;
  std::vector<ParamView> params() override;
  std::unique_ptr<Layer> clone() const override;

  std::size_t in_ch() const { return in_ch_; }
  std::size_t out_ch() const { return out_ch_; }
  Tensor weight;  // [out_ch, in_ch, 3, 3]
  Tensor bias;    // [out_ch]
  Tensor dweight;
  Tensor dbias;

 private:
  std::size_t in_ch_, out_ch_;
};

class Relu final : public Layer {
 public:
  explicit Relu(std::string name) : Layer(std::move(name)) {}
  std::string kind() const override { return "relu"; }
  Tensor forward(const Tensor& x, LayerCtx& ctx) const override;
  Tensor backward(const Tensor& grad_out, LayerCtx& ctx) override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Relu>(*this); }
};

// 2x2 max pooling, stride 2. Odd trailing rows/columns are dropped. Ties go
// to the first element in scan order; the winner index is cached so backward
// routes the gradient to exactly one input cell.
class MaxPool2 final : public Layer {
 public:
  explicit MaxPool2(std::string name) : Layer(std::move(name)) {}
  std::string kind() const override { return "maxpool2"; }
  Tensor forward(const Tensor& x, LayerCtx& ctx) const override;
  Tensor backward(const Tensor& grad_out, LayerCtx& ctx) override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<MaxPool2>(*this); }
};

class GlobalAvgPool final : public Layer {
 public:
  explicit GlobalAvgPool(std::string name) : Layer(std::move(name)) {}
  std::string kind() const override { return "gap"; }
  Tensor forward(const Tensor& x, LayerCtx& ctx) const override;
  Tensor backward(const Tensor& grad_out, LayerCtx& ctx) override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<GlobalAvgPool>(*this); }
};

class Linear final : public Layer {
 public:
  Linear(std::string name, std::size_t in_dim, std::size_t out_dim);
  std::string kind() const override { return "linear"; }
  Tensor forward(const Tensor& x, LayerCtx& ctx) const override;
  Tensor backward(const Tensor& grad_out, LayerCtx& ctx) override;
  std::vector<ParamView> params() override;
  std::unique_ptr<Layer> clone() const override;

  std::size_t in_dim() const { return in_dim_; }
  std::size_t out_dim() const { return out_dim_; }
  Tensor weight;  // [out_dim, in_dim]
  Tensor bias;    // [out_dim]
  Tensor dweight;
  Tensor dbias;

 private:
  std::size_t in_dim_, out_dim_;
};

// Sequential container.
class Stack {
 public:
  using Ctx = std::vector<LayerCtx>;

  Stack() = default;
  Stack(const Stack& o);
  Stack& operator=(const Stack& o);
  Stack(Stack&&) = default;
  Stack& operator=(Stack&&) = default;

  Layer& add(std::unique_ptr<Layer> l);
  std::size_t size() const { return layers_.size(); }
  Layer& layer(std::size_t i) { return *layers_[i]; }
  const Layer& layer(std::size_t i) const { return *layers_[i]; }

  Tensor forward(const Tensor& x, Ctx& ctx) const;
  Tensor backward(const Tensor& grad_out, Ctx& ctx);
  std::vector<ParamView> params();
  void zero_grads();

 private:
  std::vector<std::unique_ptr<Layer>> layers_;
};

// He-normal initialisation: weights ~ N(0, sqrt(2/fan_in)), biases zero.
void he_init(Conv2d& layer, Rng& rng);
void he_init(Linear& layer, Rng& rng);

}  // namespace kwd
