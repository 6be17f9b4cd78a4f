#pragma once

#include <memory>
#include <string>
#include <vector>

#include "fusenas/rng.hpp"
#include "fusenas/tensor.hpp"

namespace fusenas {

struct Param {
  std::string name;
  Tensor value;
  Tensor grad;

  Param(std::string n, std::vector<std::size_t> shape)
      : name(std::move(n)), value(shape), grad(std::move(shape)) {}
};

// One differentiable node in a chain. forward() caches whatever backward()
// needs; backward() consumes the cache and accumulates parameter gradients.
class Layer {
 public:
  virtual ~Layer() = default;
  virtual Tensor forward(const Tensor& x, bool training, DetRng& rng) = 0;
  virtual Tensor backward(const Tensor& grad_out) = 0;
  virtual void collect_params(std::vector<Param*>& out) {}
  virtual void init_params(DetRng& rng) {}
  virtual std::vector<std::size_t> output_shape(const std::vector<std::size_t>& in) const = 0;
  virtual std::string name() const = 0;
};

using LayerPtr = std::unique_ptr<Layer>;

// Sequential composition used by ComputeGraph and by the composite layers.
struct Chain {
  std::vector<LayerPtr> layers;

  Tensor forward(const Tensor& x, bool training, DetRng& rng);
  Tensor backward(const Tensor& grad_out);
  void collect_params(std::vector<Param*>& out);
  void init_params(DetRng& rng);
  std::vector<std::size_t> output_shape(std::vector<std::size_t> in) const;
};

class Conv1D : public Layer {
 public:
  Conv1D(std::string name, std::size_t in_ch, std::size_t out_ch, std::size_t kernel,
         std::size_t stride = 1, std::size_t dilation = 1);
  Tensor forward(const Tensor& x, bool training, DetRng& rng) override;
  Tensor backward(const Tensor& grad_out) override;
  void collect_params(std::vector<Param*>& out) override;
  std::vector<std::size_t> output_shape(const std::vector<std::size_t>& in) const override;
  std::string name() const override { return name_; }

  void init_params(DetRng& rng) override;
  std::size_t out_channels() const { return out_ch_; }

 private:
  std::string name_;
  std::size_t in_ch_, out_ch_, kernel_, stride_, dilation_;
  Param w_;  // [out, kernel, in]
  Param b_;  // [out]
  Tensor cached_in_;
};

class Dense : public Layer {
 public:
  Dense(std::string name, std::size_t in, std::size_t out);
  Tensor forward(const Tensor& x, bool training, DetRng& rng) override;
  Tensor backward(const Tensor& grad_out) override;
  void collect_params(std::vector<Param*>& out) override;
  std::vector<std::size_t> output_shape(const std::vector<std::size_t>& in) const override;
  std::string name() const override { return name_; }

  void init_params(DetRng& rng) override;
  std::size_t out_features() const { return out_; }
  const Param& weights() const { return w_; }
  const Param& bias() const { return b_; }

 private:
  std::string name_;
  std::size_t in_, out_;
  Param w_;  // [out, in]
  Param b_;  // [out]
  Tensor cached_in_;
};

class Flatten : public Layer {
 public:
  explicit Flatten(std::string name) : name_(std::move(name)) {}
  Tensor forward(const Tensor& x, bool training, DetRng& rng) override;
  Tensor backward(const Tensor& grad_out) override;
  std::vector<std::size_t> output_shape(const std::vector<std::size_t>& in) const override;
  std::string name() const override { return name_; }

 private:
  std::string name_;
  std::vector<std::size_t> cached_shape_;
};

// Per-channel normalization over the time axis of one sample (statistics are
// never shared across the batch, keeping per-sample evaluation exact).
class BatchNorm : public Layer {
 public:
  BatchNorm(std::string name, std::size_t channels);
  Tensor forward(const Tensor& x, bool training, DetRng& rng) override;
  Tensor backward(const Tensor& grad_out) override;
  void collect_params(std::vector<Param*>& out) override;
  std::vector<std::size_t> output_shape(const std::vector<std::size_t>& in) const override;
  std::string name() const override { return name_; }

 private:
  std::string name_;
  std::size_t channels_;
  Param gain_, bias_;
  Tensor cached_norm_;             // normalized pre-gain values
  std::vector<real> cached_istd_;  // 1/std per channel
};

// Per-time-step normalization across channels.
class LayerNorm : public Layer {
 public:
  LayerNorm(std::string name, std::size_t channels);
  Tensor forward(const Tensor& x, bool training, DetRng& rng) override;
  Tensor backward(const Tensor& grad_out) override;
  void collect_params(std::vector<Param*>& out) override;
  std::vector<std::size_t> output_shape(const std::vector<std::size_t>& in) const override;
  std::string name() const override { return name_; }

 private:
  std::string name_;
  std::size_t channels_;
  Param gain_, bias_;
  Tensor cached_norm_;
  std::vector<real> cached_istd_;  // per time step
};

enum class ActKind { Gelu, Relu, Sigmoid };

class Activation : public Layer {
 public:
  Activation(std::string name, ActKind kind) : name_(std::move(name)), kind_(kind) {}
  Tensor forward(const Tensor& x, bool training, DetRng& rng) override;
  Tensor backward(const Tensor& grad_out) override;
  std::vector<std::size_t> output_shape(const std::vector<std::size_t>& in) const override { return in; }
  std::string name() const override { return name_; }

 private:
  std::string name_;
  ActKind kind_;
  Tensor cached_in_;
};

class Softmax : public Layer {
 public:
  explicit Softmax(std::string name) : name_(std::move(name)) {}
  Tensor forward(const Tensor& x, bool training, DetRng& rng) override;
  Tensor backward(const Tensor& grad_out) override;
  std::vector<std::size_t> output_shape(const std::vector<std::size_t>& in) const override { return in; }
  std::string name() const override { return name_; }

 private:
  std::string name_;
  Tensor cached_out_;
};

// Inverted dropout; identity when not training or rate == 0.
class Dropout : public Layer {
 public:
  Dropout(std::string name, double rate) : name_(std::move(name)), rate_(rate) {}
  Tensor forward(const Tensor& x, bool training, DetRng& rng) override;
  Tensor backward(const Tensor& grad_out) override;
  std::vector<std::size_t> output_shape(const std::vector<std::size_t>& in) const override { return in; }
  std::string name() const override { return name_; }

 private:
  std::string name_;
  double rate_;
  std::vector<real> mask_;
};

// Global average pooling over the time axis: [T, C] -> [C].
class GlobalAvgPool : public Layer {
 public:
  explicit GlobalAvgPool(std::string name) : name_(std::move(name)) {}
  Tensor forward(const Tensor& x, bool training, DetRng& rng) override;
  Tensor backward(const Tensor& grad_out) override;
  std::vector<std::size_t> output_shape(const std::vector<std::size_t>& in) const override;
  std::string name() const override { return name_; }

 private:
  std::string name_;
  std::size_t cached_t_ = 0;
};

// y = inner(x) + proj(x); proj is a 1x1 conv when channel counts differ,
// identity otherwise. Stride inside the inner chain must preserve T.
class ResidualWrap : public Layer {
 public:
  ResidualWrap(std::string name, Chain inner, LayerPtr projection);
  Tensor forward(const Tensor& x, bool training, DetRng& rng) override;
  Tensor backward(const Tensor& grad_out) override;
  void collect_params(std::vector<Param*>& out) override;
  void init_params(DetRng& rng) override;
  std::vector<std::size_t> output_shape(const std::vector<std::size_t>& in) const override;
  std::string name() const override { return name_; }

 private:
  std::string name_;
  Chain inner_;
  LayerPtr proj_;  // may be null (identity skip)
};

// Parallel branches re-merged by channel concatenation: [T, C_i] -> [T, sum C_i].
class BranchConcat : public Layer {
 public:
  BranchConcat(std::string name, std::vector<Chain> branches);
  Tensor forward(const Tensor& x, bool training, DetRng& rng) override;
  Tensor backward(const Tensor& grad_out) override;
  void collect_params(std::vector<Param*>& out) override;
  void init_params(DetRng& rng) override;
  std::vector<std::size_t> output_shape(const std::vector<std::size_t>& in) const override;
  std::string name() const override { return name_; }

 private:
  std::string name_;
  std::vector<Chain> branches_;
  std::vector<std::size_t> branch_ch_;
  std::size_t cached_t_ = 0;
};

}  // namespace fusenas
