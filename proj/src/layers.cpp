#include "fusenas/layers.hpp"

#include <algorithm>
#include <cmath>

#include "fusenas/errors.hpp"

namespace fusenas {

namespace {

constexpr double kNormEps = 1e-5;

void require(bool ok, const std::string& layer, const std::string& msg) {
  if (!ok) throw ValidationError(layer, msg);
}

}  // namespace

// ---------------------------------------------------------------- Chain

Tensor Chain::forward(const Tensor& x, bool training, DetRng& rng) {
  Tensor cur = x;
  for (auto& l : layers) cur = l->forward(cur, training, rng);
  return cur;
}

Tensor Chain::backward(const Tensor& grad_out) {
  Tensor g = grad_out;
  for (auto it = layers.rbegin(); it != layers.rend(); ++it) g = (*it)->backward(g);
  return g;
}

void Chain::collect_params(std::vector<Param*>& out) {
  for (auto& l : layers) l->collect_params(out);
}

void Chain::init_params(DetRng& rng) {
  for (auto& l : layers) l->init_params(rng);
}

std::vector<std::size_t> Chain::output_shape(std::vector<std::size_t> in) const {
  for (const auto& l : layers) in = l->output_shape(in);
  return in;
}

// ---------------------------------------------------------------- Conv1D

Conv1D::Conv1D(std::string name, std::size_t in_ch, std::size_t out_ch, std::size_t kernel,
               std::size_t stride, std::size_t dilation)
    : name_(std::move(name)),
      in_ch_(in_ch),
      out_ch_(out_ch),
      kernel_(kernel),
      stride_(stride),
      dilation_(dilation),
      w_(name_ + ".w", {out_ch, kernel, in_ch}),
      b_(name_ + ".b", {out_ch}) {}

void Conv1D::init_params(DetRng& rng) {
  const double scale = std::sqrt(2.0 / static_cast<double>(in_ch_ * kernel_));
  for (real& x : w_.value.v) x = static_cast<real>(rng.normal() * scale);
  b_.value.zero();
}

std::vector<std::size_t> Conv1D::output_shape(const std::vector<std::size_t>& in) const {
  require(in.size() == 2, name_, "conv1d expects rank-2 input [T,d], got " + Tensor::shape_str(in));
  require(in[1] == in_ch_, name_,
          "input channels " + std::to_string(in[1]) + " != declared " + std::to_string(in_ch_));
  return {(in[0] + stride_ - 1) / stride_, out_ch_};
}

Tensor Conv1D::forward(const Tensor& x, bool, DetRng&) {
  auto os = output_shape(x.shape);
  cached_in_ = x;
  const std::size_t t_in = x.shape[0], t_out = os[0];
  const std::size_t eff = (kernel_ - 1) * dilation_ + 1;
  const std::size_t total_pad = (t_out - 1) * stride_ + eff > t_in ? (t_out - 1) * stride_ + eff - t_in : 0;
  const long pad_left = static_cast<long>(total_pad / 2);

  Tensor out(os);
  for (std::size_t to = 0; to < t_out; ++to) {
    for (std::size_t co = 0; co < out_ch_; ++co) {
      real acc = b_.value.v[co];
      const real* wrow = &w_.value.v[co * kernel_ * in_ch_];
      for (std::size_t k = 0; k < kernel_; ++k) {
        const long ti = static_cast<long>(to * stride_ + k * dilation_) - pad_left;
        if (ti < 0 || ti >= static_cast<long>(t_in)) continue;
        const real* xrow = &x.v[static_cast<std::size_t>(ti) * in_ch_];
        const real* wk = wrow + k * in_ch_;
        real s = 0;
        for (std::size_t ci = 0; ci < in_ch_; ++ci) s += xrow[ci] * wk[ci];
        acc += s;
      }
      out.v[to * out_ch_ + co] = acc;
    }
  }
  return out;
}

Tensor Conv1D::backward(const Tensor& g) {
  if (cached_in_.v.empty()) throw StateError("backward before forward in " + name_);
  const Tensor& x = cached_in_;
  const std::size_t t_in = x.shape[0];
  const std::size_t t_out = g.shape[0];
  const std::size_t eff = (kernel_ - 1) * dilation_ + 1;
  const std::size_t total_pad = (t_out - 1) * stride_ + eff > t_in ? (t_out - 1) * stride_ + eff - t_in : 0;
  const long pad_left = static_cast<long>(total_pad / 2);

  Tensor gx(x.shape);
  for (std::size_t to = 0; to < t_out; ++to) {
    for (std::size_t co = 0; co < out_ch_; ++co) {
      const real go = g.v[to * out_ch_ + co];
      b_.grad.v[co] += go;
      real* wg = &w_.grad.v[co * kernel_ * in_ch_];
      const real* wv = &w_.value.v[co * kernel_ * in_ch_];
      for (std::size_t k = 0; k < kernel_; ++k) {
        const long ti = static_cast<long>(to * stride_ + k * dilation_) - pad_left;
        if (ti < 0 || ti >= static_cast<long>(t_in)) continue;
        const real* xrow = &x.v[static_cast<std::size_t>(ti) * in_ch_];
        real* gxrow = &gx.v[static_cast<std::size_t>(ti) * in_ch_];
        real* wgk = wg + k * in_ch_;
        const real* wvk = wv + k * in_ch_;
        for (std::size_t ci = 0; ci < in_ch_; ++ci) {
          wgk[ci] += go * xrow[ci];
          gxrow[ci] += go * wvk[ci];
        }
      }
    }
  }
  return gx;
}

void Conv1D::collect_params(std::vector<Param*>& out) {
  out.push_back(&w_);
  out.push_back(&b_);
}

// ---------------------------------------------------------------- Dense

Dense::Dense(std::string name, std::size_t in, std::size_t out)
    : name_(std::move(name)), in_(in), out_(out), w_(name_ + ".w", {out, in}), b_(name_ + ".b", {out}) {}

void Dense::init_params(DetRng& rng) {
  const double scale = std::sqrt(2.0 / static_cast<double>(in_));
  for (real& x : w_.value.v) x = static_cast<real>(rng.normal() * scale);
  b_.value.zero();
}

std::vector<std::size_t> Dense::output_shape(const std::vector<std::size_t>& in) const {
  require(in.size() == 1, name_, "dense expects rank-1 input, got " + Tensor::shape_str(in));
  require(in[0] == in_, name_,
          "input width " + std::to_string(in[0]) + " != declared " + std::to_string(in_));
  return {out_};
}

Tensor Dense::forward(const Tensor& x, bool, DetRng&) {
  output_shape(x.shape);
  cached_in_ = x;
  Tensor out({out_});
  for (std::size_t o = 0; o < out_; ++o) {
    const real* wrow = &w_.value.v[o * in_];
    real acc = b_.value.v[o];
    for (std::size_t i = 0; i < in_; ++i) acc += wrow[i] * x.v[i];
    out.v[o] = acc;
  }
  return out;
}

Tensor Dense::backward(const Tensor& g) {
  if (cached_in_.v.empty()) throw StateError("backward before forward in " + name_);
  Tensor gx({in_});
  for (std::size_t o = 0; o < out_; ++o) {
    const real go = g.v[o];
    b_.grad.v[o] += go;
    real* wg = &w_.grad.v[o * in_];
    const real* wv = &w_.value.v[o * in_];
    for (std::size_t i = 0; i < in_; ++i) {
      wg[i] += go * cached_in_.v[i];
      gx.v[i] += go * wv[i];
    }
  }
  return gx;
}

void Dense::collect_params(std::vector<Param*>& out) {
  out.push_back(&w_);
  out.push_back(&b_);
}

// ---------------------------------------------------------------- Flatten

Tensor Flatten::forward(const Tensor& x, bool, DetRng&) {
  cached_shape_ = x.shape;
  Tensor out = x;
  out.shape = {x.size()};
  return out;
}

Tensor Flatten::backward(const Tensor& g) {
  Tensor gx = g;
  gx.shape = cached_shape_;
  return gx;
}

std::vector<std::size_t> Flatten::output_shape(const std::vector<std::size_t>& in) const {
  return {Tensor::count(in)};
}

// ---------------------------------------------------------------- BatchNorm

BatchNorm::BatchNorm(std::string name, std::size_t channels)
    : name_(std::move(name)),
      channels_(channels),
      gain_(name_ + ".gain", {channels}),
      bias_(name_ + ".bias", {channels}) {
  for (real& g : gain_.value.v) g = 1;
}

std::vector<std::size_t> BatchNorm::output_shape(const std::vector<std::size_t>& in) const {
  require(in.size() == 2 && in[1] == channels_, name_,
          "batch-norm expects [T," + std::to_string(channels_) + "], got " + Tensor::shape_str(in));
  return in;
}

Tensor BatchNorm::forward(const Tensor& x, bool, DetRng&) {
  output_shape(x.shape);
  const std::size_t t = x.shape[0];
  cached_norm_ = Tensor(x.shape);
  cached_istd_.assign(channels_, 0);
  Tensor out(x.shape);
  for (std::size_t c = 0; c < channels_; ++c) {
    real mean = 0;
    for (std::size_t i = 0; i < t; ++i) mean += x.at(i, c);
    mean /= static_cast<real>(t);
    real var = 0;
    for (std::size_t i = 0; i < t; ++i) {
      const real d = x.at(i, c) - mean;
      var += d * d;
    }
    var /= static_cast<real>(t);
    const real istd = real(1) / std::sqrt(var + static_cast<real>(kNormEps));
    cached_istd_[c] = istd;
    for (std::size_t i = 0; i < t; ++i) {
      const real n = (x.at(i, c) - mean) * istd;
      cached_norm_.at(i, c) = n;
      out.at(i, c) = gain_.value.v[c] * n + bias_.value.v[c];
    }
  }
  return out;
}

Tensor BatchNorm::backward(const Tensor& g) {
  if (cached_norm_.v.empty()) throw StateError("backward before forward in " + name_);
  const std::size_t t = g.shape[0];
  Tensor gx(g.shape);
  for (std::size_t c = 0; c < channels_; ++c) {
    real sum_g = 0, sum_gn = 0;
    for (std::size_t i = 0; i < t; ++i) {
      const real go = g.at(i, c);
      sum_g += go;
      sum_gn += go * cached_norm_.at(i, c);
    }
    gain_.grad.v[c] += sum_gn;
    bias_.grad.v[c] += sum_g;
    const real scale = gain_.value.v[c] * cached_istd_[c] / static_cast<real>(t);
    for (std::size_t i = 0; i < t; ++i) {
      gx.at(i, c) = scale * (static_cast<real>(t) * g.at(i, c) - sum_g - cached_norm_.at(i, c) * sum_gn);
    }
  }
  return gx;
}

void BatchNorm::collect_params(std::vector<Param*>& out) {
  out.push_back(&gain_);
  out.push_back(&bias_);
}

// ---------------------------------------------------------------- LayerNorm

LayerNorm::LayerNorm(std::string name, std::size_t channels)
    : name_(std::move(name)),
      channels_(channels),
      gain_(name_ + ".gain", {channels}),
      bias_(name_ + ".bias", {channels}) {
  for (real& g : gain_.value.v) g = 1;
}

std::vector<std::size_t> LayerNorm::output_shape(const std::vector<std::size_t>& in) const {
  require(in.size() == 2 && in[1] == channels_, name_,
          "layer-norm expects [T," + std::to_string(channels_) + "], got " + Tensor::shape_str(in));
  return in;
}

Tensor LayerNorm::forward(const Tensor& x, bool, DetRng&) {
  output_shape(x.shape);
  const std::size_t t = x.shape[0];
  cached_norm_ = Tensor(x.shape);
  cached_istd_.assign(t, 0);
  Tensor out(x.shape);
  for (std::size_t i = 0; i < t; ++i) {
    real mean = 0;
    for (std::size_t c = 0; c < channels_; ++c) mean += x.at(i, c);
    mean /= static_cast<real>(channels_);
    real var = 0;
    for (std::size_t c = 0; c < channels_; ++c) {
      const real d = x.at(i, c) - mean;
      var += d * d;
    }
    var /= static_cast<real>(channels_);
    const real istd = real(1) / std::sqrt(var + static_cast<real>(kNormEps));
    cached_istd_[i] = istd;
    for (std::size_t c = 0; c < channels_; ++c) {
      const real n = (x.at(i, c) - mean) * istd;
      cached_norm_.at(i, c) = n;
      out.at(i, c) = gain_.value.v[c] * n + bias_.value.v[c];
    }
  }
  return out;
}

Tensor LayerNorm::backward(const Tensor& g) {
  if (cached_norm_.v.empty()) throw StateError("backward before forward in " + name_);
  const std::size_t t = g.shape[0];
  const real n = static_cast<real>(channels_);
  Tensor gx(g.shape);
  for (std::size_t i = 0; i < t; ++i) {
    real sum_h = 0, sum_hn = 0;
    for (std::size_t c = 0; c < channels_; ++c) {
      const real h = g.at(i, c) * gain_.value.v[c];
      sum_h += h;
      sum_hn += h * cached_norm_.at(i, c);
      gain_.grad.v[c] += g.at(i, c) * cached_norm_.at(i, c);
      bias_.grad.v[c] += g.at(i, c);
    }
    const real scale = cached_istd_[i] / n;
    for (std::size_t c = 0; c < channels_; ++c) {
      const real h = g.at(i, c) * gain_.value.v[c];
      gx.at(i, c) = scale * (n * h - sum_h - cached_norm_.at(i, c) * sum_hn);
    }
  }
  return gx;
}

void LayerNorm::collect_params(std::vector<Param*>& out) {
  out.push_back(&gain_);
  out.push_back(&bias_);
}

// ---------------------------------------------------------------- Activation

namespace {

constexpr double kInvSqrt2 = 0.7071067811865476;
constexpr double kInvSqrt2Pi = 0.3989422804014327;

inline double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); }
inline double gelu_grad(double x) {
  return 0.5 * (1.0 + std::erf(x * kInvSqrt2)) + x * kInvSqrt2Pi * std::exp(-0.5 * x * x);
}
inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

Tensor Activation::forward(const Tensor& x, bool, DetRng&) {
  cached_in_ = x;
  Tensor out = x;
  switch (kind_) {
    case ActKind::Gelu:
      for (real& v : out.v) v = static_cast<real>(gelu(v));
      break;
    case ActKind::Relu:
      for (real& v : out.v) v = v > 0 ? v : 0;
      break;
    case ActKind::Sigmoid:
      for (real& v : out.v) v = static_cast<real>(sigmoid(v));
      break;
  }
  return out;
}

Tensor Activation::backward(const Tensor& g) {
  if (cached_in_.v.empty()) throw StateError("backward before forward in " + name_);
  Tensor gx = g;
  for (std::size_t i = 0; i < gx.size(); ++i) {
    const real x = cached_in_.v[i];
    switch (kind_) {
      case ActKind::Gelu:
        gx.v[i] *= static_cast<real>(gelu_grad(x));
        break;
      case ActKind::Relu:
        gx.v[i] *= x > 0 ? real(1) : real(0);
        break;
      case ActKind::Sigmoid: {
        const real s = static_cast<real>(sigmoid(x));
        gx.v[i] *= s * (1 - s);
        break;
      }
    }
  }
  return gx;
}

// ---------------------------------------------------------------- Softmax

Tensor Softmax::forward(const Tensor& x, bool, DetRng&) {
  Tensor out = x;
  real mx = out.v.empty() ? 0 : out.v[0];
  for (real v : out.v) mx = std::max(mx, v);
  real sum = 0;
  for (real& v : out.v) {
    v = std::exp(v - mx);
    sum += v;
  }
  for (real& v : out.v) v /= sum;
  cached_out_ = out;
  return out;
}

Tensor Softmax::backward(const Tensor& g) {
  if (cached_out_.v.empty()) throw StateError("backward before forward in " + name_);
  real dot = 0;
  for (std::size_t i = 0; i < g.size(); ++i) dot += g.v[i] * cached_out_.v[i];
  Tensor gx = g;
  for (std::size_t i = 0; i < gx.size(); ++i) gx.v[i] = cached_out_.v[i] * (g.v[i] - dot);
  return gx;
}

// ---------------------------------------------------------------- Dropout

Tensor Dropout::forward(const Tensor& x, bool training, DetRng& rng) {
  if (!training || rate_ <= 0.0) {
    mask_.assign(x.size(), 1);
    return x;
  }
  const real keep = static_cast<real>(1.0 - rate_);
  mask_.resize(x.size());
  Tensor out = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const bool kept = rng.uniform() >= rate_;
    mask_[i] = kept ? real(1) / keep : real(0);
    out.v[i] *= mask_[i];
  }
  return out;
}

Tensor Dropout::backward(const Tensor& g) {
  if (mask_.size() != g.size()) throw StateError("backward before forward in " + name_);
  Tensor gx = g;
  for (std::size_t i = 0; i < gx.size(); ++i) gx.v[i] *= mask_[i];
  return gx;
}

// ---------------------------------------------------------------- GlobalAvgPool

std::vector<std::size_t> GlobalAvgPool::output_shape(const std::vector<std::size_t>& in) const {
  require(in.size() == 2, name_, "pooling expects rank-2 input, got " + Tensor::shape_str(in));
  return {in[1]};
}

Tensor GlobalAvgPool::forward(const Tensor& x, bool, DetRng&) {
  output_shape(x.shape);
  cached_t_ = x.shape[0];
  const std::size_t c = x.shape[1];
  Tensor out({c});
  for (std::size_t i = 0; i < cached_t_; ++i)
    for (std::size_t j = 0; j < c; ++j) out.v[j] += x.at(i, j);
  for (real& v : out.v) v /= static_cast<real>(cached_t_);
  return out;
}

Tensor GlobalAvgPool::backward(const Tensor& g) {
  if (cached_t_ == 0) throw StateError("backward before forward in " + name_);
  const std::size_t c = g.size();
  Tensor gx({cached_t_, c});
  for (std::size_t i = 0; i < cached_t_; ++i)
    for (std::size_t j = 0; j < c; ++j) gx.at(i, j) = g.v[j] / static_cast<real>(cached_t_);
  return gx;
}

// ---------------------------------------------------------------- ResidualWrap

ResidualWrap::ResidualWrap(std::string name, Chain inner, LayerPtr projection)
    : name_(std::move(name)), inner_(std::move(inner)), proj_(std::move(projection)) {}

std::vector<std::size_t> ResidualWrap::output_shape(const std::vector<std::size_t>& in) const {
  auto out = inner_.output_shape(in);
  auto skip = proj_ ? proj_->output_shape(in) : in;
  require(out == skip, name_, "residual shapes differ: " + Tensor::shape_str(out) + " vs " +
                                  Tensor::shape_str(skip));
  return out;
}

Tensor ResidualWrap::forward(const Tensor& x, bool training, DetRng& rng) {
  Tensor main = inner_.forward(x, training, rng);
  Tensor skip = proj_ ? proj_->forward(x, training, rng) : x;
  if (!main.same_shape(skip))
    throw ValidationError(name_, "residual shapes differ: " + Tensor::shape_str(main.shape) +
                                     " vs " + Tensor::shape_str(skip.shape));
  for (std::size_t i = 0; i < main.size(); ++i) main.v[i] += skip.v[i];
  return main;
}

Tensor ResidualWrap::backward(const Tensor& g) {
  Tensor gx = inner_.backward(g);
  Tensor gs = proj_ ? proj_->backward(g) : g;
  for (std::size_t i = 0; i < gx.size(); ++i) gx.v[i] += gs.v[i];
  return gx;
}

void ResidualWrap::collect_params(std::vector<Param*>& out) {
  inner_.collect_params(out);
  if (proj_) proj_->collect_params(out);
}

void ResidualWrap::init_params(DetRng& rng) {
  inner_.init_params(rng);
  if (proj_) proj_->init_params(rng);
}

// ---------------------------------------------------------------- BranchConcat

BranchConcat::BranchConcat(std::string name, std::vector<Chain> branches)
    : name_(std::move(name)), branches_(std::move(branches)) {}

std::vector<std::size_t> BranchConcat::output_shape(const std::vector<std::size_t>& in) const {
  std::size_t total = 0, t = 0;
  for (const auto& b : branches_) {
    auto os = b.output_shape(in);
    require(os.size() == 2, name_, "branch output must be rank 2");
    if (t == 0) t = os[0];
    require(os[0] == t, name_, "branch time lengths differ");
    total += os[1];
  }
  return {t, total};
}

Tensor BranchConcat::forward(const Tensor& x, bool training, DetRng& rng) {
  std::vector<Tensor> outs;
  outs.reserve(branches_.size());
  branch_ch_.clear();
  std::size_t total = 0;
  for (auto& b : branches_) {
    outs.push_back(b.forward(x, training, rng));
    branch_ch_.push_back(outs.back().shape[1]);
    total += outs.back().shape[1];
  }
  cached_t_ = outs.front().shape[0];
  Tensor out({cached_t_, total});
  std::size_t off = 0;
  for (const auto& o : outs) {
    for (std::size_t i = 0; i < cached_t_; ++i)
      for (std::size_t j = 0; j < o.shape[1]; ++j) out.at(i, off + j) = o.at(i, j);
    off += o.shape[1];
  }
  return out;
}

Tensor BranchConcat::backward(const Tensor& g) {
  if (cached_t_ == 0) throw StateError("backward before forward in " + name_);
  Tensor gx;
  std::size_t off = 0;
  for (std::size_t bi = 0; bi < branches_.size(); ++bi) {
    Tensor gb({cached_t_, branch_ch_[bi]});
    for (std::size_t i = 0; i < cached_t_; ++i)
      for (std::size_t j = 0; j < branch_ch_[bi]; ++j) gb.at(i, j) = g.at(i, off + j);
    off += branch_ch_[bi];
    Tensor gpart = branches_[bi].backward(gb);
    if (gx.v.empty()) {
      gx = gpart;
    } else {
      for (std::size_t i = 0; i < gx.size(); ++i) gx.v[i] += gpart.v[i];
    }
  }
  return gx;
}

void BranchConcat::collect_params(std::vector<Param*>& out) {
  for (auto& b : branches_) b.collect_params(out);
}

void BranchConcat::init_params(DetRng& rng) {
  for (auto& b : branches_) b.init_params(rng);
}

}  // namespace fusenas
