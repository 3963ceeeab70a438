// Copyright 2026 The TD-Conformer Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "tdc/layers.h"

#include <cmath>

#include "tdc/error.h"

namespace tdc {

namespace {

// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)).
Tensor fan_in_uniform(Shape shape, std::size_t fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  return random_uniform(std::move(shape), rng, -bound, bound);
}

void push(ParameterList& out, const std::string& prefix, Parameter& p,
          const char* name) {
  p.name = join_name(prefix, name);
  out.push_back(&p);
}

}  // namespace

// ------------------------------------------------------------------ Linear

Linear::Linear(std::size_t in, std::size_t out, Rng& rng, bool bias)
    : has_bias_(bias) {
  weight_.value = fan_in_uniform({in, out}, in, rng);
  if (bias) bias_.value = fan_in_uniform({out}, in, rng);
}

Tensor Linear::forward(const Tensor& x, const RunMode&) {
  input_ = x;
  return linear(x, weight_.value, bias_.value);
}

Tensor Linear::backward(const Tensor& grad_out) {
  LinearGrads g = linear_backward(input_, weight_.value, has_bias_, grad_out);
  weight_.accumulate(g.weight);
  if (has_bias_) bias_.accumulate(g.bias);
  return std::move(g.input);
}

void Linear::collect_parameters(const std::string& prefix, ParameterList& out) {
  push(out, prefix, weight_, "weight");
  if (has_bias_) push(out, prefix, bias_, "bias");
}

// -------------------------------------------------------------------- Norm

Norm::Norm(NormKind kind, std::size_t channels, double eps)
    : kind_(kind), eps_(eps) {
  gamma_.value = Tensor({channels}, 1.0);
  beta_.value = Tensor({channels}, 0.0);
}

Tensor Norm::forward(const Tensor& x, const RunMode& mode) {
  standardized_ =
      kind_ == NormKind::kLayer || mode.group_norm_statistics;
  if (standardized_) {
    normalize(x, kind_, eps_, &cache_);
  } else {
    cache_.normalized = x;
    cache_.inv_std.clear();
  }
  return channel_affine(cache_.normalized, gamma_.value, beta_.value);
}

Tensor Norm::backward(const Tensor& grad_out) {
  const Tensor& xhat = cache_.normalized;
  const std::size_t len = xhat.rows(), ch = xhat.cols();
  Tensor g_gamma({ch}), g_beta({ch});
  Tensor g_xhat(xhat.shape());
  for (std::size_t t = 0; t < len; ++t) {
    const auto go = grad_out.row(t);
    const auto xh = xhat.row(t);
    auto gx = g_xhat.row(t);
    for (std::size_t c = 0; c < ch; ++c) {
      g_gamma[c] += go[c] * xh[c];
      g_beta[c] += go[c];
      gx[c] = go[c] * gamma_.value[c];
    }
  }
  gamma_.accumulate(g_gamma);
  beta_.accumulate(g_beta);
  if (!standardized_) return g_xhat;
  return normalize_backward(kind_, cache_, g_xhat);
}

void Norm::collect_parameters(const std::string& prefix, ParameterList& out) {
  push(out, prefix, gamma_, "weight");
  push(out, prefix, beta_, "bias");
}

// ------------------------------------------------------------------- PRelu

PRelu::PRelu(double slope) { slope_.value = Tensor({1}, slope); }

Tensor PRelu::forward(const Tensor& x, const RunMode&) {
  input_ = x;
  return prelu(x, slope_.value[0]);
}

Tensor PRelu::backward(const Tensor& grad_out) {
  PreluGrads g = prelu_backward(input_, slope_.value[0], grad_out);
  slope_.accumulate(Tensor({1}, g.slope));
  return std::move(g.input);
}

void PRelu::collect_parameters(const std::string& prefix, ParameterList& out) {
  push(out, prefix, slope_, "slope");
}

// -------------------------------------------------------------- Activation

Tensor Activation::forward(const Tensor& x, const RunMode&) {
  input_ = x;
  switch (kind_) {
    case ActivationKind::kRelu: return relu(x);
    case ActivationKind::kSilu: return silu(x);
    case ActivationKind::kGlu: return glu(x);
  }
  return x;
}

Tensor Activation::backward(const Tensor& grad_out) {
  switch (kind_) {
    case ActivationKind::kRelu: return relu_backward(input_, grad_out);
    case ActivationKind::kSilu: return silu_backward(input_, grad_out);
    case ActivationKind::kGlu: return glu_backward(input_, grad_out);
  }
  return grad_out;
}

// ----------------------------------------------------------------- Dropout

Tensor Dropout::forward(const Tensor& x, const RunMode& mode) {
  if (!mode.training || rate_ <= 0.0) {
    mask_ = Tensor();
    return x;
  }
  if (!mode.rng) throw ConfigurationError("dropout: training requires an rng");
  std::bernoulli_distribution keep(1.0 - rate_);
  const double scale = 1.0 / (1.0 - rate_);
  mask_ = Tensor(x.shape());
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    mask_[i] = keep(*mode.rng) ? scale : 0.0;
    y[i] = x[i] * mask_[i];
  }
  return y;
}

Tensor Dropout::backward(const Tensor& grad_out) {
  if (mask_.empty()) return grad_out;
  Tensor g(grad_out.shape());
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = grad_out[i] * mask_[i];
  return g;
}

// ----------------------------------------------------------- DepthwiseConv

DepthwiseConv::DepthwiseConv(std::size_t channels, std::size_t kernel, Rng& rng)
    : pad_(same_padding(kernel)) {
  weight_.value = fan_in_uniform({kernel, channels}, kernel, rng);
  bias_.value = fan_in_uniform({channels}, kernel, rng);
}

Tensor DepthwiseConv::forward(const Tensor& x, const RunMode&) {
  input_ = x;
  Tensor y = depthwise_conv1d(x, weight_.value, pad_);
  const std::size_t ch = y.cols();
  for (std::size_t t = 0; t < y.rows(); ++t) {
    auto row = y.row(t);
    for (std::size_t c = 0; c < ch; ++c) row[c] += bias_.value[c];
  }
  return y;
}

Tensor DepthwiseConv::backward(const Tensor& grad_out) {
  ConvGrads g = depthwise_conv1d_backward(input_, weight_.value, pad_, grad_out);
  weight_.accumulate(g.weight);
  Tensor g_bias({grad_out.cols()});
  for (std::size_t t = 0; t < grad_out.rows(); ++t) {
    const auto row = grad_out.row(t);
    for (std::size_t c = 0; c < row.size(); ++c) g_bias[c] += row[c];
  }
  bias_.accumulate(g_bias);
  return std::move(g.input);
}

void DepthwiseConv::collect_parameters(const std::string& prefix,
                                       ParameterList& out) {
  push(out, prefix, weight_, "weight");
  push(out, prefix, bias_, "bias");
}

// -------------------------------------------------------------------- Conv

namespace {

void add_bias(Tensor& y, const Tensor& bias) {
  const std::size_t ch = y.cols();
  for (std::size_t t = 0; t < y.rows(); ++t) {
    auto row = y.row(t);
    for (std::size_t c = 0; c < ch; ++c) row[c] += bias[c];
  }
}

Tensor column_sums(const Tensor& g) {
  Tensor s({g.cols()});
  for (std::size_t t = 0; t < g.rows(); ++t) {
    const auto row = g.row(t);
    for (std::size_t c = 0; c < row.size(); ++c) s[c] += row[c];
  }
  return s;
}

}  // namespace

Conv::Conv(std::size_t in, std::size_t out, std::size_t kernel,
           std::size_t stride, Padding pad, Rng& rng, bool bias)
    : stride_(stride), pad_(pad), has_bias_(bias) {
  weight_.value = fan_in_uniform({kernel, in, out}, kernel * in, rng);
  if (bias) bias_.value = fan_in_uniform({out}, kernel * in, rng);
}

Tensor Conv::forward(const Tensor& x, const RunMode&) {
  input_ = x;
  Tensor y = conv1d(x, weight_.value, stride_, pad_);
  if (has_bias_) add_bias(y, bias_.value);
  return y;
}

Tensor Conv::backward(const Tensor& grad_out) {
  ConvGrads g = conv1d_backward(input_, weight_.value, stride_, pad_, grad_out);
  weight_.accumulate(g.weight);
  if (has_bias_) bias_.accumulate(column_sums(grad_out));
  return std::move(g.input);
}

void Conv::collect_parameters(const std::string& prefix, ParameterList& out) {
  push(out, prefix, weight_, "weight");
  if (has_bias_) push(out, prefix, bias_, "bias");
}

// ---------------------------------------------------------- TransposedConv

TransposedConv::TransposedConv(std::size_t in, std::size_t out,
                               std::size_t kernel, std::size_t stride, Rng& rng,
                               bool bias)
    : stride_(stride), has_bias_(bias) {
  weight_.value = fan_in_uniform({kernel, out, in}, in, rng);
  if (bias) bias_.value = fan_in_uniform({out}, in, rng);
}

Tensor TransposedConv::forward(const Tensor& x, const RunMode&) {
  input_ = x;
  Tensor y = conv1d_transposed(x, weight_.value, stride_);
  if (has_bias_) add_bias(y, bias_.value);
  return y;
}

Tensor TransposedConv::backward(const Tensor& grad_out) {
  ConvGrads g =
      conv1d_transposed_backward(input_, weight_.value, stride_, grad_out);
  weight_.accumulate(g.weight);
  if (has_bias_) bias_.accumulate(column_sums(grad_out));
  return std::move(g.input);
}

void TransposedConv::collect_parameters(const std::string& prefix,
                                        ParameterList& out) {
  push(out, prefix, weight_, "weight");
  if (has_bias_) push(out, prefix, bias_, "bias");
}

// -------------------------------------------------------------- Sequential

Tensor Sequential::forward(const Tensor& x, const RunMode& mode) {
  Tensor y = x;
  for (auto& [name, m] : children_) y = m->forward(y, mode);
  return y;
}

Tensor Sequential::backward(const Tensor& grad_out) {
  Tensor g = grad_out;
  for (auto it = children_.rbegin(); it != children_.rend(); ++it) {
    g = it->second->backward(g);
  }
  return g;
}

void Sequential::collect_parameters(const std::string& prefix,
                                    ParameterList& out) {
  for (auto& [name, m] : children_) {
    m->collect_parameters(join_name(prefix, name), out);
  }
}

}  // namespace tdc
