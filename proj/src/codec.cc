// Copyright 2026 The TD-Conformer Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "tdc/codec.h"

#include <algorithm>
#include <cmath>

#include "tdc/error.h"
#include "tdc/kernels.h"
#include "tdc/layers.h"

namespace tdc {

std::size_t padded_length(std::size_t samples, std::size_t block_len,
                          std::size_t stride) {
  if (block_len == 0 || stride == 0) {
    throw ConfigurationError("codec: block_len and stride must be positive");
  }
  std::size_t padded = std::max(samples, block_len);
  const std::size_t rem = (padded - block_len) % stride;
  if (rem) padded += stride - rem;
  return padded;
}

std::size_t frame_count(std::size_t samples, std::size_t block_len,
                        std::size_t stride) {
  return (padded_length(samples, block_len, stride) - block_len) / stride + 1;
}

void EncoderParams::validate() const {
  require_rank(basis, 2, "encoder basis");
  if (basis.dim(0) != block_len) {
    throw DimensionError("encoder basis rows must equal block_len");
  }
  if (stride == 0 || block_len % stride != 0) {
    throw ConfigurationError("encoder stride must divide block_len");
  }
}

namespace {

Tensor padded_column(std::span<const double> waveform, std::size_t padded) {
  Tensor x = Tensor::matrix(padded, 1);
  std::copy(waveform.begin(), waveform.end(), x.data());
  return x;
}

}  // namespace

Tensor encode(std::span<const double> waveform, const EncoderParams& params) {
  params.validate();
  if (waveform.empty()) throw DimensionError("encode: empty waveform");
  const std::size_t n = params.channels();
  const Tensor x = padded_column(
      waveform, padded_length(waveform.size(), params.block_len, params.stride));
  return relu(conv1d(x, params.basis.reshaped({params.block_len, 1, n}),
                     params.stride));
}

std::vector<double> decode(const Tensor& features, const DecoderParams& params,
                           std::size_t length) {
  require_rank(features, 2, "decode features");
  const std::size_t n = params.basis.dim(0);
  if (features.cols() != n) {
    throw DimensionError("decode: features have " +
                         std::to_string(features.cols()) +
                         " channels, decoder expects " + std::to_string(n));
  }
  // Transposed-conv weight {K = L_BL, Cout = 1, Cin = N}.
  Tensor kernel({params.block_len, 1, n});
  for (std::size_t c = 0; c < n; ++c) {
    for (std::size_t k = 0; k < params.block_len; ++k) {
      kernel[k * n + c] = params.basis(c, k);
    }
  }
  const Tensor y = conv1d_transposed(features, kernel, params.stride);
  std::vector<double> out(length, 0.0);
  std::copy_n(y.data(), std::min(length, y.size()), out.begin());
  return out;
}

// ------------------------------------------------------------------ Encoder

Encoder::Encoder(std::size_t channels, std::size_t block_len, std::size_t stride,
                 Rng& rng)
    : block_len_(block_len), stride_(stride) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(block_len));
  basis_.value = random_uniform({block_len, channels}, rng, -bound, bound);
}

Tensor Encoder::forward(const Tensor& x, const RunMode&) {
  require_rank(x, 2, "encoder input");
  if (x.cols() != 1) throw DimensionError("encoder: expected a mono column");
  if (x.rows() == 0) throw DimensionError("encode: empty waveform");
  length_ = x.rows();
  padded_ = padded_column(x.values(), padded_length(length_, block_len_, stride_));
  const std::size_t n = basis_.value.dim(1);
  pre_activation_ = conv1d(padded_, basis_.value.reshaped({block_len_, 1, n}),
                           stride_);
  return relu(pre_activation_);
}

Tensor Encoder::backward(const Tensor& grad_out) {
  const std::size_t n = basis_.value.dim(1);
  const Tensor g_pre = relu_backward(pre_activation_, grad_out);
  ConvGrads g = conv1d_backward(padded_, basis_.value.reshaped({block_len_, 1, n}),
                                stride_, {}, g_pre);
  basis_.accumulate(g.weight.reshaped({block_len_, n}));
  Tensor gx = Tensor::matrix(length_, 1);
  std::copy_n(g.input.data(), length_, gx.data());
  return gx;
}

void Encoder::collect_parameters(const std::string& prefix, ParameterList& out) {
  basis_.name = join_name(prefix, "basis");
  out.push_back(&basis_);
}

EncoderParams Encoder::params() const {
  return {basis_.value, block_len_, stride_};
}

// ------------------------------------------------------------------ Decoder

Decoder::Decoder(std::size_t channels, std::size_t block_len, std::size_t stride,
                 Rng& rng)
    : block_len_(block_len), stride_(stride) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(channels));
  basis_.value = random_uniform({channels, block_len}, rng, -bound, bound);
}

Tensor Decoder::kernel() const {
  const std::size_t n = basis_.value.dim(0);
  Tensor k({block_len_, 1, n});
  for (std::size_t c = 0; c < n; ++c) {
    for (std::size_t j = 0; j < block_len_; ++j) {
      k[j * n + c] = basis_.value(c, j);
    }
  }
  return k;
}

Tensor Decoder::forward(const Tensor& features, std::size_t length) const {
  require_rank(features, 2, "decoder input");
  if (features.cols() != basis_.value.dim(0)) {
    throw DimensionError("decode: channel count mismatch");
  }
  const Tensor y = conv1d_transposed(features, kernel(), stride_);
  Tensor out = Tensor::matrix(length, 1);
  std::copy_n(y.data(), std::min(length, y.size()), out.data());
  return out;
}

Tensor Decoder::backward(const Tensor& features, const Tensor& grad_waveform) {
  const std::size_t full = (features.rows() - 1) * stride_ + block_len_;
  Tensor g_full = Tensor::matrix(full, 1);
  std::copy_n(grad_waveform.data(), std::min(full, grad_waveform.size()),
              g_full.data());
  const Tensor k = kernel();
  ConvGrads g = conv1d_transposed_backward(features, k, stride_, g_full);
  const std::size_t n = basis_.value.dim(0);
  Tensor g_basis({n, block_len_});
  for (std::size_t c = 0; c < n; ++c) {
    for (std::size_t j = 0; j < block_len_; ++j) {
      g_basis(c, j) = g.weight[j * n + c];
    }
  }
  basis_.accumulate(g_basis);
  return std::move(g.input);
}

void Decoder::collect_parameters(const std::string& prefix, ParameterList& out) {
  basis_.name = join_name(prefix, "basis");
  out.push_back(&basis_);
}

DecoderParams Decoder::params() const {
  return {basis_.value, block_len_, stride_};
}

}  // namespace tdc
