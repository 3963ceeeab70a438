// Copyright 2026 The TD-Conformer Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)
//
// Dense sequence kernels with explicit backward passes. All sequences are
// rank-2 tensors laid out frames x channels.
//
// Convolutions use cross-correlation semantics throughout (the kernel is not
// flipped):  y[t, o] = sum_k sum_i x_pad[t * stride + k, i] * w[k, i, o].

#ifndef TDC_KERNELS_H_
#define TDC_KERNELS_H_

#include <cstddef>
#include <cstdint>
#include <vector>

#include "tdc/tensor.h"

namespace tdc {

struct Padding {
  std::size_t left = 0;
  std::size_t right = 0;
};

// Counts multiply-accumulates issued by forward kernels on this thread while
// alive. Nested tallies each see the full count of their own scope.
class MacTally {
 public:
  MacTally();
  ~MacTally();
  MacTally(const MacTally&) = delete;
  MacTally& operator=(const MacTally&) = delete;

  std::uint64_t count() const;

 private:
  std::uint64_t start_;
};

namespace detail {
void add_macs(std::uint64_t n);
}

// ---------------------------------------------------------------- convolution

// floor((length + pad - kernel) / stride) + 1; throws DimensionError when the
// kernel does not fit in the padded input.
std::size_t conv1d_output_length(std::size_t length, std::size_t kernel,
                                 std::size_t stride, Padding pad);

struct ConvGrads {
  Tensor input;
  Tensor weight;
};

// x: {L, Cin}, w: {K, Cin, Cout} -> {L_out, Cout}
Tensor conv1d(const Tensor& x, const Tensor& w, std::size_t stride,
              Padding pad = {});
ConvGrads conv1d_backward(const Tensor& x, const Tensor& w, std::size_t stride,
                          Padding pad, const Tensor& grad_out);

// Adjoint of conv1d without padding. x: {L, Cin}, w: {K, Cout, Cin} ->
// {(L - 1) * stride + K, Cout}. The weight layout is that of a conv1d mapping
// Cout channels to Cin channels, so <conv1d(a, w), b> == <a, conv1d_transposed(b, w)>.
Tensor conv1d_transposed(const Tensor& x, const Tensor& w, std::size_t stride);
ConvGrads conv1d_transposed_backward(const Tensor& x, const Tensor& w,
                                     std::size_t stride, const Tensor& grad_out);

// Per-channel convolution with stride 1. x: {L, C}, w: {K, C}.
Tensor depthwise_conv1d(const Tensor& x, const Tensor& w, Padding pad);
ConvGrads depthwise_conv1d_backward(const Tensor& x, const Tensor& w,
                                    Padding pad, const Tensor& grad_out);

// "Same" padding for an odd or even kernel: left = (K - 1) / 2.
Padding same_padding(std::size_t kernel);

// ------------------------------------------------------------------- linear

struct LinearGrads {
  Tensor input;
  Tensor weight;
  Tensor bias;
};

// x: {L, Cin}, w: {Cin, Cout}, bias: {Cout} or empty.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias);
LinearGrads linear_backward(const Tensor& x, const Tensor& w, bool has_bias,
                            const Tensor& grad_out);

// ---------------------------------------------------------------- attention

struct AttentionCache {
  Tensor probs;  // {heads, L, L}, row-stochastic
};

struct AttentionGrads {
  Tensor queries;
  Tensor keys;
  Tensor values;
  Tensor rel_bias;
};

// Multi-head scaled dot-product attention. q, k, v: {L, D} with D divisible by
// heads; rel_bias is either empty or {heads, L, L} and is added to the scaled
// scores before the softmax.
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v,
                 std::size_t heads, const Tensor& rel_bias,
                 AttentionCache* cache = nullptr);
AttentionGrads attention_backward(const Tensor& q, const Tensor& k,
                                  const Tensor& v, std::size_t heads,
                                  const AttentionCache& cache,
                                  const Tensor& grad_out);

// ------------------------------------------------------------ normalization

enum class NormKind {
  kLayer,            // per frame, over channels
  kGroupPerChannel,  // per channel, over frames (groups == channels)
};

struct NormCache {
  Tensor normalized;
  std::vector<double> inv_std;
};

// Standardization without affine transform.
Tensor normalize(const Tensor& x, NormKind kind, double eps,
                 NormCache* cache = nullptr);
Tensor normalize_backward(NormKind kind, const NormCache& cache,
                          const Tensor& grad_out);

// y[t, c] = x[t, c] * gamma[c] + beta[c]
Tensor channel_affine(const Tensor& x, const Tensor& gamma, const Tensor& beta);

// -------------------------------------------------------------- activations

double sigmoid(double x);

Tensor relu(const Tensor& x);
Tensor relu_backward(const Tensor& x, const Tensor& grad_out);

// Single learned slope shared across channels.
Tensor prelu(const Tensor& x, double slope);
struct PreluGrads {
  Tensor input;
  double slope = 0.0;
};
PreluGrads prelu_backward(const Tensor& x, double slope, const Tensor& grad_out);

Tensor silu(const Tensor& x);
Tensor silu_backward(const Tensor& x, const Tensor& grad_out);

// Splits channels in half: first half * sigmoid(second half).
Tensor glu(const Tensor& x);
Tensor glu_backward(const Tensor& x, const Tensor& grad_out);

}  // namespace tdc

#endif  // TDC_KERNELS_H_
