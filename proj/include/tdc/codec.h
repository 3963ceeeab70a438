// Copyright 2026 The TD-Conformer Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)
//
// Learnable filterbank encoder and transposed-convolution decoder.
//
// The waveform is zero-padded at the tail so that (T - L_BL) is a multiple of
// the stride, framed into L_x = (T_pad - L_BL) / stride + 1 overlapping blocks,
// projected onto N basis vectors and passed through a ReLU. The decoder
// overlap-adds N synthesis filters and trims back to the unpadded length.

#ifndef TDC_CODEC_H_
#define TDC_CODEC_H_

#include <span>
#include <vector>

#include "tdc/autodiff.h"
#include "tdc/tensor.h"

namespace tdc {

std::size_t padded_length(std::size_t samples, std::size_t block_len,
                          std::size_t stride);
std::size_t frame_count(std::size_t samples, std::size_t block_len,
                        std::size_t stride);

struct EncoderParams {
  Tensor basis;  // {L_BL, N}
  std::size_t block_len = 16;
  std::size_t stride = 8;

  std::size_t channels() const { return basis.empty() ? 0 : basis.dim(1); }
  void validate() const;
};

struct DecoderParams {
  Tensor basis;  // {N, L_BL}: row n is the synthesis filter of channel n
  std::size_t block_len = 16;
  std::size_t stride = 8;
};

// waveform -> {L_x, N}, entries >= 0
Tensor encode(std::span<const double> waveform, const EncoderParams& params);
// {L_x, N} -> waveform of `length` samples
std::vector<double> decode(const Tensor& features, const DecoderParams& params,
                           std::size_t length);

class Encoder : public Module {
 public:
  Encoder(std::size_t channels, std::size_t block_len, std::size_t stride,
          Rng& rng);

  // x: {T, 1} column waveform.
  Tensor forward(const Tensor& x, const RunMode& mode) override;
  // Returns the gradient with respect to the unpadded waveform.
  Tensor backward(const Tensor& grad_out) override;
  void collect_parameters(const std::string& prefix, ParameterList& out) override;

  EncoderParams params() const;
  Parameter& basis() { return basis_; }

 private:
  Parameter basis_;  // {L_BL, N}
  std::size_t block_len_;
  std::size_t stride_;
  Tensor padded_;
  Tensor pre_activation_;
  std::size_t length_ = 0;
};

// Shared across speakers, so caches live with the caller.
class Decoder {
 public:
  Decoder(std::size_t channels, std::size_t block_len, std::size_t stride,
          Rng& rng);

  // {L_x, N} -> {length, 1}
  Tensor forward(const Tensor& features, std::size_t length) const;
  // Accumulates the basis gradient; returns the gradient wrt features.
  Tensor backward(const Tensor& features, const Tensor& grad_waveform);
  void collect_parameters(const std::string& prefix, ParameterList& out);

  DecoderParams params() const;
  Parameter& basis() { return basis_; }

 private:
  Tensor kernel() const;  // basis as a {L_BL, 1, N} transposed-conv weight

  Parameter basis_;  // {N, L_BL}
  std::size_t block_len_;
  std::size_t stride_;
};

}  // namespace tdc

#endif  // TDC_CODEC_H_
