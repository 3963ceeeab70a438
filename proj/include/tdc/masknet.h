// Copyright 2026 The TD-Conformer Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)
//
// Conformer mask-estimation network:
//
//   layer norm -> P-Conv N->B -> PReLU
//   -> S x subsample (K=4, stride 2)
//   -> R x conformer layer (FF/2, conv module, MHSA, FF/2)
//   -> S x supersample (transposed conv + skip, PReLU, layer norm)
//   -> P-Conv B->C*N -> ReLU, split into C masks of width N.

#ifndef TDC_MASKNET_H_
#define TDC_MASKNET_H_

#include <memory>
#include <string>
#include <vector>

#include "tdc/autodiff.h"
#include "tdc/layers.h"

namespace tdc {

struct ModelConfig {
  std::size_t n_filters = 256;    // N, encoder channels
  std::size_t bottleneck = 128;   // B, conformer width
  std::size_t block_len = 16;     // L_BL, samples per encoder block
  std::size_t stride = 8;         // encoder hop
  std::size_t layers = 8;         // R
  std::size_t subsampling = 1;    // S
  std::size_t kernel = 64;        // P, depthwise kernel in the conv module
  std::size_t heads = 8;
  std::size_t ff_expansion = 4;
  double dropout = 0.1;
  std::size_t speakers = 2;       // C
  double sample_rate = 8000.0;
  // Clip distance for the learned relative-position biases. 0 resolves to
  // the conformer sequence length of a 4 s input.
  std::size_t max_rel_distance = 0;

  // Throws ConfigurationError on inconsistent fields.
  void validate() const;
  std::size_t resolved_max_rel_distance() const;

  // Size presets: "S", "M", "L", "XL" -> B = 128, 256, 512, 1024.
  static ModelConfig preset(const std::string& size);
};

// Sequence length after `s` floor-halvings.
std::size_t subsampled_length(std::size_t frames, std::size_t s);

struct MaskSet {
  std::vector<Tensor> masks;  // C tensors, each {L_x, N}, entries >= 0
};

MaskSet split_masks(const Tensor& stacked, std::size_t speakers);
std::vector<Tensor> apply_masks(const Tensor& features, const MaskSet& masks);

class FeedForwardModule : public Module {
 public:
  FeedForwardModule(const ModelConfig& config, Rng& rng);

  Tensor forward(const Tensor& x, const RunMode& mode) override;
  Tensor backward(const Tensor& grad_out) override;
  void collect_parameters(const std::string& prefix, ParameterList& out) override;

 private:
  Sequential body_;
};

class ConvolutionModule : public Module {
 public:
  ConvolutionModule(const ModelConfig& config, Rng& rng);

  Tensor forward(const Tensor& x, const RunMode& mode) override;
  Tensor backward(const Tensor& grad_out) override;
  void collect_parameters(const std::string& prefix, ParameterList& out) override;

 private:
  Sequential body_;
};

// Multi-head self-attention with learned per-head relative-position biases:
// bias[h, i, j] = table[h, clamp(j - i, -D, D) + D].
class MhsaModule : public Module {
 public:
  MhsaModule(const ModelConfig& config, Rng& rng);

  Tensor forward(const Tensor& x, const RunMode& mode) override;
  Tensor backward(const Tensor& grad_out) override;
  void collect_parameters(const std::string& prefix, ParameterList& out) override;

 private:
  Tensor gather_bias(std::size_t len) const;

  std::size_t heads_;
  std::size_t max_distance_;
  Norm norm_;
  Linear query_, key_, value_, output_;
  Parameter rel_table_;  // {heads, 2D + 1}
  Dropout dropout_;

  bool active_ = true;
  Tensor q_, k_, v_;
  AttentionCache cache_;
};

// x += FF1(x)/2; x += Conv(x); x += MHSA(x); x += FF2(x)/2
class ConformerLayer : public Module {
 public:
  ConformerLayer(const ModelConfig& config, Rng& rng);

  Tensor forward(const Tensor& x, const RunMode& mode) override;
  Tensor backward(const Tensor& grad_out) override;
  void collect_parameters(const std::string& prefix, ParameterList& out) override;

 private:
  FeedForwardModule ff1_;
  ConvolutionModule conv_;
  MhsaModule mhsa_;
  FeedForwardModule ff2_;
};

// Stride-2, K=4, pad (1,1) convolution: length L -> floor(L / 2).
class Subsampler : public Module {
 public:
  Subsampler(std::size_t channels, Rng& rng);

  Tensor forward(const Tensor& x, const RunMode& mode) override;
  Tensor backward(const Tensor& grad_out) override;
  void collect_parameters(const std::string& prefix, ParameterList& out) override;

 private:
  Conv conv_;
};

// Transposed conv (K=4, stride 2) trimmed to the skip length, plus the skip,
// then PReLU and layer norm.
class Supersampler {
 public:
  Supersampler(std::size_t channels, Rng& rng);

  Tensor forward(const Tensor& x, const Tensor& skip, const RunMode& mode);
  // Returns {grad wrt x, grad wrt skip}.
  std::pair<Tensor, Tensor> backward(const Tensor& grad_out);
  void collect_parameters(const std::string& prefix, ParameterList& out);

 private:
  TransposedConv deconv_;
  PRelu act_;
  Norm norm_;
  std::size_t full_len_ = 0;
};

class MaskNet : public Module {
 public:
  MaskNet(const ModelConfig& config, Rng& rng);

  // features {L_x, N} -> stacked masks {L_x, C * N}
  Tensor forward(const Tensor& features, const RunMode& mode) override;
  Tensor backward(const Tensor& grad_out) override;
  void collect_parameters(const std::string& prefix, ParameterList& out) override;

  const ModelConfig& config() const { return config_; }

 private:
  ModelConfig config_;
  Norm in_norm_;
  Linear in_proj_;
  PRelu in_act_;
  std::vector<std::unique_ptr<Subsampler>> down_;
  std::vector<std::unique_ptr<ConformerLayer>> layers_;
  std::vector<std::unique_ptr<Supersampler>> up_;  // up_[s] pairs with down_[s]
  Linear head_;
  Activation head_act_;
};

MaskSet estimate_masks(const Tensor& features, MaskNet& net,
                       const RunMode& mode = {});

// Receptive field of one convolution module in seconds for the given config.
double receptive_field_check(const ModelConfig& config);

}  // namespace tdc

#endif  // TDC_MASKNET_H_
