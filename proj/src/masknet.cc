// Copyright 2026 The TD-Conformer Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "tdc/masknet.h"

#include <algorithm>
#include <cmath>

#include "tdc/codec.h"
#include "tdc/complexity.h"
#include "tdc/error.h"

namespace tdc {

// -------------------------------------------------------------- ModelConfig

void ModelConfig::validate() const {
  auto positive = [](std::size_t v, const char* name) {
    if (v == 0) throw ConfigurationError(std::string(name) + " must be positive");
  };
  positive(n_filters, "n_filters");
  positive(bottleneck, "bottleneck");
  positive(block_len, "block_len");
  positive(stride, "stride");
  positive(kernel, "kernel");
  positive(heads, "heads");
  positive(ff_expansion, "ff_expansion");
  if (speakers < 2) throw ConfigurationError("speakers must be at least 2");
  if (bottleneck % heads != 0) {
    throw ConfigurationError("bottleneck " + std::to_string(bottleneck) +
                             " not divisible by heads " + std::to_string(heads));
  }
  if (block_len % stride != 0) {
    throw ConfigurationError("stride must divide block_len");
  }
  if (!(dropout >= 0.0 && dropout < 1.0)) {
    throw ConfigurationError("dropout must lie in [0, 1)");
  }
  if (!(sample_rate > 0.0)) throw ConfigurationError("sample_rate must be positive");
}

std::size_t ModelConfig::resolved_max_rel_distance() const {
  if (max_rel_distance > 0) return max_rel_distance;
  const auto samples = static_cast<std::size_t>(std::llround(4.0 * sample_rate));
  return std::max<std::size_t>(
      1, subsampled_length(frame_count(samples, block_len, stride), subsampling));
}

ModelConfig ModelConfig::preset(const std::string& size) {
  ModelConfig c;
  if (size == "S") {
    c.bottleneck = 128;
  } else if (size == "M") {
    c.bottleneck = 256;
  } else if (size == "L") {
    c.bottleneck = 512;
  } else if (size == "XL") {
    c.bottleneck = 1024;
  } else {
    throw ConfigurationError("unknown model preset '" + size + "'");
  }
  return c;
}

std::size_t subsampled_length(std::size_t frames, std::size_t s) {
  for (std::size_t i = 0; i < s; ++i) frames /= 2;
  return frames;
}

// ------------------------------------------------------------------ masks

MaskSet split_masks(const Tensor& stacked, std::size_t speakers) {
  require_rank(stacked, 2, "split_masks");
  if (speakers == 0 || stacked.cols() % speakers != 0) {
    throw DimensionError("split_masks: width not divisible by speaker count");
  }
  const std::size_t len = stacked.rows();
  const std::size_t width = stacked.cols() / speakers;
  MaskSet set;
  for (std::size_t c = 0; c < speakers; ++c) {
    Tensor m = Tensor::matrix(len, width);
    for (std::size_t t = 0; t < len; ++t) {
      const auto src = stacked.row(t).subspan(c * width, width);
      std::copy(src.begin(), src.end(), m.row(t).begin());
    }
    set.masks.push_back(std::move(m));
  }
  return set;
}

std::vector<Tensor> apply_masks(const Tensor& features, const MaskSet& masks) {
  std::vector<Tensor> out;
  out.reserve(masks.masks.size());
  for (const Tensor& m : masks.masks) {
    require_same_shape(features, m, "apply_masks");
    Tensor y(features.shape());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = m[i] * features[i];
    out.push_back(std::move(y));
  }
  return out;
}

// --------------------------------------------------------- FeedForwardModule

FeedForwardModule::FeedForwardModule(const ModelConfig& config, Rng& rng) {
  const std::size_t b = config.bottleneck;
  const std::size_t hidden = b * config.ff_expansion;
  body_.add<Norm>("norm", NormKind::kLayer, b);
  body_.add<Linear>("linear1", b, hidden, rng);
  body_.add<Activation>("act", ActivationKind::kSilu);
  body_.add<Dropout>("drop1", config.dropout);
  body_.add<Linear>("linear2", hidden, b, rng);
  body_.add<Dropout>("drop2", config.dropout);
}

Tensor FeedForwardModule::forward(const Tensor& x, const RunMode& mode) {
  return body_.forward(x, mode);
}

Tensor FeedForwardModule::backward(const Tensor& grad_out) {
  return body_.backward(grad_out);
}

void FeedForwardModule::collect_parameters(const std::string& prefix,
                                           ParameterList& out) {
  body_.collect_parameters(prefix, out);
}

// --------------------------------------------------------- ConvolutionModule

ConvolutionModule::ConvolutionModule(const ModelConfig& config, Rng& rng) {
  const std::size_t b = config.bottleneck;
  body_.add<Norm>("norm", NormKind::kLayer, b);
  body_.add<Linear>("pointwise1", b, 2 * b, rng);
  body_.add<Activation>("glu", ActivationKind::kGlu);
  body_.add<DepthwiseConv>("depthwise", b, config.kernel, rng);
  body_.add<Norm>("group_norm", NormKind::kGroupPerChannel, b);
  body_.add<Activation>("act", ActivationKind::kSilu);
  body_.add<Linear>("pointwise2", b, b, rng);
  body_.add<Dropout>("drop", config.dropout);
}

Tensor ConvolutionModule::forward(const Tensor& x, const RunMode& mode) {
  return body_.forward(x, mode);
}

Tensor ConvolutionModule::backward(const Tensor& grad_out) {
  return body_.backward(grad_out);
}

void ConvolutionModule::collect_parameters(const std::string& prefix,
                                           ParameterList& out) {
  body_.collect_parameters(prefix, out);
}

// ---------------------------------------------------------------- MhsaModule

MhsaModule::MhsaModule(const ModelConfig& config, Rng& rng)
    : heads_(config.heads),
      max_distance_(config.resolved_max_rel_distance()),
      norm_(NormKind::kLayer, config.bottleneck),
      query_(config.bottleneck, config.bottleneck, rng),
      key_(config.bottleneck, config.bottleneck, rng),
      value_(config.bottleneck, config.bottleneck, rng),
      output_(config.bottleneck, config.bottleneck, rng),
      dropout_(config.dropout) {
  rel_table_.value = Tensor({heads_, 2 * max_distance_ + 1}, 0.0);
}

Tensor MhsaModule::gather_bias(std::size_t len) const {
  const std::size_t width = 2 * max_distance_ + 1;
  const auto d = static_cast<std::ptrdiff_t>(max_distance_);
  Tensor bias({heads_, len, len});
  for (std::size_t h = 0; h < heads_; ++h) {
    const double* table = rel_table_.value.data() + h * width;
    double* out = bias.data() + h * len * len;
    for (std::size_t i = 0; i < len; ++i) {
      for (std::size_t j = 0; j < len; ++j) {
        const std::ptrdiff_t rel = std::clamp<std::ptrdiff_t>(
            static_cast<std::ptrdiff_t>(j) - static_cast<std::ptrdiff_t>(i), -d, d);
        out[i * len + j] = table[rel + d];
      }
    }
  }
  return bias;
}

Tensor MhsaModule::forward(const Tensor& x, const RunMode& mode) {
  active_ = mode.attention_enabled;
  if (!active_) return Tensor(x.shape());
  const Tensor xn = norm_.forward(x, mode);
  q_ = query_.forward(xn, mode);
  k_ = key_.forward(xn, mode);
  v_ = value_.forward(xn, mode);
  const Tensor ctx =
      attention(q_, k_, v_, heads_, gather_bias(x.rows()), &cache_);
  return dropout_.forward(output_.forward(ctx, mode), mode);
}

Tensor MhsaModule::backward(const Tensor& grad_out) {
  if (!active_) return Tensor(grad_out.shape());
  const Tensor g_ctx = output_.backward(dropout_.backward(grad_out));
  AttentionGrads g = attention_backward(q_, k_, v_, heads_, cache_, g_ctx);

  const std::size_t len = q_.rows();
  const std::size_t width = 2 * max_distance_ + 1;
  const auto d = static_cast<std::ptrdiff_t>(max_distance_);
  Tensor g_table(rel_table_.value.shape());
  for (std::size_t h = 0; h < heads_; ++h) {
    double* table = g_table.data() + h * width;
    const double* src = g.rel_bias.data() + h * len * len;
    for (std::size_t i = 0; i < len; ++i) {
      for (std::size_t j = 0; j < len; ++j) {
        const std::ptrdiff_t rel = std::clamp<std::ptrdiff_t>(
            static_cast<std::ptrdiff_t>(j) - static_cast<std::ptrdiff_t>(i), -d, d);
        table[rel + d] += src[i * len + j];
      }
    }
  }
  rel_table_.accumulate(g_table);

  Tensor g_xn = query_.backward(g.queries);
  g_xn += key_.backward(g.keys);
  g_xn += value_.backward(g.values);
  return norm_.backward(g_xn);
}

void MhsaModule::collect_parameters(const std::string& prefix,
                                    ParameterList& out) {
  norm_.collect_parameters(join_name(prefix, "norm"), out);
  query_.collect_parameters(join_name(prefix, "query"), out);
  key_.collect_parameters(join_name(prefix, "key"), out);
  value_.collect_parameters(join_name(prefix, "value"), out);
  output_.collect_parameters(join_name(prefix, "output"), out);
  rel_table_.name = join_name(prefix, "rel_bias");
  out.push_back(&rel_table_);
}

// ------------------------------------------------------------ ConformerLayer

ConformerLayer::ConformerLayer(const ModelConfig& config, Rng& rng)
    : ff1_(config, rng), conv_(config, rng), mhsa_(config, rng), ff2_(config, rng) {}

Tensor ConformerLayer::forward(const Tensor& x, const RunMode& mode) {
  Tensor y = x + ff1_.forward(x, mode) * 0.5;
  y += conv_.forward(y, mode);
  y += mhsa_.forward(y, mode);
  y += ff2_.forward(y, mode) * 0.5;
  return y;
}

Tensor ConformerLayer::backward(const Tensor& grad_out) {
  Tensor g = grad_out + ff2_.backward(grad_out * 0.5);
  g += mhsa_.backward(g);
  g += conv_.backward(g);
  g += ff1_.backward(g * 0.5);
  return g;
}

void ConformerLayer::collect_parameters(const std::string& prefix,
                                        ParameterList& out) {
  ff1_.collect_parameters(join_name(prefix, "ff1"), out);
  conv_.collect_parameters(join_name(prefix, "conv"), out);
  mhsa_.collect_parameters(join_name(prefix, "mhsa"), out);
  ff2_.collect_parameters(join_name(prefix, "ff2"), out);
}

// ---------------------------------------------------- Subsampler / Supersampler

Subsampler::Subsampler(std::size_t channels, Rng& rng)
    : conv_(channels, channels, 4, 2, {1, 1}, rng) {}

Tensor Subsampler::forward(const Tensor& x, const RunMode& mode) {
  if (x.rows() < 2) {
    throw ConfigurationError("subsample: sequence of length " +
                             std::to_string(x.rows()) + " cannot be halved");
  }
  return conv_.forward(x, mode);
}

Tensor Subsampler::backward(const Tensor& grad_out) {
  return conv_.backward(grad_out);
}

void Subsampler::collect_parameters(const std::string& prefix,
                                    ParameterList& out) {
  conv_.collect_parameters(join_name(prefix, "conv"), out);
}

Supersampler::Supersampler(std::size_t channels, Rng& rng)
    : deconv_(channels, channels, 4, 2, rng), norm_(NormKind::kLayer, channels) {}

Tensor Supersampler::forward(const Tensor& x, const Tensor& skip,
                             const RunMode& mode) {
  const std::size_t len = x.rows();
  if (skip.rows() != 2 * len && skip.rows() != 2 * len + 1) {
    throw DimensionError("supersample: skip length " +
                         std::to_string(skip.rows()) +
                         " incompatible with input length " +
                         std::to_string(len));
  }
  if (skip.cols() != x.cols()) {
    throw DimensionError("supersample: skip channel mismatch");
  }
  const Tensor full = deconv_.forward(x, mode);  // 2L + 2 frames
  full_len_ = full.rows();
  const std::size_t ch = x.cols();
  // Drop the first frame (the subsampler's left pad) and keep skip length.
  Tensor y = skip;
  for (std::size_t t = 0; t < skip.rows(); ++t) {
    const auto src = full.row(t + 1);
    auto dst = y.row(t);
    for (std::size_t c = 0; c < ch; ++c) dst[c] += src[c];
  }
  return norm_.forward(act_.forward(y, mode), mode);
}

std::pair<Tensor, Tensor> Supersampler::backward(const Tensor& grad_out) {
  Tensor g_skip = act_.backward(norm_.backward(grad_out));
  Tensor g_full = Tensor::matrix(full_len_, g_skip.cols());
  for (std::size_t t = 0; t < g_skip.rows(); ++t) {
    const auto src = g_skip.row(t);
    std::copy(src.begin(), src.end(), g_full.row(t + 1).begin());
  }
  return {deconv_.backward(g_full), std::move(g_skip)};
}

void Supersampler::collect_parameters(const std::string& prefix,
                                      ParameterList& out) {
  deconv_.collect_parameters(join_name(prefix, "deconv"), out);
  act_.collect_parameters(join_name(prefix, "act"), out);
  norm_.collect_parameters(join_name(prefix, "norm"), out);
}

// ------------------------------------------------------------------- MaskNet

MaskNet::MaskNet(const ModelConfig& config, Rng& rng)
    : config_(config),
      in_norm_(NormKind::kLayer, config.n_filters),
      in_proj_(config.n_filters, config.bottleneck, rng),
      head_(config.bottleneck, config.speakers * config.n_filters, rng),
      head_act_(ActivationKind::kRelu) {
  config_.validate();
  for (std::size_t s = 0; s < config.subsampling; ++s) {
    down_.push_back(std::make_unique<Subsampler>(config.bottleneck, rng));
  }
  for (std::size_t r = 0; r < config.layers; ++r) {
    layers_.push_back(std::make_unique<ConformerLayer>(config, rng));
  }
  for (std::size_t s = 0; s < config.subsampling; ++s) {
    up_.push_back(std::make_unique<Supersampler>(config.bottleneck, rng));
  }
}

Tensor MaskNet::forward(const Tensor& features, const RunMode& mode) {
  require_rank(features, 2, "estimate_masks");
  if (features.cols() != config_.n_filters) {
    throw DimensionError("estimate_masks: features have " +
                         std::to_string(features.cols()) + " channels, expected " +
                         std::to_string(config_.n_filters));
  }
  const std::size_t frames = features.rows();
  if (frames < (std::size_t{1} << config_.subsampling)) {
    throw ConfigurationError("estimate_masks: " + std::to_string(frames) +
                             " frames cannot be subsampled " +
                             std::to_string(config_.subsampling) + " times");
  }
  Tensor x = in_act_.forward(
      in_proj_.forward(in_norm_.forward(features, mode), mode), mode);
  std::vector<Tensor> skips;
  for (auto& down : down_) {
    skips.push_back(x);
    x = down->forward(x, mode);
  }
  for (auto& layer : layers_) x = layer->forward(x, mode);
  for (std::size_t s = up_.size(); s-- > 0;) {
    x = up_[s]->forward(x, skips[s], mode);
  }
  return head_act_.forward(head_.forward(x, mode), mode);
}

Tensor MaskNet::backward(const Tensor& grad_out) {
  Tensor g = head_.backward(head_act_.backward(grad_out));
  std::vector<Tensor> skip_grads(up_.size());
  for (std::size_t s = 0; s < up_.size(); ++s) {
    auto [gx, gskip] = up_[s]->backward(g);
    g = std::move(gx);
    skip_grads[s] = std::move(gskip);
  }
  for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) {
    g = (*it)->backward(g);
  }
  for (std::size_t s = down_.size(); s-- > 0;) {
    g = down_[s]->backward(g);
    g += skip_grads[s];
  }
  return in_norm_.backward(in_proj_.backward(in_act_.backward(g)));
}

void MaskNet::collect_parameters(const std::string& prefix, ParameterList& out) {
  in_norm_.collect_parameters(join_name(prefix, "in_norm"), out);
  in_proj_.collect_parameters(join_name(prefix, "in_proj"), out);
  in_act_.collect_parameters(join_name(prefix, "in_act"), out);
  for (std::size_t s = 0; s < down_.size(); ++s) {
    down_[s]->collect_parameters(join_name(prefix, "down." + std::to_string(s)),
                                 out);
  }
  for (std::size_t r = 0; r < layers_.size(); ++r) {
    layers_[r]->collect_parameters(
        join_name(prefix, "layers." + std::to_string(r)), out);
  }
  for (std::size_t s = 0; s < up_.size(); ++s) {
    up_[s]->collect_parameters(join_name(prefix, "up." + std::to_string(s)), out);
  }
  head_.collect_parameters(join_name(prefix, "head"), out);
}

MaskSet estimate_masks(const Tensor& features, MaskNet& net,
                       const RunMode& mode) {
  return split_masks(net.forward(features, mode), net.config().speakers);
}

double receptive_field_check(const ModelConfig& config) {
  return receptive_field(config.subsampling, config.kernel, config.block_len,
                         config.sample_rate);
}

}  // namespace tdc
