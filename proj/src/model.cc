// Copyright 2026 The TD-Conformer Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "tdc/model.h"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <map>

#include "tdc/error.h"

namespace tdc {

SeparationModel::SeparationModel(const ModelConfig& config, std::uint64_t seed)
    : config_(config),
      init_rng_(seed),
      encoder_(config.n_filters, config.block_len, config.stride, init_rng_),
      masknet_(config, init_rng_),
      decoder_(config.n_filters, config.block_len, config.stride, init_rng_) {}

Tensor SeparationModel::forward(std::span<const double> mixture,
                                const RunMode& mode) {
  length_ = mixture.size();
  features_ = encoder_.forward(Tensor::column(mixture), mode);
  masks_ = masknet_.forward(features_, mode);
  masked_ = apply_masks(features_, split_masks(masks_, config_.speakers));
  Tensor estimates({config_.speakers, length_});
  for (std::size_t c = 0; c < config_.speakers; ++c) {
    const Tensor y = decoder_.forward(masked_[c], length_);
    std::copy_n(y.data(), length_, estimates.data() + c * length_);
  }
  return estimates;
}

Tensor SeparationModel::backward(const Tensor& grad_estimates) {
  const std::size_t speakers = config_.speakers;
  const std::size_t n = config_.n_filters;
  if (grad_estimates.shape() != Shape{speakers, length_}) {
    throw DimensionError("model backward: gradient shape " +
                         shape_string(grad_estimates.shape()));
  }
  const std::size_t frames = features_.rows();
  Tensor g_masks(masks_.shape());
  Tensor g_features(features_.shape());
  for (std::size_t c = 0; c < speakers; ++c) {
    const Tensor g_wave = Tensor::column(
        std::span<const double>(grad_estimates.data() + c * length_, length_));
    const Tensor g_masked = decoder_.backward(masked_[c], g_wave);
    for (std::size_t t = 0; t < frames; ++t) {
      const auto gm = g_masked.row(t);
      const auto w = features_.row(t);
      const auto m = masks_.row(t).subspan(c * n, n);
      auto out_m = g_masks.row(t).subspan(c * n, n);
      auto out_w = g_features.row(t);
      for (std::size_t k = 0; k < n; ++k) {
        out_m[k] = gm[k] * w[k];
        out_w[k] += gm[k] * m[k];
      }
    }
  }
  g_features += masknet_.backward(g_masks);
  return encoder_.backward(g_features);
}

ParameterList SeparationModel::parameters() {
  ParameterList out;
  encoder_.collect_parameters("encoder", out);
  masknet_.collect_parameters("masknet", out);
  decoder_.collect_parameters("decoder", out);
  return out;
}

std::size_t SeparationModel::parameter_count() {
  std::size_t n = 0;
  for (const Parameter* p : parameters()) n += p->value.size();
  return n;
}

void SeparationModel::zero_grad() {
  for (Parameter* p : parameters()) p->zero_grad();
}

MaskSet SeparationModel::last_masks() const {
  return split_masks(masks_, config_.speakers);
}

std::vector<Tensor> model_inputs(SeparationModel& model,
                                 std::span<const double> mixture) {
  std::vector<Tensor> inputs{Tensor::column(mixture)};
  for (const Parameter* p : model.parameters()) inputs.push_back(p->value);
  return inputs;
}

DifferentiableOp model_op(SeparationModel& model, RunMode mode) {
  auto load = [&model](std::span<const Tensor> in) {
    const ParameterList params = model.parameters();
    for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = in[i + 1];
  };
  DifferentiableOp op;
  op.forward = [&model, mode, load](std::span<const Tensor> in) {
    load(in);
    return model.forward(in[0].values(), mode);
  };
  op.backward = [&model, mode, load](std::span<const Tensor> in,
                                     const Tensor& grad_out) {
    load(in);
    model.zero_grad();
    model.forward(in[0].values(), mode);
    std::vector<Tensor> grads{model.backward(grad_out)};
    for (const Parameter* p : model.parameters()) {
      grads.push_back(p->grad.empty() ? Tensor(p->value.shape()) : p->grad);
    }
    return grads;
  };
  return op;
}

// ------------------------------------------------------------------- config

nlohmann::json config_to_json(const ModelConfig& c) {
  return {{"n_filters", c.n_filters},     {"bottleneck", c.bottleneck},
          {"block_len", c.block_len},     {"stride", c.stride},
          {"layers", c.layers},           {"subsampling", c.subsampling},
          {"kernel", c.kernel},           {"heads", c.heads},
          {"ff_expansion", c.ff_expansion}, {"dropout", c.dropout},
          {"speakers", c.speakers},       {"sample_rate", c.sample_rate},
          {"max_rel_distance", c.resolved_max_rel_distance()}};
}

ModelConfig config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.n_filters = j.at("n_filters").get<std::size_t>();
  c.bottleneck = j.at("bottleneck").get<std::size_t>();
  c.block_len = j.at("block_len").get<std::size_t>();
  c.stride = j.at("stride").get<std::size_t>();
  c.layers = j.at("layers").get<std::size_t>();
  c.subsampling = j.at("subsampling").get<std::size_t>();
  c.kernel = j.at("kernel").get<std::size_t>();
  c.heads = j.at("heads").get<std::size_t>();
  c.ff_expansion = j.at("ff_expansion").get<std::size_t>();
  c.dropout = j.at("dropout").get<double>();
  c.speakers = j.at("speakers").get<std::size_t>();
  c.sample_rate = j.at("sample_rate").get<double>();
  c.max_rel_distance = j.at("max_rel_distance").get<std::size_t>();
  c.validate();
  return c;
}

// --------------------------------------------------------------- checkpoint

namespace {

constexpr std::array<char, 8> kMagic{'T', 'D', 'C', 'C', 'K', 'P', 'T', '\0'};

template <typename T>
void write_le(std::ostream& os, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  std::array<unsigned char, sizeof(T)> bytes;
  std::memcpy(bytes.data(), &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) {
    std::reverse(bytes.begin(), bytes.end());
  }
  os.write(reinterpret_cast<const char*>(bytes.data()), sizeof(T));
}

template <typename T>
T read_le(std::istream& is) {
  std::array<unsigned char, sizeof(T)> bytes;
  if (!is.read(reinterpret_cast<char*>(bytes.data()), sizeof(T))) {
    throw IoError("checkpoint: unexpected end of file");
  }
  if constexpr (std::endian::native == std::endian::big) {
    std::reverse(bytes.begin(), bytes.end());
  }
  T value;
  std::memcpy(&value, bytes.data(), sizeof(T));
  return value;
}

std::string read_string(std::istream& is, std::size_t len) {
  std::string s(len, '\0');
  if (len && !is.read(s.data(), static_cast<std::streamsize>(len))) {
    throw IoError("checkpoint: truncated string");
  }
  return s;
}

struct RawTensor {
  std::string name;
  Tensor value;
};

struct RawCheckpoint {
  ModelConfig config;
  std::vector<RawTensor> tensors;
};

RawCheckpoint read_raw(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("checkpoint: cannot open " + path.string());
  std::array<char, 8> magic{};
  if (!is.read(magic.data(), magic.size()) || magic != kMagic) {
    throw IoError("checkpoint: bad magic in " + path.string());
  }
  const auto version = read_le<std::uint32_t>(is);
  if (version != kCheckpointVersion) {
    throw UnsupportedError("checkpoint: unsupported version " +
                           std::to_string(version));
  }
  RawCheckpoint raw;
  const auto config_len = read_le<std::uint32_t>(is);
  try {
    raw.config = config_from_json(nlohmann::json::parse(read_string(is, config_len)));
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("checkpoint: malformed config: ") + e.what());
  }
  const auto count = read_le<std::uint32_t>(is);
  for (std::uint32_t i = 0; i < count; ++i) {
    RawTensor t;
    t.name = read_string(is, read_le<std::uint32_t>(is));
    const auto rank = read_le<std::uint32_t>(is);
    Shape shape(rank);
    for (auto& d : shape) d = static_cast<std::size_t>(read_le<std::uint64_t>(is));
    t.value = Tensor(shape);
    for (double& v : t.value.values()) v = read_le<double>(is);
    raw.tensors.push_back(std::move(t));
  }
  return raw;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, SeparationModel& model) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("checkpoint: cannot write " + path.string());
  os.write(kMagic.data(), kMagic.size());
  write_le<std::uint32_t>(os, kCheckpointVersion);
  const std::string config = config_to_json(model.config()).dump();
  write_le<std::uint32_t>(os, static_cast<std::uint32_t>(config.size()));
  os.write(config.data(), static_cast<std::streamsize>(config.size()));
  const ParameterList params = model.parameters();
  write_le<std::uint32_t>(os, static_cast<std::uint32_t>(params.size()));
  for (const Parameter* p : params) {
    write_le<std::uint32_t>(os, static_cast<std::uint32_t>(p->name.size()));
    os.write(p->name.data(), static_cast<std::streamsize>(p->name.size()));
    write_le<std::uint32_t>(os, static_cast<std::uint32_t>(p->value.rank()));
    for (std::size_t d : p->value.shape()) write_le<std::uint64_t>(os, d);
    for (double v : p->value.values()) write_le<double>(os, v);
  }
  if (!os) throw IoError("checkpoint: write failed for " + path.string());
}

SeparationModel load_checkpoint(const std::filesystem::path& path) {
  RawCheckpoint raw = read_raw(path);
  SeparationModel model(raw.config, 0);
  std::map<std::string, Tensor*> by_name;
  for (Parameter* p : model.parameters()) by_name[p->name] = &p->value;
  if (by_name.size() != raw.tensors.size()) {
    throw IoError("checkpoint: expected " + std::to_string(by_name.size()) +
                  " tensors, found " + std::to_string(raw.tensors.size()));
  }
  for (RawTensor& t : raw.tensors) {
    auto it = by_name.find(t.name);
    if (it == by_name.end()) throw IoError("checkpoint: unknown tensor " + t.name);
    if (it->second->shape() != t.value.shape()) {
      throw IoError("checkpoint: shape mismatch for " + t.name);
    }
    *it->second = std::move(t.value);
  }
  return model;
}

CheckpointInfo inspect_checkpoint(const std::filesystem::path& path) {
  const RawCheckpoint raw = read_raw(path);
  CheckpointInfo info{raw.config, raw.tensors.size(), 0};
  for (const RawTensor& t : raw.tensors) info.element_count += t.value.size();
  return info;
}

}  // namespace tdc
