// Copyright 2026 The TD-Conformer Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#ifndef TDC_MODEL_H_
#define TDC_MODEL_H_

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tdc/autodiff.h"
#include "tdc/codec.h"
#include "tdc/masknet.h"

namespace tdc {

// Encoder -> mask network -> per-speaker Hadamard masking -> shared decoder.
class SeparationModel {
 public:
  SeparationModel(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }

  // mixture of T samples -> estimates {C, T}
  Tensor forward(std::span<const double> mixture, const RunMode& mode);
  // grad_estimates {C, T}; accumulates parameter gradients and returns the
  // gradient wrt the mixture as a {T, 1} column.
  Tensor backward(const Tensor& grad_estimates);

  ParameterList parameters();
  std::size_t parameter_count();
  void zero_grad();

  // Masks and encoded features from the most recent forward().
  MaskSet last_masks() const;
  const Tensor& last_features() const { return features_; }

 private:
  ModelConfig config_;
  Rng init_rng_;
  Encoder encoder_;
  MaskNet masknet_;
  Decoder decoder_;

  std::size_t length_ = 0;
  Tensor features_;
  Tensor masks_;
  std::vector<Tensor> masked_;
};

// Inputs are {mixture as {T, 1}, parameter values...}; output {C, T}.
DifferentiableOp model_op(SeparationModel& model, RunMode mode = {});
std::vector<Tensor> model_inputs(SeparationModel& model,
                                 std::span<const double> mixture);

nlohmann::json config_to_json(const ModelConfig& config);
ModelConfig config_from_json(const nlohmann::json& j);

// Checkpoint layout (all integers and floats little-endian):
//   8 bytes   magic "TDCCKPT\0"
//   u32       format version (1)
//   u32       byte length of the config JSON, followed by the UTF-8 JSON
//   u32       tensor count
//   per tensor: u32 name length, name bytes, u32 rank, u64 extents[rank],
//               f64 values[product(extents)] in row-major order
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointInfo {
  ModelConfig config;
  std::size_t tensor_count = 0;
  std::size_t element_count = 0;
};

void save_checkpoint(const std::filesystem::path& path, SeparationModel& model);
SeparationModel load_checkpoint(const std::filesystem::path& path);
CheckpointInfo inspect_checkpoint(const std::filesystem::path& path);

}  // namespace tdc

#endif  // TDC_MODEL_H_
