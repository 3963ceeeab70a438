// Copyright 2026 The TD-Conformer Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)
//
// Analytical cost models. Time-complexity figures are per layer; multiply by
// the layer count for whole-network totals.

#ifndef TDC_COMPLEXITY_H_
#define TDC_COMPLEXITY_H_

#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "tdc/masknet.h"

namespace tdc {

struct ComplexityQuery {
  double frames = 0.0;     // L_x
  double width = 0.0;      // B
  std::size_t subsampling = 0;  // S
  double kernel = 0.0;     // P, conformer depthwise kernel
  double chunk = 250.0;    // P', dual-path chunk size

  void validate() const;
};

// Encoder frame count for a signal of the given duration.
std::size_t frames_for_seconds(double seconds, double sample_rate,
                               std::size_t block_len, std::size_t stride);

// (L/2^S)(PB + B^2) + (L^2/2^{2S}) B + B^2 (L/2^S)
double tc_conformer(const ComplexityQuery& q);
// (L/(2P') + P'/2)(P'^2 B + B^2 P') + (L/(4P'^2)) B + B^2 L/(2P')
double tc_dpt(const ComplexityQuery& q);

// Receptive field of one convolution module in seconds:
// (2^{S-1} L_BL P + L_BL / 2) / f_s
double receptive_field(std::size_t subsampling, std::size_t kernel,
                       std::size_t block_len, double sample_rate);
// The same span expressed in encoder frames (2^S P).
std::size_t receptive_field_frames(std::size_t subsampling, std::size_t kernel);

// Closed-form parameter count of SeparationModel for the config.
std::uint64_t count_params(const ModelConfig& config);

struct MacBreakdown {
  std::uint64_t encoder = 0;
  std::uint64_t input_projection = 0;
  std::uint64_t sampling = 0;      // subsample + supersample convolutions
  std::uint64_t feed_forward = 0;  // both FF modules, all layers
  std::uint64_t convolution = 0;   // conv modules, all layers
  std::uint64_t attention_projections = 0;
  std::uint64_t attention_scores = 0;  // QK^T and AV, all layers
  std::uint64_t head = 0;
  std::uint64_t decoder = 0;

  std::uint64_t total() const;
};

// Multiply-accumulate count of one forward pass over `samples` input samples.
// Normalizations, activations, relative-position bias gathering and mask
// products are excluded.
MacBreakdown count_macs_samples(const ModelConfig& config, std::size_t samples);
MacBreakdown count_macs(const ModelConfig& config, double signal_seconds);

struct CrossoverQuery {
  double width = 0.0;
  double kernel = 0.0;
  double chunk = 250.0;
  std::size_t subsampling = 0;
  std::uint64_t horizon = 10'000'000;  // search limit in frames
};

// Smallest L_x >= 1 with tc_conformer > tc_dpt, or nullopt below the horizon.
std::optional<std::uint64_t> crossover_length(const CrossoverQuery& q);

struct CurveGrid {
  std::vector<double> seconds;
  std::vector<double> widths;               // used when sweeping B
  std::vector<std::size_t> subsamplings;    // used when sweeping S
  enum class Sweep { kWidth, kSubsampling } sweep = Sweep::kWidth;
  double width = 256.0;                     // fixed B for an S sweep
  std::size_t subsampling = 0;              // fixed S for a B sweep
  double kernel = 250.0;
  double chunk = 250.0;
  double sample_rate = 8000.0;
  std::size_t block_len = 16;
  std::size_t stride = 8;
};

// CSV with header "seconds,B,tc_conformer,tc_dpt" or "seconds,S,...", rows
// ordered by sweep value, then seconds.
void emit_curves(const CurveGrid& grid, std::ostream& os);

}  // namespace tdc

#endif  // TDC_COMPLEXITY_H_
