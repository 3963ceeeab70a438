// Copyright 2026 The TD-Conformer Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)
//
// Scale-invariant SDR, utterance-level permutation-invariant loss and the
// SISDR improvement metric.

#ifndef TDC_OBJECTIVE_H_
#define TDC_OBJECTIVE_H_

#include <span>
#include <vector>

#include "tdc/tensor.h"

namespace tdc {

inline constexpr double kSisdrEps = 1e-8;
inline constexpr std::size_t kMaxPitSpeakers = 6;

// SISDR in dB. Both signals are scaled to unit norm before the projection, and
// eps is added to the target and distortion energies, so the value is exactly
// scale invariant and bounded by +-10*log10((1 + eps) / eps) (about 80 dB).
// An all-zero estimate has zero target and distortion energy and scores 0 dB.
double sisdr(std::span<const double> estimate, std::span<const double> reference,
             double eps = kSisdrEps);

// d sisdr / d estimate.
std::vector<double> sisdr_grad(std::span<const double> estimate,
                               std::span<const double> reference,
                               double eps = kSisdrEps);

struct PitResult {
  double loss = 0.0;  // mean negative SISDR under the best pairing
  // permutation[r] is the estimate index paired with reference r.
  std::vector<std::size_t> permutation;
};

// Minimum over all speaker pairings of the mean negative SISDR given the
// pairwise matrix cost[e][r] = -sisdr(estimate e, reference r). Ties resolve
// to the lexicographically first permutation.
PitResult best_permutation(const std::vector<std::vector<double>>& cost);

// estimates, references: {C, T}.
PitResult upit_loss(const Tensor& estimates, const Tensor& references);

// Gradient of the uPIT loss wrt the estimates at the selected pairing.
Tensor upit_loss_grad(const Tensor& estimates, const Tensor& references,
                      const PitResult& pit);

struct SeparationResult {
  Tensor estimates;   // {C, T}
  Tensor references;  // {C, T}
  std::vector<double> mixture;
};

// Mean over speakers of sisdr(estimate, ref) - sisdr(mixture, ref) under the
// uPIT-optimal pairing.
double delta_sisdr(const SeparationResult& result);

}  // namespace tdc

#endif  // TDC_OBJECTIVE_H_
