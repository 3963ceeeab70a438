// Copyright 2026 The TD-Conformer Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#ifndef TDC_AUTODIFF_H_
#define TDC_AUTODIFF_H_

#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "tdc/tensor.h"

namespace tdc {

using Rng = std::mt19937_64;

struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;  // allocated on first accumulation

  void accumulate(const Tensor& g);
  void zero_grad();
};

using ParameterList = std::vector<Parameter*>;

struct RunMode {
  bool training = false;
  Rng* rng = nullptr;  // drives dropout masks; required when training
  // Test switches for probing locality: skip the self-attention modules and
  // the time-global group-norm statistics (affine still applied).
  bool attention_enabled = true;
  bool group_norm_statistics = true;
};

// A layer with a cached forward pass. backward() must follow the matching
// forward() and accumulates into the parameters' grad buffers.
class Module {
 public:
  virtual ~Module() = default;

  virtual Tensor forward(const Tensor& x, const RunMode& mode) = 0;
  virtual Tensor backward(const Tensor& grad_out) = 0;
  virtual void collect_parameters(const std::string& prefix,
                                  ParameterList& out) = 0;

  ParameterList parameters(const std::string& prefix = "");
  std::size_t parameter_count();
  void zero_grad();
};

// Forward map plus its vector-Jacobian product. Gradient shapes match inputs.
struct DifferentiableOp {
  std::function<Tensor(std::span<const Tensor>)> forward;
  std::function<std::vector<Tensor>(std::span<const Tensor>, const Tensor&)>
      backward;
};

struct GradCheckOptions {
  double eps = 1e-6;
  std::uint64_t seed = 0;
  // Caps the number of probed coordinates per input (0 probes everything).
  std::size_t max_probes_per_input = 0;
};

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t probes = 0;
};

// Compares backward() against central differences of <r, forward(inputs)> for
// a Gaussian projection r. Per input, the error is
// max|analytic - numeric| / max(max|analytic|, max|numeric|, floor), where
// floor = 1e6 * DBL_EPSILON * max(1, |<r, f>|) / eps bounds the rounding noise
// of the difference quotient.
GradCheckResult grad_check(const DifferentiableOp& op,
                           std::vector<Tensor> inputs,
                           const GradCheckOptions& options = {});

// Exposes a module as an op whose inputs are {x, parameter values...} in
// collect_parameters() order.
DifferentiableOp module_op(Module& module, RunMode mode = {});
std::vector<Tensor> module_inputs(Module& module, const Tensor& x);

Tensor random_normal(Shape shape, Rng& rng, double stddev = 1.0);
Tensor random_uniform(Shape shape, Rng& rng, double low, double high);

}  // namespace tdc

#endif  // TDC_AUTODIFF_H_
