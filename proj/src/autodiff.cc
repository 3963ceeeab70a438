// Copyright 2026 The TD-Conformer Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "tdc/autodiff.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "tdc/error.h"

namespace tdc {

void Parameter::accumulate(const Tensor& g) {
  if (grad.empty()) {
    grad = Tensor(value.shape());
  }
  grad += g;
}

void Parameter::zero_grad() {
  if (!grad.empty()) grad.set_zero();
}

ParameterList Module::parameters(const std::string& prefix) {
  ParameterList out;
  collect_parameters(prefix, out);
  return out;
}

std::size_t Module::parameter_count() {
  std::size_t n = 0;
  for (const Parameter* p : parameters()) n += p->value.size();
  return n;
}

void Module::zero_grad() {
  for (Parameter* p : parameters()) p->zero_grad();
}

Tensor random_normal(Shape shape, Rng& rng, double stddev) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> dist(0.0, stddev);
  for (double& v : t.values()) v = dist(rng);
  return t;
}

Tensor random_uniform(Shape shape, Rng& rng, double low, double high) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> dist(low, high);
  for (double& v : t.values()) v = dist(rng);
  return t;
}

GradCheckResult grad_check(const DifferentiableOp& op,
                           std::vector<Tensor> inputs,
                           const GradCheckOptions& options) {
  if (options.eps < 1e-6 || options.eps > 1e-4) {
    throw ConfigurationError("grad_check: eps must lie in [1e-6, 1e-4]");
  }
  Rng rng(options.seed);
  const Tensor out = op.forward(inputs);
  if (!out.all_finite()) {
    throw NumericalError("grad_check: non-finite forward output");
  }
  const Tensor projection = random_normal(out.shape(), rng);
  const std::vector<Tensor> analytic = op.backward(inputs, projection);
  if (analytic.size() != inputs.size()) {
    throw DimensionError("grad_check: backward returned wrong gradient count");
  }

  auto probe = [&](std::vector<Tensor>& in) {
    const Tensor y = op.forward(in);
    if (!y.all_finite()) {
      throw NumericalError("grad_check: non-finite output while probing");
    }
    return dot(projection, y);
  };

  // Rounding noise of a central difference is about ulp(f) / eps; gradients
  // below a generous multiple of it (e.g. biases that a later normalization
  // cancels) are compared on an absolute rather than relative scale.
  const double noise_floor = 1e6 * std::numeric_limits<double>::epsilon() *
                       std::max(1.0, std::abs(dot(projection, out))) / options.eps;

  GradCheckResult result;
  for (std::size_t a = 0; a < inputs.size(); ++a) {
    require_same_shape(analytic[a], inputs[a], "grad_check gradient");
    const std::size_t n = inputs[a].size();
    std::vector<std::size_t> coords(n);
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (options.max_probes_per_input && n > options.max_probes_per_input) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(options.max_probes_per_input);
    }
    double diff = 0.0, scale = 0.0;
    for (std::size_t i : coords) {
      const double original = inputs[a][i];
      inputs[a][i] = original + options.eps;
      const double plus = probe(inputs);
      inputs[a][i] = original - options.eps;
      const double minus = probe(inputs);
      inputs[a][i] = original;
      const double numeric = (plus - minus) / (2.0 * options.eps);
      diff = std::max(diff, std::abs(numeric - analytic[a][i]));
      scale = std::max({scale, std::abs(numeric), std::abs(analytic[a][i])});
      ++result.probes;
    }
    const double rel = diff / std::max(scale, noise_floor);
    result.max_relative_error = std::max(result.max_relative_error, rel);
  }
  return result;
}

namespace {

void load_parameters(const ParameterList& params, std::span<const Tensor> in) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    require_same_shape(params[i]->value, in[i + 1], "module_op parameter");
    params[i]->value = in[i + 1];
  }
}

}  // namespace

std::vector<Tensor> module_inputs(Module& module, const Tensor& x) {
  std::vector<Tensor> inputs{x};
  for (const Parameter* p : module.parameters()) inputs.push_back(p->value);
  return inputs;
}

DifferentiableOp module_op(Module& module, RunMode mode) {
  DifferentiableOp op;
  op.forward = [&module, mode](std::span<const Tensor> in) {
    load_parameters(module.parameters(), in);
    return module.forward(in[0], mode);
  };
  op.backward = [&module, mode](std::span<const Tensor> in,
                                const Tensor& grad_out) {
    const ParameterList params = module.parameters();
    load_parameters(params, in);
    module.zero_grad();
    module.forward(in[0], mode);
    std::vector<Tensor> grads{module.backward(grad_out)};
    for (const Parameter* p : params) {
      grads.push_back(p->grad.empty() ? Tensor(p->value.shape()) : p->grad);
    }
    return grads;
  };
  return op;
}

}  // namespace tdc
