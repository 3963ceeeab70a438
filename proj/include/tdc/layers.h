// Copyright 2026 The TD-Conformer Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)
//
// Parameterized building blocks over the kernels in kernels.h.

#ifndef TDC_LAYERS_H_
#define TDC_LAYERS_H_

#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "tdc/autodiff.h"
#include "tdc/kernels.h"

namespace tdc {

inline std::string join_name(const std::string& prefix, const std::string& name) {
  return prefix.empty() ? name : prefix + "." + name;
}

// Pointwise (kernel 1) convolution, i.e. a per-frame affine map.
class Linear : public Module {
 public:
  Linear(std::size_t in, std::size_t out, Rng& rng, bool bias = true);

  Tensor forward(const Tensor& x, const RunMode& mode) override;
  Tensor backward(const Tensor& grad_out) override;
  void collect_parameters(const std::string& prefix, ParameterList& out) override;

  Parameter& weight() { return weight_; }
  Parameter& bias() { return bias_; }

 private:
  Parameter weight_;
  Parameter bias_;
  bool has_bias_;
  Tensor input_;
};

class Norm : public Module {
 public:
  Norm(NormKind kind, std::size_t channels, double eps = 1e-5);

  Tensor forward(const Tensor& x, const RunMode& mode) override;
  Tensor backward(const Tensor& grad_out) override;
  void collect_parameters(const std::string& prefix, ParameterList& out) override;

 private:
  NormKind kind_;
  double eps_;
  Parameter gamma_;
  Parameter beta_;
  NormCache cache_;
  bool standardized_ = true;
};

class PRelu : public Module {
 public:
  explicit PRelu(double slope = 0.25);

  Tensor forward(const Tensor& x, const RunMode& mode) override;
  Tensor backward(const Tensor& grad_out) override;
  void collect_parameters(const std::string& prefix, ParameterList& out) override;

 private:
  Parameter slope_;
  Tensor input_;
};

enum class ActivationKind { kRelu, kSilu, kGlu };

class Activation : public Module {
 public:
  explicit Activation(ActivationKind kind) : kind_(kind) {}

  Tensor forward(const Tensor& x, const RunMode& mode) override;
  Tensor backward(const Tensor& grad_out) override;
  void collect_parameters(const std::string&, ParameterList&) override {}

 private:
  ActivationKind kind_;
  Tensor input_;
};

// Inverted dropout; identity outside training.
class Dropout : public Module {
 public:
  explicit Dropout(double rate) : rate_(rate) {}

  Tensor forward(const Tensor& x, const RunMode& mode) override;
  Tensor backward(const Tensor& grad_out) override;
  void collect_parameters(const std::string&, ParameterList&) override {}

 private:
  double rate_;
  Tensor mask_;  // empty when the last forward was the identity
};

class DepthwiseConv : public Module {
 public:
  DepthwiseConv(std::size_t channels, std::size_t kernel, Rng& rng);

  Tensor forward(const Tensor& x, const RunMode& mode) override;
  Tensor backward(const Tensor& grad_out) override;
  void collect_parameters(const std::string& prefix, ParameterList& out) override;

 private:
  Parameter weight_;
  Parameter bias_;
  Padding pad_;
  Tensor input_;
};

class Conv : public Module {
 public:
  Conv(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride,
       Padding pad, Rng& rng, bool bias = true);

  Tensor forward(const Tensor& x, const RunMode& mode) override;
  Tensor backward(const Tensor& grad_out) override;
  void collect_parameters(const std::string& prefix, ParameterList& out) override;

  Parameter& weight() { return weight_; }

 private:
  Parameter weight_;
  Parameter bias_;
  std::size_t stride_;
  Padding pad_;
  bool has_bias_;
  Tensor input_;
};

class TransposedConv : public Module {
 public:
  TransposedConv(std::size_t in, std::size_t out, std::size_t kernel,
                 std::size_t stride, Rng& rng, bool bias = true);

  Tensor forward(const Tensor& x, const RunMode& mode) override;
  Tensor backward(const Tensor& grad_out) override;
  void collect_parameters(const std::string& prefix, ParameterList& out) override;

  Parameter& weight() { return weight_; }

 private:
  Parameter weight_;
  Parameter bias_;
  std::size_t stride_;
  bool has_bias_;
  Tensor input_;
};

class Sequential : public Module {
 public:
  template <typename M, typename... Args>
  M& add(std::string name, Args&&... args) {
    auto m = std::make_unique<M>(std::forward<Args>(args)...);
    M& ref = *m;
    children_.emplace_back(std::move(name), std::move(m));
    return ref;
  }

  Tensor forward(const Tensor& x, const RunMode& mode) override;
  Tensor backward(const Tensor& grad_out) override;
  void collect_parameters(const std::string& prefix, ParameterList& out) override;

 private:
  std::vector<std::pair<std::string, std::unique_ptr<Module>>> children_;
};

}  // namespace tdc

#endif  // TDC_LAYERS_H_
