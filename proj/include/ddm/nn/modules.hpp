#pragma once

#include <cmath>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "ddm/autograd/ops.hpp"
#include "ddm/autograd/tape.hpp"
#include "ddm/core/rng.hpp"

namespace ddm {

// Collects every learnable tensor and persistent buffer of a model, in a
// fixed registration order used by checkpoints and the optimizer.
template <typename S>
class ParamRegistry {
 public:
  struct Buffer {
    std::string name;
    std::unique_ptr<Tensor<S>> value;
  };

  Parameter<S>& add(std::string name, Tensor<S> value) {
    params_.push_back(std::make_unique<Parameter<S>>(std::move(name), std::move(value)));
    return *params_.back();
  }
  Tensor<S>& add_buffer(std::string name, Tensor<S> value) {
    buffers_.push_back({std::move(name), std::make_unique<Tensor<S>>(std::move(value))});
    return *buffers_.back().value;
  }

  std::vector<std::unique_ptr<Parameter<S>>>& params() { return params_; }
  const std::vector<std::unique_ptr<Parameter<S>>>& params() const { return params_; }
  std::vector<Buffer>& buffers() { return buffers_; }
  const std::vector<Buffer>& buffers() const { return buffers_; }

  void zero_grad() {
    for (auto& p : params_) p->zero_grad();
  }

  Parameter<S>* find(const std::string& name) {
    for (auto& p : params_)
      if (p->name == name) return p.get();
    return nullptr;
  }

  std::size_t scalar_count() const {
    std::size_t total = 0;
    for (const auto& p : params_) total += p->value.size();
    return total;
  }

 private:
  std::vector<std::unique_ptr<Parameter<S>>> params_;
  std::vector<Buffer> buffers_;
};

namespace init {

// He fan-in normal, the usual choice for conv stacks trained from scratch.
template <typename S>
void he_normal(Tensor<S>& w, int fan_in, Rng& rng) {
  const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (auto& e : w.v) e = static_cast<S>(rng.normal(0.0, stddev));
}

}  // namespace init

// 3x3 (pad 1) or 1x1 (pad 0) convolution, stride 1. Convolutions feeding a
// batch norm skip the bias: it would be absorbed by the mean subtraction.
template <typename S>
class Conv2d {
 public:
  Conv2d(ParamRegistry<S>& reg, const std::string& name, int in_c, int out_c, int k, Rng& rng,
         bool with_bias = true)
      : pad_(k / 2),
        weight_(reg.add(name + ".weight", Tensor<S>(out_c, in_c, k, k))),
        bias_(with_bias ? &reg.add(name + ".bias", Tensor<S>(out_c, 1, 1, 1)) : nullptr) {
    init::he_normal(weight_.value, in_c * k * k, rng);
  }

  Var operator()(Tape<S>& t, Var x) const {
    return conv2d(t, x, t.param(weight_), bias_ ? t.param(*bias_) : Var{}, pad_);
  }

  Parameter<S>& weight() { return weight_; }
  Parameter<S>* bias() { return bias_; }

 private:
  int pad_;
  Parameter<S>& weight_;
  Parameter<S>* bias_;
};

// Transposed 2x2 stride-2 convolution (learnable 2x upsampling).
template <typename S>
class ConvTranspose2x {
 public:
  ConvTranspose2x(ParamRegistry<S>& reg, const std::string& name, int in_c, int out_c, Rng& rng)
      : weight_(reg.add(name + ".weight", Tensor<S>(in_c, out_c, 2, 2))),
        bias_(reg.add(name + ".bias", Tensor<S>(out_c, 1, 1, 1))) {
    init::he_normal(weight_.value, in_c * 4, rng);
  }

  Var operator()(Tape<S>& t, Var x) const {
    return conv_transpose2x(t, x, t.param(weight_), t.param(bias_));
  }

 private:
  Parameter<S>& weight_;
  Parameter<S>& bias_;
};

template <typename S>
class BatchNorm2d {
 public:
  BatchNorm2d(ParamRegistry<S>& reg, const std::string& name, int c)
      : gamma_(reg.add(name + ".gamma", Tensor<S>(c, 1, 1, 1))),
        beta_(reg.add(name + ".beta", Tensor<S>(c, 1, 1, 1))),
        run_mean_(reg.add_buffer(name + ".running_mean", Tensor<S>(c, 1, 1, 1))),
        run_var_(reg.add_buffer(name + ".running_var", Tensor<S>(c, 1, 1, 1))) {
    gamma_.value.fill(S(1));
    run_var_.fill(S(1));
  }

  Var operator()(Tape<S>& t, Var x, bool train) const {
    return batchnorm(t, x, t.param(gamma_), t.param(beta_), run_mean_, run_var_, train);
  }

 private:
  Parameter<S>& gamma_;
  Parameter<S>& beta_;
  Tensor<S>& run_mean_;
  Tensor<S>& run_var_;
};

// conv -> batchnorm -> relu, the standard block of the whole network.
template <typename S>
class ConvBnRelu {
 public:
  ConvBnRelu(ParamRegistry<S>& reg, const std::string& name, int in_c, int out_c, int k, Rng& rng)
      : conv_(reg, name, in_c, out_c, k, rng, /*with_bias=*/false), bn_(reg, name + ".bn", out_c) {}

  Var operator()(Tape<S>& t, Var x, bool train) const {
    return relu(t, bn_(t, conv_(t, x), train));
  }

  Conv2d<S>& conv() { return conv_; }

 private:
  Conv2d<S> conv_;
  BatchNorm2d<S> bn_;
};

}  // namespace ddm
