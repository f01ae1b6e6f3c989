#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "ddm/nn/modules.hpp"

namespace ddm {

// Adaptive-moment optimizer over a parameter registry.
template <typename S>
class Adam {
 public:
  Adam(ParamRegistry<S>& reg, double lr, double beta1 = 0.9, double beta2 = 0.999,
       double eps = 1e-8)
      : reg_(reg), lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {
    if (lr <= 0) throw std::invalid_argument("adam: learning rate must be positive");
    m_.reserve(reg.params().size());
    v_.reserve(reg.params().size());
    for (const auto& p : reg.params()) {
      m_.push_back(Tensor<S>::zeros_like(p->value));
      v_.push_back(Tensor<S>::zeros_like(p->value));
    }
  }

  void step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
    const auto& params = reg_.params();
    for (std::size_t i = 0; i < params.size(); ++i) {
      Tensor<S>& p = params[i]->value;
      const Tensor<S>& g = params[i]->grad;
      Tensor<S>& m = m_[i];
      Tensor<S>& v = v_[i];
      for (std::size_t j = 0; j < p.size(); ++j) {
        const double gj = g.v[j];
        m.v[j] = static_cast<S>(b1_ * m.v[j] + (1.0 - b1_) * gj);
        v.v[j] = static_cast<S>(b2_ * v.v[j] + (1.0 - b2_) * gj * gj);
        const double mhat = m.v[j] / bc1;
        const double vhat = v.v[j] / bc2;
        p.v[j] -= static_cast<S>(lr_ * mhat / (std::sqrt(vhat) + eps_));
      }
    }
  }

  std::int64_t step_count() const { return t_; }
  void set_step_count(std::int64_t t) { t_ = t; }
  double learning_rate() const { return lr_; }

  // Moment tensors named for checkpointing.
  std::vector<std::pair<std::string, const Tensor<S>*>> state_tensors() const {
    std::vector<std::pair<std::string, const Tensor<S>*>> out;
    const auto& params = reg_.params();
    for (std::size_t i = 0; i < params.size(); ++i) {
      out.emplace_back("adam.m." + params[i]->name, &m_[i]);
      out.emplace_back("adam.v." + params[i]->name, &v_[i]);
    }
    return out;
  }
  std::vector<std::pair<std::string, Tensor<S>*>> mutable_state_tensors() {
    std::vector<std::pair<std::string, Tensor<S>*>> out;
    const auto& params = reg_.params();
    for (std::size_t i = 0; i < params.size(); ++i) {
      out.emplace_back("adam.m." + params[i]->name, &m_[i]);
      out.emplace_back("adam.v." + params[i]->name, &v_[i]);
    }
    return out;
  }

 private:
  ParamRegistry<S>& reg_;
  double lr_, b1_, b2_, eps_;
  std::int64_t t_ = 0;
  std::vector<Tensor<S>> m_, v_;
};

}  // namespace ddm
