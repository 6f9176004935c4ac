#pragma once

#include "error.hpp"
#include "tensor.hpp"

#include <cmath>
#include <vector>

namespace emfusion {

//! Adam with bias correction.
class Adam
{
public:
  explicit Adam(double lr = 5e-4, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
    : lr_(lr)
    , b1_(beta1)
    , b2_(beta2)
    , eps_(eps)
  {}

  double learning_rate() const { return lr_; }
  std::size_t steps() const { return t_; }

  void step(std::vector<Tensor>& params, const std::vector<const Tensor*>& grads)
  {
    if (params.size() != grads.size()) {
      throw UsageError("adam: parameter and gradient counts differ");
    }
    if (m_.empty()) {
      for (const auto& p : params) {
        m_.emplace_back(p.shape);
        v_.emplace_back(p.shape);
      }
    }
    ++t_;
    const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      Tensor& p = params[i];
      const Tensor& g = *grads[i];
      if (g.shape != p.shape) {
        throw UsageError("adam: gradient shape differs for tensor " + std::to_string(i));
      }
      for (std::size_t k = 0; k < p.numel(); ++k) {
        double& m = m_[i].data[k];
        double& v = v_[i].data[k];
        m = b1_ * m + (1.0 - b1_) * g.data[k];
        v = b2_ * v + (1.0 - b2_) * g.data[k] * g.data[k];
        p.data[k] -= lr_ * (m / c1) / (std::sqrt(v / c2) + eps_);
      }
    }
  }

private:
  double lr_, b1_, b2_, eps_;
  std::size_t t_{ 0 };
  std::vector<Tensor> m_, v_;
};

} // namespace emfusion
