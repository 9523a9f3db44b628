#pragma once

#include <cmath>
#include <vector>

#include "disrec/common.hpp"
#include "disrec/tensor.hpp"

namespace disrec {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Bias-corrected Adam over a fixed list of parameters. Moment accumulators
// are shaped like their parameters; the step counter increases strictly.
class AdamOptimizer {
 public:
  AdamOptimizer(std::vector<Parameter*> params, AdamConfig config = {})
      : params_(std::move(params)), config_(config) {
    first_.reserve(params_.size());
    second_.reserve(params_.size());
    for (const Parameter* p : params_) {
      first_.push_back(Tensor::zeros(p->value.shape()));
      second_.push_back(Tensor::zeros(p->value.shape()));
    }
  }

  std::size_t step_count() const { return step_; }

  // Applies one update in place using the gradients currently stored in the
  // parameters' grad slots.
  void step() {
    ++step_;
    const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(step_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      Parameter& p = *params_[i];
      require(p.value.has_grad(), "AdamOptimizer: parameter has no gradient slot");
      Tensor& m = first_[i];
      Tensor& v = second_[i];
      require(m.same_shape(p.value), "AdamOptimizer: moment shape mismatch");
      for (std::size_t j = 0; j < p.value.size(); ++j) {
        const double g = p.value.grad_at(j);
        m[j] = config_.beta1 * m[j] + (1.0 - config_.beta1) * g;
        v[j] = config_.beta2 * v[j] + (1.0 - config_.beta2) * g * g;
        const double m_hat = m[j] / bc1;
        const double v_hat = v[j] / bc2;
        p.value[j] -= config_.learning_rate * m_hat / (std::sqrt(v_hat) + config_.epsilon);
      }
    }
  }

 private:
  std::vector<Parameter*> params_;
  AdamConfig config_;
  std::size_t step_ = 0;
  std::vector<Tensor> first_;
  std::vector<Tensor> second_;
};

}  // namespace disrec
