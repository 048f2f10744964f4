#pragma once

#include <vector>

#include "corrnet/autograd.hpp"

namespace corrnet {

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;  // L2 term added to the gradient
};

/// Adam with bias correction. Moment buffers are created lazily on the first
/// step and matched to parameters by position, so the parameter set must not
/// be reordered between steps.
template <typename R>
class Adam {
 public:
  explicit Adam(AdamOptions opts = {}) : opts_(opts) {}

  void set_lr(double lr) { opts_.lr = lr; }
  double lr() const { return opts_.lr; }
  long steps() const { return step_; }

  void step(ParameterSet<R>& params);

 private:
  AdamOptions opts_;
  long step_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

extern template class Adam<float>;
extern template class Adam<double>;

}  // namespace corrnet
