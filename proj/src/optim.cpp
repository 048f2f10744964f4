#include "corrnet/optim.hpp"

#include <cmath>

namespace corrnet {

template <typename R>
void Adam<R>::step(ParameterSet<R>& params) {
  auto& items = params.items();
  if (items.empty()) return;
  if (m_.empty()) {
    for (const auto& p : items) {
      m_.emplace_back(p.var.value().size(), 0.0);
      v_.emplace_back(p.var.value().size(), 0.0);
    }
  }
  ++step_;
  const double bc1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(step_));
  for (std::size_t k = 0; k < items.size(); ++k) {
    auto& p = items[k];
    if (!p.learnable || !p.var.has_grad()) continue;
    auto& value = p.var.mutable_value();
    const auto& grad = p.var.grad();
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double g = static_cast<double>(grad[i]) + opts_.weight_decay * static_cast<double>(value[i]);
      m[i] = opts_.beta1 * m[i] + (1.0 - opts_.beta1) * g;
      v[i] = opts_.beta2 * v[i] + (1.0 - opts_.beta2) * g * g;
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      value[i] = static_cast<R>(static_cast<double>(value[i]) - opts_.lr * mhat / (std::sqrt(vhat) + opts_.eps));
    }
  }
}

template class Adam<float>;
template class Adam<double>;

}  // namespace corrnet
