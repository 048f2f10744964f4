#include "corrnet/autograd.hpp"

namespace corrnet {

template <typename R>
Var<R> ParameterSet<R>::add(std::string name, Tensor<R> init, bool learnable) {
  if (find(name)) throw std::invalid_argument("duplicate parameter name: " + name);
  Var<R> v(std::move(init), learnable);
  items_.push_back({std::move(name), v, learnable});
  return v;
}

template <typename R>
std::size_t ParameterSet<R>::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : items_) n += p.var.value().size();
  return n;
}

template <typename R>
Parameter<R>* ParameterSet<R>::find(std::string_view name) {
  for (auto& p : items_) {
    if (p.name == name) return &p;
  }
  return nullptr;
}

template <typename R>
const Parameter<R>* ParameterSet<R>::find(std::string_view name) const {
  for (const auto& p : items_) {
    if (p.name == name) return &p;
  }
  return nullptr;
}

template <typename R>
void ParameterSet<R>::zero_grad() {
  for (auto& p : items_) {
    if (p.learnable) p.var.grad_buffer().fill(R(0));
  }
}

template class ParameterSet<float>;
template class ParameterSet<double>;

}  // namespace corrnet
