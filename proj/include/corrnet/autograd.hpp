#pragma once

#include <functional>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "corrnet/tensor.hpp"

namespace corrnet {

template <typename R>
struct Node {
  Tensor<R> value;
  Tensor<R> grad;  // allocated on first accumulation
  bool requires_grad = false;

  Tensor<R>& grad_buffer() {
    if (grad.empty()) grad = Tensor<R>(value.shape());
    return grad;
  }
};

/// Shared handle to a value in the computation graph.
template <typename R>
class Var {
 public:
  Var() = default;
  explicit Var(Tensor<R> value, bool requires_grad = false)
      : node_(std::make_shared<Node<R>>(Node<R>{std::move(value), {}, requires_grad})) {}

  bool defined() const { return static_cast<bool>(node_); }
  const Tensor<R>& value() const { return node_->value; }
  Tensor<R>& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }

  bool has_grad() const { return !node_->grad.empty(); }
  const Tensor<R>& grad() const { return node_->grad; }
  Tensor<R>& grad_buffer() const { return node_->grad_buffer(); }
  void zero_grad() const {
    if (!node_->grad.empty()) node_->grad.fill(R(0));
  }

  Node<R>* node() const { return node_.get(); }

 private:
  std::shared_ptr<Node<R>> node_;
};

/// Ordered record of the primitive operations of one forward pass.
/// `backward` seeds the scalar loss with 1, replays the adjoints newest first
/// and then clears the record, so a tape never spans two passes.
template <typename R>
class Tape {
 public:
  enum class Mode { kRecord, kInference };

  explicit Tape(Mode mode = Mode::kRecord) : mode_(mode) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return mode_ == Mode::kRecord; }

  /// True when an op over `inputs` must be recorded.
  bool wants(std::initializer_list<const Var<R>*> inputs) const {
    if (!recording()) return false;
    for (auto* v : inputs) {
      if (v && v->requires_grad()) return true;
    }
    return false;
  }

  void record(std::string_view op, std::function<void()> adjoint) {
    entries_.push_back({std::string(op), std::move(adjoint)});
  }

  std::size_t size() const { return entries_.size(); }
  const std::string& op_name(std::size_t i) const { return entries_[i].op; }

  /// Optional hook called with each op name as its adjoint runs.
  void set_visitor(std::function<void(const std::string&)> visitor) { visitor_ = std::move(visitor); }

  void backward(Var<R>& loss);
  void clear() { entries_.clear(); }

 private:
  struct Entry {
    std::string op;
    std::function<void()> adjoint;
  };
  Mode mode_;
  std::vector<Entry> entries_;
  std::function<void(const std::string&)> visitor_;
};

template <typename R>
void Tape<R>::backward(Var<R>& loss) {
  if (loss.value().size() != 1) {
    throw ShapeError("backward needs a scalar loss, got " + shape_str(loss.shape()));
  }
  if (loss.requires_grad()) loss.grad_buffer()[0] += R(1);
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    if (visitor_) visitor_(it->op);
    it->adjoint();
  }
  entries_.clear();
}

/// Named tensor owned by a model. Non-learnable parameters never receive
/// gradients.
template <typename R>
struct Parameter {
  std::string name;
  Var<R> var;
  bool learnable = true;
};

template <typename R>
class ParameterSet {
 public:
  Var<R> add(std::string name, Tensor<R> init, bool learnable = true);

  std::vector<Parameter<R>>& items() { return items_; }
  const std::vector<Parameter<R>>& items() const { return items_; }
  std::size_t size() const { return items_.size(); }
  std::size_t scalar_count() const;

  Parameter<R>* find(std::string_view name);
  const Parameter<R>* find(std::string_view name) const;

  void zero_grad();

 private:
  std::vector<Parameter<R>> items_;
};

extern template class ParameterSet<float>;
extern template class ParameterSet<double>;

}  // namespace corrnet
