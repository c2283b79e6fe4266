#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace netseg::nn {

using TensorShape = std::vector<std::size_t>;

std::string to_string(const TensorShape& s);
std::size_t numel(const TensorShape& s);

/// Dense row-major double array that records how it was computed so gradients can flow back.
class Tensor {
 public:
  struct Node {
    TensorShape shape;
    std::vector<double> value;
    std::vector<double> grad;  // empty until something flows into it
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;

    std::vector<double>& ensure_grad() {
      if (grad.empty()) grad.assign(value.size(), 0.0);
      return grad;
    }
  };

  Tensor() = default;
  explicit Tensor(TensorShape shape, double fill = 0.0, bool requires_grad = false);
  Tensor(TensorShape shape, std::vector<double> values, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const TensorShape& shape() const { return node_->shape; }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t numel() const { return node_->value.size(); }

  std::vector<double>& values() { return node_->value; }
  const std::vector<double>& values() const { return node_->value; }
  /// Gradient buffer; zero-filled on first access.
  std::vector<double>& grad() { return node_->ensure_grad(); }
  bool has_grad() const { return !node_->grad.empty(); }
  bool requires_grad() const { return node_->requires_grad; }
  void zero_grad() { node_->grad.clear(); }

  double item() const;

  /// Reverse pass from a single-element tensor. Interior graph links are released afterwards.
  void backward();

  const std::shared_ptr<Node>& node() const { return node_; }

  /// Wraps an op result. The backward function is kept only when gradients are enabled and some
  /// parent requires them.
  static Tensor make_result(TensorShape shape, std::vector<double> values, const std::vector<Tensor>& parents,
                            std::function<void(Node&)> backward_fn);

 private:
  std::shared_ptr<Node> node_;
};

bool grad_enabled();

/// Disables graph recording for its lifetime (inference, evaluation).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

}  // namespace netseg::nn
