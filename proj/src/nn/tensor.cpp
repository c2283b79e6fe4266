#include "netseg/nn/tensor.hpp"

#include <unordered_set>

#include "netseg/error.hpp"

namespace netseg::nn {

namespace {
thread_local bool g_grad_enabled = true;
}

std::string to_string(const TensorShape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "," : "") + std::to_string(s[i]);
  return out + "]";
}

std::size_t numel(const TensorShape& s) {
  std::size_t n = 1;
  for (auto d : s) n *= d;
  return n;
}

Tensor::Tensor(TensorShape shape, double fill, bool requires_grad) : node_(std::make_shared<Node>()) {
  node_->value.assign(nn::numel(shape), fill);
  node_->shape = std::move(shape);
  node_->requires_grad = requires_grad;
}

Tensor::Tensor(TensorShape shape, std::vector<double> values, bool requires_grad) : node_(std::make_shared<Node>()) {
  if (values.size() != nn::numel(shape))
    throw Error(ErrorCode::ShapeMismatch,
                std::to_string(values.size()) + " values do not fill tensor shape " + to_string(shape));
  node_->shape = std::move(shape);
  node_->value = std::move(values);
  node_->requires_grad = requires_grad;
}

double Tensor::item() const {
  if (numel() != 1) throw Error(ErrorCode::ShapeMismatch, "item() needs a single-element tensor");
  return node_->value[0];
}

Tensor Tensor::make_result(TensorShape shape, std::vector<double> values, const std::vector<Tensor>& parents,
                           std::function<void(Node&)> backward_fn) {
  Tensor t(std::move(shape), std::move(values));
  if (!g_grad_enabled) return t;
  bool any = false;
  for (const auto& p : parents) any = any || (p.defined() && p.requires_grad());
  if (!any) return t;
  t.node_->requires_grad = true;
  for (const auto& p : parents) t.node_->parents.push_back(p.node_);
  t.node_->backward_fn = std::move(backward_fn);
  return t;
}

void Tensor::backward() {
  if (numel() != 1) throw Error(ErrorCode::ShapeMismatch, "backward() needs a scalar, got " + to_string(shape()));
  if (!requires_grad()) return;
  // iterative post-order DFS
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, i] = stack.back();
    if (i < n->parents.size()) {
      Node* p = n->parents[i++].get();
      if (p->requires_grad && seen.insert(p).second) stack.push_back({p, 0});
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  node_->ensure_grad()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
  }
  for (Node* n : order)
    if (n->backward_fn) {
      n->backward_fn = nullptr;
      n->parents.clear();
    }
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

}  // namespace netseg::nn
