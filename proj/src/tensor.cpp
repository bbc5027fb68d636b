#include "fmla/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace fmla {

std::int64_t dims_numel(const Dims& d) {
  std::int64_t n = 1;
  for (int e : d) n *= e;
  return n;
}

std::string dims_str(const Dims& d) {
  std::string s = "[";
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(d[i]);
  }
  return s + "]";
}

namespace {
void check_dims(const Dims& d) {
  if (d.empty()) throw DimensionError("tensor rank must be >= 1");
  for (int e : d)
    if (e <= 0) throw DimensionError("non-positive extent in " + dims_str(d));
}
}  // namespace

Tensor Tensor::zeros(Dims d, bool requires_grad) {
  check_dims(d);
  auto n = std::make_shared<Node>();
  n->data.assign(static_cast<std::size_t>(dims_numel(d)), 0.0);
  n->dims = std::move(d);
  n->requires_grad = requires_grad;
  return Tensor(std::move(n));
}

Tensor Tensor::full(Dims d, double value, bool requires_grad) {
  Tensor t = zeros(std::move(d), requires_grad);
  std::fill(t.node()->data.begin(), t.node()->data.end(), value);
  return t;
}

Tensor Tensor::from_data(Dims d, std::vector<double> values, bool requires_grad) {
  check_dims(d);
  if (static_cast<std::int64_t>(values.size()) != dims_numel(d))
    throw DimensionError("data length " + std::to_string(values.size()) +
                         " does not match dims " + dims_str(d));
  auto n = std::make_shared<Node>();
  n->dims = std::move(d);
  n->data = std::move(values);
  n->requires_grad = requires_grad;
  return Tensor(std::move(n));
}

Tensor Tensor::randn(Dims d, Rng& rng, double stddev, bool requires_grad) {
  Tensor t = zeros(std::move(d), requires_grad);
  std::normal_distribution<double> dist(0.0, stddev);
  for (double& v : t.node()->data) v = dist(rng);
  return t;
}

const std::vector<double>& Tensor::grad() const {
  if (!node_ || node_->grad.empty())
    throw Error("gradient not available; run backward first");
  return node_->grad;
}

double Tensor::scalar() const {
  if (numel() != 1)
    throw DimensionError("scalar() on tensor of shape " + dims_str(dims()));
  return node_->data[0];
}

Tensor Tensor::detach() const {
  auto n = std::make_shared<Node>();
  n->dims = node_->dims;
  n->data = node_->data;
  n->requires_grad = false;
  return Tensor(std::move(n));
}

namespace {
thread_local Tape g_root_tape;
thread_local Tape* g_current_tape = &g_root_tape;
thread_local bool g_grad_enabled = true;
}  // namespace

Tape* Tape::current() { return g_current_tape; }

Tape::Scope::Scope() : prev_(g_current_tape) { g_current_tape = &tape_; }
Tape::Scope::~Scope() { g_current_tape = prev_; }

void Tape::record(std::shared_ptr<Node> n) {
  n->seq = next_seq_++;
  record_.push_back(std::move(n));
}

void Tape::clear() {
  record_.clear();
  next_seq_ = 1;
}

void Tape::backward(const Tensor& root, bool free_buffers) {
  if (root.numel() != 1)
    throw DimensionError("backward root must be scalar, got " +
                         dims_str(root.dims()));
  Node* rn = root.node().get();
  if (!rn->requires_grad) return;  // nothing reaches a parameter

  // Mark the subgraph that feeds the root.
  std::unordered_set<Node*> reachable;
  std::vector<Node*> stack{rn};
  while (!stack.empty()) {
    Node* n = stack.back();
    stack.pop_back();
    if (!reachable.insert(n).second) continue;
    for (const auto& p : n->parents)
      if (p->requires_grad) stack.push_back(p.get());
  }

  rn->ensure_grad();
  rn->grad[0] += 1.0;

  for (auto it = record_.rbegin(); it != record_.rend(); ++it) {
    Node* n = it->get();
    if (!reachable.count(n) || !n->backward) continue;
    if (!n->grad.empty()) n->backward(*n);
    if (free_buffers && !n->is_leaf) {
      std::vector<double>().swap(n->data);
      std::vector<double>().swap(n->grad);
    }
  }
}

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

bool grad_enabled() { return g_grad_enabled; }

}  // namespace fmla
