#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "fmla/error.hpp"
#include "fmla/rng.hpp"

namespace fmla {

using Dims = std::vector<int>;

std::int64_t dims_numel(const Dims& d);
std::string dims_str(const Dims& d);

// One value in the computation graph. Leaves are parameters or constants;
// interior nodes carry a backward closure that scatters this node's gradient
// into its parents.
struct Node {
  Dims dims;
  std::vector<double> data;
  std::vector<double> grad;  // sized lazily on first accumulation
  bool requires_grad = false;
  bool is_leaf = true;
  std::uint64_t seq = 0;  // tape record order
  std::string name;       // parameters only
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
  }
};

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Dims d, bool requires_grad = false);
  static Tensor full(Dims d, double value, bool requires_grad = false);
  static Tensor from_data(Dims d, std::vector<double> values,
                          bool requires_grad = false);
  static Tensor randn(Dims d, Rng& rng, double stddev, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Dims& dims() const { return node_->dims; }
  int dim(int i) const { return node_->dims.at(static_cast<std::size_t>(i)); }
  int rank() const { return static_cast<int>(node_->dims.size()); }
  std::int64_t numel() const { return static_cast<std::int64_t>(node_->data.size()); }

  const std::vector<double>& raw() const { return node_->data; }
  std::vector<double>& raw() { return node_->data; }

  // Element access for 1-D/2-D/3-D tensors (tests and small hot paths).
  double operator()(int i) const { return node_->data[static_cast<std::size_t>(i)]; }
  double operator()(int i, int j) const {
    return node_->data[static_cast<std::size_t>(i) * dim(1) + j];
  }
  double operator()(int i, int j, int k) const {
    return node_->data[(static_cast<std::size_t>(i) * dim(1) + j) * dim(2) + k];
  }

  bool requires_grad() const { return node_->requires_grad; }
  const std::vector<double>& grad() const;
  bool has_grad() const { return node_ && !node_->grad.empty(); }
  void zero_grad() {
    if (node_) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
  }

  double scalar() const;
  Tensor detach() const;  // same data, no gradient path

  const std::string& name() const { return node_->name; }
  void set_name(std::string n) { node_->name = std::move(n); }

  std::shared_ptr<Node> node() const { return node_; }
  explicit Tensor(std::shared_ptr<Node> n) : node_(std::move(n)) {}

 private:
  std::shared_ptr<Node> node_;
};

// Execution-ordered record of the ops of one forward pass. The backward walk
// is a single reverse sweep over the record, so every node is visited exactly
// once and in reverse execution order.
class Tape {
 public:
  // Installs a fresh tape on this thread for the lifetime of the scope.
  class Scope;

  static Tape* current();
  void record(std::shared_ptr<Node> n);
  std::size_t size() const { return record_.size(); }
  const std::vector<std::shared_ptr<Node>>& record() const { return record_; }
  void clear();

  // Backpropagates from a scalar root. free_buffers releases interior
  // activations and gradients as soon as they are consumed.
  void backward(const Tensor& root, bool free_buffers = false);

 private:
  std::vector<std::shared_ptr<Node>> record_;
  std::uint64_t next_seq_ = 1;
};

class Tape::Scope {
 public:
  Scope();
  ~Scope();
  Scope(const Scope&) = delete;
  Scope& operator=(const Scope&) = delete;

 private:
  Tape* prev_;
  Tape tape_;
};

inline void backward(const Tensor& root, bool free_buffers = false) {
  Tape::current()->backward(root, free_buffers);
}

// Disables gradient recording on this thread (evaluation paths).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

bool grad_enabled();

}  // namespace fmla
