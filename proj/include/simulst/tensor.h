// Copyright 2026 The simulst Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Dense row-major tensors with define-by-run reverse-mode differentiation.
//
// A Tensor is a cheap handle onto a shared TensorNode. Operations executed
// while a Tape is active (and with at least one input requiring gradients)
// append a backward closure to that tape. backward() replays the tape in
// reverse. Without an active tape nothing is recorded, which is how
// inference runs.
//
// Two scalar types are instantiated: float for training and double for
// gradient verification.

#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace simulst {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

template <typename Real>
struct TensorNode {
  Shape shape;
  std::vector<Real> data;
  std::vector<Real> grad;  // empty until first accumulation
  bool requires_grad = false;
  bool is_leaf = true;
  bool touched = false;  // received gradient during the current backward pass

  void accumulate(std::size_t i, Real g) {
    if (grad.empty()) grad.assign(data.size(), Real(0));
    grad[i] += g;
    touched = true;
  }
  std::span<Real> grad_buffer() {
    if (grad.empty()) grad.assign(data.size(), Real(0));
    touched = true;
    return grad;
  }
};

template <typename Real>
class Tensor {
 public:
  using NodePtr = std::shared_ptr<TensorNode<Real>>;

  Tensor() = default;
  explicit Tensor(NodePtr node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, Real value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<Real> values, bool requires_grad = false);
  static Tensor scalar(Real value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t size() const { return node_->data.size(); }
  // Leading dimension of a rank-2 tensor (1 for rank <= 1).
  std::size_t rows() const;
  // Trailing dimension.
  std::size_t cols() const;

  std::span<const Real> data() const { return node_->data; }
  std::span<Real> mutable_data() { return node_->data; }
  Real at(std::size_t i) const { return node_->data.at(i); }
  Real at(std::size_t r, std::size_t c) const { return node_->data.at(r * cols() + c); }
  Real item() const;

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool flag) { node_->requires_grad = flag; }
  bool has_grad() const { return !node_->grad.empty(); }
  // Gradient buffer; zeros when no gradient has been accumulated yet.
  std::span<const Real> grad() const;
  std::span<Real> mutable_grad() { return node_->grad_buffer(); }
  void zero_grad();

  // Copy of the values without autograd history.
  Tensor detach() const;

  TensorNode<Real>* node() const { return node_.get(); }
  const NodePtr& node_ptr() const { return node_; }

 private:
  NodePtr node_;
};

// Ordered record of differentiable operations executed while active. Entries
// are appended in execution order, so every entry's inputs were produced by
// earlier entries or are leaves.
template <typename Real>
class Tape {
 public:
  struct Entry {
    std::shared_ptr<TensorNode<Real>> output;
    std::vector<std::shared_ptr<TensorNode<Real>>> inputs;
    std::function<void()> backward;
  };

  // Constructing a Tape makes it the active tape of the calling thread; the
  // previously active tape is restored on destruction.
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active();

  void record(Entry entry) { entries_.push_back(std::move(entry)); }
  std::size_t size() const { return entries_.size(); }
  const std::vector<Entry>& entries() const { return entries_; }

  // Fills gradients of every requires_grad tensor reachable from loss.
  // Leaf gradients accumulate across calls; intermediate gradients are reset
  // at the start of each call.
  void backward(const Tensor<Real>& loss);

 private:
  std::vector<Entry> entries_;
  Tape* previous_;
};

// Suspends recording on the current thread for its lifetime.
template <typename Real>
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  Tape<Real>* saved_;
};

// Runs backward on the active tape.
template <typename Real>
void backward(const Tensor<Real>& loss);

namespace detail {

// True when an operation over these inputs must be recorded.
template <typename Real>
bool should_record(const std::vector<Tensor<Real>>& inputs);

// Builds the output tensor and, when recording, registers the backward
// closure. The closure receives the output node and may read its grad.
template <typename Real>
Tensor<Real> make_result(Shape shape, std::vector<Real> values,
                         const std::vector<Tensor<Real>>& inputs,
                         std::function<void(TensorNode<Real>&)> backward_fn);

}  // namespace detail

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

}  // namespace simulst
