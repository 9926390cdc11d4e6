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

#include "simulst/tensor.h"

#include <algorithm>
#include <sstream>

#include "simulst/error.h"

namespace simulst {

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << 'x';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

template <typename Real>
Tensor<Real> Tensor<Real>::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), Real(0), requires_grad);
}

template <typename Real>
Tensor<Real> Tensor<Real>::full(Shape shape, Real value, bool requires_grad) {
  auto node = std::make_shared<TensorNode<Real>>();
  node->data.assign(shape_size(shape), value);
  node->shape = std::move(shape);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

template <typename Real>
Tensor<Real> Tensor<Real>::from(Shape shape, std::vector<Real> values, bool requires_grad) {
  if (shape_size(shape) != values.size()) {
    throw DimensionError("tensor shape " + shape_string(shape) + " needs " +
                         std::to_string(shape_size(shape)) + " values, got " +
                         std::to_string(values.size()));
  }
  auto node = std::make_shared<TensorNode<Real>>();
  node->shape = std::move(shape);
  node->data = std::move(values);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

template <typename Real>
Tensor<Real> Tensor<Real>::scalar(Real value, bool requires_grad) {
  return from(Shape{1}, {value}, requires_grad);
}

template <typename Real>
std::size_t Tensor<Real>::rows() const {
  return rank() <= 1 ? 1 : node_->shape.front();
}

template <typename Real>
std::size_t Tensor<Real>::cols() const {
  return rank() == 0 ? 1 : node_->shape.back();
}

template <typename Real>
Real Tensor<Real>::item() const {
  if (size() != 1) {
    throw DimensionError("item() on tensor of shape " + shape_string(shape()));
  }
  return node_->data[0];
}

template <typename Real>
std::span<const Real> Tensor<Real>::grad() const {
  if (node_->grad.empty()) node_->grad.assign(node_->data.size(), Real(0));
  return node_->grad;
}

template <typename Real>
void Tensor<Real>::zero_grad() {
  std::fill(node_->grad.begin(), node_->grad.end(), Real(0));
}

template <typename Real>
Tensor<Real> Tensor<Real>::detach() const {
  return from(shape(), node_->data, false);
}

namespace {

template <typename Real>
Tape<Real>*& active_tape() {
  thread_local Tape<Real>* tape = nullptr;
  return tape;
}

}  // namespace

template <typename Real>
Tape<Real>::Tape() : previous_(active_tape<Real>()) {
  active_tape<Real>() = this;
}

template <typename Real>
Tape<Real>::~Tape() {
  active_tape<Real>() = previous_;
}

template <typename Real>
Tape<Real>* Tape<Real>::active() {
  return active_tape<Real>();
}

template <typename Real>
void Tape<Real>::backward(const Tensor<Real>& loss) {
  if (!loss.defined() || loss.size() != 1) {
    throw DimensionError("backward() needs a scalar loss, got shape " +
                         (loss.defined() ? shape_string(loss.shape()) : std::string("<undefined>")));
  }
  TensorNode<Real>* root = loss.node();
  if (root->is_leaf) {
    if (root->requires_grad) root->accumulate(0, Real(1));
    return;
  }
  std::size_t end = entries_.size();
  while (end > 0 && entries_[end - 1].output.get() != root) --end;
  if (end == 0) throw Error("backward(): loss was not produced on this tape");

  for (std::size_t i = 0; i < end; ++i) {
    TensorNode<Real>& out = *entries_[i].output;
    std::fill(out.grad.begin(), out.grad.end(), Real(0));
    out.touched = false;
  }
  root->accumulate(0, Real(1));
  for (std::size_t i = end; i-- > 0;) {
    if (entries_[i].output->touched) entries_[i].backward();
  }
}

template <typename Real>
NoGradGuard<Real>::NoGradGuard() : saved_(active_tape<Real>()) {
  active_tape<Real>() = nullptr;
}

template <typename Real>
NoGradGuard<Real>::~NoGradGuard() {
  active_tape<Real>() = saved_;
}

template <typename Real>
void backward(const Tensor<Real>& loss) {
  Tape<Real>* tape = Tape<Real>::active();
  if (tape == nullptr) {
    if (loss.defined() && loss.size() == 1 && loss.node()->is_leaf) {
      if (loss.requires_grad()) loss.node()->accumulate(0, Real(1));
      return;
    }
    throw Error("backward() called without an active tape");
  }
  tape->backward(loss);
}

namespace detail {

template <typename Real>
bool should_record(const std::vector<Tensor<Real>>& inputs) {
  if (Tape<Real>::active() == nullptr) return false;
  return std::any_of(inputs.begin(), inputs.end(),
                     [](const Tensor<Real>& t) { return t.defined() && t.requires_grad(); });
}

template <typename Real>
Tensor<Real> make_result(Shape shape, std::vector<Real> values,
                         const std::vector<Tensor<Real>>& inputs,
                         std::function<void(TensorNode<Real>&)> backward_fn) {
  Tensor<Real> out = Tensor<Real>::from(std::move(shape), std::move(values));
  if (!should_record(inputs)) return out;
  TensorNode<Real>* raw = out.node();
  raw->requires_grad = true;
  raw->is_leaf = false;
  typename Tape<Real>::Entry entry;
  entry.output = out.node_ptr();
  for (const auto& t : inputs) {
    if (t.defined()) entry.inputs.push_back(t.node_ptr());
  }
  entry.backward = [raw, fn = std::move(backward_fn)] { fn(*raw); };
  Tape<Real>::active()->record(std::move(entry));
  return out;
}

template bool should_record<float>(const std::vector<Tensor<float>>&);
template bool should_record<double>(const std::vector<Tensor<double>>&);
template Tensor<float> make_result<float>(Shape, std::vector<float>, const std::vector<Tensor<float>>&,
                                          std::function<void(TensorNode<float>&)>);
template Tensor<double> make_result<double>(Shape, std::vector<double>,
                                            const std::vector<Tensor<double>>&,
                                            std::function<void(TensorNode<double>&)>);

}  // namespace detail

template class Tensor<float>;
template class Tensor<double>;
template class Tape<float>;
template class Tape<double>;
template class NoGradGuard<float>;
template class NoGradGuard<double>;
template void backward<float>(const Tensor<float>&);
template void backward<double>(const Tensor<double>&);

}  // namespace simulst
