#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace alood {

using Shape = std::vector<std::size_t>;

std::string shape_to_string(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

/// Dense row-major array of doubles. Plain value type; gradient tracking
/// lives on a Tape, not on the tensor itself.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape);  // zero-filled
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double value);
  static Tensor vector(std::vector<double> values);
  static Tensor filled(Shape shape, double value);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<const double> data() const { return data_; }
  std::span<double> data() { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  const double& operator[](std::size_t i) const { return data_[i]; }

  double& at(std::size_t i, std::size_t j);
  double at(std::size_t i, std::size_t j) const;
  double& at(std::size_t c, std::size_t i, std::size_t j);
  double at(std::size_t c, std::size_t i, std::size_t j) const;

  /// Value of a single-element tensor.
  double item() const;

  Tensor reshaped(Shape shape) const;
  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

/// Trainable tensor with a version counter. Every mutable access bumps the
/// version so that a tape recorded against an older value can be detected.
class Parameter {
 public:
  Parameter() = default;
  explicit Parameter(Tensor value) : value_(std::move(value)) {}

  const Tensor& value() const { return value_; }
  Tensor& mutable_value() {
    ++version_;
    return value_;
  }
  void assign(Tensor value);
  std::uint64_t version() const { return version_; }

 private:
  Tensor value_;
  std::uint64_t version_ = 0;
};

/// Handle to a node recorded on a Tape.
struct Var {
  std::uint32_t id = 0;
};

class Tape;

/// Backward rule of one recorded operation: receives the gradient of the
/// output and accumulates into the gradients of the inputs (pre-sized,
/// zero-initialized, in input order).
using BackwardFn =
    std::function<void(const Tensor& grad_out, std::span<Tensor> grad_inputs)>;

/// Reverse-mode tape. Nodes are appended in evaluation order, so the node
/// list is always topologically sorted. Single owner, single thread.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  /// Leaf that never receives a gradient.
  Var constant(Tensor value);
  /// Leaf that receives a gradient.
  Var leaf(Tensor value);
  /// Leaf bound to a Parameter; backward fails if the parameter was
  /// mutated after recording.
  Var parameter(const Parameter& param);

  /// Records the result of an operation. If no input requires a gradient
  /// the backward rule is dropped and the node behaves like a constant.
  Var record(Tensor value, std::vector<Var> inputs, BackwardFn backward);

  const Tensor& value(Var v) const;
  bool requires_grad(Var v) const;

  /// Gradient of the last backward pass; zeros for nodes it did not reach.
  Tensor grad(Var v) const;

  /// Runs the backward pass from a single-element output. Repeatable:
  /// every call starts from cleared gradients.
  void backward(Var output);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    std::vector<Var> inputs;
    BackwardFn backward;
    bool requires_grad = false;
    const Parameter* param = nullptr;
    std::uint64_t param_version = 0;
  };

  const Node& node(Var v) const;

  std::vector<Node> nodes_;
  std::vector<Tensor> grads_;
};

}  // namespace alood
