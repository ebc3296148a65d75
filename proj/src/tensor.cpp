#include "alood/tensor.hpp"

#include <sstream>

#include "alood/error.hpp"

namespace alood {

std::string shape_to_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << 'x';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

namespace {

void check_dims(const Shape& shape) {
  for (auto d : shape) {
    if (d == 0) {
      throw DimensionError("tensor dimensions must be positive, got " +
                           shape_to_string(shape));
    }
  }
}

}  // namespace

Tensor::Tensor(Shape shape) : shape_(std::move(shape)) {
  check_dims(shape_);
  data_.assign(shape_numel(shape_), 0.0);
}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  check_dims(shape_);
  if (shape_numel(shape_) != data_.size()) {
    throw DimensionError("shape " + shape_to_string(shape_) + " holds " +
                         std::to_string(shape_numel(shape_)) +
                         " elements but data has " +
                         std::to_string(data_.size()));
  }
}

Tensor Tensor::scalar(double value) { return Tensor({1}, {value}); }

Tensor Tensor::vector(std::vector<double> values) {
  const std::size_t n = values.size();
  return Tensor({n}, std::move(values));
}

Tensor Tensor::filled(Shape shape, double value) {
  Tensor t(std::move(shape));
  for (auto& x : t.data_) x = value;
  return t;
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= shape_.size()) {
    throw DimensionError("axis " + std::to_string(axis) +
                         " out of range for shape " + shape_to_string(shape_));
  }
  return shape_[axis];
}

double& Tensor::at(std::size_t i, std::size_t j) {
  return data_[i * shape_[1] + j];
}
double Tensor::at(std::size_t i, std::size_t j) const {
  return data_[i * shape_[1] + j];
}
double& Tensor::at(std::size_t c, std::size_t i, std::size_t j) {
  return data_[(c * shape_[1] + i) * shape_[2] + j];
}
double Tensor::at(std::size_t c, std::size_t i, std::size_t j) const {
  return data_[(c * shape_[1] + i) * shape_[2] + j];
}

double Tensor::item() const {
  if (data_.size() != 1) {
    throw DimensionError("item() needs a single-element tensor, got " +
                         shape_to_string(shape_));
  }
  return data_[0];
}

Tensor Tensor::reshaped(Shape shape) const {
  return Tensor(std::move(shape), data_);
}

void Parameter::assign(Tensor value) {
  ++version_;
  value_ = std::move(value);
}

// ---------------------------------------------------------------------------

const Tape::Node& Tape::node(Var v) const {
  if (v.id >= nodes_.size()) {
    throw Error("variable " + std::to_string(v.id) + " is not on this tape");
  }
  return nodes_[v.id];
}

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, {}, false});
  return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Var Tape::leaf(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, {}, true});
  return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Var Tape::parameter(const Parameter& param) {
  nodes_.push_back(Node{param.value(), {}, {}, true, &param, param.version()});
  return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Var Tape::record(Tensor value, std::vector<Var> inputs, BackwardFn backward) {
  bool needs_grad = false;
  for (auto in : inputs) needs_grad = needs_grad || node(in).requires_grad;
  Node n{std::move(value), {}, {}, needs_grad};
  if (needs_grad) {
    n.inputs = std::move(inputs);
    n.backward = std::move(backward);
  }
  nodes_.push_back(std::move(n));
  return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

const Tensor& Tape::value(Var v) const { return node(v).value; }

bool Tape::requires_grad(Var v) const { return node(v).requires_grad; }

Tensor Tape::grad(Var v) const {
  const auto& n = node(v);
  if (v.id < grads_.size() && !grads_[v.id].empty()) return grads_[v.id];
  return Tensor(n.value.shape());
}

void Tape::backward(Var output) {
  const auto& out = node(output);
  if (out.value.size() != 1) {
    throw DimensionError("backward needs a scalar output, got shape " +
                         shape_to_string(out.value.shape()));
  }
  for (const auto& n : nodes_) {
    if (n.param && n.param->version() != n.param_version) {
      throw NumericError(
          "stale tape: a parameter was modified after the forward pass");
    }
  }

  grads_.assign(nodes_.size(), Tensor{});
  if (!out.requires_grad) return;
  grads_[output.id] = Tensor::filled(out.value.shape(), 1.0);

  std::vector<Tensor> input_grads;
  for (std::size_t i = output.id + 1; i-- > 0;) {
    const Node& n = nodes_[i];
    if (!n.backward || grads_[i].empty()) continue;
    input_grads.clear();
    for (auto in : n.inputs) input_grads.emplace_back(nodes_[in.id].value.shape());
    n.backward(grads_[i], input_grads);
    for (std::size_t k = 0; k < n.inputs.size(); ++k) {
      const auto id = n.inputs[k].id;
      if (!nodes_[id].requires_grad) continue;
      if (grads_[id].empty()) {
        grads_[id] = std::move(input_grads[k]);
      } else {
        auto dst = grads_[id].data();
        auto src = input_grads[k].data();
        for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
      }
    }
  }
}

}  // namespace alood
