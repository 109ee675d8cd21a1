#pragma once

#include <Eigen/Core>

#include <memory>
#include <stdexcept>
#include <string>
#include <utility>

namespace acrpose {

// Dense row-major matrix of doubles; the storage type for every tensor value,
// point cloud and feature matrix in the library.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

namespace ad {

struct Node {
  Matrix value;
  Matrix grad;  // lazily allocated, same shape as value
  bool requires_grad = false;
  std::string name;

  void accumulate(const Matrix& g) {
    if (!requires_grad) return;
    if (grad.size() == 0) {
      grad = g;
    } else {
      grad += g;
    }
  }
};

// Handle onto a node of the computation graph. Copies share the node.
// Leaf tensors created with `parameter` persist across tapes and accumulate
// gradients until `zero_grad`; intermediate tensors are produced by Tape ops.
class Tensor {
 public:
  Tensor() = default;

  static Tensor parameter(Matrix value, std::string name = {}) {
    Tensor t(std::move(value));
    t.node_->requires_grad = true;
    t.node_->name = std::move(name);
    return t;
  }

  static Tensor constant(Matrix value) { return Tensor(std::move(value)); }

  bool defined() const { return node_ != nullptr; }
  Eigen::Index rows() const { return node_->value.rows(); }
  Eigen::Index cols() const { return node_->value.cols(); }
  const Matrix& value() const { return node_->value; }
  double item() const {
    if (rows() != 1 || cols() != 1) throw ShapeError("item() on non-scalar tensor");
    return node_->value(0, 0);
  }
  bool requires_grad() const { return node_->requires_grad; }
  const std::string& name() const { return node_->name; }

  // Gradient slot; zeros when nothing has been accumulated.
  Matrix grad() const {
    if (node_->grad.size() == 0) return Matrix::Zero(rows(), cols());
    return node_->grad;
  }
  bool has_grad() const { return node_->grad.size() != 0; }
  void zero_grad() { node_->grad.resize(0, 0); }

  // Replaces the value in place. Shape is immutable.
  void set_value(const Matrix& v) {
    if (v.rows() != rows() || v.cols() != cols()) {
      throw ShapeError("set_value: shape mismatch for tensor '" + name() + "'");
    }
    node_->value = v;
  }
  Matrix& mutable_value() { return node_->value; }

  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  explicit Tensor(Matrix value) : node_(std::make_shared<Node>()) {
    node_->value = std::move(value);
  }

  std::shared_ptr<Node> node_;
  friend class Tape;
};

}  // namespace ad
}  // namespace acrpose
