#pragma once

// Dense double-precision tensors with an append-only reverse-mode tape.
//
// A Tensor is a cheap value handle: the data buffer is shared and immutable.
// Tensors produced from tape variables carry a node id on that tape; tensors
// without a tape are constants and never record anything.

#include <Eigen/Dense>

#include <cstddef>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "fsi2p/errors.hpp"

namespace fsi2p {

using Index = Eigen::Index;
using Shape = std::vector<Index>;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using NodeId = std::size_t;

std::string shape_str(const Shape& shape);
Index shape_numel(const Shape& shape);

class Tape;

class Tensor {
 public:
  Tensor();
  Tensor(Shape shape, Eigen::VectorXd data);

  static Tensor zeros(Shape shape);
  static Tensor ones(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor scalar(double value);
  static Tensor vector(const Eigen::VectorXd& v);
  static Tensor matrix(const Eigen::Ref<const Eigen::MatrixXd>& m);

  const Shape& shape() const { return shape_; }
  Index rank() const { return static_cast<Index>(shape_.size()); }
  Index dim(Index axis) const;
  Index size() const { return data_ ? data_->size() : 0; }
  bool empty() const { return size() == 0; }

  const Eigen::VectorXd& data() const;
  double operator[](Index i) const { return (*data_)[i]; }
  double item() const;
  // Row-major view of a rank-2 tensor.
  Eigen::Map<const RowMatrix> mat() const;
  RowMatrix to_matrix() const { return mat(); }

  bool requires_grad() const { return node_.has_value(); }
  std::optional<NodeId> tape_id() const { return node_; }
  Tape* tape() const { return tape_; }
  Tensor detach() const;

 private:
  friend class Tape;
  Shape shape_;
  std::shared_ptr<const Eigen::VectorXd> data_;
  Tape* tape_ = nullptr;
  std::optional<NodeId> node_;
};

class GradTable {
 public:
  bool contains(const Tensor& t) const;
  // Gradient for t, or nullopt when t did not participate in the loss.
  std::optional<Tensor> get(const Tensor& t) const;
  const Tensor& at(const Tensor& t) const;
  std::size_t size() const { return grads_.size(); }

 private:
  friend class Tape;
  std::unordered_map<NodeId, Tensor> grads_;
};

class Tape {
 public:
  // Receives the output gradient and one accumulator per input; accumulators
  // for inputs that do not require gradients are null.
  using BackwardFn =
      std::function<void(const Eigen::VectorXd& grad_out, std::span<Eigen::VectorXd*> grad_in)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Tensor variable(const Tensor& value);
  Tensor record(Shape shape, Eigen::VectorXd value, std::span<const Tensor> inputs, BackwardFn fn);
  GradTable backward(const Tensor& loss);

  std::size_t size() const { return nodes_.size(); }
  void clear() {
    nodes_.clear();
    node_shapes_.clear();
  }

 private:
  struct Node {
    Index numel = 0;
    std::vector<std::optional<NodeId>> inputs;
    BackwardFn fn;
  };
  std::vector<Node> nodes_;
  std::vector<Shape> node_shapes_;
};

// The tape shared by the inputs that require gradients, or null.
Tape* common_tape(std::span<const Tensor> inputs);

// ---------------------------------------------------------------------------
// Forward ops. Binary elementwise ops broadcast numpy-style.

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor neg(const Tensor& a);
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);

Tensor matmul(const Tensor& a, const Tensor& b);

Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor softplus(const Tensor& a);
Tensor sqrt(const Tensor& a);
Tensor square(const Tensor& a);

Tensor softmax(const Tensor& a, Index axis);
Tensor log_softmax(const Tensor& a, Index axis);

Tensor concat(std::span<const Tensor> parts, Index axis);
Tensor concat(std::initializer_list<Tensor> parts, Index axis);
Tensor slice(const Tensor& a, Index axis, Index begin, Index end);
Tensor reshape(const Tensor& a, Shape shape);
Tensor transpose(const Tensor& a);
// Rows of a rank-2 tensor picked by index; repeated indices are allowed.
Tensor gather_rows(const Tensor& a, std::span<const Index> rows);

Tensor sum(const Tensor& a);
Tensor sum(const Tensor& a, Index axis);
Tensor mean(const Tensor& a);
Tensor mean(const Tensor& a, Index axis);
Tensor max(const Tensor& a);
Tensor max(const Tensor& a, Index axis);
Tensor broadcast_to(const Tensor& a, Shape shape);

// Each row divided by sqrt(|row|^2 + eps).
Tensor l2_normalize_rows(const Tensor& a, double eps = 1e-12);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator-(const Tensor& a) { return neg(a); }

// ---------------------------------------------------------------------------
// Verification helpers.

struct GradCheckResult {
  double max_rel_error = 0.0;
  Eigen::VectorXd analytic;
  Eigen::VectorXd numeric;
};

// Max over entries of |analytic - central difference| / max(|analytic|, 1e-8).
GradCheckResult finite_diff_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                                  double step = 1e-5);

}  // namespace fsi2p
