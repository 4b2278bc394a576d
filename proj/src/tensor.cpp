#include "fsi2p/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

namespace fsi2p {

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Index shape_numel(const Shape& shape) {
  Index n = 1;
  for (Index d : shape) n *= d;
  return n;
}

// ---------------------------------------------------------------------------
// Tensor

Tensor::Tensor() : data_(std::make_shared<const Eigen::VectorXd>()) {}

Tensor::Tensor(Shape shape, Eigen::VectorXd data) : shape_(std::move(shape)) {
  for (Index d : shape_) {
    if (d <= 0) throw ShapeError("tensor dimensions must be positive, got " + shape_str(shape_));
  }
  if (shape_numel(shape_) != data.size()) {
    throw ShapeError("shape " + shape_str(shape_) + " holds " + std::to_string(shape_numel(shape_)) +
                     " entries but data has " + std::to_string(data.size()));
  }
  data_ = std::make_shared<const Eigen::VectorXd>(std::move(data));
}

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), 0.0); }
Tensor Tensor::ones(Shape shape) { return full(std::move(shape), 1.0); }

Tensor Tensor::full(Shape shape, double value) {
  const Index n = shape_numel(shape);
  return Tensor(std::move(shape), Eigen::VectorXd::Constant(n, value));
}

Tensor Tensor::scalar(double value) { return Tensor({}, Eigen::VectorXd::Constant(1, value)); }

Tensor Tensor::vector(const Eigen::VectorXd& v) { return Tensor({v.size()}, v); }

Tensor Tensor::matrix(const Eigen::Ref<const Eigen::MatrixXd>& m) {
  RowMatrix rm = m;
  return Tensor({m.rows(), m.cols()}, Eigen::Map<const Eigen::VectorXd>(rm.data(), rm.size()));
}

Index Tensor::dim(Index axis) const {
  if (axis < 0) axis += rank();
  if (axis < 0 || axis >= rank()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " + shape_str(shape_));
  }
  return shape_[static_cast<std::size_t>(axis)];
}

const Eigen::VectorXd& Tensor::data() const { return *data_; }

double Tensor::item() const {
  if (size() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape_));
  return (*data_)[0];
}

Eigen::Map<const RowMatrix> Tensor::mat() const {
  if (rank() != 2) throw ShapeError("matrix view requires rank 2, got " + shape_str(shape_));
  return Eigen::Map<const RowMatrix>(data_->data(), shape_[0], shape_[1]);
}

Tensor Tensor::detach() const {
  Tensor t;
  t.shape_ = shape_;
  t.data_ = data_;
  return t;
}

// ---------------------------------------------------------------------------
// GradTable / Tape

bool GradTable::contains(const Tensor& t) const {
  return t.tape_id() && grads_.count(*t.tape_id()) > 0;
}

std::optional<Tensor> GradTable::get(const Tensor& t) const {
  if (!t.tape_id()) return std::nullopt;
  auto it = grads_.find(*t.tape_id());
  if (it == grads_.end()) return std::nullopt;
  return it->second;
}

const Tensor& GradTable::at(const Tensor& t) const {
  if (!t.tape_id()) throw std::out_of_range("tensor is not on a tape");
  auto it = grads_.find(*t.tape_id());
  if (it == grads_.end()) throw std::out_of_range("tensor did not participate in the loss");
  return it->second;
}

Tensor Tape::variable(const Tensor& value) {
  Tensor t = value.detach();
  nodes_.push_back(Node{value.size(), {}, {}});
  node_shapes_.push_back(value.shape());
  t.tape_ = this;
  t.node_ = nodes_.size() - 1;
  return t;
}

Tensor Tape::record(Shape shape, Eigen::VectorXd value, std::span<const Tensor> inputs,
                    BackwardFn fn) {
  Tensor out(std::move(shape), std::move(value));
  Node node;
  node.numel = out.size();
  node.inputs.reserve(inputs.size());
  for (const Tensor& in : inputs) {
    if (in.node_ && in.tape_ == this) {
      node.inputs.emplace_back(*in.node_);
    } else if (in.node_) {
      throw std::logic_error("op mixes tensors from different tapes");
    } else {
      node.inputs.emplace_back(std::nullopt);
    }
  }
  node.fn = std::move(fn);
  nodes_.push_back(std::move(node));
  node_shapes_.push_back(out.shape());
  out.tape_ = this;
  out.node_ = nodes_.size() - 1;
  return out;
}

GradTable Tape::backward(const Tensor& loss) {
  if (loss.size() != 1) {
    throw ShapeError("backward requires a scalar loss, got shape " + shape_str(loss.shape()));
  }
  if (!loss.node_ || loss.tape_ != this) throw std::logic_error("loss is not recorded on this tape");
  const NodeId root = *loss.node_;
  std::vector<Eigen::VectorXd> grads(root + 1);
  grads[root] = Eigen::VectorXd::Ones(1);
  std::vector<Eigen::VectorXd*> slots;
  for (NodeId id = root + 1; id-- > 0;) {
    if (grads[id].size() == 0) continue;
    const Node& node = nodes_[id];
    if (!node.fn) continue;
    slots.assign(node.inputs.size(), nullptr);
    for (std::size_t k = 0; k < node.inputs.size(); ++k) {
      if (!node.inputs[k]) continue;
      const NodeId in = *node.inputs[k];
      if (grads[in].size() == 0) grads[in] = Eigen::VectorXd::Zero(nodes_[in].numel);
      slots[k] = &grads[in];
    }
    node.fn(grads[id], slots);
  }
  GradTable table;
  for (NodeId id = 0; id <= root; ++id) {
    if (grads[id].size() == 0) continue;
    table.grads_.emplace(id, Tensor(node_shapes_[id], std::move(grads[id])));
  }
  return table;
}

Tape* common_tape(std::span<const Tensor> inputs) {
  Tape* tape = nullptr;
  for (const Tensor& t : inputs) {
    if (!t.requires_grad()) continue;
    if (tape && t.tape() != tape) throw std::logic_error("op mixes tensors from different tapes");
    tape = t.tape();
  }
  return tape;
}

namespace {

Tensor make_result(Shape shape, Eigen::VectorXd value, std::span<const Tensor> inputs,
                   Tape::BackwardFn fn) {
  Tape* tape = common_tape(inputs);
  if (!tape) return Tensor(std::move(shape), std::move(value));
  return tape->record(std::move(shape), std::move(value), inputs, std::move(fn));
}

Tensor make_result(Shape shape, Eigen::VectorXd value, std::initializer_list<Tensor> inputs,
                   Tape::BackwardFn fn) {
  return make_result(std::move(shape), std::move(value),
                     std::span<const Tensor>(inputs.begin(), inputs.size()), std::move(fn));
}

Index normalize_axis(const Tensor& a, Index axis) {
  const Index r = a.rank();
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " +
                     shape_str(a.shape()));
  }
  return axis;
}

// (outer, axis length, inner) factorisation of a shape around one axis.
struct AxisSplit {
  Index outer = 1, len = 1, inner = 1;
};

AxisSplit split_axis(const Shape& shape, Index axis) {
  AxisSplit s;
  for (Index i = 0; i < axis; ++i) s.outer *= shape[static_cast<std::size_t>(i)];
  s.len = shape[static_cast<std::size_t>(axis)];
  for (Index i = axis + 1; i < static_cast<Index>(shape.size()); ++i) {
    s.inner *= shape[static_cast<std::size_t>(i)];
  }
  return s;
}

Shape broadcast_shapes(const Shape& a, const Shape& b) {
  const std::size_t r = std::max(a.size(), b.size());
  Shape out(r, 1);
  for (std::size_t i = 0; i < r; ++i) {
    const Index da = i < r - a.size() ? 1 : a[i - (r - a.size())];
    const Index db = i < r - b.size() ? 1 : b[i - (r - b.size())];
    if (da != db && da != 1 && db != 1) {
      throw ShapeError("cannot broadcast shapes " + shape_str(a) + " and " + shape_str(b));
    }
    out[i] = std::max(da, db);
  }
  return out;
}

// For every flat index of `out`, the flat index into a tensor of shape `in`.
std::vector<Index> broadcast_index(const Shape& out, const Shape& in) {
  const std::size_t r = out.size();
  const std::size_t offset = r - in.size();
  std::vector<Index> in_stride(r, 0);
  Index stride = 1;
  for (std::size_t i = r; i-- > offset;) {
    const Index d = in[i - offset];
    in_stride[i] = d == 1 ? 0 : stride;
    stride *= d;
  }
  const Index n = shape_numel(out);
  std::vector<Index> idx(static_cast<std::size_t>(n));
  std::vector<Index> counter(r, 0);
  Index cur = 0;
  for (Index k = 0; k < n; ++k) {
    idx[static_cast<std::size_t>(k)] = cur;
    for (std::size_t i = r; i-- > 0;) {
      ++counter[i];
      cur += in_stride[i];
      if (counter[i] < out[i]) break;
      cur -= in_stride[i] * counter[i];
      counter[i] = 0;
    }
  }
  return idx;
}

struct Expanded {
  Shape shape;
  Eigen::VectorXd a, b;
  std::shared_ptr<std::vector<Index>> ia, ib;  // null when no expansion
};

Expanded expand_pair(const Tensor& a, const Tensor& b) {
  Expanded e;
  e.shape = a.shape() == b.shape() ? a.shape() : broadcast_shapes(a.shape(), b.shape());
  const Index n = shape_numel(e.shape);
  auto expand = [&](const Tensor& t, std::shared_ptr<std::vector<Index>>& idx) {
    if (t.shape() == e.shape) return t.data();
    idx = std::make_shared<std::vector<Index>>(broadcast_index(e.shape, t.shape()));
    Eigen::VectorXd v(n);
    for (Index k = 0; k < n; ++k) v[k] = t.data()[(*idx)[static_cast<std::size_t>(k)]];
    return v;
  };
  e.a = expand(a, e.ia);
  e.b = expand(b, e.ib);
  return e;
}

void scatter_add(Eigen::VectorXd* dst, const Eigen::VectorXd& g,
                 const std::shared_ptr<std::vector<Index>>& idx) {
  if (!dst) return;
  if (!idx) {
    *dst += g;
    return;
  }
  for (Index k = 0; k < g.size(); ++k) (*dst)[(*idx)[static_cast<std::size_t>(k)]] += g[k];
}

template <typename Fwd, typename Bwd>
Tensor binary(const Tensor& a, const Tensor& b, Fwd fwd, Bwd bwd) {
  Expanded e = expand_pair(a, b);
  Eigen::VectorXd out = fwd(e.a.array(), e.b.array());
  auto ea = std::make_shared<Eigen::VectorXd>(std::move(e.a));
  auto eb = std::make_shared<Eigen::VectorXd>(std::move(e.b));
  auto ia = e.ia, ib = e.ib;
  return make_result(e.shape, std::move(out), {a, b},
                     [ea, eb, ia, ib, bwd](const Eigen::VectorXd& g, std::span<Eigen::VectorXd*> in) {
                       Eigen::VectorXd ga, gb;
                       bwd(g.array(), ea->array(), eb->array(), in[0] ? &ga : nullptr,
                           in[1] ? &gb : nullptr);
                       if (in[0]) scatter_add(in[0], ga, ia);
                       if (in[1]) scatter_add(in[1], gb, ib);
                     });
}

template <typename Fwd, typename Bwd>
Tensor unary(const Tensor& a, Fwd fwd, Bwd bwd) {
  auto out = std::make_shared<Eigen::VectorXd>(fwd(a.data().array()));
  Tensor x = a.detach();
  Eigen::VectorXd value = *out;
  return make_result(a.shape(), std::move(value), {a},
                     [x, out, bwd](const Eigen::VectorXd& g, std::span<Eigen::VectorXd*> in) {
                       if (in[0]) *in[0] += bwd(g.array(), x.data().array(), out->array()).matrix();
                     });
}

}  // namespace

// ---------------------------------------------------------------------------
// Elementwise

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, [](const auto& x, const auto& y) -> Eigen::VectorXd { return x + y; },
      [](const auto& g, const auto&, const auto&, Eigen::VectorXd* ga, Eigen::VectorXd* gb) {
        if (ga) *ga = g;
        if (gb) *gb = g;
      });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, [](const auto& x, const auto& y) -> Eigen::VectorXd { return x - y; },
      [](const auto& g, const auto&, const auto&, Eigen::VectorXd* ga, Eigen::VectorXd* gb) {
        if (ga) *ga = g;
        if (gb) *gb = -g;
      });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, [](const auto& x, const auto& y) -> Eigen::VectorXd { return x * y; },
      [](const auto& g, const auto& x, const auto& y, Eigen::VectorXd* ga, Eigen::VectorXd* gb) {
        if (ga) *ga = g * y;
        if (gb) *gb = g * x;
      });
}

Tensor div(const Tensor& a, const Tensor& b) {
  if ((b.data().array() == 0.0).any()) {
    throw DomainError("div: divisor of shape " + shape_str(b.shape()) + " contains zero");
  }
  return binary(
      a, b, [](const auto& x, const auto& y) -> Eigen::VectorXd { return x / y; },
      [](const auto& g, const auto& x, const auto& y, Eigen::VectorXd* ga, Eigen::VectorXd* gb) {
        if (ga) *ga = g / y;
        if (gb) *gb = -g * x / (y * y);
      });
}

Tensor neg(const Tensor& a) { return scale(a, -1.0); }

Tensor scale(const Tensor& a, double s) {
  return unary(
      a, [s](const auto& x) -> Eigen::VectorXd { return x * s; },
      [s](const auto& g, const auto&, const auto&) { return (g * s).eval(); });
}

Tensor add_scalar(const Tensor& a, double s) {
  return unary(
      a, [s](const auto& x) -> Eigen::VectorXd { return x + s; },
      [](const auto& g, const auto&, const auto&) { return g.eval(); });
}

Tensor exp(const Tensor& a) {
  return unary(
      a, [](const auto& x) -> Eigen::VectorXd { return x.exp(); },
      [](const auto& g, const auto&, const auto& y) { return (g * y).eval(); });
}

Tensor log(const Tensor& a) {
  if ((a.data().array() <= 0.0).any()) {
    throw DomainError("log: input of shape " + shape_str(a.shape()) + " has non-positive entries");
  }
  return unary(
      a, [](const auto& x) -> Eigen::VectorXd { return x.log(); },
      [](const auto& g, const auto& x, const auto&) { return (g / x).eval(); });
}

Tensor tanh(const Tensor& a) {
  return unary(
      a, [](const auto& x) -> Eigen::VectorXd { return x.tanh(); },
      [](const auto& g, const auto&, const auto& y) { return (g * (1.0 - y * y)).eval(); });
}

Tensor relu(const Tensor& a) {
  return unary(
      a, [](const auto& x) -> Eigen::VectorXd { return x.max(0.0); },
      [](const auto& g, const auto& x, const auto&) {
        return (x > 0.0).select(g, Eigen::ArrayXd::Zero(g.size())).eval();
      });
}

Tensor softplus(const Tensor& a) {
  return unary(
      a,
      [](const auto& x) -> Eigen::VectorXd {
        // log(1 + e^x) without overflow
        return x.max(0.0) + (-x.abs()).exp().log1p();
      },
      [](const auto& g, const auto& x, const auto&) {
        return (g / (1.0 + (-x).exp())).eval();
      });
}

Tensor sqrt(const Tensor& a) {
  if ((a.data().array() < 0.0).any()) {
    throw DomainError("sqrt: input of shape " + shape_str(a.shape()) + " has negative entries");
  }
  return unary(
      a, [](const auto& x) -> Eigen::VectorXd { return x.sqrt(); },
      [](const auto& g, const auto&, const auto& y) { return (g * 0.5 / y).eval(); });
}

Tensor square(const Tensor& a) {
  return unary(
      a, [](const auto& x) -> Eigen::VectorXd { return x.square(); },
      [](const auto& g, const auto& x, const auto&) { return (2.0 * g * x).eval(); });
}

// ---------------------------------------------------------------------------
// Linear algebra

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  }
  const Index m = a.dim(0), n = b.dim(1);
  Eigen::VectorXd out(m * n);
  Eigen::Map<RowMatrix>(out.data(), m, n).noalias() = a.mat() * b.mat();
  Tensor x = a.detach(), y = b.detach();
  return make_result({m, n}, std::move(out), {a, b},
                     [x, y, m, n](const Eigen::VectorXd& g, std::span<Eigen::VectorXd*> in) {
                       Eigen::Map<const RowMatrix> G(g.data(), m, n);
                       if (in[0]) {
                         Eigen::Map<RowMatrix>(in[0]->data(), x.dim(0), x.dim(1)).noalias() +=
                             G * y.mat().transpose();
                       }
                       if (in[1]) {
                         Eigen::Map<RowMatrix>(in[1]->data(), y.dim(0), y.dim(1)).noalias() +=
                             x.mat().transpose() * G;
                       }
                     });
}

Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) throw ShapeError("transpose requires rank 2, got " + shape_str(a.shape()));
  const Index m = a.dim(0), n = a.dim(1);
  Eigen::VectorXd out(m * n);
  Eigen::Map<RowMatrix>(out.data(), n, m) = a.mat().transpose();
  return make_result({n, m}, std::move(out), {a},
                     [m, n](const Eigen::VectorXd& g, std::span<Eigen::VectorXd*> in) {
                       if (!in[0]) return;
                       Eigen::Map<RowMatrix>(in[0]->data(), m, n) +=
                           Eigen::Map<const RowMatrix>(g.data(), n, m).transpose();
                     });
}

// ---------------------------------------------------------------------------
// Softmax

Tensor softmax(const Tensor& a, Index axis) {
  axis = normalize_axis(a, axis);
  const AxisSplit s = split_axis(a.shape(), axis);
  auto y = std::make_shared<Eigen::VectorXd>(a.size());
  const Eigen::VectorXd& x = a.data();
  for (Index o = 0; o < s.outer; ++o) {
    for (Index i = 0; i < s.inner; ++i) {
      const Index base = o * s.len * s.inner + i;
      double mx = -std::numeric_limits<double>::infinity();
      for (Index k = 0; k < s.len; ++k) mx = std::max(mx, x[base + k * s.inner]);
      double z = 0.0;
      for (Index k = 0; k < s.len; ++k) {
        const double e = std::exp(x[base + k * s.inner] - mx);
        (*y)[base + k * s.inner] = e;
        z += e;
      }
      for (Index k = 0; k < s.len; ++k) (*y)[base + k * s.inner] /= z;
    }
  }
  Eigen::VectorXd value = *y;
  return make_result(a.shape(), std::move(value), {a},
                     [y, s](const Eigen::VectorXd& g, std::span<Eigen::VectorXd*> in) {
                       if (!in[0]) return;
                       for (Index o = 0; o < s.outer; ++o) {
                         for (Index i = 0; i < s.inner; ++i) {
                           const Index base = o * s.len * s.inner + i;
                           double dot = 0.0;
                           for (Index k = 0; k < s.len; ++k) {
                             dot += g[base + k * s.inner] * (*y)[base + k * s.inner];
                           }
                           for (Index k = 0; k < s.len; ++k) {
                             const Index j = base + k * s.inner;
                             (*in[0])[j] += (*y)[j] * (g[j] - dot);
                           }
                         }
                       }
                     });
}

Tensor log_softmax(const Tensor& a, Index axis) {
  axis = normalize_axis(a, axis);
  const AxisSplit s = split_axis(a.shape(), axis);
  Eigen::VectorXd out(a.size());
  auto p = std::make_shared<Eigen::VectorXd>(a.size());
  const Eigen::VectorXd& x = a.data();
  for (Index o = 0; o < s.outer; ++o) {
    for (Index i = 0; i < s.inner; ++i) {
      const Index base = o * s.len * s.inner + i;
      double mx = -std::numeric_limits<double>::infinity();
      for (Index k = 0; k < s.len; ++k) mx = std::max(mx, x[base + k * s.inner]);
      double z = 0.0;
      for (Index k = 0; k < s.len; ++k) z += std::exp(x[base + k * s.inner] - mx);
      const double lse = mx + std::log(z);
      for (Index k = 0; k < s.len; ++k) {
        const Index j = base + k * s.inner;
        out[j] = x[j] - lse;
        (*p)[j] = std::exp(out[j]);
      }
    }
  }
  return make_result(a.shape(), std::move(out), {a},
                     [p, s](const Eigen::VectorXd& g, std::span<Eigen::VectorXd*> in) {
                       if (!in[0]) return;
                       for (Index o = 0; o < s.outer; ++o) {
                         for (Index i = 0; i < s.inner; ++i) {
                           const Index base = o * s.len * s.inner + i;
                           double gs = 0.0;
                           for (Index k = 0; k < s.len; ++k) gs += g[base + k * s.inner];
                           for (Index k = 0; k < s.len; ++k) {
                             const Index j = base + k * s.inner;
                             (*in[0])[j] += g[j] - (*p)[j] * gs;
                           }
                         }
                       }
                     });
}

// ---------------------------------------------------------------------------
// Structural

Tensor concat(std::span<const Tensor> parts, Index axis) {
  if (parts.empty()) throw ShapeError("concat of zero tensors");
  axis = normalize_axis(parts[0], axis);
  Shape out_shape = parts[0].shape();
  Index total = 0;
  for (const Tensor& p : parts) {
    if (p.rank() != parts[0].rank()) {
      throw ShapeError("concat: rank mismatch between " + shape_str(parts[0].shape()) + " and " +
                       shape_str(p.shape()));
    }
    for (Index d = 0; d < p.rank(); ++d) {
      if (d != axis && p.dim(d) != parts[0].dim(d)) {
        throw ShapeError("concat: shapes " + shape_str(parts[0].shape()) + " and " +
                         shape_str(p.shape()) + " differ off axis " + std::to_string(axis));
      }
    }
    total += p.dim(axis);
  }
  out_shape[static_cast<std::size_t>(axis)] = total;
  const AxisSplit s = split_axis(out_shape, axis);
  std::vector<Index> lens;
  for (const Tensor& p : parts) lens.push_back(p.dim(axis));
  Eigen::VectorXd out(shape_numel(out_shape));
  Index offset = 0;
  for (std::size_t q = 0; q < parts.size(); ++q) {
    const Eigen::VectorXd& src = parts[q].data();
    const Index block = lens[q] * s.inner;
    for (Index o = 0; o < s.outer; ++o) {
      out.segment(o * total * s.inner + offset * s.inner, block) = src.segment(o * block, block);
    }
    offset += lens[q];
  }
  return make_result(out_shape, std::move(out), parts,
                     [lens, s, total](const Eigen::VectorXd& g, std::span<Eigen::VectorXd*> in) {
                       Index off = 0;
                       for (std::size_t q = 0; q < lens.size(); ++q) {
                         const Index block = lens[q] * s.inner;
                         if (in[q]) {
                           for (Index o = 0; o < s.outer; ++o) {
                             in[q]->segment(o * block, block) +=
                                 g.segment(o * total * s.inner + off * s.inner, block);
                           }
                         }
                         off += lens[q];
                       }
                     });
}

Tensor concat(std::initializer_list<Tensor> parts, Index axis) {
  return concat(std::span<const Tensor>(parts.begin(), parts.size()), axis);
}

Tensor slice(const Tensor& a, Index axis, Index begin, Index end) {
  axis = normalize_axis(a, axis);
  const Index len = a.dim(axis);
  if (begin < 0 || end > len || begin >= end) {
    throw ShapeError("slice [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") invalid for axis " + std::to_string(axis) + " of shape " +
                     shape_str(a.shape()));
  }
  const AxisSplit s = split_axis(a.shape(), axis);
  Shape out_shape = a.shape();
  out_shape[static_cast<std::size_t>(axis)] = end - begin;
  const Index block = (end - begin) * s.inner;
  Eigen::VectorXd out(s.outer * block);
  for (Index o = 0; o < s.outer; ++o) {
    out.segment(o * block, block) = a.data().segment(o * len * s.inner + begin * s.inner, block);
  }
  return make_result(out_shape, std::move(out), {a},
                     [s, len, begin, block](const Eigen::VectorXd& g, std::span<Eigen::VectorXd*> in) {
                       if (!in[0]) return;
                       for (Index o = 0; o < s.outer; ++o) {
                         in[0]->segment(o * len * s.inner + begin * s.inner, block) +=
                             g.segment(o * block, block);
                       }
                     });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.size()) {
    throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  }
  Eigen::VectorXd value = a.data();
  return make_result(std::move(shape), std::move(value), {a},
                     [](const Eigen::VectorXd& g, std::span<Eigen::VectorXd*> in) {
                       if (in[0]) *in[0] += g;
                     });
}

Tensor gather_rows(const Tensor& a, std::span<const Index> rows) {
  if (a.rank() != 2) throw ShapeError("gather_rows requires rank 2, got " + shape_str(a.shape()));
  const Index n = a.dim(0), c = a.dim(1);
  const Index m = static_cast<Index>(rows.size());
  if (m == 0) throw ShapeError("gather_rows with no indices");
  Eigen::VectorXd out(m * c);
  for (Index i = 0; i < m; ++i) {
    const Index r = rows[static_cast<std::size_t>(i)];
    if (r < 0 || r >= n) {
      throw ShapeError("gather_rows: index " + std::to_string(r) + " out of range for shape " +
                       shape_str(a.shape()));
    }
    out.segment(i * c, c) = a.data().segment(r * c, c);
  }
  auto idx = std::make_shared<std::vector<Index>>(rows.begin(), rows.end());
  return make_result({m, c}, std::move(out), {a},
                     [idx, c](const Eigen::VectorXd& g, std::span<Eigen::VectorXd*> in) {
                       if (!in[0]) return;
                       for (std::size_t i = 0; i < idx->size(); ++i) {
                         in[0]->segment((*idx)[i] * c, c) +=
                             g.segment(static_cast<Index>(i) * c, c);
                       }
                     });
}

Tensor broadcast_to(const Tensor& a, Shape shape) {
  if (broadcast_shapes(a.shape(), shape) != shape) {
    throw ShapeError("broadcast_to: cannot broadcast " + shape_str(a.shape()) + " to " +
                     shape_str(shape));
  }
  auto idx = std::make_shared<std::vector<Index>>(broadcast_index(shape, a.shape()));
  Eigen::VectorXd out(shape_numel(shape));
  for (Index k = 0; k < out.size(); ++k) out[k] = a.data()[(*idx)[static_cast<std::size_t>(k)]];
  return make_result(std::move(shape), std::move(out), {a},
                     [idx](const Eigen::VectorXd& g, std::span<Eigen::VectorXd*> in) {
                       scatter_add(in[0], g, idx);
                     });
}

// ---------------------------------------------------------------------------
// Reductions

Tensor sum(const Tensor& a) {
  const Index n = a.size();
  return make_result({}, Eigen::VectorXd::Constant(1, a.data().sum()), {a},
                     [n](const Eigen::VectorXd& g, std::span<Eigen::VectorXd*> in) {
                       if (in[0]) in[0]->array() += g[0];
                       (void)n;
                     });
}

Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.size())); }

namespace {

Shape drop_axis(const Shape& shape, Index axis) {
  Shape out = shape;
  out.erase(out.begin() + axis);
  return out;
}

}  // namespace

Tensor sum(const Tensor& a, Index axis) {
  axis = normalize_axis(a, axis);
  const AxisSplit s = split_axis(a.shape(), axis);
  Eigen::VectorXd out = Eigen::VectorXd::Zero(s.outer * s.inner);
  for (Index o = 0; o < s.outer; ++o) {
    for (Index k = 0; k < s.len; ++k) {
      out.segment(o * s.inner, s.inner) += a.data().segment((o * s.len + k) * s.inner, s.inner);
    }
  }
  return make_result(drop_axis(a.shape(), axis), std::move(out), {a},
                     [s](const Eigen::VectorXd& g, std::span<Eigen::VectorXd*> in) {
                       if (!in[0]) return;
                       for (Index o = 0; o < s.outer; ++o) {
                         for (Index k = 0; k < s.len; ++k) {
                           in[0]->segment((o * s.len + k) * s.inner, s.inner) +=
                               g.segment(o * s.inner, s.inner);
                         }
                       }
                     });
}

Tensor mean(const Tensor& a, Index axis) {
  const Index len = a.dim(axis);
  return scale(sum(a, axis), 1.0 / static_cast<double>(len));
}

Tensor max(const Tensor& a) {
  Index arg = 0;
  const double v = a.data().maxCoeff(&arg);
  return make_result({}, Eigen::VectorXd::Constant(1, v), {a},
                     [arg](const Eigen::VectorXd& g, std::span<Eigen::VectorXd*> in) {
                       if (in[0]) (*in[0])[arg] += g[0];
                     });
}

Tensor max(const Tensor& a, Index axis) {
  axis = normalize_axis(a, axis);
  const AxisSplit s = split_axis(a.shape(), axis);
  Eigen::VectorXd out(s.outer * s.inner);
  auto arg = std::make_shared<std::vector<Index>>(static_cast<std::size_t>(s.outer * s.inner));
  for (Index o = 0; o < s.outer; ++o) {
    for (Index i = 0; i < s.inner; ++i) {
      Index best = (o * s.len) * s.inner + i;
      for (Index k = 1; k < s.len; ++k) {
        const Index j = (o * s.len + k) * s.inner + i;
        if (a.data()[j] > a.data()[best]) best = j;
      }
      out[o * s.inner + i] = a.data()[best];
      (*arg)[static_cast<std::size_t>(o * s.inner + i)] = best;
    }
  }
  return make_result(drop_axis(a.shape(), axis), std::move(out), {a},
                     [arg](const Eigen::VectorXd& g, std::span<Eigen::VectorXd*> in) {
                       if (!in[0]) return;
                       for (Index k = 0; k < g.size(); ++k) {
                         (*in[0])[(*arg)[static_cast<std::size_t>(k)]] += g[k];
                       }
                     });
}

// ---------------------------------------------------------------------------

Tensor l2_normalize_rows(const Tensor& a, double eps) {
  if (a.rank() != 2) {
    throw ShapeError("l2_normalize_rows requires rank 2, got " + shape_str(a.shape()));
  }
  const Index m = a.dim(0), c = a.dim(1);
  auto norms = std::make_shared<Eigen::VectorXd>((a.mat().rowwise().squaredNorm().array() + eps).sqrt());
  auto y = std::make_shared<RowMatrix>(a.mat().array().colwise() / norms->array());
  Eigen::VectorXd out = Eigen::Map<const Eigen::VectorXd>(y->data(), m * c);
  return make_result({m, c}, std::move(out), {a},
                     [norms, y, m, c](const Eigen::VectorXd& g, std::span<Eigen::VectorXd*> in) {
                       if (!in[0]) return;
                       Eigen::Map<const RowMatrix> G(g.data(), m, c);
                       const Eigen::VectorXd dots = (G.array() * y->array()).rowwise().sum();
                       RowMatrix gx = (G - (y->array().colwise() * dots.array()).matrix());
                       gx.array().colwise() /= norms->array();
                       Eigen::Map<RowMatrix>(in[0]->data(), m, c) += gx;
                     });
}

// ---------------------------------------------------------------------------

GradCheckResult finite_diff_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                                  double step) {
  GradCheckResult r;
  {
    Tape tape;
    Tensor xv = tape.variable(x);
    Tensor y = f(xv);
    if (!y.requires_grad()) {
      r.analytic = Eigen::VectorXd::Zero(x.size());
    } else {
      GradTable grads = tape.backward(y);
      auto g = grads.get(xv);
      r.analytic = g ? g->data() : Eigen::VectorXd::Zero(x.size());
    }
  }
  r.numeric.resize(x.size());
  for (Index i = 0; i < x.size(); ++i) {
    Eigen::VectorXd plus = x.data(), minus = x.data();
    plus[i] += step;
    minus[i] -= step;
    const double fp = f(Tensor(x.shape(), plus)).item();
    const double fm = f(Tensor(x.shape(), minus)).item();
    r.numeric[i] = (fp - fm) / (2.0 * step);
  }
  for (Index i = 0; i < x.size(); ++i) {
    const double denom = std::max(std::abs(r.analytic[i]), 1e-8);
    r.max_rel_error = std::max(r.max_rel_error, std::abs(r.analytic[i] - r.numeric[i]) / denom);
  }
  return r;
}

}  // namespace fsi2p
