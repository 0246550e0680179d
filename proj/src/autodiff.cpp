#include "csiwm/autodiff.hpp"

#include "csiwm/expm.hpp"

#include <atomic>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <unordered_map>
#include <utility>

namespace csiwm::ad {

namespace {

std::atomic<bool> g_corrupt_gelu{false};

using Vec = Eigen::VectorXd;
using ConstMap = Eigen::Map<const RowMatrixXd>;
using MutMap = Eigen::Map<RowMatrixXd>;

Var make(Tensor value, std::string_view op, std::vector<Var> inputs, std::function<void(Node&)> rule) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->op = op;
  bool needs = false;
  for (const auto& in : inputs) needs = needs || in.requires_grad();
  if (needs) {
    node->requires_grad = true;
    node->parents.reserve(inputs.size());
    for (auto& in : inputs) node->parents.push_back(in.node());
    node->backward = std::move(rule);
  }
  return Var(std::move(node));
}

Node& parent(Node& n, std::size_t i) { return *n.parents[i]; }

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                                shape_string(b.shape()));
  }
}

template <typename Forward, typename Derivative>
Var unary(const Var& a, std::string_view op, Forward f, Derivative df) {
  Tensor out(a.shape());
  out.data() = a.value().data().unaryExpr(f);
  return make(std::move(out), op, {a}, [df](Node& self) {
    Node& in = parent(self, 0);
    if (!in.requires_grad) return;
    Vec g(self.value.size());
    for (Index i = 0; i < g.size(); ++i) g[i] = self.grad[i] * df(in.value[i], self.value[i]);
    in.accumulate(g);
  });
}

Shape with_axis_removed(const Shape& s, Index axis) {
  Shape out = s;
  out.erase(out.begin() + axis);
  return out;
}

void check_axis(const Shape& s, Index axis, const char* op) {
  if (axis < 0 || axis >= Index(s.size())) {
    throw std::invalid_argument(std::string(op) + ": axis " + std::to_string(axis) + " out of range for " +
                                shape_string(s));
  }
}

Index prod_range(const Shape& s, Index begin, Index end) {
  Index p = 1;
  for (Index i = begin; i < end; ++i) p *= s[std::size_t(i)];
  return p;
}

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

}  // namespace

void Node::accumulate(const Tensor& g) { accumulate(g.data()); }

void Node::accumulate(const Eigen::Ref<const Eigen::VectorXd>& g) {
  if (g.size() != value.size()) throw std::logic_error("gradient size mismatch in op " + std::string(op));
  if (grad.size() == 0) {
    grad = Tensor(value.shape(), g);
  } else {
    grad.data() += g;
  }
}

Tensor Var::grad() const {
  if (node_->grad.size() == 0) return Tensor::zeros(node_->value.shape());
  return node_->grad;
}

Var constant(Tensor value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->op = "constant";
  return Var(std::move(node));
}

Var parameter(Tensor value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->op = "parameter";
  node->requires_grad = true;
  return Var(std::move(node));
}

Var detach(const Var& x) { return constant(x.value()); }

void backward(const Var& root) {
  if (!root) throw std::invalid_argument("backward: empty root");
  if (root.size() != 1) throw std::invalid_argument("backward: root must be a scalar, got " + shape_string(root.shape()));
  if (!root.requires_grad()) return;

  // Iterative post-order DFS; a node seen while still on the stack is a cycle.
  enum class Mark { kOpen, kDone };
  std::unordered_map<Node*, Mark> marks;
  std::vector<Node*> order;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  marks[root.node().get()] = Mark::kOpen;
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (!p->requires_grad) continue;
      auto it = marks.find(p);
      if (it == marks.end()) {
        marks[p] = Mark::kOpen;
        stack.emplace_back(p, 0);
      } else if (it->second == Mark::kOpen) {
        throw std::logic_error("backward: cycle detected in graph");
      }
    } else {
      marks[node] = Mark::kDone;
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (Node* n : order) {
    if (n->backward) n->grad = Tensor();
  }
  root.node()->accumulate(Tensor::constant(root.shape(), 1.0));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward && n->grad.size() != 0) n->backward(*n);
  }
}

Var add(const Var& a, const Var& b) {
  require_same_shape(a, b, "add");
  Tensor out(a.shape());
  out.data() = a.value().data() + b.value().data();
  return make(std::move(out), "add", {a, b}, [](Node& self) {
    for (std::size_t i = 0; i < 2; ++i)
      if (parent(self, i).requires_grad) parent(self, i).accumulate(self.grad);
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a, b, "sub");
  Tensor out(a.shape());
  out.data() = a.value().data() - b.value().data();
  return make(std::move(out), "sub", {a, b}, [](Node& self) {
    if (parent(self, 0).requires_grad) parent(self, 0).accumulate(self.grad);
    if (parent(self, 1).requires_grad) parent(self, 1).accumulate(-self.grad.data());
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape(a, b, "mul");
  Tensor out(a.shape());
  out.data() = a.value().data().cwiseProduct(b.value().data());
  return make(std::move(out), "mul", {a, b}, [](Node& self) {
    Node& x = parent(self, 0);
    Node& y = parent(self, 1);
    if (x.requires_grad) x.accumulate(self.grad.data().cwiseProduct(y.value.data()));
    if (y.requires_grad) y.accumulate(self.grad.data().cwiseProduct(x.value.data()));
  });
}

Var scale(const Var& a, double s) {
  Tensor out(a.shape());
  out.data() = a.value().data() * s;
  return make(std::move(out), "scale", {a}, [s](Node& self) { parent(self, 0).accumulate(self.grad.data() * s); });
}

Var add_scalar(const Var& a, double s) {
  Tensor out(a.shape());
  out.data() = a.value().data().array() + s;
  return make(std::move(out), "add_scalar", {a}, [](Node& self) { parent(self, 0).accumulate(self.grad); });
}

Var abs(const Var& a) {
  return unary(
      a, "abs", [](double x) { return std::abs(x); },
      [](double x, double) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); });
}

Var square(const Var& a) {
  return unary(
      a, "square", [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var sqrt(const Var& a) {
  if ((a.value().data().array() < 0.0).any()) throw std::domain_error("sqrt: negative input");
  return unary(
      a, "sqrt", [](double x) { return std::sqrt(x); }, [](double, double y) { return 0.5 / y; });
}

Var relu(const Var& a) {
  return unary(
      a, "relu", [](double x) { return x > 0 ? x : 0.0; }, [](double x, double) { return x > 0 ? 1.0 : 0.0; });
}

Var gelu(const Var& a) {
  const Vec& x = a.value().data();
  Tensor out(a.shape());
  if (!a.requires_grad()) {
    out.data() = x.unaryExpr([](double v) { return 0.5 * v * (1.0 + std::erf(v * kInvSqrt2)); });
    return constant(std::move(out));
  }
  // The derivative is formed here so backward does not evaluate erf again.
  const double corrupt = g_corrupt_gelu.load() ? 1.25 : 1.0;
  auto slope = std::make_shared<Vec>(x.size());
  for (Index i = 0; i < x.size(); ++i) {
    const double v = x[i];
    const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
    out[i] = v * cdf;
    (*slope)[i] = corrupt * (cdf + v * kInvSqrt2Pi * std::exp(-0.5 * v * v));
  }
  return make(std::move(out), "gelu", {a}, [slope](Node& self) {
    parent(self, 0).accumulate(self.grad.data().cwiseProduct(*slope));
  });
}

Var sigmoid(const Var& a) {
  return unary(
      a, "sigmoid", [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
      [](double, double y) { return y * (1.0 - y); });
}

Var tanh(const Var& a) {
  return unary(
      a, "tanh", [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Var add_rowwise(const Var& x, const Var& bias) {
  const Index c = x.shape().empty() ? 1 : x.shape().back();
  if (bias.size() != c) throw std::invalid_argument("add_rowwise: bias length does not match last axis");
  Tensor out = x.value();
  out.rows_by_last().rowwise() += bias.value().data().transpose();
  return make(std::move(out), "add_rowwise", {x, bias}, [](Node& self) {
    Node& in = parent(self, 0);
    Node& b = parent(self, 1);
    if (in.requires_grad) in.accumulate(self.grad);
    if (b.requires_grad) b.accumulate(self.grad.rows_by_last().colwise().sum().transpose());
  });
}

Var mul_rowwise(const Var& x, const Var& gain) {
  const Index c = x.shape().empty() ? 1 : x.shape().back();
  if (gain.size() != c) throw std::invalid_argument("mul_rowwise: gain length does not match last axis");
  Tensor out = x.value();
  out.rows_by_last() = out.rows_by_last() * gain.value().data().asDiagonal();
  return make(std::move(out), "mul_rowwise", {x, gain}, [](Node& self) {
    Node& in = parent(self, 0);
    Node& g = parent(self, 1);
    const auto gy = self.grad.rows_by_last();
    if (in.requires_grad) {
      RowMatrixXd gx = gy * g.value.data().asDiagonal();
      in.accumulate(Eigen::Map<const Vec>(gx.data(), gx.size()));
    }
    if (g.requires_grad) {
      g.accumulate(gy.cwiseProduct(in.value.rows_by_last()).colwise().sum().transpose());
    }
  });
}

Var matmul(const Var& x, const Var& w) {
  if (w.value().rank() != 2) throw std::invalid_argument("matmul: weight must be 2-d");
  const Index k = x.shape().empty() ? 1 : x.shape().back();
  if (k != w.dim(0)) {
    throw std::invalid_argument("matmul: inner dimensions differ " + shape_string(x.shape()) + " x " +
                                shape_string(w.shape()));
  }
  Shape out_shape = x.shape();
  out_shape.back() = w.dim(1);
  Tensor out(out_shape);
  out.rows_by_last().noalias() = x.value().rows_by_last() * w.value().matrix();
  return make(std::move(out), "matmul", {x, w}, [](Node& self) {
    Node& in = parent(self, 0);
    Node& wt = parent(self, 1);
    const auto gy = self.grad.rows_by_last();
    if (in.requires_grad) {
      RowMatrixXd gx = gy * wt.value.matrix().transpose();
      in.accumulate(Eigen::Map<const Vec>(gx.data(), gx.size()));
    }
    if (wt.requires_grad) {
      RowMatrixXd gw = in.value.rows_by_last().transpose() * gy;
      wt.accumulate(Eigen::Map<const Vec>(gw.data(), gw.size()));
    }
  });
}

Var batched_matmul(const Var& a, const Var& b) {
  if (a.value().rank() != 3 || b.value().rank() != 3 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(1)) {
    throw std::invalid_argument("batched_matmul: incompatible shapes " + shape_string(a.shape()) + " x " +
                                shape_string(b.shape()));
  }
  const Index batch = a.dim(0), n = a.dim(1), k = a.dim(2), m = b.dim(2);
  Tensor out(Shape{batch, n, m});
  for (Index i = 0; i < batch; ++i) {
    MutMap(out.ptr() + i * n * m, n, m).noalias() =
        ConstMap(a.value().ptr() + i * n * k, n, k) * ConstMap(b.value().ptr() + i * k * m, k, m);
  }
  return make(std::move(out), "batched_matmul", {a, b}, [batch, n, k, m](Node& self) {
    Node& x = parent(self, 0);
    Node& y = parent(self, 1);
    Vec gx = x.requires_grad ? Vec(x.value.size()) : Vec();
    Vec gy = y.requires_grad ? Vec(y.value.size()) : Vec();
    for (Index i = 0; i < batch; ++i) {
      ConstMap g(self.grad.ptr() + i * n * m, n, m);
      if (x.requires_grad) MutMap(gx.data() + i * n * k, n, k).noalias() = g * ConstMap(y.value.ptr() + i * k * m, k, m).transpose();
      if (y.requires_grad) MutMap(gy.data() + i * k * m, k, m).noalias() = ConstMap(x.value.ptr() + i * n * k, n, k).transpose() * g;
    }
    if (x.requires_grad) x.accumulate(gx);
    if (y.requires_grad) y.accumulate(gy);
  });
}

Var transpose(const Var& a) {
  if (a.value().rank() != 2) throw std::invalid_argument("transpose: expected a 2-d tensor");
  const Index r = a.dim(0), c = a.dim(1);
  Tensor out(Shape{c, r});
  out.matrix() = a.value().matrix().transpose();
  return make(std::move(out), "transpose", {a}, [r, c](Node& self) {
    RowMatrixXd g = ConstMap(self.grad.ptr(), c, r).transpose();
    parent(self, 0).accumulate(Eigen::Map<const Vec>(g.data(), g.size()));
  });
}

Var batched_transpose(const Var& a) {
  if (a.value().rank() != 3) throw std::invalid_argument("batched_transpose: expected a 3-d tensor");
  const Index batch = a.dim(0), r = a.dim(1), c = a.dim(2);
  Tensor out(Shape{batch, c, r});
  for (Index i = 0; i < batch; ++i) {
    MutMap(out.ptr() + i * r * c, c, r) = ConstMap(a.value().ptr() + i * r * c, r, c).transpose();
  }
  return make(std::move(out), "batched_transpose", {a}, [batch, r, c](Node& self) {
    Vec g(self.value.size());
    for (Index i = 0; i < batch; ++i) {
      MutMap(g.data() + i * r * c, r, c) = ConstMap(self.grad.ptr() + i * r * c, c, r).transpose();
    }
    parent(self, 0).accumulate(g);
  });
}

Var reshape(const Var& a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  return make(std::move(out), "reshape", {a}, [](Node& self) { parent(self, 0).accumulate(self.grad.data()); });
}

Var slice(const Var& a, Index begin, Index end) {
  if (a.value().rank() < 1 || begin < 0 || end > a.dim(0) || begin >= end) {
    throw std::invalid_argument("slice: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                                ") invalid for " + shape_string(a.shape()));
  }
  const Index stride = a.size() / a.dim(0);
  Shape shape = a.shape();
  shape[0] = end - begin;
  Tensor out(shape, a.value().data().segment(begin * stride, (end - begin) * stride));
  return make(std::move(out), "slice", {a}, [begin, stride](Node& self) {
    Node& in = parent(self, 0);
    Vec g = Vec::Zero(in.value.size());
    g.segment(begin * stride, self.grad.size()) = self.grad.data();
    in.accumulate(g);
  });
}

Var concat(const std::vector<Var>& parts, Index axis) {
  if (parts.empty()) throw std::invalid_argument("concat: no inputs");
  const Shape& first = parts.front().shape();
  check_axis(first, axis, "concat");
  Shape shape = first;
  shape[std::size_t(axis)] = 0;
  std::vector<Index> widths;  // per-part contiguous block length for one outer index
  const Index outer = prod_range(first, 0, axis);
  const Index inner = prod_range(first, axis + 1, Index(first.size()));
  for (const auto& p : parts) {
    if (p.value().rank() != Index(first.size())) throw std::invalid_argument("concat: rank mismatch");
    for (Index d = 0; d < Index(first.size()); ++d) {
      if (d != axis && p.dim(d) != first[std::size_t(d)]) {
        throw std::invalid_argument("concat: shape mismatch " + shape_string(p.shape()) + " vs " + shape_string(first));
      }
    }
    shape[std::size_t(axis)] += p.dim(axis);
    widths.push_back(p.dim(axis) * inner);
  }
  const Index row = shape[std::size_t(axis)] * inner;
  Tensor out(shape);
  Index offset = 0;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    const double* src = parts[i].value().ptr();
    for (Index o = 0; o < outer; ++o) {
      std::copy_n(src + o * widths[i], widths[i], out.ptr() + o * row + offset);
    }
    offset += widths[i];
  }
  return make(std::move(out), "concat", parts, [widths, outer, row](Node& self) {
    Index off = 0;
    for (std::size_t i = 0; i < self.parents.size(); ++i) {
      Node& p = parent(self, i);
      if (p.requires_grad) {
        Vec g(p.value.size());
        for (Index o = 0; o < outer; ++o) {
          std::copy_n(self.grad.ptr() + o * row + off, widths[i], g.data() + o * widths[i]);
        }
        p.accumulate(g);
      }
      off += widths[i];
    }
  });
}

Var sum(const Var& a) {
  return make(Tensor::scalar(a.value().data().sum()), "sum", {a}, [](Node& self) {
    Node& in = parent(self, 0);
    in.accumulate(Vec::Constant(in.value.size(), self.grad.item()));
  });
}

Var mean(const Var& a) {
  if (a.size() == 0) throw std::invalid_argument("mean: empty tensor");
  const double inv = 1.0 / double(a.size());
  return make(Tensor::scalar(a.value().data().mean()), "mean", {a}, [inv](Node& self) {
    Node& in = parent(self, 0);
    in.accumulate(Vec::Constant(in.value.size(), self.grad.item() * inv));
  });
}

Var sum_axis(const Var& a, Index axis) {
  check_axis(a.shape(), axis, "sum_axis");
  const Index outer = prod_range(a.shape(), 0, axis);
  const Index n = a.dim(axis);
  const Index inner = prod_range(a.shape(), axis + 1, a.value().rank());
  Tensor out(with_axis_removed(a.shape(), axis));
  for (Index o = 0; o < outer; ++o) {
    MutMap(out.ptr() + o * inner, 1, inner) = ConstMap(a.value().ptr() + o * n * inner, n, inner).colwise().sum();
  }
  return make(std::move(out), "sum_axis", {a}, [outer, n, inner](Node& self) {
    Vec g(outer * n * inner);
    for (Index o = 0; o < outer; ++o) {
      MutMap(g.data() + o * n * inner, n, inner).rowwise() = ConstMap(self.grad.ptr() + o * inner, 1, inner).row(0);
    }
    parent(self, 0).accumulate(g);
  });
}

Var broadcast_axis(const Var& a, Index axis, Index n) {
  if (axis < 0 || axis > a.value().rank()) throw std::invalid_argument("broadcast_axis: axis out of range");
  if (n < 1) throw std::invalid_argument("broadcast_axis: length must be positive");
  const Index outer = prod_range(a.shape(), 0, axis);
  const Index inner = prod_range(a.shape(), axis, a.value().rank());
  Shape shape = a.shape();
  shape.insert(shape.begin() + axis, n);
  Tensor out(shape);
  for (Index o = 0; o < outer; ++o) {
    MutMap(out.ptr() + o * n * inner, n, inner).rowwise() = ConstMap(a.value().ptr() + o * inner, 1, inner).row(0);
  }
  return make(std::move(out), "broadcast_axis", {a}, [outer, n, inner](Node& self) {
    Vec g(outer * inner);
    for (Index o = 0; o < outer; ++o) {
      MutMap(g.data() + o * inner, 1, inner) = ConstMap(self.grad.ptr() + o * n * inner, n, inner).colwise().sum();
    }
    parent(self, 0).accumulate(g);
  });
}

Var batch_norm(const Var& x, double eps, Eigen::VectorXd* batch_mean, Eigen::VectorXd* batch_var) {
  const auto in = x.value().rows_by_last();
  const Index rows = in.rows();
  if (rows < 1) throw std::invalid_argument("batch_norm: empty batch");
  const Eigen::RowVectorXd mu = in.colwise().mean();
  RowMatrixXd centered = in.rowwise() - mu;
  const Eigen::RowVectorXd var = centered.cwiseAbs2().colwise().sum() / double(rows);
  const Eigen::RowVectorXd inv_std = (var.array() + eps).rsqrt().matrix();
  if (batch_mean) *batch_mean = mu.transpose();
  if (batch_var) *batch_var = var.transpose();
  Tensor out(x.shape());
  out.rows_by_last() = centered * inv_std.asDiagonal();
  return make(std::move(out), "batch_norm", {x}, [inv_std, rows](Node& self) {
    const auto gy = self.grad.rows_by_last();
    const auto xhat = self.value.rows_by_last();
    const Eigen::RowVectorXd g_sum = gy.colwise().sum();
    const Eigen::RowVectorXd gx_sum = gy.cwiseProduct(xhat).colwise().sum();
    RowMatrixXd gx = (double(rows) * gy).rowwise() - g_sum;
    gx -= xhat * gx_sum.asDiagonal();
    gx = gx * (inv_std / double(rows)).asDiagonal();
    parent(self, 0).accumulate(Eigen::Map<const Vec>(gx.data(), gx.size()));
  });
}

Var standardize_rows(const Var& x, double eps) {
  const auto in = x.value().rows_by_last();
  const Index d = in.cols();
  if (d < 1) throw std::invalid_argument("standardize_rows: empty rows");
  const Eigen::VectorXd mu = in.rowwise().mean();
  RowMatrixXd centered = in.colwise() - mu;
  const Eigen::VectorXd var = centered.cwiseAbs2().rowwise().sum() / double(d);
  const Eigen::VectorXd inv_std = (var.array() + eps).rsqrt().matrix();
  Tensor out(x.shape());
  out.rows_by_last() = inv_std.asDiagonal() * centered;
  return make(std::move(out), "standardize_rows", {x}, [inv_std, d](Node& self) {
    const auto gy = self.grad.rows_by_last();
    const auto xhat = self.value.rows_by_last();
    const Eigen::VectorXd g_sum = gy.rowwise().sum();
    const Eigen::VectorXd gx_sum = gy.cwiseProduct(xhat).rowwise().sum();
    RowMatrixXd gx = (double(d) * gy).colwise() - g_sum;
    gx -= gx_sum.asDiagonal() * xhat;
    gx = (inv_std / double(d)).asDiagonal() * gx;
    parent(self, 0).accumulate(Eigen::Map<const Vec>(gx.data(), gx.size()));
  });
}

Var l2_normalize_rows(const Var& x, double eps) {
  const auto in = x.value().rows_by_last();
  const Eigen::VectorXd inv_norm = (in.rowwise().squaredNorm().array() + eps).rsqrt().matrix();
  Tensor out(x.shape());
  out.rows_by_last() = inv_norm.asDiagonal() * in;
  return make(std::move(out), "l2_normalize_rows", {x}, [inv_norm](Node& self) {
    const auto gy = self.grad.rows_by_last();
    const auto y = self.value.rows_by_last();
    const Eigen::VectorXd dots = gy.cwiseProduct(y).rowwise().sum();
    RowMatrixXd gx = gy;
    gx -= dots.asDiagonal() * y;
    gx = inv_norm.asDiagonal() * gx;
    parent(self, 0).accumulate(Eigen::Map<const Vec>(gx.data(), gx.size()));
  });
}

Var expm(const Var& g) {
  const Index r = g.value().rank();
  if (r < 2 || g.dim(r - 1) != g.dim(r - 2)) {
    throw std::invalid_argument("expm: expected trailing square blocks, got " + shape_string(g.shape()));
  }
  const Index d = g.dim(r - 1);
  const Index blocks = d == 0 ? 0 : g.size() / (d * d);
  Tensor out(g.shape());
  for (Index i = 0; i < blocks; ++i) {
    MutMap(out.ptr() + i * d * d, d, d) = csiwm::expm(ConstMap(g.value().ptr() + i * d * d, d, d));
  }
  return make(std::move(out), "expm", {g}, [blocks, d](Node& self) {
    Node& in = parent(self, 0);
    Vec grad(in.value.size());
    for (Index i = 0; i < blocks; ++i) {
      // Adjoint of the Frechet derivative: L(A, .)^* = L(A^T, .).
      MutMap(grad.data() + i * d * d, d, d) =
          expm_frechet(ConstMap(in.value.ptr() + i * d * d, d, d).transpose(), ConstMap(self.grad.ptr() + i * d * d, d, d));
    }
    in.accumulate(grad);
  });
}

Var conv2d(const Var& x, const Var& weight, Index kernel_h, Index kernel_w) {
  if (x.value().rank() != 4) throw std::invalid_argument("conv2d: input must be NHWC");
  const Index n = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
  const Index patch = kernel_h * kernel_w * c;
  if (weight.value().rank() != 2 || weight.dim(0) != patch) {
    throw std::invalid_argument("conv2d: weight shape " + shape_string(weight.shape()) + " does not match input " +
                                shape_string(x.shape()));
  }
  const Index cout = weight.dim(1);
  const Index pad_h = (kernel_h - 1) / 2, pad_w = (kernel_w - 1) / 2;
  auto cols = std::make_shared<RowMatrixXd>(n * h * w, patch);
  const double* src = x.value().ptr();
  for (Index b = 0; b < n; ++b)
    for (Index y = 0; y < h; ++y)
      for (Index xx = 0; xx < w; ++xx) {
        double* row = cols->data() + ((b * h + y) * w + xx) * patch;
        for (Index ky = 0; ky < kernel_h; ++ky) {
          double* dst = row + ky * kernel_w * c;
          const Index iy = y + ky - pad_h;
          if (iy < 0 || iy >= h) {
            std::fill_n(dst, kernel_w * c, 0.0);
            continue;
          }
          // Taps inside the image are contiguous in the source row.
          const Index lo = std::max<Index>(0, pad_w - xx), hi = std::min(kernel_w, w + pad_w - xx);
          std::fill_n(dst, lo * c, 0.0);
          std::copy_n(src + ((b * h + iy) * w + xx + lo - pad_w) * c, (hi - lo) * c, dst + lo * c);
          std::fill_n(dst + hi * c, (kernel_w - hi) * c, 0.0);
        }
      }
  Tensor out(Shape{n, h, w, cout});
  out.rows_by_last().noalias() = *cols * weight.value().matrix();
  if (!x.requires_grad() && !weight.requires_grad()) return constant(std::move(out));
  return make(std::move(out), "conv2d", {x, weight}, [cols, n, h, w, c, kernel_h, kernel_w, pad_h, pad_w](Node& self) {
    Node& in = parent(self, 0);
    Node& wt = parent(self, 1);
    const auto gy = self.grad.rows_by_last();
    if (wt.requires_grad) {
      RowMatrixXd gw = cols->transpose() * gy;
      wt.accumulate(Eigen::Map<const Vec>(gw.data(), gw.size()));
    }
    if (in.requires_grad) {
      const Index patch_len = kernel_h * kernel_w * c;
      RowMatrixXd gcols = gy * wt.value.matrix().transpose();
      Vec gx = Vec::Zero(in.value.size());
      for (Index b = 0; b < n; ++b)
        for (Index y = 0; y < h; ++y)
          for (Index xx = 0; xx < w; ++xx) {
            const double* row = gcols.data() + ((b * h + y) * w + xx) * patch_len;
            for (Index ky = 0; ky < kernel_h; ++ky) {
              const Index iy = y + ky - pad_h;
              if (iy < 0 || iy >= h) continue;
              for (Index kx = 0; kx < kernel_w; ++kx) {
                const Index ix = xx + kx - pad_w;
                if (ix < 0 || ix >= w) continue;
                gx.segment(((b * h + iy) * w + ix) * c, c) +=
                    Eigen::Map<const Vec>(row + (ky * kernel_w + kx) * c, c);
              }
            }
          }
      in.accumulate(gx);
    }
  });
}

Var avg_pool2(const Var& x) {
  if (x.value().rank() != 4) throw std::invalid_argument("avg_pool2: input must be NHWC");
  const Index n = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
  const Index oh = (h + 1) / 2, ow = (w + 1) / 2;
  Tensor out(Shape{n, oh, ow, c});
  const double* src = x.value().ptr();
  for (Index b = 0; b < n; ++b)
    for (Index y = 0; y < oh; ++y)
      for (Index xx = 0; xx < ow; ++xx) {
        const Index y1 = std::min(h, 2 * y + 2), x1 = std::min(w, 2 * xx + 2);
        const double inv = 1.0 / double((y1 - 2 * y) * (x1 - 2 * xx));
        auto dst = out.data().segment(((b * oh + y) * ow + xx) * c, c);
        for (Index iy = 2 * y; iy < y1; ++iy)
          for (Index ix = 2 * xx; ix < x1; ++ix) dst += Eigen::Map<const Vec>(src + ((b * h + iy) * w + ix) * c, c);
        dst *= inv;
      }
  return make(std::move(out), "avg_pool2", {x}, [n, h, w, c, oh, ow](Node& self) {
    Vec g = Vec::Zero(n * h * w * c);
    for (Index b = 0; b < n; ++b)
      for (Index y = 0; y < oh; ++y)
        for (Index xx = 0; xx < ow; ++xx) {
          const Index y1 = std::min(h, 2 * y + 2), x1 = std::min(w, 2 * xx + 2);
          const double inv = 1.0 / double((y1 - 2 * y) * (x1 - 2 * xx));
          const auto gy = self.grad.data().segment(((b * oh + y) * ow + xx) * c, c);
          for (Index iy = 2 * y; iy < y1; ++iy)
            for (Index ix = 2 * xx; ix < x1; ++ix) g.segment(((b * h + iy) * w + ix) * c, c) += inv * gy;
        }
    parent(self, 0).accumulate(g);
  });
}

void set_corrupt_gelu_gradient(bool enabled) { g_corrupt_gelu.store(enabled); }
bool corrupt_gelu_gradient() { return g_corrupt_gelu.load(); }

}  // namespace csiwm::ad
