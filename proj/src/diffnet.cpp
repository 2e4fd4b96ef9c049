#include "madl/diffnet.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "madl/error.hpp"

namespace madl::diffnet {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

thread_local bool g_grad_enabled = true;

// Views a tensor as a matrix; rank-1 tensors are single rows.
std::pair<std::size_t, std::size_t> as_matrix(const Shape& s) {
  if (s.size() == 2) return {s[0], s[1]};
  if (s.size() == 1) return {1, s[0]};
  if (s.empty()) return {1, 1};
  throw ShapeError("expected a tensor of rank <= 2, got " + shape_str(s));
}

bool wants_grad(const std::shared_ptr<detail::Node>& n) { return n->requires_grad; }

void require_2d(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    throw ShapeError(std::string(op) + ": expected rank-2 tensor, got " + shape_str(t.shape()));
  }
}

template <typename Fwd, typename Deriv>
Tensor unary(const Tensor& x, Fwd fwd, Deriv deriv) {
  std::vector<double> out(x.size());
  auto in = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(in[i]);
  return make_op(x.shape(), std::move(out), {x}, [deriv](detail::Node& self) {
    auto& p = self.parents[0];
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      p->grad[i] += self.grad[i] * deriv(p->value[i], self.value[i]);
    }
  });
}

enum class BinOp { Add, Sub, Mul };

Tensor binary(const Tensor& a, const Tensor& b, BinOp op) {
  const bool a_scalar = a.size() == 1 && b.size() != 1;
  const bool b_scalar = b.size() == 1 && a.size() != 1;
  if (!a_scalar && !b_scalar && a.shape() != b.shape()) {
    throw ShapeError("elementwise op: shapes " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()) + " do not conform");
  }
  const Shape out_shape = a_scalar ? b.shape() : a.shape();
  const std::size_t n = shape_size(out_shape);
  auto av = a.values();
  auto bv = b.values();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double x = av[a_scalar ? 0 : i];
    const double y = bv[b_scalar ? 0 : i];
    switch (op) {
      case BinOp::Add: out[i] = x + y; break;
      case BinOp::Sub: out[i] = x - y; break;
      case BinOp::Mul: out[i] = x * y; break;
    }
  }
  return make_op(out_shape, std::move(out), {a, b}, [a_scalar, b_scalar, op](detail::Node& self) {
    auto& pa = self.parents[0];
    auto& pb = self.parents[1];
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const double g = self.grad[i];
      const std::size_t ia = a_scalar ? 0 : i;
      const std::size_t ib = b_scalar ? 0 : i;
      double ga = 0.0;
      double gb = 0.0;
      switch (op) {
        case BinOp::Add: ga = g; gb = g; break;
        case BinOp::Sub: ga = g; gb = -g; break;
        case BinOp::Mul: ga = g * pb->value[ib]; gb = g * pa->value[ia]; break;
      }
      if (wants_grad(pa)) pa->grad[ia] += ga;
      if (wants_grad(pb)) pb->grad[ib] += gb;
    }
  });
}

}  // namespace

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

// --- Tensor ----------------------------------------------------------------

Tensor Tensor::constant(Shape shape, std::vector<double> values) {
  if (shape_size(shape) != values.size()) {
    throw ShapeError("tensor of shape " + shape_str(shape) + " needs " +
                     std::to_string(shape_size(shape)) + " values, got " +
                     std::to_string(values.size()));
  }
  auto n = std::make_shared<detail::Node>();
  n->shape = std::move(shape);
  n->value = std::move(values);
  return Tensor(std::move(n));
}

Tensor Tensor::zeros(Shape shape) {
  const auto n = shape_size(shape);
  return constant(std::move(shape), std::vector<double>(n, 0.0));
}

Tensor Tensor::scalar(double v) { return constant({1}, {v}); }

Tensor Tensor::variable(Shape shape, std::vector<double> values) {
  Tensor t = constant(std::move(shape), std::move(values));
  t.node_->requires_grad = true;
  t.node_->grad.assign(t.node_->value.size(), 0.0);
  return t;
}

std::size_t Tensor::rows() const { return as_matrix(shape()).first; }
std::size_t Tensor::cols() const { return as_matrix(shape()).second; }

double Tensor::item() const {
  if (size() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
  return node_->value[0];
}

double Tensor::at(std::size_t r, std::size_t c) const { return node_->value[r * cols() + c]; }

void Tensor::zero_grad() {
  if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

std::span<double> Tensor::mutable_values() {
  if (!node_->is_leaf) throw ContractError("mutable_values() on a non-leaf tensor");
  return node_->value;
}

std::span<double> Tensor::mutable_grad() {
  if (node_->grad.size() != node_->value.size()) node_->grad.assign(node_->value.size(), 0.0);
  return node_->grad;
}

Tensor make_op(Shape shape, std::vector<double> values, std::vector<Tensor> parents,
               std::function<void(detail::Node&)> backward) {
  auto n = std::make_shared<detail::Node>();
  n->shape = std::move(shape);
  n->value = std::move(values);
  n->is_leaf = false;
  bool any = false;
  if (g_grad_enabled) {
    for (const auto& p : parents) any = any || p.requires_grad();
  }
  if (any) {
    n->requires_grad = true;
    n->parents.reserve(parents.size());
    for (auto& p : parents) n->parents.push_back(p.node_);
    n->backward = std::move(backward);
  }
  return Tensor(std::move(n));
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }

// --- ops -------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_2d(a, "matmul");
  require_2d(b, "matmul");
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()) +
                     " do not conform");
  }
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  std::vector<double> out(m * n);
  MutMap(out.data(), m, n).noalias() =
      ConstMap(a.values().data(), m, k) * ConstMap(b.values().data(), k, n);
  return make_op({m, n}, std::move(out), {a, b}, [m, k, n](detail::Node& self) {
    auto& pa = self.parents[0];
    auto& pb = self.parents[1];
    ConstMap g(self.grad.data(), m, n);
    if (wants_grad(pa)) {
      MutMap(pa->grad.data(), m, k).noalias() += g * ConstMap(pb->value.data(), k, n).transpose();
    }
    if (wants_grad(pb)) {
      MutMap(pb->grad.data(), k, n).noalias() += ConstMap(pa->value.data(), m, k).transpose() * g;
    }
  });
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  require_2d(x, "add_bias");
  if (bias.size() != x.cols()) {
    throw ShapeError("add_bias: bias " + shape_str(bias.shape()) + " does not match input " +
                     shape_str(x.shape()));
  }
  const std::size_t m = x.rows(), n = x.cols();
  std::vector<double> out(x.values().begin(), x.values().end());
  auto bv = bias.values();
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t c = 0; c < n; ++c) out[r * n + c] += bv[c];
  return make_op(x.shape(), std::move(out), {x, bias}, [m, n](detail::Node& self) {
    auto& px = self.parents[0];
    auto& pb = self.parents[1];
    if (wants_grad(px))
      for (std::size_t i = 0; i < m * n; ++i) px->grad[i] += self.grad[i];
    if (wants_grad(pb))
      for (std::size_t r = 0; r < m; ++r)
        for (std::size_t c = 0; c < n; ++c) pb->grad[c] += self.grad[r * n + c];
  });
}

Tensor dense_forward(const Tensor& input, const Tensor& weights, const Tensor& bias) {
  if (input.rank() != 2 || weights.rank() != 2 || input.cols() != weights.rows() ||
      bias.size() != weights.cols()) {
    throw ShapeError("dense: input " + shape_str(input.shape()) + ", weights " +
                     shape_str(weights.shape()) + ", bias " + shape_str(bias.shape()) +
                     " do not conform");
  }
  return add_bias(matmul(input, weights), bias);
}

Tensor relu(const Tensor& x) {
  return unary(
      x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double in, double) { return in > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& x) {
  return unary(
      x,
      [](double v) {
        if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double out) { return out * (1.0 - out); });
}

Tensor exp(const Tensor& x) {
  return unary(
      x, [](double v) { return std::exp(v); }, [](double, double out) { return out; });
}

Tensor log_clamped(const Tensor& x, double floor) {
  return unary(
      x, [floor](double v) { return std::log(std::max(v, floor)); },
      [floor](double in, double) { return in > floor ? 1.0 / in : 0.0; });
}

Tensor softmax_rows(const Tensor& x) {
  const auto [m, n] = as_matrix(x.shape());
  std::vector<double> out(m * n);
  auto in = x.values();
  for (std::size_t r = 0; r < m; ++r) {
    const double* row = in.data() + r * n;
    const double mx = *std::max_element(row, row + n);
    double z = 0.0;
    for (std::size_t c = 0; c < n; ++c) {
      out[r * n + c] = std::exp(row[c] - mx);
      z += out[r * n + c];
    }
    for (std::size_t c = 0; c < n; ++c) out[r * n + c] /= z;
  }
  return make_op(x.shape(), std::move(out), {x}, [m, n](detail::Node& self) {
    auto& p = self.parents[0];
    for (std::size_t r = 0; r < m; ++r) {
      const double* s = self.value.data() + r * n;
      const double* g = self.grad.data() + r * n;
      double dot = 0.0;
      for (std::size_t c = 0; c < n; ++c) dot += g[c] * s[c];
      for (std::size_t c = 0; c < n; ++c) p->grad[r * n + c] += s[c] * (g[c] - dot);
    }
  });
}

Tensor stop_gradient(const Tensor& x) {
  return Tensor::constant(x.shape(), std::vector<double>(x.values().begin(), x.values().end()));
}

Tensor add(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::Add); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::Sub); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::Mul); }

Tensor scale(const Tensor& x, double c) {
  return unary(
      x, [c](double v) { return c * v; }, [c](double, double) { return c; });
}

Tensor add_scalar(const Tensor& x, double c) {
  return unary(
      x, [c](double v) { return v + c; }, [](double, double) { return 1.0; });
}

Tensor reciprocal(const Tensor& x) {
  return unary(
      x, [](double v) { return 1.0 / v; }, [](double, double out) { return -out * out; });
}

Tensor sum(const Tensor& x) {
  auto v = x.values();
  const double s = std::accumulate(v.begin(), v.end(), 0.0);
  return make_op({1}, {s}, {x}, [](detail::Node& self) {
    auto& p = self.parents[0];
    for (double& g : p->grad) g += self.grad[0];
  });
}

Tensor sum_rows(const Tensor& x) {
  require_2d(x, "sum_rows");
  const std::size_t m = x.rows(), n = x.cols();
  std::vector<double> out(m, 0.0);
  auto v = x.values();
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t c = 0; c < n; ++c) out[r] += v[r * n + c];
  return make_op({m}, std::move(out), {x}, [m, n](detail::Node& self) {
    auto& p = self.parents[0];
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t c = 0; c < n; ++c) p->grad[r * n + c] += self.grad[r];
  });
}

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> index) {
  const bool vec = x.rank() == 1;
  if (!vec) require_2d(x, "gather_rows");
  const std::size_t rows = vec ? x.size() : x.rows();
  const std::size_t width = vec ? 1 : x.cols();
  std::vector<double> out(index.size() * width);
  auto v = x.values();
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= rows) {
      throw ShapeError("gather_rows: index " + std::to_string(index[i]) + " out of range for " +
                       shape_str(x.shape()));
    }
    std::copy_n(v.data() + index[i] * width, width, out.data() + i * width);
  }
  Shape shape = vec ? Shape{index.size()} : Shape{index.size(), width};
  std::vector<std::size_t> idx(index.begin(), index.end());
  return make_op(std::move(shape), std::move(out), {x},
                 [idx = std::move(idx), width](detail::Node& self) {
                   auto& p = self.parents[0];
                   for (std::size_t i = 0; i < idx.size(); ++i)
                     for (std::size_t c = 0; c < width; ++c)
                       p->grad[idx[i] * width + c] += self.grad[i * width + c];
                 });
}

Tensor take_along_rows(const Tensor& x, std::span<const std::size_t> index, std::size_t per_row) {
  require_2d(x, "take_along_rows");
  const std::size_t m = x.rows(), n = x.cols();
  if (index.size() != m * per_row) {
    throw ShapeError("take_along_rows: index of " + std::to_string(index.size()) +
                     " entries does not match " + std::to_string(m) + " rows x " +
                     std::to_string(per_row));
  }
  std::vector<double> out(m * per_row);
  auto v = x.values();
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t j = 0; j < per_row; ++j) {
      const std::size_t c = index[r * per_row + j];
      if (c >= n) throw ShapeError("take_along_rows: column index out of range");
      out[r * per_row + j] = v[r * n + c];
    }
  std::vector<std::size_t> idx(index.begin(), index.end());
  return make_op({m, per_row}, std::move(out), {x},
                 [idx = std::move(idx), m, n, per_row](detail::Node& self) {
                   auto& p = self.parents[0];
                   for (std::size_t r = 0; r < m; ++r)
                     for (std::size_t j = 0; j < per_row; ++j)
                       p->grad[r * n + idx[r * per_row + j]] += self.grad[r * per_row + j];
                 });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const std::size_t m = parts.front().rows();
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& t : parts) {
    require_2d(t, "concat_cols");
    if (t.rows() != m) throw ShapeError("concat_cols: row counts differ");
    widths.push_back(t.cols());
    total += t.cols();
  }
  std::vector<double> out(m * total);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    auto v = parts[k].values();
    for (std::size_t r = 0; r < m; ++r)
      std::copy_n(v.data() + r * widths[k], widths[k], out.data() + r * total + offset);
    offset += widths[k];
  }
  return make_op({m, total}, std::move(out), parts, [m, total, widths](detail::Node& self) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < widths.size(); ++k) {
      auto& p = self.parents[k];
      if (wants_grad(p)) {
        for (std::size_t r = 0; r < m; ++r)
          for (std::size_t c = 0; c < widths[k]; ++c)
            p->grad[r * widths[k] + c] += self.grad[r * total + off + c];
      }
      off += widths[k];
    }
  });
}

Tensor outer_rows(const Tensor& a, const Tensor& b) {
  require_2d(a, "outer_rows");
  require_2d(b, "outer_rows");
  if (a.rows() != b.rows()) {
    throw ShapeError("outer_rows: shapes " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()) + " do not conform");
  }
  const std::size_t m = a.rows(), r = a.cols(), q = b.cols();
  std::vector<double> out(m * r * q);
  auto av = a.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < r; ++j)
      for (std::size_t k = 0; k < q; ++k) out[(i * r + j) * q + k] = av[i * r + j] * bv[i * q + k];
  return make_op({m, r * q}, std::move(out), {a, b}, [m, r, q](detail::Node& self) {
    auto& pa = self.parents[0];
    auto& pb = self.parents[1];
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < r; ++j)
        for (std::size_t k = 0; k < q; ++k) {
          const double g = self.grad[(i * r + j) * q + k];
          if (wants_grad(pa)) pa->grad[i * r + j] += g * pb->value[i * q + k];
          if (wants_grad(pb)) pb->grad[i * q + k] += g * pa->value[i * r + j];
        }
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_size(shape) != x.size()) {
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  std::vector<double> out(x.values().begin(), x.values().end());
  return make_op(std::move(shape), std::move(out), {x}, [](detail::Node& self) {
    auto& p = self.parents[0];
    for (std::size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += self.grad[i];
  });
}

Tensor diag_expand(const Tensor& diag, std::size_t num_classes) {
  require_2d(diag, "diag_expand");
  const std::size_t c = num_classes;
  if (c < 2) throw ShapeError("diag_expand: need at least two classes");
  const std::size_t k = diag.cols();
  if (k != 1 && k != c) {
    throw ShapeError("diag_expand: expected 1 or " + std::to_string(c) + " columns, got " +
                     shape_str(diag.shape()));
  }
  const std::size_t m = diag.rows();
  const double spread = 1.0 / static_cast<double>(c - 1);
  std::vector<double> out(m * c * c);
  auto v = diag.values();
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t i = 0; i < c; ++i) {
      const double s = v[r * k + (k == 1 ? 0 : i)];
      for (std::size_t j = 0; j < c; ++j) out[(r * c + i) * c + j] = i == j ? s : (1.0 - s) * spread;
    }
  return make_op({m, c * c}, std::move(out), {diag}, [m, c, k, spread](detail::Node& self) {
    auto& p = self.parents[0];
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t i = 0; i < c; ++i) {
        double g = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
          const double gij = self.grad[(r * c + i) * c + j];
          g += i == j ? gij : -gij * spread;
        }
        p->grad[r * k + (k == 1 ? 0 : i)] += g;
      }
  });
}

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.size() != 1) {
    throw ContractError("backward: loss must be a single-element tensor");
  }
  const auto& root = loss.node();
  if (!root->requires_grad) return;

  // Iterative post-order DFS gives a topological order (parents first).
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> seen;
  std::vector<std::pair<detail::Node*, std::size_t>> stack{{root.get(), 0}};
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      detail::Node* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (detail::Node* n : order) {
    if (n->is_leaf) {
      if (n->grad.size() != n->value.size()) n->grad.assign(n->value.size(), 0.0);
    } else {
      n->grad.assign(n->value.size(), 0.0);
    }
  }
  root->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* n = *it;
    if (!n->is_leaf && n->backward) n->backward(*n);
  }
  // Intermediate buffers are dead after the pass.
  for (detail::Node* n : order) {
    if (!n->is_leaf && n != root.get()) std::vector<double>().swap(n->grad);
  }
}

// --- parameters ------------------------------------------------------------

Tensor ParameterSet::add(const std::string& name, Shape shape, std::vector<double> values) {
  if (find(name) != nullptr) throw ContractError("duplicate parameter identifier: " + name);
  Tensor t = Tensor::variable(std::move(shape), std::move(values));
  params_.push_back({name, t});
  return t;
}

const Parameter* ParameterSet::find(const std::string& name) const {
  for (const auto& p : params_)
    if (p.name == name) return &p;
  return nullptr;
}

std::size_t ParameterSet::count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.tensor.size();
  return n;
}

void ParameterSet::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

std::vector<std::vector<double>> ParameterSet::snapshot() const {
  std::vector<std::vector<double>> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.emplace_back(p.tensor.values().begin(), p.tensor.values().end());
  return out;
}

void ParameterSet::restore(const std::vector<std::vector<double>>& snap) {
  if (snap.size() != params_.size()) throw ContractError("restore: parameter count mismatch");
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto dst = params_[i].tensor.mutable_values();
    if (snap[i].size() != dst.size()) throw ContractError("restore: size mismatch for " + params_[i].name);
    std::copy(snap[i].begin(), snap[i].end(), dst.begin());
  }
}

OptimizerState OptimizerState::for_params(const ParameterSet& params, double base_lr,
                                          double weight_decay, std::uint64_t total_steps) {
  OptimizerState s;
  s.base_lr = base_lr;
  s.weight_decay = weight_decay;
  s.total_steps = std::max<std::uint64_t>(1, total_steps);
  for (const auto& p : params.items()) {
    s.first_moment.emplace_back(p.tensor.size(), 0.0);
    s.second_moment.emplace_back(p.tensor.size(), 0.0);
  }
  return s;
}

void adamw_step(ParameterSet& params, OptimizerState& state, double lr) {
  const auto& items = params.items();
  if (state.first_moment.size() != items.size()) {
    throw ContractError("adamw_step: optimizer state does not match parameters");
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(state.beta1, t);
  const double bc2 = 1.0 - std::pow(state.beta2, t);
  const double decay = 1.0 - lr * state.weight_decay;
  for (std::size_t i = 0; i < items.size(); ++i) {
    Tensor tensor = items[i].tensor;
    auto values = tensor.mutable_values();
    auto grad = tensor.grad();
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    for (std::size_t j = 0; j < values.size(); ++j) {
      const double g = grad.empty() ? 0.0 : grad[j];
      values[j] *= decay;
      m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * g;
      v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * g * g;
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      values[j] -= lr * mhat / (std::sqrt(vhat) + state.eps);
    }
  }
}

double cosine_lr(std::uint64_t step, std::uint64_t total, double base) {
  if (total == 0) throw ContractError("cosine_lr: total must be >= 1");
  if (step > total) throw ContractError("cosine_lr: step exceeds total");
  const double frac = static_cast<double>(step) / static_cast<double>(total);
  return base * 0.5 * (1.0 + std::cos(std::numbers::pi * frac));
}

}  // namespace madl::diffnet
