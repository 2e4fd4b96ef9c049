#pragma once

// Define-by-run reverse-mode differentiation over dense float64 tensors.
//
// Every op returns a fresh Tensor whose node remembers its parents and a
// closure that pushes the node's gradient into them. The graph is rebuilt on
// each forward pass; parameters are long-lived leaf nodes whose values the
// optimizer mutates in place.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace madl::diffnet {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {
struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  bool is_leaf = true;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;
};
}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  static Tensor constant(Shape shape, std::vector<double> values);
  static Tensor zeros(Shape shape);
  static Tensor scalar(double v);
  // Leaf that accumulates gradients; used for parameters.
  static Tensor variable(Shape shape, std::vector<double> values);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t size() const { return node_->value.size(); }
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> values() const { return node_->value; }
  // Empty span when no gradient has been accumulated.
  std::span<const double> grad() const { return node_->grad; }
  double item() const;
  double at(std::size_t r, std::size_t c) const;

  bool requires_grad() const { return node_->requires_grad; }
  void zero_grad();

  // Mutable access for optimizers and finite-difference probes. Only valid on
  // leaves; graph nodes built from the leaf keep their old values.
  std::span<double> mutable_values();
  std::span<double> mutable_grad();

  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> n) : node_(std::move(n)) {}
  friend Tensor make_op(Shape, std::vector<double>, std::vector<Tensor>,
                        std::function<void(detail::Node&)>);
  std::shared_ptr<detail::Node> node_;
};

// Builds an op node. The backward closure reads node.grad and accumulates into
// parent grads (already allocated when the parent requires grad).
Tensor make_op(Shape shape, std::vector<double> values, std::vector<Tensor> parents,
               std::function<void(detail::Node&)> backward);

// While alive on this thread, ops record no parents.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};
bool grad_enabled();

// --- ops -------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor add_bias(const Tensor& x, const Tensor& bias);
Tensor dense_forward(const Tensor& input, const Tensor& weights, const Tensor& bias);
Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor exp(const Tensor& x);
// ln(max(x, floor)); gradient is zero where the clamp is active.
Tensor log_clamped(const Tensor& x, double floor);
Tensor softmax_rows(const Tensor& x);
Tensor stop_gradient(const Tensor& x);

// Elementwise; either operand may be a single-element tensor (broadcast).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double c);
Tensor add_scalar(const Tensor& x, double c);
Tensor reciprocal(const Tensor& x);

Tensor sum(const Tensor& x);
// [B x C] -> [B]
Tensor sum_rows(const Tensor& x);
// Row selection; a rank-1 input is treated as a column.
Tensor gather_rows(const Tensor& x, std::span<const std::size_t> index);
// out(b, j) = x(b, index[b * J + j]) for an index of B x J entries.
Tensor take_along_rows(const Tensor& x, std::span<const std::size_t> index, std::size_t per_row);
Tensor concat_cols(const std::vector<Tensor>& parts);
// Row-wise flattened outer product: [B x R], [B x Q] -> [B x R*Q].
Tensor outer_rows(const Tensor& a, const Tensor& b);
Tensor reshape(const Tensor& x, Shape shape);
// Row-wise expansion of diagonal probabilities into flattened C x C
// matrices whose off-diagonal entries share the remaining mass uniformly.
// Input [B x C] (one value per class) or [B x 1] (shared value).
Tensor diag_expand(const Tensor& diag, std::size_t num_classes);

// Reverse-mode accumulation from a single-element loss.
void backward(const Tensor& loss);

// --- parameters and optimization -------------------------------------------

struct Parameter {
  std::string name;
  Tensor tensor;
};

class ParameterSet {
 public:
  // Throws ContractError on a duplicate name.
  Tensor add(const std::string& name, Shape shape, std::vector<double> values);
  const Parameter* find(const std::string& name) const;
  const std::vector<Parameter>& items() const { return params_; }
  std::size_t count() const;  // total scalar count
  void zero_grad();

  std::vector<std::vector<double>> snapshot() const;
  void restore(const std::vector<std::vector<double>>& snap);

 private:
  std::vector<Parameter> params_;
};

struct OptimizerState {
  std::uint64_t step = 0;
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;
  double base_lr = 1e-3;
  double weight_decay = 0.0;
  std::uint64_t total_steps = 1;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  static OptimizerState for_params(const ParameterSet& params, double base_lr,
                                   double weight_decay, std::uint64_t total_steps);
};

// Decoupled weight decay: p <- p * (1 - lr * wd), then the bias-corrected Adam
// update. Parameters without a gradient buffer are treated as zero-gradient.
void adamw_step(ParameterSet& params, OptimizerState& state, double lr);

double cosine_lr(std::uint64_t step, std::uint64_t total, double base);

}  // namespace madl::diffnet
