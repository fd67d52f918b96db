#pragma once

// Minimal reverse-mode automatic differentiation over dense row-major
// float64 arrays. A Tensor is a cheap handle onto a graph node; ops build
// the graph eagerly and backward() walks it in reverse topological order.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace lionxa::ad {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // sized lazily; always matches value when non-empty
  bool requires_grad = false;
  bool is_parameter = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this->grad and accumulates into parents' grads.
  std::function<void(Node&)> backward_fn;

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
  }
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static Tensor constant(Shape shape, std::vector<double> values);
  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double v);
  static Tensor scalar(double v);
  // Leaf whose gradient persists across backward passes (accumulates).
  static Tensor parameter(Shape shape, std::vector<double> values);

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t size() const { return node_->value.size(); }

  std::span<const double> values() const { return node_->value; }
  std::span<double> mutable_values() { return node_->value; }
  std::span<const double> grad() const { return node_->grad; }
  std::span<double> mutable_grad() {
    node_->ensure_grad();
    return node_->grad;
  }
  double item() const;
  double at(std::size_t flat) const { return node_->value.at(flat); }

  bool requires_grad() const { return node_->requires_grad; }
  bool is_parameter() const { return node_->is_parameter; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  void zero_grad() { node_->grad.assign(node_->value.size(), 0.0); }

  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

// While alive on the current thread, ops record no graph (evaluation mode).
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

// ---- elementwise / scalar ----
Tensor add(const Tensor& a, const Tensor& b);  // equal shapes, or b scalar
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);  // equal shapes, or b scalar
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);
Tensor relu(const Tensor& x);
Tensor leaky_relu(const Tensor& x, double slope = 0.1);
Tensor sigmoid(const Tensor& x);
Tensor log(const Tensor& x);
Tensor exp(const Tensor& x);
// max(x, floor); gradient passes only where x >= floor.
Tensor clamp_min(const Tensor& x, double floor);

// ---- reductions ----
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

// ---- linear algebra ----
Tensor matmul(const Tensor& a, const Tensor& b);  // [m,k] x [k,n]
Tensor add_row_bias(const Tensor& x, const Tensor& bias);  // [m,n] + [n]
Tensor transpose(const Tensor& x);  // 2-D only

// ---- image ops; single sample, layout [C,H,W] ----
// Stride 1, zero "same" padding, odd square kernel [Cout,Cin,k,k], bias [Cout].
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias);
Tensor max_pool2d(const Tensor& x);  // 2x2, stride 2; H, W even
Tensor upsample_nearest2d(const Tensor& x);  // x2
Tensor instance_norm_2d(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                        double eps = 1e-5);

// ---- row ops ----
Tensor softmax(const Tensor& x);  // along the last axis
// out[i] = x[index[i]]; index -1 yields a zero row. x is [N,F].
Tensor gather_rows(const Tensor& x, std::span<const std::int64_t> index);
// out[index[i]] += x[i]; out has `rows` rows. index -1 drops the row.
Tensor scatter_rows(const Tensor& x, std::span<const std::int64_t> index, std::size_t rows);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length);
Tensor reshape(const Tensor& x, Shape shape);

// Same values, cut from the graph.
Tensor detach(const Tensor& x);

// Accumulates d(loss)/d(param) into every reachable parameter's grad.
void backward(const Tensor& loss);

// Reverse topological order used by backward(); exposed for tests.
std::vector<Node*> topological_order(const Tensor& root);

// Central-difference check. Returns max over coordinates of
// |analytic - numeric| / max(1, |numeric|).
double grad_check(const std::function<double(std::span<const double>)>& f,
                  const std::function<std::vector<double>(std::span<const double>)>& gradient,
                  std::span<const double> point, double h = 1e-5);

// Same check driven through the engine: loss_fn rebuilds the graph from the
// current parameter values. `coords` optionally restricts the checked
// (parameter, flat index) pairs; empty means all.
struct GradCoord {
  std::size_t param;
  std::size_t index;
};
double grad_check(const std::function<Tensor()>& loss_fn, std::span<Tensor> params,
                  double h = 1e-5, std::span<const GradCoord> coords = {});

// Engine-level grad_check of a scalar function of one input tensor.
double grad_check(const std::function<Tensor(const Tensor&)>& f, std::span<const double> point,
                  double h = 1e-5);

namespace fault {
// Mutation hook for the verification suite: flips the sign of one backward rule.
enum class Kind { kNone, kReluBackwardSign, kMatmulBackwardSign };
void inject(Kind kind);
Kind active();
}  // namespace fault

}  // namespace lionxa::ad
