#pragma once

// Dense float64 tensors with define-by-run reverse-mode differentiation.
//
// A Tensor is a cheap handle to a shared node. Operations on tensors that
// require gradients record their parents and a backward rule on the result;
// backward() orders the recorded graph topologically (the GradTape) and
// replays it once in reverse. Tensors that do not require gradients carry no
// graph and may be read concurrently.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace mmkd {

using Shape = std::vector<std::size_t>;

std::string shape_to_string(const Shape& shape);

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until a backward pass reaches the node
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;  // reads this->grad, accumulates into parents

  std::vector<double>& ensure_grad();
};

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor vector(std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t size() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> data() const;
  /// Only leaves may be written; used by optimizers and finite differences.
  std::span<double> mutable_data();
  std::vector<double> to_vector() const;
  double item() const;
  double at(std::size_t i) const;
  double at(std::size_t r, std::size_t c) const;

  bool requires_grad() const;
  void set_requires_grad(bool on);
  bool is_leaf() const;
  bool has_grad() const;
  std::span<const double> grad() const;
  void zero_grad();

  /// Deep copy of the values as a fresh leaf with the same requires_grad flag.
  Tensor clone() const;
  /// Deep copy of the values as a constant leaf.
  Tensor detach() const;

  const detail::Node* node() const { return node_.get(); }

 private:
  friend Tensor make_result(const char* op, Shape shape, std::vector<double> values,
                            std::vector<Tensor> inputs, std::function<void(detail::Node&)> backward);
  friend class GradTape;

  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::Node> node_;
};

/// Creates an op result. The backward rule is kept only when some input
/// requires a gradient. Throws NumericError on non-finite values.
Tensor make_result(const char* op, Shape shape, std::vector<double> values,
                   std::vector<Tensor> inputs, std::function<void(detail::Node&)> backward);

/// Topologically ordered list of the operations that produced a tensor.
class GradTape {
 public:
  static GradTape record(const Tensor& root);

  std::size_t size() const { return ops_.size(); }
  bool empty() const { return ops_.empty(); }
  /// Operation names in execution (forward) order.
  std::vector<std::string> op_names() const;
  /// Seeds d(root)/d(root) = 1 and runs every backward rule once, in reverse.
  void backward();

 private:
  std::shared_ptr<detail::Node> root_;
  std::vector<std::shared_ptr<detail::Node>> ops_;
};

/// Populates grad on every requires_grad tensor reachable from a scalar loss.
/// Gradients accumulate across calls until zero_grad().
void backward(const Tensor& loss);

// Elementwise; shapes must match exactly.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor relu(const Tensor& a);
Tensor log(const Tensor& a);
Tensor square(const Tensor& a);

// Reductions to a scalar.
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
/// Sum of same-shaped tensors in one node.
Tensor add_n(std::span<const Tensor> terms);

Tensor matmul(const Tensor& a, const Tensor& b);
/// Matrix [m x k] times vector [k] -> vector [m].
Tensor matvec(const Tensor& w, const Tensor& x);
Tensor transpose(const Tensor& a);

Tensor softmax_t(const Tensor& logits, double temperature);
Tensor log_softmax_t(const Tensor& logits, double temperature);
/// Element i of a vector as a scalar.
Tensor pick(const Tensor& v, std::size_t index);
/// Stacks equal-length vectors into a [rows.size() x n] matrix.
Tensor stack_rows(std::span<const Tensor> rows);
/// Scales every row to unit L2 norm; all-zero rows stay zero.
Tensor normalize_rows(const Tensor& a);

/// Central differences (f(x + h e_i) - f(x - h e_i)) / 2h. x is perturbed in
/// place and restored, so f may close over tensors that share x's storage.
Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, Tensor x, double step);

namespace testing {

/// While alive, matmul and matvec backward rules on this thread scale the
/// left-operand gradient by 1.01. Used to check that gradient checks fail.
class ScopedBackwardFault {
 public:
  ScopedBackwardFault();
  ~ScopedBackwardFault();
  ScopedBackwardFault(const ScopedBackwardFault&) = delete;
  ScopedBackwardFault& operator=(const ScopedBackwardFault&) = delete;

 private:
  bool previous_;
};

}  // namespace testing

}  // namespace mmkd
