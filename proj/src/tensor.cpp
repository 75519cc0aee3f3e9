#include "mmkd/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_set>
#include <utility>

#include "mmkd/errors.hpp"

namespace mmkd {

namespace {

thread_local bool g_backward_fault = false;

std::size_t element_count(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_to_string(a.shape()) +
                         " vs " + shape_to_string(b.shape()));
  }
}

void require_rank(const char* op, const Tensor& a, std::size_t rank) {
  if (a.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) +
                         " tensor, got " + shape_to_string(a.shape()));
  }
}

void require_defined(const Tensor& t) {
  if (!t.defined()) throw ContractError("operation on an undefined tensor");
}

bool wants_grad(const std::shared_ptr<detail::Node>& n) { return n->requires_grad; }

}  // namespace

std::string shape_to_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

std::vector<double>& detail::Node::ensure_grad() {
  if (grad.empty()) grad.assign(data.size(), 0.0);
  return grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  const auto n = element_count(shape);
  return from(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  for (auto d : shape) {
    if (d == 0) throw DimensionError("tensor dimensions must be positive, got " + shape_to_string(shape));
  }
  if (element_count(shape) != values.size()) {
    throw DimensionError("shape " + shape_to_string(shape) + " needs " +
                         std::to_string(element_count(shape)) + " values, got " +
                         std::to_string(values.size()));
  }
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->data = std::move(values);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::vector(std::vector<double> values, bool requires_grad) {
  Shape shape{values.size()};
  return from(std::move(shape), std::move(values), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from({}, {value}, requires_grad); }

const Shape& Tensor::shape() const {
  require_defined(*this);
  return node_->shape;
}

std::size_t Tensor::size() const {
  require_defined(*this);
  return node_->data.size();
}

std::size_t Tensor::rows() const {
  require_rank("rows", *this, 2);
  return node_->shape[0];
}

std::size_t Tensor::cols() const {
  require_rank("cols", *this, 2);
  return node_->shape[1];
}

std::span<const double> Tensor::data() const {
  require_defined(*this);
  return node_->data;
}

std::span<double> Tensor::mutable_data() {
  require_defined(*this);
  if (!is_leaf()) throw ContractError("only leaf tensors may be modified in place");
  return node_->data;
}

std::vector<double> Tensor::to_vector() const {
  auto d = data();
  return {d.begin(), d.end()};
}

double Tensor::item() const {
  if (size() != 1) throw ContractError("item() on tensor of shape " + shape_to_string(shape()));
  return node_->data[0];
}

double Tensor::at(std::size_t i) const { return data()[i]; }

double Tensor::at(std::size_t r, std::size_t c) const { return data()[r * cols() + c]; }

bool Tensor::requires_grad() const {
  require_defined(*this);
  return node_->requires_grad;
}

void Tensor::set_requires_grad(bool on) {
  if (!is_leaf()) throw ContractError("requires_grad can only be toggled on leaf tensors");
  node_->requires_grad = on;
  if (!on) node_->grad.clear();
}

bool Tensor::is_leaf() const {
  require_defined(*this);
  return !node_->backward;
}

bool Tensor::has_grad() const {
  require_defined(*this);
  return !node_->grad.empty();
}

std::span<const double> Tensor::grad() const {
  if (!has_grad()) throw ContractError("tensor has no gradient");
  return node_->grad;
}

void Tensor::zero_grad() {
  require_defined(*this);
  node_->grad.clear();
}

Tensor Tensor::clone() const { return from(shape(), to_vector(), requires_grad()); }

Tensor Tensor::detach() const { return from(shape(), to_vector(), false); }

Tensor make_result(const char* op, Shape shape, std::vector<double> values, std::vector<Tensor> inputs,
                   std::function<void(detail::Node&)> backward) {
  for (double v : values) {
    if (!std::isfinite(v)) throw NumericError(std::string(op) + ": non-finite value in forward pass");
  }
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->data = std::move(values);
  node->op = op;
  const bool any = std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) { return t.requires_grad(); });
  if (any) {
    node->requires_grad = true;
    node->backward = std::move(backward);
    node->parents.reserve(inputs.size());
    for (auto& t : inputs) node->parents.push_back(std::move(t.node_));
  }
  return Tensor(std::move(node));
}

GradTape GradTape::record(const Tensor& root) {
  require_defined(root);
  GradTape tape;
  tape.root_ = root.node_;
  if (!root.node_->backward) return tape;

  // Iterative post-order DFS: a node is emitted after all of its parents.
  std::unordered_set<const detail::Node*> seen;
  std::vector<std::pair<std::shared_ptr<detail::Node>, std::size_t>> stack;
  stack.emplace_back(root.node_, 0);
  seen.insert(root.node_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      auto parent = node->parents[next++];
      if (parent->backward && seen.insert(parent.get()).second) stack.emplace_back(std::move(parent), 0);
      continue;
    }
    tape.ops_.push_back(std::move(node));
    stack.pop_back();
  }
  return tape;
}

std::vector<std::string> GradTape::op_names() const {
  std::vector<std::string> names;
  names.reserve(ops_.size());
  for (const auto& n : ops_) names.emplace_back(n->op);
  return names;
}

void GradTape::backward() {
  if (root_ == nullptr) throw ContractError("backward on an undefined tensor");
  if (root_->data.size() != 1) {
    throw ContractError("backward requires a scalar loss, got shape " + shape_to_string(root_->shape));
  }
  if (ops_.empty()) throw ContractError("backward: loss was not produced by any differentiable operation");

  for (auto& n : ops_) n->grad.assign(n->data.size(), 0.0);
  root_->grad[0] = 1.0;
  for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) {
    auto& n = **it;
    n.backward(n);
    for (const auto& p : n.parents) {
      if (!p->requires_grad || p->backward) continue;
      for (double g : p->grad) {
        if (!std::isfinite(g)) throw NumericError(std::string(n.op) + ": non-finite gradient");
      }
    }
  }
}

void backward(const Tensor& loss) { GradTape::record(loss).backward(); }

// ---------------------------------------------------------------------------
// Elementwise

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape("add", a, b);
  std::vector<double> out(a.size());
  auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
  return make_result("add", a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
    for (auto& p : self.parents) {
      if (!wants_grad(p)) continue;
      auto& g = p->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape("sub", a, b);
  std::vector<double> out(a.size());
  auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] - y[i];
  return make_result("sub", a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
    const double sign[2] = {1.0, -1.0};
    for (std::size_t k = 0; k < 2; ++k) {
      auto& p = self.parents[k];
      if (!wants_grad(p)) continue;
      auto& g = p->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += sign[k] * self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape("mul", a, b);
  std::vector<double> out(a.size());
  auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
  return make_result("mul", a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
    auto& pa = self.parents[0];
    auto& pb = self.parents[1];
    if (wants_grad(pa)) {
      auto& g = pa->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pb->data[i];
    }
    if (wants_grad(pb)) {
      auto& g = pb->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pa->data[i];
    }
  });
}

Tensor scale(const Tensor& a, double factor) {
  std::vector<double> out(a.data().begin(), a.data().end());
  for (auto& v : out) v *= factor;
  return make_result("scale", a.shape(), std::move(out), {a}, [factor](detail::Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += factor * self.grad[i];
  });
}

Tensor relu(const Tensor& a) {
  std::vector<double> out(a.data().begin(), a.data().end());
  for (auto& v : out) v = v > 0.0 ? v : 0.0;
  return make_result("relu", a.shape(), std::move(out), {a}, [](detail::Node& self) {
    auto& p = self.parents[0];
    auto& g = p->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (p->data[i] > 0.0) g[i] += self.grad[i];
    }
  });
}

Tensor log(const Tensor& a) {
  std::vector<double> out(a.data().begin(), a.data().end());
  for (auto& v : out) v = std::log(v);
  return make_result("log", a.shape(), std::move(out), {a}, [](detail::Node& self) {
    auto& p = self.parents[0];
    auto& g = p->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] / p->data[i];
  });
}

Tensor square(const Tensor& a) {
  std::vector<double> out(a.data().begin(), a.data().end());
  for (auto& v : out) v *= v;
  return make_result("square", a.shape(), std::move(out), {a}, [](detail::Node& self) {
    auto& p = self.parents[0];
    auto& g = p->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += 2.0 * p->data[i] * self.grad[i];
  });
}

// ---------------------------------------------------------------------------
// Reductions

Tensor sum(const Tensor& a) {
  const auto d = a.data();
  const double total = std::accumulate(d.begin(), d.end(), 0.0);
  return make_result("sum", {}, {total}, {a}, [](detail::Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (auto& v : g) v += self.grad[0];
  });
}

Tensor mean(const Tensor& a) {
  const auto d = a.data();
  const double n = static_cast<double>(d.size());
  const double avg = std::accumulate(d.begin(), d.end(), 0.0) / n;
  return make_result("mean", {}, {avg}, {a}, [n](detail::Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (auto& v : g) v += self.grad[0] / n;
  });
}

Tensor add_n(std::span<const Tensor> terms) {
  if (terms.empty()) throw ContractError("add_n needs at least one term");
  std::vector<double> out(terms[0].size(), 0.0);
  for (const auto& t : terms) {
    require_same_shape("add_n", terms[0], t);
    auto d = t.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += d[i];
  }
  return make_result("add_n", terms[0].shape(), std::move(out), {terms.begin(), terms.end()},
                     [](detail::Node& self) {
                       for (auto& p : self.parents) {
                         if (!wants_grad(p)) continue;
                         auto& g = p->ensure_grad();
                         for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
                       }
                     });
}

// ---------------------------------------------------------------------------
// Linear algebra

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows()) {
    throw DimensionError("matmul: cannot multiply " + shape_to_string(a.shape()) + " by " +
                         shape_to_string(b.shape()));
  }
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  auto x = a.data(), y = b.data();
  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = x[i * k + p];
      for (std::size_t j = 0; j < n; ++j) out[i * n + j] += aip * y[p * n + j];
    }
  }
  return make_result("matmul", {m, n}, std::move(out), {a, b}, [m, k, n](detail::Node& self) {
    auto& pa = self.parents[0];
    auto& pb = self.parents[1];
    const auto& dc = self.grad;
    if (wants_grad(pa)) {
      const double fault = g_backward_fault ? 1.01 : 1.0;
      auto& g = pa->ensure_grad();
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          double acc = 0.0;
          for (std::size_t j = 0; j < n; ++j) acc += dc[i * n + j] * pb->data[p * n + j];
          g[i * k + p] += fault * acc;
        }
      }
    }
    if (wants_grad(pb)) {
      auto& g = pb->ensure_grad();
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          const double aip = pa->data[i * k + p];
          for (std::size_t j = 0; j < n; ++j) g[p * n + j] += aip * dc[i * n + j];
        }
      }
    }
  });
}

Tensor matvec(const Tensor& w, const Tensor& x) {
  if (w.rank() != 2 || x.rank() != 1 || w.cols() != x.size()) {
    throw DimensionError("matvec: cannot multiply " + shape_to_string(w.shape()) + " by " +
                         shape_to_string(x.shape()));
  }
  const std::size_t m = w.rows(), k = w.cols();
  auto wd = w.data(), xd = x.data();
  std::vector<double> out(m, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    double acc = 0.0;
    for (std::size_t p = 0; p < k; ++p) acc += wd[i * k + p] * xd[p];
    out[i] = acc;
  }
  return make_result("matvec", {m}, std::move(out), {w, x}, [m, k](detail::Node& self) {
    auto& pw = self.parents[0];
    auto& px = self.parents[1];
    const auto& dy = self.grad;
    if (wants_grad(pw)) {
      const double fault = g_backward_fault ? 1.01 : 1.0;
      auto& g = pw->ensure_grad();
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) g[i * k + p] += fault * dy[i] * px->data[p];
      }
    }
    if (wants_grad(px)) {
      auto& g = px->ensure_grad();
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) g[p] += pw->data[i * k + p] * dy[i];
      }
    }
  });
}

Tensor transpose(const Tensor& a) {
  require_rank("transpose", a, 2);
  const std::size_t m = a.rows(), n = a.cols();
  auto d = a.data();
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = d[i * n + j];
  }
  return make_result("transpose", {n, m}, std::move(out), {a}, [m, n](detail::Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) g[i * n + j] += self.grad[j * m + i];
    }
  });
}

// ---------------------------------------------------------------------------
// Softmax family

namespace {

void check_temperature(const char* op, double temperature) {
  if (!(temperature > 0.0) || !std::isfinite(temperature)) {
    throw ParameterError(std::string(op) + ": temperature must be positive, got " + std::to_string(temperature));
  }
}

// Returns z/T - max(z/T) and log(sum(exp(...))) of the shifted values.
std::pair<std::vector<double>, double> shifted_logits(std::span<const double> z, double temperature) {
  std::vector<double> s(z.begin(), z.end());
  for (auto& v : s) v /= temperature;
  const double top = *std::max_element(s.begin(), s.end());
  double total = 0.0;
  for (auto& v : s) {
    v -= top;
    total += std::exp(v);
  }
  return {std::move(s), std::log(total)};
}

}  // namespace

Tensor softmax_t(const Tensor& logits, double temperature) {
  check_temperature("softmax_t", temperature);
  require_rank("softmax_t", logits, 1);
  auto [s, lse] = shifted_logits(logits.data(), temperature);
  for (auto& v : s) v = std::exp(v - lse);
  return make_result("softmax_t", logits.shape(), std::move(s), {logits}, [temperature](detail::Node& self) {
    const auto& y = self.data;
    double dot = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) dot += self.grad[i] * y[i];
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < y.size(); ++i) g[i] += y[i] * (self.grad[i] - dot) / temperature;
  });
}

Tensor log_softmax_t(const Tensor& logits, double temperature) {
  check_temperature("log_softmax_t", temperature);
  require_rank("log_softmax_t", logits, 1);
  auto [s, lse] = shifted_logits(logits.data(), temperature);
  for (auto& v : s) v -= lse;
  return make_result("log_softmax_t", logits.shape(), std::move(s), {logits},
                     [temperature](detail::Node& self) {
                       const auto& l = self.data;
                       const double upstream = std::accumulate(self.grad.begin(), self.grad.end(), 0.0);
                       auto& g = self.parents[0]->ensure_grad();
                       for (std::size_t i = 0; i < l.size(); ++i) {
                         g[i] += (self.grad[i] - std::exp(l[i]) * upstream) / temperature;
                       }
                     });
}

// ---------------------------------------------------------------------------
// Indexing and reshaping

Tensor pick(const Tensor& v, std::size_t index) {
  require_rank("pick", v, 1);
  if (index >= v.size()) {
    throw DimensionError("pick: index " + std::to_string(index) + " out of range for " + shape_to_string(v.shape()));
  }
  return make_result("pick", {}, {v.at(index)}, {v}, [index](detail::Node& self) {
    self.parents[0]->ensure_grad()[index] += self.grad[0];
  });
}

Tensor stack_rows(std::span<const Tensor> rows) {
  if (rows.empty()) throw ContractError("stack_rows needs at least one row");
  const std::size_t n = rows[0].size();
  std::vector<double> out;
  out.reserve(rows.size() * n);
  for (const auto& r : rows) {
    require_rank("stack_rows", r, 1);
    require_same_shape("stack_rows", rows[0], r);
    auto d = r.data();
    out.insert(out.end(), d.begin(), d.end());
  }
  return make_result("stack_rows", {rows.size(), n}, std::move(out), {rows.begin(), rows.end()},
                     [n](detail::Node& self) {
                       for (std::size_t r = 0; r < self.parents.size(); ++r) {
                         auto& p = self.parents[r];
                         if (!wants_grad(p)) continue;
                         auto& g = p->ensure_grad();
                         for (std::size_t j = 0; j < n; ++j) g[j] += self.grad[r * n + j];
                       }
                     });
}

Tensor normalize_rows(const Tensor& a) {
  require_rank("normalize_rows", a, 2);
  const std::size_t m = a.rows(), n = a.cols();
  auto d = a.data();
  std::vector<double> out(d.begin(), d.end());
  std::vector<double> norms(m, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    double sq = 0.0;
    for (std::size_t j = 0; j < n; ++j) sq += d[i * n + j] * d[i * n + j];
    norms[i] = std::sqrt(sq);
    if (norms[i] > 0.0) {
      for (std::size_t j = 0; j < n; ++j) out[i * n + j] /= norms[i];
    }
  }
  return make_result("normalize_rows", {m, n}, std::move(out), {a},
                     [m, n, norms = std::move(norms)](detail::Node& self) {
                       auto& g = self.parents[0]->ensure_grad();
                       for (std::size_t i = 0; i < m; ++i) {
                         if (norms[i] == 0.0) continue;
                         double dot = 0.0;
                         for (std::size_t j = 0; j < n; ++j) dot += self.data[i * n + j] * self.grad[i * n + j];
                         for (std::size_t j = 0; j < n; ++j) {
                           g[i * n + j] += (self.grad[i * n + j] - self.data[i * n + j] * dot) / norms[i];
                         }
                       }
                     });
}

// ---------------------------------------------------------------------------

Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, Tensor x, double step) {
  if (!(step > 0.0)) throw ParameterError("finite_diff_grad: step must be positive");
  auto values = x.mutable_data();
  std::vector<double> grad(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double original = values[i];
    values[i] = original + step;
    const double up = f(x);
    values[i] = original - step;
    const double down = f(x);
    values[i] = original;
    grad[i] = (up - down) / (2.0 * step);
  }
  return Tensor::from(x.shape(), std::move(grad));
}

testing::ScopedBackwardFault::ScopedBackwardFault() : previous_(g_backward_fault) { g_backward_fault = true; }

testing::ScopedBackwardFault::~ScopedBackwardFault() { g_backward_fault = previous_; }

}  // namespace mmkd
