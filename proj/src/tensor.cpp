#include "caproute/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <unordered_set>

namespace caproute {

namespace detail {

struct Node : std::enable_shared_from_this<Node> {
  std::vector<std::int64_t> shape;
  std::vector<double> values;
  std::vector<double> grad;  // sized lazily, only when requires_grad
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  std::int64_t size() const { return static_cast<std::int64_t>(values.size()); }

  void ensure_grad() {
    if (grad.size() != values.size()) grad.assign(values.size(), 0.0);
  }

  void accumulate(std::span<const double> g) {
    ensure_grad();
    for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += g[i];
  }
};

}  // namespace detail

using detail::Node;

namespace {

thread_local bool g_grad_enabled = true;

std::int64_t shape_numel(const std::vector<std::int64_t>& shape) {
  std::int64_t n = 1;
  for (auto e : shape) {
    if (e <= 0) throw std::invalid_argument("tensor extents must be positive");
    n *= e;
  }
  return n;
}

void check_finite(const std::vector<double>& v, const char* op) {
  for (double x : v) {
    if (!std::isfinite(x)) {
      throw std::runtime_error(std::string("non-finite value produced by ") + op);
    }
  }
}

std::shared_ptr<Node> make_node(std::vector<std::int64_t> shape, std::vector<double> values,
                                bool requires_grad) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->values = std::move(values);
  n->requires_grad = requires_grad;
  return n;
}

struct Dims2 {
  std::int64_t r, c;
};

Dims2 dims2(const Node& n, const char* op) {
  if (n.shape.size() != 2) throw std::invalid_argument(std::string(op) + ": tensor must be 2-D");
  return {n.shape[0], n.shape[1]};
}

// C (m x n) += op(A) * op(B). Inner loops keep the contiguous index last.
void gemm(bool ta, bool tb, std::int64_t m, std::int64_t n, std::int64_t k, const double* A,
          const double* B, double* C) {
  if (!ta && !tb) {
    for (std::int64_t i = 0; i < m; ++i) {
      const double* a_row = A + i * k;
      double* c_row = C + i * n;
      for (std::int64_t p = 0; p < k; ++p) {
        const double a = a_row[p];
        if (a == 0.0) continue;
        const double* b_row = B + p * n;
        for (std::int64_t j = 0; j < n; ++j) c_row[j] += a * b_row[j];
      }
    }
  } else if (!ta && tb) {
    // A is m x k, B is n x k.
    for (std::int64_t i = 0; i < m; ++i) {
      const double* a_row = A + i * k;
      double* c_row = C + i * n;
      for (std::int64_t j = 0; j < n; ++j) {
        const double* b_row = B + j * k;
        double acc = 0.0;
        for (std::int64_t p = 0; p < k; ++p) acc += a_row[p] * b_row[p];
        c_row[j] += acc;
      }
    }
  } else if (ta && !tb) {
    // A is k x m, B is k x n.
    for (std::int64_t p = 0; p < k; ++p) {
      const double* a_row = A + p * m;
      const double* b_row = B + p * n;
      for (std::int64_t i = 0; i < m; ++i) {
        const double a = a_row[i];
        if (a == 0.0) continue;
        double* c_row = C + i * n;
        for (std::int64_t j = 0; j < n; ++j) c_row[j] += a * b_row[j];
      }
    }
  } else {
    throw std::invalid_argument("matmul: trans_a && trans_b is unsupported");
  }
}

}  // namespace

// --- Tensor basics -----------------------------------------------------------

Tensor Tensor::zeros(std::vector<std::int64_t> shape, bool requires_grad) {
  auto n = shape_numel(shape);
  return Tensor(make_node(std::move(shape), std::vector<double>(n, 0.0), requires_grad));
}

Tensor Tensor::full(std::vector<std::int64_t> shape, double value) {
  auto n = shape_numel(shape);
  return Tensor(make_node(std::move(shape), std::vector<double>(n, value), false));
}

Tensor Tensor::from_data(std::vector<std::int64_t> shape, std::vector<double> data,
                         bool requires_grad) {
  if (shape_numel(shape) != static_cast<std::int64_t>(data.size())) {
    throw std::invalid_argument("from_data: shape does not match data length");
  }
  check_finite(data, "from_data");
  return Tensor(make_node(std::move(shape), std::move(data), requires_grad));
}

Tensor Tensor::scalar(double value) { return from_data({1}, {value}); }

Tensor Tensor::randn(std::vector<std::int64_t> shape, std::mt19937_64& rng, double stddev,
                     bool requires_grad) {
  auto n = shape_numel(shape);
  std::vector<double> data(static_cast<std::size_t>(n));
  std::normal_distribution<double> dist(0.0, stddev);
  for (auto& v : data) v = dist(rng);
  return Tensor(make_node(std::move(shape), std::move(data), requires_grad));
}

const std::vector<std::int64_t>& Tensor::shape() const {
  if (!node_) throw std::logic_error("undefined tensor");
  return node_->shape;
}

std::int64_t Tensor::size() const { return node_ ? node_->size() : 0; }

std::int64_t Tensor::rows() const {
  if (!node_) throw std::logic_error("undefined tensor");
  return dims2(*node_, "rows").r;
}

std::int64_t Tensor::cols() const {
  if (!node_) throw std::logic_error("undefined tensor");
  return dims2(*node_, "cols").c;
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

std::span<const double> Tensor::values() const {
  if (!node_) throw std::logic_error("undefined tensor");
  return node_->values;
}

std::span<double> Tensor::mutable_values() {
  if (!node_) throw std::logic_error("undefined tensor");
  if (!node_->parents.empty()) {
    throw std::logic_error("mutable_values is restricted to leaf tensors");
  }
  return node_->values;
}

double Tensor::item() const {
  if (!node_ || node_->size() != 1) throw std::logic_error("item() requires a size-1 tensor");
  return node_->values[0];
}

double Tensor::at(std::int64_t r, std::int64_t c) const {
  if (!node_) throw std::logic_error("undefined tensor");
  auto d = dims2(*node_, "at");
  if (r < 0 || r >= d.r || c < 0 || c >= d.c) throw std::out_of_range("Tensor::at");
  return node_->values[static_cast<std::size_t>(r * d.c + c)];
}

void Tensor::backward() const {
  if (!node_) throw std::logic_error("undefined tensor");
  if (node_->size() != 1) throw std::logic_error("backward() requires a scalar output");
  if (!node_->requires_grad) throw std::logic_error("backward() on a non-grad tensor");

  // Iterative post-order topological sort.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(node_.get(), 0);
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) {
        stack.emplace_back(parent, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  node_->ensure_grad();
  node_->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn) n->backward_fn(*n);
  }
}

std::span<const double> Tensor::grad() const {
  if (!node_) throw std::logic_error("undefined tensor");
  node_->ensure_grad();
  return node_->grad;
}

void Tensor::zero_grad() const {
  if (!node_) return;
  node_->grad.assign(node_->values.size(), 0.0);
}

Tensor Tensor::detached() const {
  if (!node_) return {};
  return Tensor(make_node(node_->shape, node_->values, false));
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

// --- op helpers ---------------------------------------------------------------

// Befriended by Tensor; the only way ops reach the underlying node.
class TapeOps {
 public:
  static const std::shared_ptr<Node>& node(const Tensor& t) {
    if (!t.node_) throw std::logic_error("undefined tensor passed to an op");
    return t.node_;
  }
  static Tensor wrap(std::shared_ptr<Node> n) { return Tensor(std::move(n)); }
};

namespace {

const std::shared_ptr<Node>& node_of(const Tensor& t) { return TapeOps::node(t); }

bool track(const std::initializer_list<std::shared_ptr<Node>>& parents) {
  if (!g_grad_enabled) return false;
  for (const auto& p : parents) {
    if (p->requires_grad) return true;
  }
  return false;
}

Tensor finish(std::shared_ptr<Node> out, const char* op) {
  check_finite(out->values, op);
  return TapeOps::wrap(std::move(out));
}

void require_same_shape(const Node& a, const Node& b, const char* op) {
  if (a.shape != b.shape) throw std::invalid_argument(std::string(op) + ": shape mismatch");
}

}  // namespace

// --- elementwise --------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  auto an = node_of(a), bn = node_of(b);
  require_same_shape(*an, *bn, "add");
  std::vector<double> out(an->values.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = an->values[i] + bn->values[i];
  auto node = make_node(an->shape, std::move(out), false);
  if (track({an, bn})) {
    node->requires_grad = true;
    node->parents = {an, bn};
    node->backward_fn = [an, bn](Node& self) {
      if (an->requires_grad) an->accumulate(self.grad);
      if (bn->requires_grad) bn->accumulate(self.grad);
    };
  }
  return finish(node, "add");
}

Tensor sub(const Tensor& a, const Tensor& b) {
  auto an = node_of(a), bn = node_of(b);
  require_same_shape(*an, *bn, "sub");
  std::vector<double> out(an->values.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = an->values[i] - bn->values[i];
  auto node = make_node(an->shape, std::move(out), false);
  if (track({an, bn})) {
    node->requires_grad = true;
    node->parents = {an, bn};
    node->backward_fn = [an, bn](Node& self) {
      if (an->requires_grad) an->accumulate(self.grad);
      if (bn->requires_grad) {
        bn->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) bn->grad[i] -= self.grad[i];
      }
    };
  }
  return finish(node, "sub");
}

Tensor mul(const Tensor& a, const Tensor& b) {
  auto an = node_of(a), bn = node_of(b);
  require_same_shape(*an, *bn, "mul");
  std::vector<double> out(an->values.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = an->values[i] * bn->values[i];
  auto node = make_node(an->shape, std::move(out), false);
  if (track({an, bn})) {
    node->requires_grad = true;
    node->parents = {an, bn};
    node->backward_fn = [an, bn](Node& self) {
      if (an->requires_grad) {
        an->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
          an->grad[i] += self.grad[i] * bn->values[i];
        }
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
          bn->grad[i] += self.grad[i] * an->values[i];
        }
      }
    };
  }
  return finish(node, "mul");
}

Tensor mul_scalar(const Tensor& a, double c) {
  auto an = node_of(a);
  std::vector<double> out(an->values.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = an->values[i] * c;
  auto node = make_node(an->shape, std::move(out), false);
  if (track({an})) {
    node->requires_grad = true;
    node->parents = {an};
    node->backward_fn = [an, c](Node& self) {
      an->ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i] * c;
    };
  }
  return finish(node, "mul_scalar");
}

Tensor add_scalar(const Tensor& a, double c) {
  auto an = node_of(a);
  std::vector<double> out(an->values.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = an->values[i] + c;
  auto node = make_node(an->shape, std::move(out), false);
  if (track({an})) {
    node->requires_grad = true;
    node->parents = {an};
    node->backward_fn = [an](Node& self) { an->accumulate(self.grad); };
  }
  return finish(node, "add_scalar");
}

Tensor reciprocal(const Tensor& a) {
  auto an = node_of(a);
  std::vector<double> out(an->values.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = 1.0 / an->values[i];
  auto node = make_node(an->shape, std::move(out), false);
  if (track({an})) {
    node->requires_grad = true;
    node->parents = {an};
    node->backward_fn = [an](Node& self) {
      an->ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) {
        const double y = self.values[i];
        an->grad[i] -= self.grad[i] * y * y;
      }
    };
  }
  return finish(node, "reciprocal");
}

// --- matmul -------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b, bool trans_a, bool trans_b) {
  auto an = node_of(a), bn = node_of(b);
  auto ad = dims2(*an, "matmul");
  auto bd = dims2(*bn, "matmul");
  const std::int64_t m = trans_a ? ad.c : ad.r;
  const std::int64_t k = trans_a ? ad.r : ad.c;
  const std::int64_t kb = trans_b ? bd.c : bd.r;
  const std::int64_t n = trans_b ? bd.r : bd.c;
  if (k != kb) throw std::invalid_argument("matmul: inner dimensions disagree");

  std::vector<double> out(static_cast<std::size_t>(m * n), 0.0);
  gemm(trans_a, trans_b, m, n, k, an->values.data(), bn->values.data(), out.data());
  auto node = make_node({m, n}, std::move(out), false);
  if (track({an, bn})) {
    node->requires_grad = true;
    node->parents = {an, bn};
    node->backward_fn = [an, bn, trans_a, trans_b, m, n, k](Node& self) {
      const double* G = self.grad.data();
      if (an->requires_grad) {
        an->ensure_grad();
        if (!trans_a) {
          // dA = G * op(B)^T
          if (!trans_b) {
            gemm(false, true, m, k, n, G, bn->values.data(), an->grad.data());
          } else {
            gemm(false, false, m, k, n, G, bn->values.data(), an->grad.data());
          }
        } else {
          // A is k x m; dA = op(B) * G^T.
          if (!trans_b) {
            gemm(false, true, k, m, n, bn->values.data(), G, an->grad.data());
          } else {
            gemm(true, true, k, m, n, bn->values.data(), G, an->grad.data());
          }
        }
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        if (!trans_b) {
          // dB = op(A)^T * G  (B is k x n).
          gemm(!trans_a, false, k, n, m, an->values.data(), G, bn->grad.data());
        } else {
          // B is n x k; dB = G^T * op(A).
          if (!trans_a) {
            gemm(true, false, n, k, m, G, an->values.data(), bn->grad.data());
          } else {
            gemm(false, false, n, k, m, G, an->values.data(), bn->grad.data());
          }
        }
      }
    };
  }
  return finish(node, "matmul");
}

Tensor add_rowvec(const Tensor& a, const Tensor& b) {
  auto an = node_of(a), bn = node_of(b);
  auto ad = dims2(*an, "add_rowvec");
  auto bd = dims2(*bn, "add_rowvec");
  if (bd.r != 1 || bd.c != ad.c) {
    throw std::invalid_argument("add_rowvec: bias must be 1 x cols(a)");
  }
  std::vector<double> out(an->values.size());
  for (std::int64_t i = 0; i < ad.r; ++i) {
    for (std::int64_t j = 0; j < ad.c; ++j) {
      out[static_cast<std::size_t>(i * ad.c + j)] =
          an->values[static_cast<std::size_t>(i * ad.c + j)] +
          bn->values[static_cast<std::size_t>(j)];
    }
  }
  auto node = make_node(an->shape, std::move(out), false);
  if (track({an, bn})) {
    node->requires_grad = true;
    node->parents = {an, bn};
    node->backward_fn = [an, bn, ad](Node& self) {
      if (an->requires_grad) an->accumulate(self.grad);
      if (bn->requires_grad) {
        bn->ensure_grad();
        for (std::int64_t i = 0; i < ad.r; ++i) {
          for (std::int64_t j = 0; j < ad.c; ++j) {
            bn->grad[static_cast<std::size_t>(j)] +=
                self.grad[static_cast<std::size_t>(i * ad.c + j)];
          }
        }
      }
    };
  }
  return finish(node, "add_rowvec");
}

// --- reductions ---------------------------------------------------------------

Tensor sum_all(const Tensor& a) {
  auto an = node_of(a);
  double s = 0.0;
  for (double v : an->values) s += v;
  auto node = make_node({1}, {s}, false);
  if (track({an})) {
    node->requires_grad = true;
    node->parents = {an};
    node->backward_fn = [an](Node& self) {
      an->ensure_grad();
      for (auto& g : an->grad) g += self.grad[0];
    };
  }
  return finish(node, "sum_all");
}

Tensor mean_all(const Tensor& a) {
  return mul_scalar(sum_all(a), 1.0 / static_cast<double>(node_of(a)->size()));
}

// --- structure ops ------------------------------------------------------------

Tensor select_rows(const Tensor& a, const std::vector<std::int64_t>& idx) {
  auto an = node_of(a);
  auto ad = dims2(*an, "select_rows");
  if (idx.empty()) throw std::invalid_argument("select_rows: empty index list");
  std::vector<double> out;
  out.reserve(idx.size() * static_cast<std::size_t>(ad.c));
  for (auto r : idx) {
    if (r < 0 || r >= ad.r) throw std::out_of_range("select_rows: row index out of range");
    const double* src = an->values.data() + r * ad.c;
    out.insert(out.end(), src, src + ad.c);
  }
  auto node =
      make_node({static_cast<std::int64_t>(idx.size()), ad.c}, std::move(out), false);
  if (track({an})) {
    node->requires_grad = true;
    node->parents = {an};
    node->backward_fn = [an, idx, ad](Node& self) {
      an->ensure_grad();
      for (std::size_t k = 0; k < idx.size(); ++k) {
        const double* g = self.grad.data() + k * static_cast<std::size_t>(ad.c);
        double* dst = an->grad.data() + idx[k] * ad.c;
        for (std::int64_t j = 0; j < ad.c; ++j) dst[j] += g[j];
      }
    };
  }
  return finish(node, "select_rows");
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: no parts");
  std::vector<std::shared_ptr<Node>> nodes;
  nodes.reserve(parts.size());
  std::int64_t total_rows = 0;
  std::int64_t cols = -1;
  for (const auto& p : parts) {
    auto pn = node_of(p);
    auto d = dims2(*pn, "concat_rows");
    if (cols < 0) cols = d.c;
    if (d.c != cols) throw std::invalid_argument("concat_rows: column mismatch");
    total_rows += d.r;
    nodes.push_back(std::move(pn));
  }
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(total_rows * cols));
  bool needs_grad = false;
  for (const auto& n : nodes) {
    out.insert(out.end(), n->values.begin(), n->values.end());
    needs_grad = needs_grad || n->requires_grad;
  }
  auto node = make_node({total_rows, cols}, std::move(out), false);
  if (g_grad_enabled && needs_grad) {
    node->requires_grad = true;
    node->parents = nodes;
    node->backward_fn = [nodes](Node& self) {
      std::size_t offset = 0;
      for (const auto& n : nodes) {
        if (n->requires_grad) {
          n->ensure_grad();
          for (std::size_t i = 0; i < n->values.size(); ++i) n->grad[i] += self.grad[offset + i];
        }
        offset += n->values.size();
      }
    };
  }
  return finish(node, "concat_rows");
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no parts");
  std::vector<std::shared_ptr<Node>> nodes;
  std::vector<std::int64_t> widths;
  std::int64_t rows = -1, total_cols = 0;
  for (const auto& p : parts) {
    auto pn = node_of(p);
    auto d = dims2(*pn, "concat_cols");
    if (rows < 0) rows = d.r;
    if (d.r != rows) throw std::invalid_argument("concat_cols: row mismatch");
    widths.push_back(d.c);
    total_cols += d.c;
    nodes.push_back(std::move(pn));
  }
  std::vector<double> out(static_cast<std::size_t>(rows * total_cols));
  bool needs_grad = false;
  std::int64_t col_off = 0;
  for (std::size_t k = 0; k < nodes.size(); ++k) {
    const auto& n = nodes[k];
    needs_grad = needs_grad || n->requires_grad;
    for (std::int64_t i = 0; i < rows; ++i) {
      for (std::int64_t j = 0; j < widths[k]; ++j) {
        out[static_cast<std::size_t>(i * total_cols + col_off + j)] =
            n->values[static_cast<std::size_t>(i * widths[k] + j)];
      }
    }
    col_off += widths[k];
  }
  auto node = make_node({rows, total_cols}, std::move(out), false);
  if (g_grad_enabled && needs_grad) {
    node->requires_grad = true;
    node->parents = nodes;
    node->backward_fn = [nodes, widths, rows, total_cols](Node& self) {
      std::int64_t col_off = 0;
      for (std::size_t k = 0; k < nodes.size(); ++k) {
        const auto& n = nodes[k];
        if (n->requires_grad) {
          n->ensure_grad();
          for (std::int64_t i = 0; i < rows; ++i) {
            for (std::int64_t j = 0; j < widths[k]; ++j) {
              n->grad[static_cast<std::size_t>(i * widths[k] + j)] +=
                  self.grad[static_cast<std::size_t>(i * total_cols + col_off + j)];
            }
          }
        }
        col_off += widths[k];
      }
    };
  }
  return finish(node, "concat_cols");
}

// --- nonlinear ops ------------------------------------------------------------

Tensor softmax_rows(const Tensor& a) {
  auto an = node_of(a);
  auto ad = dims2(*an, "softmax_rows");
  std::vector<double> out(an->values.size());
  for (std::int64_t i = 0; i < ad.r; ++i) {
    const double* x = an->values.data() + i * ad.c;
    double* y = out.data() + i * ad.c;
    double mx = x[0];
    for (std::int64_t j = 1; j < ad.c; ++j) mx = std::max(mx, x[j]);
    double denom = 0.0;
    for (std::int64_t j = 0; j < ad.c; ++j) {
      y[j] = std::exp(x[j] - mx);
      denom += y[j];
    }
    for (std::int64_t j = 0; j < ad.c; ++j) y[j] /= denom;
  }
  auto node = make_node(an->shape, std::move(out), false);
  if (track({an})) {
    node->requires_grad = true;
    node->parents = {an};
    node->backward_fn = [an, ad](Node& self) {
      an->ensure_grad();
      for (std::int64_t i = 0; i < ad.r; ++i) {
        const double* y = self.values.data() + i * ad.c;
        const double* g = self.grad.data() + i * ad.c;
        double dot = 0.0;
        for (std::int64_t j = 0; j < ad.c; ++j) dot += y[j] * g[j];
        double* dx = an->grad.data() + i * ad.c;
        for (std::int64_t j = 0; j < ad.c; ++j) dx[j] += y[j] * (g[j] - dot);
      }
    };
  }
  return finish(node, "softmax_rows");
}

Tensor layer_norm_rows(const Tensor& a, double epsilon) {
  auto an = node_of(a);
  auto ad = dims2(*an, "layer_norm_rows");
  if (ad.c == 1) {
    // A single feature has no distribution to normalize over; pass through.
    return add_scalar(a, 0.0);
  }
  std::vector<double> out(an->values.size());
  std::vector<double> inv_std(static_cast<std::size_t>(ad.r));
  for (std::int64_t i = 0; i < ad.r; ++i) {
    const double* x = an->values.data() + i * ad.c;
    double mean = 0.0;
    for (std::int64_t j = 0; j < ad.c; ++j) mean += x[j];
    mean /= static_cast<double>(ad.c);
    double var = 0.0;
    for (std::int64_t j = 0; j < ad.c; ++j) var += (x[j] - mean) * (x[j] - mean);
    var /= static_cast<double>(ad.c);
    const double is = 1.0 / std::sqrt(var + epsilon);
    inv_std[static_cast<std::size_t>(i)] = is;
    double* y = out.data() + i * ad.c;
    for (std::int64_t j = 0; j < ad.c; ++j) y[j] = (x[j] - mean) * is;
  }
  auto node = make_node(an->shape, std::move(out), false);
  if (track({an})) {
    node->requires_grad = true;
    node->parents = {an};
    node->backward_fn = [an, ad, inv_std = std::move(inv_std)](Node& self) {
      an->ensure_grad();
      const double inv_c = 1.0 / static_cast<double>(ad.c);
      for (std::int64_t i = 0; i < ad.r; ++i) {
        const double* y = self.values.data() + i * ad.c;
        const double* g = self.grad.data() + i * ad.c;
        double g_mean = 0.0, gy_mean = 0.0;
        for (std::int64_t j = 0; j < ad.c; ++j) {
          g_mean += g[j];
          gy_mean += g[j] * y[j];
        }
        g_mean *= inv_c;
        gy_mean *= inv_c;
        const double is = inv_std[static_cast<std::size_t>(i)];
        double* dx = an->grad.data() + i * ad.c;
        for (std::int64_t j = 0; j < ad.c; ++j) {
          dx[j] += is * (g[j] - g_mean - y[j] * gy_mean);
        }
      }
    };
  }
  return finish(node, "layer_norm_rows");
}

Tensor gelu(const Tensor& a) {
  auto an = node_of(a);
  static constexpr double kInvSqrt2 = 0.7071067811865475244;
  static constexpr double kInvSqrt2Pi = 0.3989422804014326779;
  std::vector<double> out(an->values.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double x = an->values[i];
    out[i] = 0.5 * x * (1.0 + std::erf(x * kInvSqrt2));
  }
  auto node = make_node(an->shape, std::move(out), false);
  if (track({an})) {
    node->requires_grad = true;
    node->parents = {an};
    node->backward_fn = [an](Node& self) {
      an->ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) {
        const double x = an->values[i];
        const double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
        const double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
        an->grad[i] += self.grad[i] * (cdf + x * pdf);
      }
    };
  }
  return finish(node, "gelu");
}

Tensor embedding_rows(const Tensor& table, const std::vector<std::int64_t>& ids) {
  auto tn = node_of(table);
  auto td = dims2(*tn, "embedding_rows");
  if (ids.empty()) throw std::invalid_argument("embedding_rows: empty id list");
  std::vector<double> out;
  out.reserve(ids.size() * static_cast<std::size_t>(td.c));
  for (auto id : ids) {
    if (id < 0 || id >= td.r) throw std::out_of_range("embedding_rows: id out of range");
    const double* src = tn->values.data() + id * td.c;
    out.insert(out.end(), src, src + td.c);
  }
  auto node =
      make_node({static_cast<std::int64_t>(ids.size()), td.c}, std::move(out), false);
  if (track({tn})) {
    node->requires_grad = true;
    node->parents = {tn};
    node->backward_fn = [tn, ids, td](Node& self) {
      tn->ensure_grad();
      for (std::size_t k = 0; k < ids.size(); ++k) {
        const double* g = self.grad.data() + k * static_cast<std::size_t>(td.c);
        double* dst = tn->grad.data() + ids[k] * td.c;
        for (std::int64_t j = 0; j < td.c; ++j) dst[j] += g[j];
      }
    };
  }
  return finish(node, "embedding_rows");
}

Tensor cross_entropy_logits(const Tensor& logits, const std::vector<std::int64_t>& targets) {
  auto ln = node_of(logits);
  auto ld = dims2(*ln, "cross_entropy_logits");
  if (static_cast<std::int64_t>(targets.size()) != ld.r) {
    throw std::invalid_argument("cross_entropy_logits: one target per row required");
  }
  for (auto t : targets) {
    if (t < 0 || t >= ld.c) throw std::out_of_range("cross_entropy_logits: target out of range");
  }
  std::vector<double> probs(ln->values.size());
  double loss = 0.0;
  for (std::int64_t i = 0; i < ld.r; ++i) {
    const double* x = ln->values.data() + i * ld.c;
    double* p = probs.data() + i * ld.c;
    double mx = x[0];
    for (std::int64_t j = 1; j < ld.c; ++j) mx = std::max(mx, x[j]);
    double denom = 0.0;
    for (std::int64_t j = 0; j < ld.c; ++j) {
      p[j] = std::exp(x[j] - mx);
      denom += p[j];
    }
    const double log_denom = std::log(denom);
    for (std::int64_t j = 0; j < ld.c; ++j) p[j] /= denom;
    loss -= (x[targets[static_cast<std::size_t>(i)]] - mx) - log_denom;
  }
  loss /= static_cast<double>(ld.r);
  auto node = make_node({1}, {loss}, false);
  if (track({ln})) {
    node->requires_grad = true;
    node->parents = {ln};
    node->backward_fn = [ln, ld, targets, probs = std::move(probs)](Node& self) {
      ln->ensure_grad();
      const double scale = self.grad[0] / static_cast<double>(ld.r);
      for (std::int64_t i = 0; i < ld.r; ++i) {
        const double* p = probs.data() + i * ld.c;
        double* dx = ln->grad.data() + i * ld.c;
        for (std::int64_t j = 0; j < ld.c; ++j) dx[j] += scale * p[j];
        dx[targets[static_cast<std::size_t>(i)]] -= scale;
      }
    };
  }
  return finish(node, "cross_entropy_logits");
}

// --- Adam ----------------------------------------------------------------------

AdamState make_adam_state(const Parameter& param) {
  AdamState state;
  state.m = Tensor::zeros(param.value.shape());
  state.v = Tensor::zeros(param.value.shape());
  return state;
}

void adam_step(Parameter& param, AdamState& state, double lr) {
  auto value = param.value.mutable_values();
  auto g = param.value.grad();
  auto m = state.m.mutable_values();
  auto v = state.v.mutable_values();
  if (g.size() != value.size() || m.size() != value.size()) {
    throw std::invalid_argument("adam_step: state/gradient shape mismatch");
  }
  state.step_count += 1;
  const double b1 = AdamState::beta1, b2 = AdamState::beta2;
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(state.step_count));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(state.step_count));
  for (std::size_t i = 0; i < value.size(); ++i) {
    m[i] = b1 * m[i] + (1.0 - b1) * g[i];
    v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
    const double m_hat = m[i] / bc1;
    const double v_hat = v[i] / bc2;
    value[i] -= lr * m_hat / (std::sqrt(v_hat) + AdamState::epsilon);
  }
}

// --- gradient check --------------------------------------------------------------

double grad_check(const std::function<Tensor(const std::vector<Tensor>&)>& f,
                  std::vector<Tensor>& inputs, const GradCheckOptions& opts) {
  Tensor out = f(inputs);
  if (out.size() != 1) throw std::invalid_argument("grad_check: f must return a scalar");
  for (auto& in : inputs) in.zero_grad();
  out.backward();

  std::vector<std::vector<double>> analytic;
  analytic.reserve(inputs.size());
  for (auto& in : inputs) {
    auto g = in.grad();
    analytic.emplace_back(g.begin(), g.end());
  }

  std::mt19937_64 rng(opts.seed);
  double max_rel = 0.0;
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    auto vals = inputs[t].mutable_values();
    const std::int64_t n = static_cast<std::int64_t>(vals.size());
    std::vector<std::int64_t> coords(static_cast<std::size_t>(n));
    std::iota(coords.begin(), coords.end(), 0);
    if (n > opts.max_coords_per_tensor) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(static_cast<std::size_t>(opts.max_coords_per_tensor));
    }
    for (auto c : coords) {
      const double orig = vals[static_cast<std::size_t>(c)];
      vals[static_cast<std::size_t>(c)] = orig + opts.step;
      double f_plus;
      {
        NoGradGuard ng;
        f_plus = f(inputs).item();
      }
      vals[static_cast<std::size_t>(c)] = orig - opts.step;
      double f_minus;
      {
        NoGradGuard ng;
        f_minus = f(inputs).item();
      }
      vals[static_cast<std::size_t>(c)] = orig;
      const double fd = (f_plus - f_minus) / (2.0 * opts.step);
      const double ad = analytic[t][static_cast<std::size_t>(c)];
      if (!std::isfinite(fd) || !std::isfinite(ad)) {
        throw std::runtime_error("grad_check: non-finite value encountered");
      }
      const double denom = std::max({std::abs(ad), std::abs(fd), 1e-3});
      max_rel = std::max(max_rel, std::abs(ad - fd) / denom);
    }
  }
  return max_rel;
}

}  // namespace caproute
