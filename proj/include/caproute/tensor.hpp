#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace caproute {

namespace detail {
struct Node;
}

// Dense row-major float64 tensor. Ops record a reverse-mode tape when any
// operand requires gradients and grad mode is on; backward() replays it.
// Every public op checks its result for NaN/Inf and throws on either.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::vector<std::int64_t> shape, bool requires_grad = false);
  static Tensor full(std::vector<std::int64_t> shape, double value);
  static Tensor from_data(std::vector<std::int64_t> shape, std::vector<double> data,
                          bool requires_grad = false);
  static Tensor scalar(double value);
  static Tensor randn(std::vector<std::int64_t> shape, std::mt19937_64& rng,
                      double stddev = 1.0, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const std::vector<std::int64_t>& shape() const;
  std::int64_t size() const;
  std::int64_t rows() const;  // 2-D only
  std::int64_t cols() const;  // 2-D only
  bool requires_grad() const;

  std::span<const double> values() const;
  std::span<double> mutable_values();  // leaf tensors only
  double item() const;                 // size-1 only
  double at(std::int64_t r, std::int64_t c) const;

  // Runs reverse-mode accumulation from this scalar through the recorded tape.
  void backward() const;
  std::span<const double> grad() const;
  void zero_grad() const;

  Tensor detached() const;  // value copy, no tape

 private:
  friend struct detail::Node;
  friend class TapeOps;
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::Node> node_;
};

// Thread-local switch; NoGradGuard scopes evaluation-only forward passes.
bool grad_enabled();
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

// --- differentiable ops -----------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);  // elementwise
Tensor mul_scalar(const Tensor& a, double c);
Tensor add_scalar(const Tensor& a, double c);
Tensor reciprocal(const Tensor& a);

// C = op(a) * op(b) for 2-D operands; both flags set is unsupported.
Tensor matmul(const Tensor& a, const Tensor& b, bool trans_a = false, bool trans_b = false);

// b is 1 x n, broadcast-added to every row of a (m x n).
Tensor add_rowvec(const Tensor& a, const Tensor& b);

Tensor sum_all(const Tensor& a);
Tensor mean_all(const Tensor& a);

// Row selection / assembly on 2-D tensors.
Tensor select_rows(const Tensor& a, const std::vector<std::int64_t>& idx);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor concat_cols(const std::vector<Tensor>& parts);

Tensor softmax_rows(const Tensor& a);
Tensor layer_norm_rows(const Tensor& a, double epsilon = 1e-5);
Tensor gelu(const Tensor& a);

// Gathers table rows by token id; gradients scatter-add into the table.
Tensor embedding_rows(const Tensor& table, const std::vector<std::int64_t>& ids);

// Mean negative log-softmax at the target index per row.
Tensor cross_entropy_logits(const Tensor& logits, const std::vector<std::int64_t>& targets);

// --- parameters and Adam ----------------------------------------------------

struct Parameter {
  Tensor value;  // leaf with requires_grad
  std::string name;
};

struct AdamState {
  Tensor m;
  Tensor v;
  std::int64_t step_count = 0;
  static constexpr double beta1 = 0.9;
  static constexpr double beta2 = 0.999;
  static constexpr double epsilon = 1e-8;
};

AdamState make_adam_state(const Parameter& param);
void adam_step(Parameter& param, AdamState& state, double lr);

// --- gradient checking ------------------------------------------------------

struct GradCheckOptions {
  double step = 1e-5;
  // Coordinates probed per input tensor; large tensors are subsampled.
  std::int64_t max_coords_per_tensor = 32;
  std::uint64_t seed = 0;
};

// Compares reverse-mode gradients of a pure scalar function against central
// finite differences and returns the max relative error over probed coords.
double grad_check(const std::function<Tensor(const std::vector<Tensor>&)>& f,
                  std::vector<Tensor>& inputs, const GradCheckOptions& opts = {});

}  // namespace caproute
