#pragma once

#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

namespace adarl::diff {

using Tensor = Eigen::MatrixXd;

struct Node {
  Tensor value;
  Tensor grad;  // empty until a gradient arrives
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  void accumulate(const Tensor& g);
};

/// Handle to a node on the tape. Copies share the node.
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> n) : node_(std::move(n)) {}

  const Tensor& value() const { return node_->value; }
  Tensor& mutable_value() { return node_->value; }
  /// Gradient, zero-filled when nothing has been accumulated.
  Tensor grad() const;
  bool has_grad() const { return node_->grad.size() > 0; }
  void zero_grad() { node_->grad.resize(0, 0); }
  bool requires_grad() const { return node_->requires_grad; }
  Eigen::Index rows() const { return node_->value.rows(); }
  Eigen::Index cols() const { return node_->value.cols(); }
  double scalar() const { return node_->value(0, 0); }
  const std::shared_ptr<Node>& node() const { return node_; }
  explicit operator bool() const { return static_cast<bool>(node_); }

 private:
  std::shared_ptr<Node> node_;
};

Var constant(Tensor value);
Var constant(double value);
/// Trainable leaf.
Var parameter(Tensor value);

/// Reverse sweep from a 1x1 loss; gradients add into every reachable node.
void backward(const Var& loss);

// --- elementwise and shape ops -------------------------------------------------
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double c);
Var add_scalar(const Var& a, double c);
Var neg(const Var& a);
/// a (n x c) plus a row vector (1 x c) on every row.
Var add_row(const Var& a, const Var& row);
/// a (n x c) times a row vector (1 x c) on every row.
Var mul_row(const Var& a, const Var& row);
/// a (n x c) times a column vector (n x 1) on every column.
Var mul_col(const Var& a, const Var& col);
Var matmul(const Var& a, const Var& b);
Var tanh(const Var& a);
Var sigmoid(const Var& a);
Var exp(const Var& a);
Var log(const Var& a);
Var square(const Var& a);
Var abs(const Var& a);
/// Elementwise max(a, c); the gradient passes where a > c.
Var max_const(const Var& a, double c);
/// Clamp to [lo, hi]; the gradient passes strictly inside.
Var clamp(const Var& a, double lo, double hi);

Var sum(const Var& a);
Var mean(const Var& a);
/// Column sums as a 1 x c row.
Var sum_rows(const Var& a);
/// Row sums as an n x 1 column.
Var sum_cols(const Var& a);
Var concat_cols(const std::vector<Var>& parts);
Var slice_cols(const Var& a, Eigen::Index start, Eigen::Index count);
/// Row i of the result is row idx[i] of a.
Var gather_rows(const Var& a, const std::vector<int>& idx);
/// Element (i, idx[i]) for every row, as an n x 1 column.
Var pick(const Var& a, const std::vector<int>& idx);

Var softmax_rows(const Var& a);
Var log_softmax_rows(const Var& a);
/// Row-wise log-sum-exp, overflow safe, n x 1.
Var logsumexp_rows(const Var& a);

/// Row-wise log density of a 1-D Gaussian mixture: logits, means and
/// log std devs are n x K, target is n x 1. Returns n x 1.
Var mog_log_density(const Var& logits, const Var& means, const Var& log_sigmas, const Var& target);
/// Diagonal Gaussian log density per element (n x c).
Var gaussian_log_density(const Var& mean, const Var& log_sigma, const Var& target);

// --- optimizers -----------------------------------------------------------------

struct AdamState {
  Tensor m;
  Tensor v;
  long t = 0;
};

struct AdamConfig {
  double lr = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// One Adam update of `param` with gradient `grad`.
void adam_step(Tensor& param, const Tensor& grad, AdamState& state, const AdamConfig& cfg);

class Adam {
 public:
  Adam(std::vector<Var> params, AdamConfig cfg);
  void step();
  void zero_grad();
  void set_lr(double lr) { cfg_.lr = lr; }
  double lr() const { return cfg_.lr; }
  const std::vector<Var>& params() const { return params_; }

 private:
  std::vector<Var> params_;
  std::vector<AdamState> state_;
  AdamConfig cfg_;
};

void sgd_step(const std::vector<Var>& params, double lr);

// --- checkpoints ------------------------------------------------------------------

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

inline constexpr int kCheckpointVersion = 1;

nlohmann::json tensors_to_json(const NamedTensors& tensors);
NamedTensors tensors_from_json(const nlohmann::json& j);

// --- gradient checking --------------------------------------------------------------

struct GradCheck {
  double max_rel_error = 0.0;
  std::size_t entries = 0;
};

/// Compares backward() gradients of `loss_fn` with central differences in
/// every entry of `params`. Relative error is |a - n| / max(|a|, |n|, floor).
GradCheck grad_check(const std::function<Var()>& loss_fn, const std::vector<Var>& params, double h = 1e-5,
                     double floor = 1e-4);

}  // namespace adarl::diff
