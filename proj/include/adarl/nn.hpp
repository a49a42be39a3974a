#pragma once

#include <string>
#include <vector>

#include "adarl/diffcore.hpp"
#include "adarl/kernels.hpp"
#include "adarl/rng.hpp"

namespace adarl::nn {

using diff::Tensor;
using diff::Var;

/// Fully connected network: tanh on hidden layers, linear output.
class Mlp {
 public:
  Mlp() = default;
  /// widths = {in, hidden..., out}; Xavier-uniform weights, zero biases.
  Mlp(std::vector<int> widths, Rng& rng);

  Var forward(const Var& x) const;
  /// Tape-free evaluation through the dense kernel; matches forward() to rounding.
  Tensor predict(const Tensor& x, Exec exec = Exec::serial) const;

  const std::vector<int>& widths() const { return widths_; }
  int in_dim() const { return widths_.front(); }
  int out_dim() const { return widths_.back(); }
  std::vector<Var> params() const;

  void export_to(diff::NamedTensors& out, const std::string& prefix) const;
  /// Reads tensors named like export_to() wrote; throws parse_error if absent.
  void import_from(const diff::NamedTensors& in, const std::string& prefix);
  /// Deep copy with fresh parameter leaves.
  Mlp clone() const;
  /// Copies parameter values from a network of the same shape.
  void copy_from(const Mlp& other);

 private:
  std::vector<int> widths_;
  std::vector<Var> weights_;  // in x out
  std::vector<Var> biases_;   // 1 x out
};

struct MogParams {
  Var logits;      // n x K
  Var means;       // n x K
  Var log_sigmas;  // n x K, bounded to (-kLogSigmaBound, kLogSigmaBound)
};

inline constexpr double kLogSigmaBound = 3.0;

/// Mixture-density head: an Mlp whose 3K outputs are the component
/// logits, means and (bounded) log standard deviations of a 1-D mixture.
class MogHead {
 public:
  MogHead() = default;
  MogHead(int in_dim, std::vector<int> hidden, int components, Rng& rng);

  MogParams params_for(const Var& input) const;
  /// log p(target | input), n x 1.
  Var log_density(const Var& input, const Var& target) const;
  /// One ancestral sample per row, drawn without a tape.
  Eigen::VectorXd sample(const Tensor& input, Rng& rng) const;
  /// Mixture mean per row, tape free.
  Eigen::VectorXd mean(const Tensor& input) const;

  int components() const { return k_; }
  const Mlp& net() const { return net_; }
  Mlp& net() { return net_; }
  std::vector<Var> params() const { return net_.params(); }

 private:
  Mlp net_;
  int k_ = 0;
};

}  // namespace adarl::nn
