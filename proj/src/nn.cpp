#include "adarl/nn.hpp"

#include <cmath>

#include "adarl/error.hpp"

namespace adarl::nn {

Mlp::Mlp(std::vector<int> widths, Rng& rng) : widths_(std::move(widths)) {
  if (widths_.size() < 2) throw Error(ErrorKind::invalid_argument, "an Mlp needs at least input and output widths");
  for (int w : widths_) {
    if (w < 1) throw Error(ErrorKind::invalid_argument, "layer widths must be positive");
  }
  for (std::size_t l = 0; l + 1 < widths_.size(); ++l) {
    const int in = widths_[l];
    const int out = widths_[l + 1];
    const double bound = std::sqrt(6.0 / (in + out));
    Tensor w(in, out);
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = rng.uniform(-bound, bound);
    weights_.push_back(diff::parameter(std::move(w)));
    biases_.push_back(diff::parameter(Tensor::Zero(1, out)));
  }
}

Var Mlp::forward(const Var& x) const {
  if (x.cols() != in_dim()) throw Error(ErrorKind::dimension_mismatch, "Mlp input width");
  Var h = x;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    h = diff::add_row(diff::matmul(h, weights_[l]), biases_[l]);
    if (l + 1 < weights_.size()) h = diff::tanh(h);
  }
  return h;
}

Tensor Mlp::predict(const Tensor& x, Exec exec) const {
  if (x.cols() != in_dim()) throw Error(ErrorKind::dimension_mismatch, "Mlp input width");
  Tensor h = x;
  const std::size_t last = weights_.size() - 1;
  for (std::size_t l = 0; l < last; ++l) {
    h = kernels::dense_tanh(h, weights_[l].value(), biases_[l].value().row(0), exec);
  }
  Tensor out = h * weights_[last].value();
  out.rowwise() += biases_[last].value().row(0);
  return out;
}

std::vector<Var> Mlp::params() const {
  std::vector<Var> out;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    out.push_back(weights_[l]);
    out.push_back(biases_[l]);
  }
  return out;
}

void Mlp::export_to(diff::NamedTensors& out, const std::string& prefix) const {
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    out.emplace_back(prefix + ".w" + std::to_string(l), weights_[l].value());
    out.emplace_back(prefix + ".b" + std::to_string(l), biases_[l].value());
  }
}

void Mlp::import_from(const diff::NamedTensors& in, const std::string& prefix) {
  auto fetch = [&](const std::string& name, Var& target) {
    for (const auto& [n, t] : in) {
      if (n != name) continue;
      if (t.rows() != target.rows() || t.cols() != target.cols()) {
        throw Error(ErrorKind::parse_error, "tensor " + name + " has the wrong shape");
      }
      target.mutable_value() = t;
      return;
    }
    throw Error(ErrorKind::parse_error, "missing tensor " + name);
  };
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    fetch(prefix + ".w" + std::to_string(l), weights_[l]);
    fetch(prefix + ".b" + std::to_string(l), biases_[l]);
  }
}

Mlp Mlp::clone() const {
  Mlp out;
  out.widths_ = widths_;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    out.weights_.push_back(diff::parameter(weights_[l].value()));
    out.biases_.push_back(diff::parameter(biases_[l].value()));
  }
  return out;
}

void Mlp::copy_from(const Mlp& other) {
  if (other.widths_ != widths_) throw Error(ErrorKind::shape_mismatch, "copy_from: architectures differ");
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    weights_[l].mutable_value() = other.weights_[l].value();
    biases_[l].mutable_value() = other.biases_[l].value();
  }
}

MogHead::MogHead(int in_dim, std::vector<int> hidden, int components, Rng& rng) : k_(components) {
  if (components < 1) throw Error(ErrorKind::invalid_argument, "a mixture needs at least one component");
  std::vector<int> widths{in_dim};
  widths.insert(widths.end(), hidden.begin(), hidden.end());
  widths.push_back(3 * components);
  net_ = Mlp(widths, rng);
}

MogParams MogHead::params_for(const Var& input) const {
  const Var raw = net_.forward(input);
  const Var ls = diff::scale(diff::tanh(diff::scale(diff::slice_cols(raw, 2 * k_, k_), 1.0 / kLogSigmaBound)),
                             kLogSigmaBound);
  return {diff::slice_cols(raw, 0, k_), diff::slice_cols(raw, k_, k_), ls};
}

Var MogHead::log_density(const Var& input, const Var& target) const {
  if (target.cols() != 1 || target.rows() != input.rows()) {
    throw Error(ErrorKind::dimension_mismatch, "mixture target must be one column aligned with the input");
  }
  const MogParams p = params_for(input);
  return diff::mog_log_density(p.logits, p.means, p.log_sigmas, target);
}

Eigen::VectorXd MogHead::sample(const Tensor& input, Rng& rng) const {
  const Tensor raw = net_.predict(input);
  Eigen::VectorXd out(raw.rows());
  for (Eigen::Index i = 0; i < raw.rows(); ++i) {
    const Eigen::RowVectorXd logits = raw.row(i).head(k_);
    const Eigen::RowVectorXd w = (logits.array() - logits.maxCoeff()).exp().matrix();
    double u = rng.uniform() * w.sum();
    int c = 0;
    while (c + 1 < k_ && u > w(c)) {
      u -= w(c);
      ++c;
    }
    const double sigma = std::exp(kLogSigmaBound * std::tanh(raw(i, 2 * k_ + c) / kLogSigmaBound));
    out(i) = raw(i, k_ + c) + sigma * rng.normal();
  }
  return out;
}

Eigen::VectorXd MogHead::mean(const Tensor& input) const {
  const Tensor raw = net_.predict(input);
  Eigen::VectorXd out(raw.rows());
  for (Eigen::Index i = 0; i < raw.rows(); ++i) {
    const Eigen::RowVectorXd logits = raw.row(i).head(k_);
    const Eigen::RowVectorXd w = (logits.array() - logits.maxCoeff()).exp().matrix();
    out(i) = w.dot(raw.row(i).segment(k_, k_)) / w.sum();
  }
  return out;
}

}  // namespace adarl::nn
