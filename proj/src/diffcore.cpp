#include "adarl/diffcore.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <unordered_set>

#include "adarl/error.hpp"
#include "adarl/kernels.hpp"

namespace adarl::diff {

namespace {

constexpr double kHalfLog2Pi = 0.91893853320467274178;

using Backward = std::function<void(Node&)>;

Var make(Tensor value, std::vector<Var> parents, Backward fn) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  for (const auto& p : parents) n->requires_grad = n->requires_grad || p.requires_grad();
  if (n->requires_grad) {
    n->parents.reserve(parents.size());
    for (auto& p : parents) n->parents.push_back(p.node());
    n->backward = std::move(fn);
  }
  return Var(std::move(n));
}

void send(Node& self, std::size_t i, const Tensor& g) {
  if (self.parents[i]->requires_grad) self.parents[i]->accumulate(g);
}

bool wants(const Node& self, std::size_t i) { return self.parents[i]->requires_grad; }

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw Error(ErrorKind::shape_mismatch, std::string(op) + ": shapes " + std::to_string(a.rows()) + "x" +
                                               std::to_string(a.cols()) + " and " + std::to_string(b.rows()) + "x" +
                                               std::to_string(b.cols()));
  }
}

Tensor row_softmax(const Tensor& a) {
  Tensor out(a.rows(), a.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    const double m = a.row(i).maxCoeff();
    out.row(i) = (a.row(i).array() - m).exp().matrix();
    out.row(i) /= out.row(i).sum();
  }
  return out;
}

Eigen::VectorXd row_lse(const Tensor& a) {
  Eigen::VectorXd out(a.rows());
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    const double m = a.row(i).maxCoeff();
    out(i) = m + std::log((a.row(i).array() - m).exp().sum());
  }
  return out;
}

}  // namespace

void Node::accumulate(const Tensor& g) {
  if (grad.size() == 0) {
    grad = g;
  } else {
    grad += g;
  }
}

Tensor Var::grad() const {
  if (node_->grad.size() == 0) return Tensor::Zero(rows(), cols());
  return node_->grad;
}

Var constant(Tensor value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  return Var(std::move(n));
}

Var constant(double value) { return constant(Tensor::Constant(1, 1, value)); }

Var parameter(Tensor value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = true;
  return Var(std::move(n));
}

void backward(const Var& loss) {
  if (loss.rows() != 1 || loss.cols() != 1) {
    throw Error(ErrorKind::non_scalar_loss, "backward needs a 1x1 loss, got " + std::to_string(loss.rows()) + "x" +
                                                std::to_string(loss.cols()));
  }
  if (!loss.requires_grad()) return;
  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{loss.node().get(), 0}};
  seen.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  // Interior gradients are scratch space; only leaves keep what they collect.
  for (Node* n : order) {
    if (n->backward) n->grad.resize(0, 0);
  }
  loss.node()->accumulate(Tensor::Ones(1, 1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward && n->grad.size() > 0) {
      n->backward(*n);
      n->grad.resize(0, 0);
    }
  }
}

// --- elementwise -------------------------------------------------------------------

Var add(const Var& a, const Var& b) {
  require_same_shape(a, b, "add");
  return make(a.value() + b.value(), {a, b}, [](Node& s) {
    send(s, 0, s.grad);
    send(s, 1, s.grad);
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a, b, "sub");
  return make(a.value() - b.value(), {a, b}, [](Node& s) {
    send(s, 0, s.grad);
    if (wants(s, 1)) send(s, 1, -s.grad);
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape(a, b, "mul");
  return make(a.value().cwiseProduct(b.value()), {a, b}, [](Node& s) {
    if (wants(s, 0)) send(s, 0, s.grad.cwiseProduct(s.parents[1]->value));
    if (wants(s, 1)) send(s, 1, s.grad.cwiseProduct(s.parents[0]->value));
  });
}

Var scale(const Var& a, double c) {
  return make(a.value() * c, {a}, [c](Node& s) { send(s, 0, s.grad * c); });
}

Var add_scalar(const Var& a, double c) {
  return make((a.value().array() + c).matrix(), {a}, [](Node& s) { send(s, 0, s.grad); });
}

Var neg(const Var& a) { return scale(a, -1.0); }

Var add_row(const Var& a, const Var& row) {
  if (row.rows() != 1 || row.cols() != a.cols()) throw Error(ErrorKind::shape_mismatch, "add_row: row shape");
  Tensor out = a.value();
  out.rowwise() += row.value().row(0);
  return make(std::move(out), {a, row}, [](Node& s) {
    send(s, 0, s.grad);
    if (wants(s, 1)) send(s, 1, s.grad.colwise().sum());
  });
}

Var mul_row(const Var& a, const Var& row) {
  if (row.rows() != 1 || row.cols() != a.cols()) throw Error(ErrorKind::shape_mismatch, "mul_row: row shape");
  Tensor out = a.value().array().rowwise() * row.value().row(0).array();
  return make(std::move(out), {a, row}, [](Node& s) {
    const Tensor& av = s.parents[0]->value;
    const Tensor& rv = s.parents[1]->value;
    if (wants(s, 0)) send(s, 0, (s.grad.array().rowwise() * rv.row(0).array()).matrix());
    if (wants(s, 1)) send(s, 1, s.grad.cwiseProduct(av).colwise().sum());
  });
}

Var mul_col(const Var& a, const Var& col) {
  if (col.cols() != 1 || col.rows() != a.rows()) throw Error(ErrorKind::shape_mismatch, "mul_col: column shape");
  Tensor out = a.value().array().colwise() * col.value().col(0).array();
  return make(std::move(out), {a, col}, [](Node& s) {
    const Tensor& av = s.parents[0]->value;
    const Tensor& cv = s.parents[1]->value;
    if (wants(s, 0)) send(s, 0, (s.grad.array().colwise() * cv.col(0).array()).matrix());
    if (wants(s, 1)) send(s, 1, s.grad.cwiseProduct(av).rowwise().sum());
  });
}

Var matmul(const Var& a, const Var& b) {
  if (a.cols() != b.rows()) throw Error(ErrorKind::shape_mismatch, "matmul: inner dimensions differ");
  return make(a.value() * b.value(), {a, b}, [](Node& s) {
    if (wants(s, 0)) send(s, 0, s.grad * s.parents[1]->value.transpose());
    if (wants(s, 1)) send(s, 1, s.parents[0]->value.transpose() * s.grad);
  });
}

Var tanh(const Var& a) {
  Tensor y = kernels::fast_tanh(a.value().array()).matrix();
  return make(y, {a}, [y](Node& s) { send(s, 0, (s.grad.array() * (1.0 - y.array().square())).matrix()); });
}

Var sigmoid(const Var& a) {
  Tensor y = (1.0 / (1.0 + (-a.value().array()).exp())).matrix();
  return make(y, {a}, [y](Node& s) { send(s, 0, (s.grad.array() * y.array() * (1.0 - y.array())).matrix()); });
}

Var exp(const Var& a) {
  Tensor y = a.value().array().exp().matrix();
  return make(y, {a}, [y](Node& s) { send(s, 0, s.grad.cwiseProduct(y)); });
}

Var log(const Var& a) {
  return make(a.value().array().log().matrix(), {a},
              [](Node& s) { send(s, 0, (s.grad.array() / s.parents[0]->value.array()).matrix()); });
}

Var square(const Var& a) {
  return make(a.value().cwiseAbs2(), {a},
              [](Node& s) { send(s, 0, (2.0 * s.grad.array() * s.parents[0]->value.array()).matrix()); });
}

Var abs(const Var& a) {
  return make(a.value().cwiseAbs(), {a}, [](Node& s) {
    send(s, 0, (s.grad.array() * s.parents[0]->value.array().sign()).matrix());
  });
}

Var max_const(const Var& a, double c) {
  return make(a.value().cwiseMax(c), {a}, [c](Node& s) {
    send(s, 0, (s.grad.array() * (s.parents[0]->value.array() > c).cast<double>()).matrix());
  });
}

Var clamp(const Var& a, double lo, double hi) {
  return make(a.value().cwiseMax(lo).cwiseMin(hi), {a}, [lo, hi](Node& s) {
    const auto& v = s.parents[0]->value.array();
    send(s, 0, (s.grad.array() * ((v > lo) && (v < hi)).cast<double>()).matrix());
  });
}

// --- reductions and shape ------------------------------------------------------------

Var sum(const Var& a) {
  return make(Tensor::Constant(1, 1, a.value().sum()), {a}, [](Node& s) {
    const auto& v = s.parents[0]->value;
    send(s, 0, Tensor::Constant(v.rows(), v.cols(), s.grad(0, 0)));
  });
}

Var mean(const Var& a) {
  const double n = static_cast<double>(a.value().size());
  if (n == 0) throw Error(ErrorKind::shape_mismatch, "mean of an empty tensor");
  return scale(sum(a), 1.0 / n);
}

Var sum_rows(const Var& a) {
  return make(a.value().colwise().sum(), {a}, [](Node& s) {
    send(s, 0, s.grad.replicate(s.parents[0]->value.rows(), 1));
  });
}

Var sum_cols(const Var& a) {
  return make(a.value().rowwise().sum(), {a}, [](Node& s) {
    send(s, 0, s.grad.replicate(1, s.parents[0]->value.cols()));
  });
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw Error(ErrorKind::shape_mismatch, "concat of nothing");
  const Eigen::Index rows = parts.front().rows();
  Eigen::Index cols = 0;
  for (const auto& p : parts) {
    if (p.rows() != rows) throw Error(ErrorKind::shape_mismatch, "concat_cols: row counts differ");
    cols += p.cols();
  }
  Tensor out(rows, cols);
  std::vector<Eigen::Index> offsets;
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    offsets.push_back(at);
    if (p.cols() > 0) out.middleCols(at, p.cols()) = p.value();
    at += p.cols();
  }
  return make(std::move(out), parts, [offsets](Node& s) {
    for (std::size_t i = 0; i < s.parents.size(); ++i) {
      const auto c = s.parents[i]->value.cols();
      if (wants(s, i) && c > 0) send(s, i, s.grad.middleCols(offsets[i], c));
    }
  });
}

Var slice_cols(const Var& a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > a.cols()) throw Error(ErrorKind::shape_mismatch, "slice_cols range");
  return make(a.value().middleCols(start, count), {a}, [start, count](Node& s) {
    const auto& v = s.parents[0]->value;
    Tensor g = Tensor::Zero(v.rows(), v.cols());
    g.middleCols(start, count) = s.grad;
    send(s, 0, g);
  });
}

Var gather_rows(const Var& a, const std::vector<int>& idx) {
  Tensor out(static_cast<Eigen::Index>(idx.size()), a.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || idx[i] >= a.rows()) throw Error(ErrorKind::shape_mismatch, "gather_rows index");
    out.row(static_cast<Eigen::Index>(i)) = a.value().row(idx[i]);
  }
  return make(std::move(out), {a}, [idx](Node& s) {
    const auto& v = s.parents[0]->value;
    Tensor g = Tensor::Zero(v.rows(), v.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) g.row(idx[i]) += s.grad.row(static_cast<Eigen::Index>(i));
    send(s, 0, g);
  });
}

Var pick(const Var& a, const std::vector<int>& idx) {
  if (static_cast<Eigen::Index>(idx.size()) != a.rows()) throw Error(ErrorKind::shape_mismatch, "pick: one index per row");
  Tensor out(a.rows(), 1);
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    if (idx[i] < 0 || idx[i] >= a.cols()) throw Error(ErrorKind::shape_mismatch, "pick index");
    out(i, 0) = a.value()(i, idx[i]);
  }
  return make(std::move(out), {a}, [idx](Node& s) {
    const auto& v = s.parents[0]->value;
    Tensor g = Tensor::Zero(v.rows(), v.cols());
    for (Eigen::Index i = 0; i < v.rows(); ++i) g(i, idx[i]) = s.grad(i, 0);
    send(s, 0, g);
  });
}

Var softmax_rows(const Var& a) {
  Tensor y = row_softmax(a.value());
  return make(y, {a}, [y](Node& s) {
    const Eigen::VectorXd dot = s.grad.cwiseProduct(y).rowwise().sum();
    send(s, 0, (y.array() * (s.grad.colwise() - dot).array()).matrix());
  });
}

Var log_softmax_rows(const Var& a) {
  const Eigen::VectorXd lse = row_lse(a.value());
  Tensor out = a.value().colwise() - lse;
  return make(std::move(out), {a}, [](Node& s) {
    const Tensor p = row_softmax(s.parents[0]->value);
    const Eigen::VectorXd total = s.grad.rowwise().sum();
    send(s, 0, s.grad - (p.array().colwise() * total.array()).matrix());
  });
}

Var logsumexp_rows(const Var& a) {
  return make(Tensor(row_lse(a.value())), {a}, [](Node& s) {
    const Tensor p = row_softmax(s.parents[0]->value);
    send(s, 0, (p.array().colwise() * s.grad.col(0).array()).matrix());
  });
}

Var mog_log_density(const Var& logits, const Var& means, const Var& log_sigmas, const Var& target) {
  const Eigen::Index n = logits.rows();
  const Eigen::Index k = logits.cols();
  if (means.rows() != n || means.cols() != k || log_sigmas.rows() != n || log_sigmas.cols() != k) {
    throw Error(ErrorKind::dimension_mismatch, "mixture parameters must share one n x K shape");
  }
  if (target.rows() != n || target.cols() != 1) {
    throw Error(ErrorKind::dimension_mismatch, "mixture target must be n x 1");
  }
  const Tensor log_pi = logits.value().colwise() - row_lse(logits.value());
  const Tensor inv_sigma = (-log_sigmas.value().array()).exp().matrix();
  const Tensor z = ((-(means.value().colwise() - target.value().col(0))).array() * inv_sigma.array()).matrix();
  const Tensor joint = (log_pi.array() - 0.5 * z.array().square() - log_sigmas.value().array() - kHalfLog2Pi).matrix();
  const Eigen::VectorXd out = row_lse(joint);
  // Posterior responsibilities drive every gradient.
  const Tensor w = (joint.colwise() - out).array().exp().matrix();
  const Tensor pi = log_pi.array().exp().matrix();
  return make(Tensor(out), {logits, means, log_sigmas, target}, [w, pi, z, inv_sigma](Node& s) {
    const Eigen::ArrayXd g = s.grad.col(0).array();
    const Tensor dmu = (w.array() * z.array() * inv_sigma.array()).matrix();  // d/dmu_k
    if (wants(s, 0)) send(s, 0, ((w - pi).array().colwise() * g).matrix());
    if (wants(s, 1)) send(s, 1, (dmu.array().colwise() * g).matrix());
    if (wants(s, 2)) send(s, 2, ((w.array() * (z.array().square() - 1.0)).colwise() * g).matrix());
    if (wants(s, 3)) send(s, 3, Tensor((-dmu.rowwise().sum().array() * g).matrix()));
  });
}

Var gaussian_log_density(const Var& mean, const Var& log_sigma, const Var& target) {
  require_same_shape(mean, log_sigma, "gaussian_log_density");
  require_same_shape(mean, target, "gaussian_log_density");
  const Tensor inv_sigma = (-log_sigma.value().array()).exp().matrix();
  const Tensor z = ((target.value() - mean.value()).array() * inv_sigma.array()).matrix();
  Tensor out = (-0.5 * z.array().square() - log_sigma.value().array() - kHalfLog2Pi).matrix();
  return make(std::move(out), {mean, log_sigma, target}, [z, inv_sigma](Node& s) {
    const Tensor dmu = (s.grad.array() * z.array() * inv_sigma.array()).matrix();
    if (wants(s, 0)) send(s, 0, dmu);
    if (wants(s, 1)) send(s, 1, (s.grad.array() * (z.array().square() - 1.0)).matrix());
    if (wants(s, 2)) send(s, 2, -dmu);
  });
}

// --- optimizers -------------------------------------------------------------------------

void adam_step(Tensor& param, const Tensor& grad, AdamState& st, const AdamConfig& cfg) {
  if (grad.rows() != param.rows() || grad.cols() != param.cols()) {
    throw Error(ErrorKind::shape_mismatch, "adam_step: gradient shape differs from parameter");
  }
  if (st.m.size() == 0) {
    st.m = Tensor::Zero(param.rows(), param.cols());
    st.v = Tensor::Zero(param.rows(), param.cols());
  }
  if (st.m.rows() != param.rows() || st.m.cols() != param.cols()) {
    throw Error(ErrorKind::shape_mismatch, "adam_step: optimizer state shape differs from parameter");
  }
  ++st.t;
  st.m = cfg.beta1 * st.m + (1.0 - cfg.beta1) * grad;
  st.v = cfg.beta2 * st.v + (1.0 - cfg.beta2) * grad.cwiseAbs2();
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(st.t));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(st.t));
  param.array() -= cfg.lr * (st.m.array() / c1) / ((st.v.array() / c2).sqrt() + cfg.eps);
}

Adam::Adam(std::vector<Var> params, AdamConfig cfg) : params_(std::move(params)), state_(params_.size()), cfg_(cfg) {}

void Adam::step() {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (!params_[i].has_grad()) continue;
    adam_step(params_[i].mutable_value(), params_[i].node()->grad, state_[i], cfg_);
  }
}

void Adam::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

void sgd_step(const std::vector<Var>& params, double lr) {
  for (auto p : params) {
    if (p.has_grad()) p.mutable_value() -= lr * p.node()->grad;
  }
}

// --- checkpoints -------------------------------------------------------------------------

nlohmann::json tensors_to_json(const NamedTensors& tensors) {
  nlohmann::json list = nlohmann::json::array();
  for (const auto& [name, t] : tensors) {
    std::vector<double> data(static_cast<std::size_t>(t.size()));
    Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(data.data(), t.rows(), t.cols()) = t;
    list.push_back({{"name", name}, {"rows", t.rows()}, {"cols", t.cols()}, {"data", data}});
  }
  return {{"format", "adarl-tensors"}, {"version", kCheckpointVersion}, {"tensors", list}};
}

NamedTensors tensors_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format") != "adarl-tensors") throw Error(ErrorKind::parse_error, "not a tensor checkpoint");
    if (j.at("version").get<int>() != kCheckpointVersion) {
      throw Error(ErrorKind::parse_error, "unsupported checkpoint version");
    }
    NamedTensors out;
    for (const auto& e : j.at("tensors")) {
      const auto rows = e.at("rows").get<Eigen::Index>();
      const auto cols = e.at("cols").get<Eigen::Index>();
      const auto data = e.at("data").get<std::vector<double>>();
      if (static_cast<Eigen::Index>(data.size()) != rows * cols) {
        throw Error(ErrorKind::parse_error, "tensor size does not match its shape");
      }
      Tensor t = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
          data.data(), rows, cols);
      out.emplace_back(e.at("name").get<std::string>(), std::move(t));
    }
    return out;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::parse_error, std::string("checkpoint: ") + e.what());
  }
}

// --- gradient checking ----------------------------------------------------------------------

GradCheck grad_check(const std::function<Var()>& loss_fn, const std::vector<Var>& params, double h, double floor) {
  for (auto p : params) p.zero_grad();
  Var loss = loss_fn();
  backward(loss);
  std::vector<Tensor> analytic;
  for (const auto& p : params) analytic.push_back(p.grad());
  for (auto p : params) p.zero_grad();

  GradCheck out;
  for (std::size_t k = 0; k < params.size(); ++k) {
    Var p = params[k];
    Tensor& v = p.mutable_value();
    for (Eigen::Index i = 0; i < v.size(); ++i) {
      const double saved = v.data()[i];
      v.data()[i] = saved + h;
      const double up = loss_fn().scalar();
      v.data()[i] = saved - h;
      const double down = loss_fn().scalar();
      v.data()[i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic[k].data()[i];
      const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
      out.max_rel_error = std::max(out.max_rel_error, rel);
      ++out.entries;
    }
  }
  return out;
}

}  // namespace adarl::diff
