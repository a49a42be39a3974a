#include "adarl/modelest.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "adarl/error.hpp"
#include "adarl/io.hpp"

namespace adarl::modelest {

namespace {

using namespace adarl::diff;

double action_code(int a) { return a == 0 ? -1.0 : 1.0; }

double safe_std(double v) { return v > 1e-8 ? v : 1.0; }

Var bounded_log_sigma(const Var& raw) {
  return scale(tanh(scale(raw, 1.0 / nn::kLogSigmaBound)), nn::kLogSigmaBound);
}

// Sum over all pairs j < k of |x_j - x_k|, row-wise L1 for matrices.
Var pairwise_l1(const Var& theta) {
  const Eigen::Index n = theta.rows();
  if (n < 2) return constant(0.0);
  Tensor diffm = Tensor::Zero(n * (n - 1) / 2, n);
  Eigen::Index row = 0;
  for (Eigen::Index j = 0; j < n; ++j) {
    for (Eigen::Index k = j + 1; k < n; ++k, ++row) {
      diffm(row, j) = 1.0;
      diffm(row, k) = -1.0;
    }
  }
  return sum(abs(matmul(constant(diffm), theta)));
}

}  // namespace

std::string to_string(Mode m) { return m == Mode::mdp ? "mdp" : "pomdp"; }

Mode mode_from_string(const std::string& s) {
  if (s == "mdp") return Mode::mdp;
  if (s == "pomdp") return Mode::pomdp;
  throw Error(ErrorKind::config_error, "unknown model mode '" + s + "'");
}

ThetaBlocks theta_blocks_from(const stats::Localization& loc, int state_dim) {
  ThetaBlocks b;
  b.state = b.observation = b.reward = false;
  b.state_dim = state_dim;
  for (const auto& t : loc.theta_set) {
    if (t == "theta_s") b.state = true;
    if (t == "theta_o") b.observation = true;
    if (t == "theta_r") b.reward = true;
  }
  return b;
}

nlohmann::json to_json(const ModelConfig& c) {
  nlohmann::json j{
      {"mode", to_string(c.mode)},
      {"latent_dim", c.latent_dim},
      {"hidden", c.hidden},
      {"components", c.components},
      {"lag", c.lag},
      {"lambda",
       {{"kl", c.lambda.kl},
        {"cso", c.lambda.cso},
        {"csr", c.lambda.csr},
        {"car", c.lambda.car},
        {"css", c.lambda.css},
        {"cas", c.lambda.cas},
        {"cts", c.lambda.cts},
        {"theta", c.lambda.theta}}},
      {"theta",
       {{"state", c.theta.state},
        {"observation", c.theta.observation},
        {"reward", c.theta.reward},
        {"state_dim", c.theta.state_dim}}},
      {"epochs", c.epochs},
      {"batch_size", c.batch_size},
      {"lr", c.lr},
      {"lr_decay", c.lr_decay},
      {"free_bits", c.free_bits},
      {"gate_init", c.gate_init},
      {"gate_temperature", c.gate_temperature},
      {"theta_init_scale", c.theta_init_scale},
      {"threshold", c.threshold},
      {"seed", c.seed},
  };
  j["fixed_masks"] = c.fixed_masks ? dbn::to_json(*c.fixed_masks) : nlohmann::json(nullptr);
  return j;
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  try {
    ModelConfig c;
    c.mode = mode_from_string(j.at("mode").get<std::string>());
    c.latent_dim = j.at("latent_dim").get<int>();
    c.hidden = j.at("hidden").get<std::vector<int>>();
    c.components = j.at("components").get<int>();
    c.lag = j.at("lag").get<int>();
    const auto& l = j.at("lambda");
    c.lambda = {l.at("kl").get<double>(),  l.at("cso").get<double>(), l.at("csr").get<double>(),
                l.at("car").get<double>(), l.at("css").get<double>(), l.at("cas").get<double>(),
                l.at("cts").get<double>(), l.at("theta").get<double>()};
    const auto& t = j.at("theta");
    c.theta = {t.at("state").get<bool>(), t.at("observation").get<bool>(), t.at("reward").get<bool>(),
               t.at("state_dim").get<int>()};
    c.epochs = j.at("epochs").get<int>();
    c.batch_size = j.at("batch_size").get<int>();
    c.lr = j.at("lr").get<double>();
    c.lr_decay = j.at("lr_decay").get<double>();
    c.free_bits = j.at("free_bits").get<double>();
    c.gate_init = j.at("gate_init").get<double>();
    c.gate_temperature = j.at("gate_temperature").get<double>();
    c.theta_init_scale = j.at("theta_init_scale").get<double>();
    c.threshold = j.at("threshold").get<double>();
    c.seed = j.at("seed").get<std::uint64_t>();
    if (!j.at("fixed_masks").is_null()) c.fixed_masks = dbn::masks_from_json(j.at("fixed_masks"));
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::parse_error, std::string("model config: ") + e.what());
  }
}

nlohmann::json to_json(const ChangeFactors& c) {
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t k = 0; k < c.domain_ids.size(); ++k) {
    const auto r = static_cast<Eigen::Index>(k);
    nlohmann::json e{{"domain", c.domain_ids[k]}};
    if (c.blocks.state) {
      std::vector<double> v(static_cast<std::size_t>(c.theta_s.cols()));
      for (Eigen::Index i = 0; i < c.theta_s.cols(); ++i) v[static_cast<std::size_t>(i)] = c.theta_s(r, i);
      e["theta_s"] = v;
    }
    if (c.blocks.observation) e["theta_o"] = c.theta_o(r);
    if (c.blocks.reward) e["theta_r"] = c.theta_r(r);
    rows.push_back(e);
  }
  return {{"blocks",
           {{"state", c.blocks.state},
            {"observation", c.blocks.observation},
            {"reward", c.blocks.reward},
            {"state_dim", c.blocks.state_dim}}},
          {"domains", rows}};
}

ChangeFactors change_factors_from_json(const nlohmann::json& j) {
  try {
    ChangeFactors c;
    const auto& b = j.at("blocks");
    c.blocks = {b.at("state").get<bool>(), b.at("observation").get<bool>(), b.at("reward").get<bool>(),
                b.at("state_dim").get<int>()};
    const auto& rows = j.at("domains");
    const auto n = static_cast<Eigen::Index>(rows.size());
    c.theta_s = Eigen::MatrixXd::Zero(n, c.blocks.state_dim);
    c.theta_o = Eigen::VectorXd::Zero(n);
    c.theta_r = Eigen::VectorXd::Zero(n);
    for (Eigen::Index k = 0; k < n; ++k) {
      const auto& e = rows[static_cast<std::size_t>(k)];
      c.domain_ids.push_back(e.at("domain").get<int>());
      if (c.blocks.state) {
        const auto v = e.at("theta_s").get<std::vector<double>>();
        if (static_cast<int>(v.size()) != c.blocks.state_dim) throw Error(ErrorKind::parse_error, "theta_s width");
        for (int i = 0; i < c.blocks.state_dim; ++i) c.theta_s(k, i) = v[static_cast<std::size_t>(i)];
      }
      if (c.blocks.observation) c.theta_o(k) = e.at("theta_o").get<double>();
      if (c.blocks.reward) c.theta_r(k) = e.at("theta_r").get<double>();
    }
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::parse_error, std::string("change factors: ") + e.what());
  }
}

std::string serialize(const ChangeFactors& c) {
  std::ostringstream out;
  out << "# change factors\n";
  for (std::size_t k = 0; k < c.domain_ids.size(); ++k) {
    const auto r = static_cast<Eigen::Index>(k);
    out << "domain " << c.domain_ids[k];
    if (c.blocks.state) {
      out << " theta_s";
      for (Eigen::Index i = 0; i < c.theta_s.cols(); ++i) out << ' ' << io::format_double(c.theta_s(r, i));
    }
    if (c.blocks.observation) out << " theta_o " << io::format_double(c.theta_o(r));
    if (c.blocks.reward) out << " theta_r " << io::format_double(c.theta_r(r));
    out << '\n';
  }
  return out.str();
}

std::string curve_csv(const std::vector<CurveRow>& rows) {
  std::string out = "epoch,L_rec,L_pred,L_KL,L_reg,total\n";
  for (const auto& r : rows) {
    out += io::csv_line({std::to_string(r.epoch), io::format_double(r.rec), io::format_double(r.pred),
                         io::format_double(r.kl), io::format_double(r.reg), io::format_double(r.total)});
  }
  return out;
}

Batch PreparedData::take(const std::vector<Eigen::Index>& rows) const {
  auto pick_rows = [&](const Tensor& t) {
    Tensor out(static_cast<Eigen::Index>(rows.size()), t.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = t.row(rows[i]);
    return out;
  };
  Batch b;
  b.obs = pick_rows(all.obs);
  b.action = pick_rows(all.action);
  b.reward = pick_rows(all.reward);
  b.next_obs = pick_rows(all.next_obs);
  b.next_action = pick_rows(all.next_action);
  b.next_reward = pick_rows(all.next_reward);
  b.target = pick_rows(all.target);
  b.window = pick_rows(all.window);
  b.next_window = pick_rows(all.next_window);
  for (auto r : rows) b.domain.push_back(all.domain[static_cast<std::size_t>(r)]);
  return b;
}

// --- model --------------------------------------------------------------------------

DomainModel::DomainModel(const ModelConfig& cfg, int obs_dim, std::vector<int> domain_ids)
    : cfg_(cfg), m_(obs_dim), domain_ids_(std::move(domain_ids)) {
  if (obs_dim < 1) throw Error(ErrorKind::invalid_argument, "observation width must be positive");
  if (domain_ids_.empty()) throw Error(ErrorKind::empty_dataset, "a model needs at least one source domain");
  if (cfg.components < 1 || cfg.batch_size < 1 || cfg.epochs < 0 || cfg.lag < 1 || cfg.theta.state_dim < 1) {
    throw Error(ErrorKind::config_error, "model sizes must be positive");
  }
  d_ = cfg.mode == Mode::mdp ? obs_dim : cfg.latent_dim;
  if (d_ < 1) throw Error(ErrorKind::config_error, "latent width must be positive");
  const int p = cfg.theta.state_dim;
  if (cfg.fixed_masks) {
    dbn::validate_masks(*cfg.fixed_masks);
    if (cfg.fixed_masks->d != d_ || cfg.fixed_masks->p != p) {
      throw Error(ErrorKind::dimension_mismatch, "pinned masks do not match the model widths");
    }
  }
  Rng rng(derive_seed(cfg.seed, 1));
  for (int i = 0; i < d_; ++i) state_gate_.push_back(parameter(Tensor::Constant(1, d_ + 1 + p, cfg.gate_init)));
  reward_gate_ = parameter(Tensor::Constant(1, d_ + 2, cfg.gate_init));
  obs_gate_ = parameter(Tensor::Constant(1, d_ + 1, cfg.gate_init));

  for (int i = 0; i < d_; ++i) transition_.emplace_back(d_ + 1 + p, cfg.hidden, cfg.components, rng);
  reward_ = nn::MogHead(d_ + 2, cfg.hidden, cfg.components, rng);
  if (cfg.mode == Mode::pomdp) {
    const int win = cfg.lag * (m_ + 2);
    std::vector<int> enc{win + p + 2};
    enc.insert(enc.end(), cfg.hidden.begin(), cfg.hidden.end());
    enc.push_back(2 * d_);
    encoder_ = nn::Mlp(enc, rng);
    std::vector<int> dec{d_ + 1};
    dec.insert(dec.end(), cfg.hidden.begin(), cfg.hidden.end());
    dec.push_back(2 * m_);
    obs_decoder_ = nn::Mlp(dec, rng);
    std::vector<int> pred{d_ + 1 + p + 1};
    pred.insert(pred.end(), cfg.hidden.begin(), cfg.hidden.end());
    pred.push_back(2 * m_);
    pred_obs_ = nn::Mlp(pred, rng);
    pred_reward_ = nn::MogHead(d_ + 2 + p + 1, cfg.hidden, cfg.components, rng);
  }
  const auto n = static_cast<Eigen::Index>(domain_ids_.size());
  auto init = [&](Eigen::Index cols) {
    Tensor t(n, cols);
    for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = cfg.theta_init_scale * rng.normal();
    return t;
  };
  theta_s_ = parameter(init(p));
  theta_o_ = parameter(init(1));
  theta_r_ = parameter(init(1));
  obs_mean_ = Eigen::VectorXd::Zero(m_);
  obs_std_ = Eigen::VectorXd::Ones(m_);
  delta_mean_ = Eigen::VectorXd::Zero(m_);
  delta_std_ = Eigen::VectorXd::Ones(m_);
}

void DomainModel::set_normalizer(const envs::TrajectoryDataset& data) {
  if (data.size() == 0) throw Error(ErrorKind::empty_dataset, "no transitions to standardize");
  Eigen::VectorXd s = Eigen::VectorXd::Zero(m_), ss = s, ds = s, dss = s;
  double rs = 0, rss = 0;
  long n = 0, nd = 0;
  for (const auto& ep : data.episodes) {
    for (std::size_t t = 0; t < ep.size(); ++t) {
      if (static_cast<int>(ep[t].obs.size()) != m_) throw Error(ErrorKind::dimension_mismatch, "observation width");
      const Eigen::Map<const Eigen::VectorXd> o(ep[t].obs.data(), m_);
      s += o;
      ss += o.cwiseAbs2();
      rs += ep[t].reward;
      rss += ep[t].reward * ep[t].reward;
      ++n;
      if (t + 1 < ep.size()) {
        const Eigen::Map<const Eigen::VectorXd> o2(ep[t + 1].obs.data(), m_);
        ds += o2 - o;
        dss += (o2 - o).cwiseAbs2();
        ++nd;
      }
    }
  }
  auto finish = [](const Eigen::VectorXd& sum, const Eigen::VectorXd& sq, long count, Eigen::VectorXd& mean,
                   Eigen::VectorXd& sd) {
    mean = sum / std::max<long>(count, 1);
    sd = (sq / std::max<long>(count, 1) - mean.cwiseAbs2()).cwiseMax(0.0).cwiseSqrt();
    for (Eigen::Index i = 0; i < sd.size(); ++i) sd(i) = safe_std(sd(i));
  };
  finish(s, ss, n, obs_mean_, obs_std_);
  finish(ds, dss, nd, delta_mean_, delta_std_);
  reward_mean_ = rs / n;
  reward_std_ = safe_std(std::sqrt(std::max(0.0, rss / n - reward_mean_ * reward_mean_)));
}

Eigen::VectorXd DomainModel::standardize_obs(const std::vector<double>& o) const {
  if (static_cast<int>(o.size()) != m_) throw Error(ErrorKind::dimension_mismatch, "observation width");
  const Eigen::Map<const Eigen::VectorXd> v(o.data(), m_);
  return ((v - obs_mean_).array() / obs_std_.array()).matrix();
}

Eigen::RowVectorXd DomainModel::window_row(const std::vector<envs::Transition>& ep, int t) const {
  Eigen::RowVectorXd row = Eigen::RowVectorXd::Zero(cfg_.lag * (m_ + 2));
  for (int j = 0; j < cfg_.lag; ++j) {
    const int tau = t - j;
    if (tau < 0) break;
    const int base = j * (m_ + 2);
    row.segment(base, m_) = standardize_obs(ep[static_cast<std::size_t>(tau)].obs).transpose();
    if (tau >= 1) {
      const auto& prev = ep[static_cast<std::size_t>(tau - 1)];
      row(base + m_) = action_code(prev.action);
      row(base + m_ + 1) = (prev.reward - reward_mean_) / reward_std_;
    }
  }
  return row;
}

PreparedData DomainModel::prepare(const envs::TrajectoryDataset& data) const {
  if (data.size() == 0) throw Error(ErrorKind::empty_dataset, "dataset has no transitions");
  Eigen::Index n = 0;
  for (const auto& ep : data.episodes) n += ep.size() > 1 ? static_cast<Eigen::Index>(ep.size()) - 1 : 0;
  if (n == 0) throw Error(ErrorKind::horizon_too_small, "every episode is a single step; need o_{t+1}");
  const bool pomdp = cfg_.mode == Mode::pomdp;
  const int win = pomdp ? cfg_.lag * (m_ + 2) : 0;
  PreparedData out;
  Batch& b = out.all;
  b.obs.resize(n, m_);
  b.action.resize(n, 1);
  b.reward.resize(n, 1);
  b.next_obs.resize(n, m_);
  b.next_action.resize(n, 1);
  b.next_reward.resize(n, 1);
  b.target.resize(n, pomdp ? 0 : m_);
  b.window.resize(n, win);
  b.next_window.resize(n, win);
  Eigen::Index row = 0;
  for (const auto& ep : data.episodes) {
    if (ep.size() < 2) continue;
    int dom = -1;
    for (std::size_t k = 0; k < domain_ids_.size(); ++k) {
      if (domain_ids_[k] == ep.front().domain_id) dom = static_cast<int>(k);
    }
    for (std::size_t t = 0; t + 1 < ep.size(); ++t, ++row) {
      const auto& cur = ep[t];
      const auto& nxt = ep[t + 1];
      b.obs.row(row) = standardize_obs(cur.obs).transpose();
      b.next_obs.row(row) = standardize_obs(nxt.obs).transpose();
      b.action(row, 0) = action_code(cur.action);
      b.next_action(row, 0) = action_code(nxt.action);
      b.reward(row, 0) = (cur.reward - reward_mean_) / reward_std_;
      b.next_reward(row, 0) = (nxt.reward - reward_mean_) / reward_std_;
      if (!pomdp) {
        for (int i = 0; i < m_; ++i) {
          const auto ii = static_cast<std::size_t>(i);
          b.target(row, i) = (nxt.obs[ii] - cur.obs[ii] - delta_mean_(i)) / delta_std_(i);
        }
      } else {
        b.window.row(row) = window_row(ep, static_cast<int>(t));
        b.next_window.row(row) = window_row(ep, static_cast<int>(t) + 1);
      }
      b.domain.push_back(dom);
    }
  }
  return out;
}

DomainModel::ThetaRows DomainModel::theta_rows(const std::vector<int>& domain) const {
  for (int k : domain) {
    if (k < 0 || k >= n_domains()) throw Error(ErrorKind::misaligned_batch, "batch row from an unknown domain");
  }
  ThetaRows th;
  const auto n = static_cast<Eigen::Index>(domain.size());
  th.s = cfg_.theta.state ? gather_rows(theta_s_, domain) : constant(Tensor::Zero(n, theta_dim()));
  th.o = cfg_.theta.observation ? gather_rows(theta_o_, domain) : constant(Tensor::Zero(n, 1));
  th.r = cfg_.theta.reward ? gather_rows(theta_r_, domain) : constant(Tensor::Zero(n, 1));
  return th;
}

DomainModel::ThetaRows DomainModel::broadcast(const Var& s, const Var& o, const Var& r, Eigen::Index n) {
  const std::vector<int> zeros(static_cast<std::size_t>(n), 0);
  return {gather_rows(s, zeros), gather_rows(o, zeros), gather_rows(r, zeros)};
}

Var DomainModel::gate(const Var& logits, const std::vector<double>& fixed, Rng* rng) const {
  if (cfg_.fixed_masks) {
    Tensor v(1, static_cast<Eigen::Index>(fixed.size()));
    for (std::size_t i = 0; i < fixed.size(); ++i) v(0, static_cast<Eigen::Index>(i)) = fixed[i];
    return constant(v);
  }
  if (rng == nullptr || cfg_.gate_temperature <= 0.0) return sigmoid(logits);
  // Binary concrete sample: logistic noise, then a tempered sigmoid.
  Tensor noise(1, logits.cols());
  for (Eigen::Index i = 0; i < noise.size(); ++i) {
    const double u = std::clamp(rng->uniform(), 1e-12, 1.0 - 1e-12);
    noise(0, i) = std::log(u) - std::log1p(-u);
  }
  return sigmoid(scale(add(logits, constant(noise)), 1.0 / cfg_.gate_temperature));
}

Var DomainModel::state_gate(int i, Rng* rng) const {
  std::vector<double> fixed;
  if (cfg_.fixed_masks) {
    const auto& fm = *cfg_.fixed_masks;
    const auto ii = static_cast<std::size_t>(i);
    for (int x : fm.css[ii]) fixed.push_back(x);
    fixed.push_back(fm.cas[ii]);
    for (int x : fm.cts[ii]) fixed.push_back(x);
  }
  return gate(state_gate_[static_cast<std::size_t>(i)], fixed, rng);
}

Var DomainModel::reward_gate(Rng* rng) const {
  std::vector<double> fixed;
  if (cfg_.fixed_masks) {
    const auto& fm = *cfg_.fixed_masks;
    for (int x : fm.csr) fixed.push_back(x);
    fixed.push_back(fm.car);
    fixed.push_back(fm.ctr);
  }
  return gate(reward_gate_, fixed, rng);
}

Var DomainModel::obs_gate(Rng* rng) const {
  std::vector<double> fixed;
  if (cfg_.fixed_masks) {
    const auto& fm = *cfg_.fixed_masks;
    for (int x : fm.cso) fixed.push_back(x);
    fixed.push_back(fm.cto);
  }
  return gate(obs_gate_, fixed, rng);
}

DomainModel::GateValues DomainModel::gate_values() const {
  GateValues g;
  const int p = theta_dim();
  g.state.resize(d_, d_ + 1 + p);
  for (int i = 0; i < d_; ++i) g.state.row(i) = state_gate(i).value().row(0);
  g.reward = reward_gate().value().row(0);
  g.obs = obs_gate().value().row(0);
  return g;
}

Var DomainModel::loss_reg() const {
  const auto& l = cfg_.lambda;
  const int p = theta_dim();
  Var total = constant(0.0);
  for (int i = 0; i < d_; ++i) {
    const Var g = state_gate(i);
    total = add(total, scale(sum(slice_cols(g, 0, d_)), l.css));
    total = add(total, scale(slice_cols(g, d_, 1), l.cas));
    total = add(total, scale(sum(slice_cols(g, d_ + 1, p)), l.cts));
  }
  const Var rg = reward_gate();
  total = add(total, scale(sum(slice_cols(rg, 0, d_)), l.csr));
  total = add(total, scale(slice_cols(rg, d_, 1), l.car));
  if (cfg_.mode == Mode::pomdp) total = add(total, scale(sum(slice_cols(obs_gate(), 0, d_)), l.cso));
  if (l.theta != 0.0) {
    if (cfg_.theta.state) total = add(total, scale(pairwise_l1(theta_s_), l.theta));
    if (cfg_.theta.observation) total = add(total, scale(pairwise_l1(theta_o_), l.theta));
    if (cfg_.theta.reward) total = add(total, scale(pairwise_l1(theta_r_), l.theta));
  }
  return total;
}

LossTerms DomainModel::losses(const Batch& b, const ThetaRows& th, Rng& rng) const {
  const Eigen::Index n = b.rows();
  if (n == 0) throw Error(ErrorKind::empty_dataset, "empty batch");
  const Tensor* parts[] = {&b.action, &b.reward, &b.next_obs, &b.next_action, &b.next_reward, &b.window, &b.next_window};
  for (const Tensor* t : parts) {
    if (t->rows() != n) throw Error(ErrorKind::misaligned_batch, "batch fields have different row counts");
  }
  if (static_cast<Eigen::Index>(b.domain.size()) != n || th.s.rows() != n || th.o.rows() != n || th.r.rows() != n) {
    throw Error(ErrorKind::misaligned_batch, "domain rows do not match the batch");
  }
  if (b.obs.cols() != m_) throw Error(ErrorKind::dimension_mismatch, "observation width");
  const double inv_n = 1.0 / static_cast<double>(n);
  const Var a = constant(b.action);
  LossTerms out;

  if (cfg_.mode == Mode::mdp) {
    if (b.target.cols() != m_ || b.target.rows() != n) throw Error(ErrorKind::misaligned_batch, "missing targets");
    const Var s = constant(b.obs);
    const Var base = concat_cols({s, a, th.s});
    Var nll = constant(Tensor::Zero(n, 1));
    for (int i = 0; i < d_; ++i) {
      const Var g = state_gate(i, &rng);
      const Var in = mul_row(base, g);
      // The head models o_{t+1,i} - c_ii o_{t,i}; the self gate also gates the skip term.
      const Tensor skip = ((b.obs.col(i).array() * obs_std_(i) + obs_mean_(i)) / delta_std_(i)).matrix();
      const Var target = add(constant(b.target.col(i)), mul_row(constant(skip), add_scalar(neg(slice_cols(g, i, 1)), 1.0)));
      nll = sub(nll, transition_[static_cast<std::size_t>(i)].log_density(in, target));
    }
    out.kl = scale(sum(nll), inv_n);
    const Var rin = mul_row(concat_cols({s, a, th.r}), reward_gate(&rng));
    out.rec = scale(neg(sum(reward_.log_density(rin, constant(b.reward)))), inv_n);
    out.pred = constant(0.0);
  } else {
    const Var theta_all = concat_cols({th.s, th.o, th.r});
    auto posterior = [&](const Tensor& window) {
      const Var raw = encoder_.forward(concat_cols({constant(window), theta_all}));
      const Var mu = slice_cols(raw, 0, d_);
      const Var ls = bounded_log_sigma(slice_cols(raw, d_, d_));
      Tensor eps(n, d_);
      for (Eigen::Index i = 0; i < eps.size(); ++i) eps.data()[i] = rng.normal();
      const Var sample = add(mu, mul(exp(ls), constant(eps)));
      return std::tuple{mu, ls, sample};
    };
    const auto [mu0, ls0, s0] = posterior(b.window);
    const auto [mu1, ls1, s1] = posterior(b.next_window);

    auto gaussian_nll = [&](const nn::Mlp& net, const Var& in, const Tensor& target) {
      const Var raw = net.forward(in);
      return neg(sum(gaussian_log_density(slice_cols(raw, 0, m_), bounded_log_sigma(slice_cols(raw, m_, m_)),
                                          constant(target))));
    };

    const Var obs_in = mul_row(concat_cols({s0, th.o}), obs_gate(&rng));
    const Var rin = mul_row(concat_cols({s0, a, th.r}), reward_gate(&rng));
    out.rec = scale(sub(gaussian_nll(obs_decoder_, obs_in, b.obs), sum(reward_.log_density(rin, constant(b.reward)))),
                    inv_n);

    const Var pred_obs_in = concat_cols({s0, a, th.s, th.o});
    const Var pred_r_in = concat_cols({s0, a, constant(b.next_action), th.s, th.r});
    out.pred = scale(sub(gaussian_nll(pred_obs_, pred_obs_in, b.next_obs),
                         sum(pred_reward_.log_density(pred_r_in, constant(b.next_reward)))),
                     inv_n);

    // KL(q(s_{t+1}) || p_gamma(s_{t+1} | s_t, a_t)), one sample, per latent dimension.
    const Var base = concat_cols({s0, a, th.s});
    std::vector<Var> log_p;
    for (int i = 0; i < d_; ++i) {
      const Var in = mul_row(base, state_gate(i, &rng));
      log_p.push_back(transition_[static_cast<std::size_t>(i)].log_density(in, slice_cols(s1, i, 1)));
    }
    const Var log_q = gaussian_log_density(mu1, ls1, s1);
    const Var per_dim = scale(sum_rows(sub(log_q, concat_cols(log_p))), inv_n);
    out.kl = sum(max_const(per_dim, cfg_.free_bits));
  }
  out.reg = loss_reg();
  out.total = add(add(out.rec, out.pred), add(scale(out.kl, cfg_.lambda.kl), out.reg));
  return out;
}

ChangeFactors DomainModel::change_factors() const {
  ChangeFactors c;
  c.blocks = cfg_.theta;
  c.domain_ids = domain_ids_;
  c.theta_s = theta_s_.value();
  c.theta_o = theta_o_.value().col(0);
  c.theta_r = theta_r_.value().col(0);
  return c;
}

void DomainModel::set_change_factors(const ChangeFactors& c) {
  if (c.theta_s.rows() != theta_s_.rows() || c.theta_s.cols() != theta_s_.cols() ||
      c.theta_o.size() != theta_o_.rows() || c.theta_r.size() != theta_r_.rows()) {
    throw Error(ErrorKind::dimension_mismatch, "change factors do not match the model");
  }
  theta_s_.mutable_value() = c.theta_s;
  theta_o_.mutable_value() = c.theta_o;
  theta_r_.mutable_value() = c.theta_r;
}

std::vector<Var> DomainModel::shared_params() const {
  std::vector<Var> out;
  auto append = [&](const std::vector<Var>& v) { out.insert(out.end(), v.begin(), v.end()); };
  for (const auto& h : transition_) append(h.params());
  append(reward_.params());
  if (cfg_.mode == Mode::pomdp) {
    append(encoder_.params());
    append(obs_decoder_.params());
    append(pred_obs_.params());
    append(pred_reward_.params());
  }
  return out;
}

std::vector<Var> DomainModel::gate_params() const {
  if (cfg_.fixed_masks) return {};
  std::vector<Var> out = state_gate_;
  out.push_back(reward_gate_);
  if (cfg_.mode == Mode::pomdp) out.push_back(obs_gate_);
  return out;
}

std::vector<Var> DomainModel::theta_params() const {
  std::vector<Var> out;
  if (cfg_.theta.state) out.push_back(theta_s_);
  if (cfg_.theta.observation) out.push_back(theta_o_);
  if (cfg_.theta.reward) out.push_back(theta_r_);
  return out;
}

std::pair<Tensor, Tensor> DomainModel::encode(const Tensor& window, const Tensor& theta_all) const {
  if (cfg_.mode != Mode::pomdp) throw Error(ErrorKind::invalid_argument, "only latent-state models have an encoder");
  Tensor in(window.rows(), window.cols() + theta_all.cols());
  in << window, theta_all;
  const Tensor raw = encoder_.predict(in);
  Tensor ls = raw.rightCols(d_);
  ls = (nn::kLogSigmaBound * (ls.array() / nn::kLogSigmaBound).tanh()).matrix();
  return {raw.leftCols(d_), ls};
}

Eigen::RowVectorXd DomainModel::theta_all_row(const ChangeFactors& c, int row) const {
  Eigen::RowVectorXd out = Eigen::RowVectorXd::Zero(theta_dim() + 2);
  if (cfg_.theta.state) out.head(theta_dim()) = c.theta_s.row(row);
  if (cfg_.theta.observation) out(theta_dim()) = c.theta_o(row);
  if (cfg_.theta.reward) out(theta_dim() + 1) = c.theta_r(row);
  return out;
}

diff::NamedTensors DomainModel::export_tensors() const {
  diff::NamedTensors t;
  for (int i = 0; i < d_; ++i) {
    transition_[static_cast<std::size_t>(i)].net().export_to(t, "transition" + std::to_string(i));
    t.emplace_back("gate.state" + std::to_string(i), state_gate_[static_cast<std::size_t>(i)].value());
  }
  reward_.net().export_to(t, "reward");
  t.emplace_back("gate.reward", reward_gate_.value());
  t.emplace_back("gate.obs", obs_gate_.value());
  if (cfg_.mode == Mode::pomdp) {
    encoder_.export_to(t, "encoder");
    obs_decoder_.export_to(t, "obs_decoder");
    pred_obs_.export_to(t, "pred_obs");
    pred_reward_.net().export_to(t, "pred_reward");
  }
  t.emplace_back("theta.s", theta_s_.value());
  t.emplace_back("theta.o", theta_o_.value());
  t.emplace_back("theta.r", theta_r_.value());
  t.emplace_back("norm.obs_mean", obs_mean_);
  t.emplace_back("norm.obs_std", obs_std_);
  t.emplace_back("norm.delta_mean", delta_mean_);
  t.emplace_back("norm.delta_std", delta_std_);
  t.emplace_back("norm.reward", (Tensor(1, 2) << reward_mean_, reward_std_).finished());
  return t;
}

void DomainModel::import_tensors(const diff::NamedTensors& t) {
  auto find = [&](const std::string& name) -> const Tensor& {
    for (const auto& [n, v] : t) {
      if (n == name) return v;
    }
    throw Error(ErrorKind::parse_error, "missing tensor " + name);
  };
  auto set = [&](const std::string& name, Var& v) {
    const Tensor& x = find(name);
    if (x.rows() != v.rows() || x.cols() != v.cols()) throw Error(ErrorKind::parse_error, "shape of " + name);
    v.mutable_value() = x;
  };
  for (int i = 0; i < d_; ++i) {
    transition_[static_cast<std::size_t>(i)].net().import_from(t, "transition" + std::to_string(i));
    set("gate.state" + std::to_string(i), state_gate_[static_cast<std::size_t>(i)]);
  }
  reward_.net().import_from(t, "reward");
  set("gate.reward", reward_gate_);
  set("gate.obs", obs_gate_);
  if (cfg_.mode == Mode::pomdp) {
    encoder_.import_from(t, "encoder");
    obs_decoder_.import_from(t, "obs_decoder");
    pred_obs_.import_from(t, "pred_obs");
    pred_reward_.net().import_from(t, "pred_reward");
  }
  set("theta.s", theta_s_);
  set("theta.o", theta_o_);
  set("theta.r", theta_r_);
  obs_mean_ = find("norm.obs_mean").col(0);
  obs_std_ = find("norm.obs_std").col(0);
  delta_mean_ = find("norm.delta_mean").col(0);
  delta_std_ = find("norm.delta_std").col(0);
  reward_mean_ = find("norm.reward")(0, 0);
  reward_std_ = find("norm.reward")(0, 1);
}

nlohmann::json DomainModel::to_json() const {
  return {{"config", modelest::to_json(cfg_)},
          {"obs_dim", m_},
          {"domain_ids", domain_ids_},
          {"trained", trained_},
          {"tensors", diff::tensors_to_json(export_tensors())}};
}

DomainModel DomainModel::from_json(const nlohmann::json& j) {
  try {
    DomainModel m(model_config_from_json(j.at("config")), j.at("obs_dim").get<int>(),
                  j.at("domain_ids").get<std::vector<int>>());
    m.import_tensors(diff::tensors_from_json(j.at("tensors")));
    m.trained_ = j.at("trained").get<bool>();
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::parse_error, std::string("model checkpoint: ") + e.what());
  }
}

// --- standalone terms ------------------------------------------------------------------

Var loss_rec(const DomainModel& model, const Batch& b, Rng& rng) {
  return model.losses(b, model.theta_rows(b.domain), rng).rec;
}

Var loss_pred(const DomainModel& model, const Batch& b, Rng& rng) {
  return model.losses(b, model.theta_rows(b.domain), rng).pred;
}

Var loss_kl(const DomainModel& model, const Batch& b, Rng& rng) {
  return model.losses(b, model.theta_rows(b.domain), rng).kl;
}

Var loss_reg(const DomainModel& model) { return model.loss_reg(); }

// --- training ----------------------------------------------------------------------------

FitResult fit(const envs::TrajectoryDataset& data, const ModelConfig& cfg) {
  if (data.size() == 0) throw Error(ErrorKind::empty_dataset, "no source transitions");
  const auto ids = data.domain_ids();
  int obs_dim = 0;
  for (const auto& ep : data.episodes) {
    if (!ep.empty()) obs_dim = static_cast<int>(ep.front().obs.size());
  }
  FitResult out{DomainModel(cfg, obs_dim, ids), {}};
  DomainModel& model = out.model;
  model.set_normalizer(data);
  const PreparedData prep = model.prepare(data);

  std::vector<Var> params = model.shared_params();
  for (const auto& v : model.gate_params()) params.push_back(v);
  for (const auto& v : model.theta_params()) params.push_back(v);
  Adam opt(params, {cfg.lr});

  Rng rng(derive_seed(cfg.seed, 2));
  std::vector<Eigen::Index> order(static_cast<std::size_t>(prep.size()));
  std::iota(order.begin(), order.end(), 0);
  const auto bs = static_cast<std::size_t>(cfg.batch_size);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng.engine());
    CurveRow row;
    row.epoch = epoch;
    int batches = 0;
    for (std::size_t start = 0; start < order.size(); start += bs) {
      const std::vector<Eigen::Index> rows(order.begin() + static_cast<std::ptrdiff_t>(start),
                                           order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), start + bs)));
      const Batch b = prep.take(rows);
      const LossTerms l = model.losses(b, model.theta_rows(b.domain), rng);
      if (!std::isfinite(l.total.scalar())) {
        throw Error(ErrorKind::nan_loss, "epoch " + std::to_string(epoch) + " batch " + std::to_string(batches) +
                                             ": rec=" + std::to_string(l.rec.scalar()) +
                                             " pred=" + std::to_string(l.pred.scalar()) +
                                             " kl=" + std::to_string(l.kl.scalar()) +
                                             " reg=" + std::to_string(l.reg.scalar()));
      }
      opt.zero_grad();
      backward(l.total);
      opt.step();
      row.rec += l.rec.scalar();
      row.pred += l.pred.scalar();
      row.kl += l.kl.scalar();
      row.reg += l.reg.scalar();
      row.total += l.total.scalar();
      ++batches;
    }
    const double k = 1.0 / std::max(batches, 1);
    row.rec *= k;
    row.pred *= k;
    row.kl *= k;
    row.reg *= k;
    row.total *= k;
    out.curve.push_back(row);
    opt.set_lr(opt.lr() * cfg.lr_decay);
  }
  opt.zero_grad();
  model.mark_trained();
  return out;
}

dbn::MaskSet binarize_masks(const DomainModel& model, double threshold) {
  const int d = model.state_dim();
  const int p = model.theta_dim();
  const auto& blocks = model.config().theta;
  const auto g = model.gate_values();
  auto on = [&](double v) { return v >= threshold ? 1 : 0; };
  dbn::MaskSet m = dbn::MaskSet::zeros(d, p);
  for (int i = 0; i < d; ++i) {
    const auto ii = static_cast<std::size_t>(i);
    for (int j = 0; j < d; ++j) m.css[ii][static_cast<std::size_t>(j)] = on(g.state(i, j));
    m.cas[ii] = on(g.state(i, d));
    for (int k = 0; k < p; ++k) m.cts[ii][static_cast<std::size_t>(k)] = blocks.state ? on(g.state(i, d + 1 + k)) : 0;
    m.csr[ii] = on(g.reward(i));
    if (model.mode() == Mode::pomdp) m.cso[ii] = on(g.obs(i));
  }
  m.car = on(g.reward(d));
  m.ctr = blocks.reward ? on(g.reward(d + 1)) : 0;
  m.cto = model.mode() == Mode::pomdp && blocks.observation ? on(g.obs(d)) : 0;
  return m;
}

AdaptResult adapt_theta_target(const DomainModel& model, const envs::TrajectoryDataset& target, int n_steps,
                               std::uint64_t seed, double lr) {
  if (!model.trained()) throw Error(ErrorKind::untrained_model, "adaptation needs a fitted model");
  if (target.size() == 0) throw Error(ErrorKind::empty_rollouts, "no target transitions");
  if (n_steps < 0) throw Error(ErrorKind::invalid_argument, "n_steps must be non-negative");
  const ChangeFactors src = model.change_factors();
  const auto& blocks = model.config().theta;
  Var ts = parameter(src.theta_s.colwise().mean());
  Var to = parameter(Tensor::Constant(1, 1, src.theta_o.mean()));
  Var tr = parameter(Tensor::Constant(1, 1, src.theta_r.mean()));
  if (!blocks.state) ts = constant(Tensor::Zero(1, model.theta_dim()));
  if (!blocks.observation) to = constant(Tensor::Zero(1, 1));
  if (!blocks.reward) tr = constant(Tensor::Zero(1, 1));
  std::vector<Var> params;
  if (blocks.state) params.push_back(ts);
  if (blocks.observation) params.push_back(to);
  if (blocks.reward) params.push_back(tr);

  AdaptResult out;
  if (!params.empty() && n_steps > 0) {
    const PreparedData prep = model.prepare(target);
    Adam opt(params, {lr});
    Rng rng(derive_seed(seed, 3));
    const Eigen::Index n = prep.size();
    const Eigen::Index bs = std::min<Eigen::Index>(n, model.config().batch_size);
    const auto shared = model.shared_params();
    for (int step = 0; step < n_steps; ++step) {
      std::vector<Eigen::Index> rows(static_cast<std::size_t>(bs));
      if (bs == n) {
        std::iota(rows.begin(), rows.end(), 0);
      } else {
        for (auto& r : rows) r = rng.uniform_int(0, static_cast<int>(n) - 1);
      }
      Batch b = prep.take(rows);
      std::fill(b.domain.begin(), b.domain.end(), 0);
      const LossTerms l = model.losses(b, DomainModel::broadcast(ts, to, tr, bs), rng);
      const Var objective = add(add(l.rec, l.pred), scale(l.kl, model.config().lambda.kl));
      if (!std::isfinite(objective.scalar())) throw Error(ErrorKind::nan_loss, "adaptation step " + std::to_string(step));
      opt.zero_grad();
      for (auto v : shared) v.zero_grad();
      backward(objective);
      opt.step();
      out.loss.push_back(objective.scalar());
    }
    for (auto v : shared) v.zero_grad();
    for (auto v : model.gate_params()) v.zero_grad();
    for (auto v : model.theta_params()) v.zero_grad();
  }
  out.theta.blocks = blocks;
  out.theta.domain_ids = {target.domain_ids().front()};
  out.theta.theta_s = ts.value();
  out.theta.theta_o = to.value().col(0);
  out.theta.theta_r = tr.value().col(0);
  return out;
}

Tensor DomainModel::mean_next_obs(const Batch& b) const {
  if (cfg_.mode != Mode::mdp) throw Error(ErrorKind::invalid_argument, "prediction is defined for observed states");
  const auto th = theta_rows(b.domain);
  Tensor base(b.rows(), d_ + 1 + theta_dim());
  base << b.obs, b.action, th.s.value();
  Tensor out(b.rows(), m_);
  for (int i = 0; i < d_; ++i) {
    const Eigen::RowVectorXd g = state_gate(i).value().row(0);
    const Tensor in = (base.array().rowwise() * g.array()).matrix();
    const Eigen::VectorXd incr = transition_[static_cast<std::size_t>(i)].mean(in);
    const Eigen::ArrayXd o = b.obs.col(i).array() * obs_std_(i) + obs_mean_(i);
    out.col(i) = (g(i) * o + incr.array() * delta_std_(i) + delta_mean_(i)).matrix();
  }
  return out;
}

Eigen::VectorXd prediction_mse(const DomainModel& model, const envs::TrajectoryDataset& data) {
  const PreparedData prep = model.prepare(data);
  const Batch& b = prep.all;
  const Tensor pred = model.mean_next_obs(b);
  Eigen::VectorXd mse(model.obs_dim());
  Tensor truth(b.rows(), model.obs_dim());
  Eigen::Index row = 0;
  for (const auto& ep : data.episodes) {
    for (std::size_t t = 0; t + 1 < ep.size(); ++t, ++row) {
      for (int i = 0; i < model.obs_dim(); ++i) truth(row, i) = ep[t + 1].obs[static_cast<std::size_t>(i)];
    }
  }
  mse = (pred - truth).cwiseAbs2().colwise().mean().transpose();
  return mse;
}

}  // namespace adarl::modelest
