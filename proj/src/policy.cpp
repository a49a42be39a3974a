#include "adarl/policy.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <limits>

#include "adarl/error.hpp"
#include "adarl/io.hpp"
#include "adarl/stats.hpp"

namespace adarl::policy {

ReplayBuffer::ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
  if (capacity == 0) throw Error(ErrorKind::invalid_argument, "replay capacity must be positive");
  items_.reserve(std::min<std::size_t>(capacity, 4096));
}

void ReplayBuffer::push(Experience e) {
  if (items_.size() < capacity_) {
    items_.push_back(std::move(e));
  } else {
    items_[next_] = std::move(e);
  }
  next_ = (next_ + 1) % capacity_;
}

std::vector<std::size_t> ReplayBuffer::sample(std::size_t n, Rng& rng) const {
  if (items_.empty()) throw Error(ErrorKind::empty_rollouts, "sampling from an empty replay buffer");
  std::uniform_int_distribution<std::size_t> pick(0, items_.size() - 1);
  std::vector<std::size_t> out(n);
  for (auto& i : out) i = pick(rng.engine());
  return out;
}

std::string to_string(TargetRule r) { return r == TargetRule::double_dqn ? "double_dqn" : "plain_max"; }

TargetRule target_rule_from_string(const std::string& s) {
  if (s == "double_dqn") return TargetRule::double_dqn;
  if (s == "plain_max") return TargetRule::plain_max;
  throw Error(ErrorKind::config_error, "unknown target rule '" + s + "'");
}

nlohmann::json to_json(const PolicyConfig& c) {
  return {{"hidden", c.hidden},
          {"gamma", c.gamma},
          {"lr", c.lr},
          {"lr_decay", c.lr_decay},
          {"batch_size", c.batch_size},
          {"capacity", c.capacity},
          {"eps_start", c.eps_start},
          {"eps_end", c.eps_end},
          {"eps_fraction", c.eps_fraction},
          {"episodes", c.episodes},
          {"max_steps", c.max_steps},
          {"learning_starts", c.learning_starts},
          {"train_every", c.train_every},
          {"target_rule", to_string(c.target_rule)},
          {"eval_every", c.eval_every},
          {"eval_episodes", c.eval_episodes},
          {"seed", c.seed}};
}

PolicyConfig policy_config_from_json(const nlohmann::json& j) {
  try {
    PolicyConfig c;
    c.hidden = j.at("hidden").get<std::vector<int>>();
    c.gamma = j.at("gamma").get<double>();
    c.lr = j.at("lr").get<double>();
    c.lr_decay = j.at("lr_decay").get<double>();
    c.batch_size = j.at("batch_size").get<int>();
    c.capacity = j.at("capacity").get<std::size_t>();
    c.eps_start = j.at("eps_start").get<double>();
    c.eps_end = j.at("eps_end").get<double>();
    c.eps_fraction = j.at("eps_fraction").get<double>();
    c.episodes = j.at("episodes").get<int>();
    c.max_steps = j.at("max_steps").get<int>();
    c.learning_starts = j.at("learning_starts").get<int>();
    c.train_every = j.at("train_every").get<int>();
    c.target_rule = target_rule_from_string(j.at("target_rule").get<std::string>());
    c.eval_every = j.at("eval_every").get<int>();
    c.eval_episodes = j.at("eval_episodes").get<int>();
    c.seed = j.at("seed").get<std::uint64_t>();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::parse_error, std::string("policy config: ") + e.what());
  }
}

double epsilon_at(const PolicyConfig& c, double step, double planned) {
  const double horizon = c.eps_fraction * planned;
  if (horizon <= 0.0 || step >= horizon) return c.eps_end;
  return c.eps_start + (c.eps_end - c.eps_start) * (step / horizon);
}

// --- QPolicy -------------------------------------------------------------------------

namespace {

std::vector<int> q_widths(int in, const std::vector<int>& hidden, int out) {
  std::vector<int> w{in};
  w.insert(w.end(), hidden.begin(), hidden.end());
  w.push_back(out);
  return w;
}

std::vector<int> hidden_of(const nn::Mlp& net) {
  const auto& w = net.widths();
  return {w.begin() + 1, w.end() - 1};
}

}  // namespace

QPolicy::QPolicy(int state_dim, int theta_dim, int n_actions, const std::vector<int>& hidden,
                 Eigen::VectorXd input_mean, Eigen::VectorXd input_std, Rng& rng)
    : state_dim_(state_dim),
      theta_dim_(theta_dim),
      n_actions_(n_actions),
      input_mean_(std::move(input_mean)),
      input_std_(std::move(input_std)) {
  const int in = state_dim + theta_dim;
  if (in < 1) throw Error(ErrorKind::dimension_mismatch, "the Q-network needs at least one input");
  if (input_mean_.size() != in || input_std_.size() != in)
    throw Error(ErrorKind::dimension_mismatch, "input standardization width");
  if ((input_std_.array() <= 0.0).any()) throw Error(ErrorKind::nonpositive_std, "input std must be positive");
  q_ = nn::Mlp(q_widths(in, hidden, n_actions), rng);
  q_target_ = q_.clone();
}

Tensor QPolicy::inputs(const std::vector<const Eigen::VectorXd*>& s,
                       const std::vector<const Eigen::VectorXd*>& theta) const {
  const Eigen::Index n = static_cast<Eigen::Index>(s.size());
  Tensor x(n, state_dim_ + theta_dim_);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& si = *s[static_cast<std::size_t>(i)];
    const auto& ti = *theta[static_cast<std::size_t>(i)];
    if (si.size() != state_dim_ || ti.size() != theta_dim_)
      throw Error(ErrorKind::dimension_mismatch, "policy input width");
    x.row(i).head(state_dim_) = si.transpose();
    x.row(i).tail(theta_dim_) = ti.transpose();
  }
  x.rowwise() -= input_mean_.transpose();
  x.array().rowwise() /= input_std_.transpose().array();
  return x;
}

Eigen::RowVectorXd QPolicy::q_values(const Eigen::VectorXd& s, const Eigen::VectorXd& theta) const {
  return q_.predict(inputs({&s}, {&theta}), Exec::serial).row(0);
}

int QPolicy::greedy(const Eigen::VectorXd& s, const Eigen::VectorXd& theta) const {
  Eigen::Index best = 0;
  q_values(s, theta).maxCoeff(&best);
  return static_cast<int>(best);
}

int QPolicy::act(const Eigen::VectorXd& s, const Eigen::VectorXd& theta, double epsilon, Rng& rng) const {
  if (rng.uniform() < epsilon) return rng.uniform_int(0, n_actions_ - 1);
  return greedy(s, theta);
}

diff::NamedTensors QPolicy::export_tensors() const {
  diff::NamedTensors t;
  q_.export_to(t, "q");
  q_target_.export_to(t, "q_target");
  t.emplace_back("input.mean", input_mean_);
  t.emplace_back("input.std", input_std_);
  return t;
}

void QPolicy::import_tensors(const diff::NamedTensors& t) {
  q_.import_from(t, "q");
  q_target_.import_from(t, "q_target");
  for (const auto& [name, v] : t) {
    if (name == "input.mean") input_mean_ = v.col(0);
    if (name == "input.std") input_std_ = v.col(0);
  }
}

nlohmann::json QPolicy::to_json() const {
  return {{"format", "adarl-policy"},
          {"version", 1},
          {"state_dim", state_dim_},
          {"theta_dim", theta_dim_},
          {"n_actions", n_actions_},
          {"hidden", hidden_of(q_)},
          {"tensors", diff::tensors_to_json(export_tensors())}};
}

QPolicy QPolicy::from_json(const nlohmann::json& j) {
  try {
    if (j.at("format") != "adarl-policy" || j.at("version") != 1)
      throw Error(ErrorKind::parse_error, "not a version-1 policy checkpoint");
    const int s = j.at("state_dim").get<int>();
    const int t = j.at("theta_dim").get<int>();
    Rng rng(0);
    QPolicy p(s, t, j.at("n_actions").get<int>(), j.at("hidden").get<std::vector<int>>(),
              Eigen::VectorXd::Zero(s + t), Eigen::VectorXd::Ones(s + t), rng);
    p.import_tensors(diff::tensors_from_json(j.at("tensors")));
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::parse_error, std::string("policy checkpoint: ") + e.what());
  }
}

// --- TD objective ----------------------------------------------------------------------

namespace {

Tensor batch_inputs(const QPolicy& policy, const std::vector<const Experience*>& batch, bool next) {
  std::vector<const Eigen::VectorXd*> s, th;
  s.reserve(batch.size());
  th.reserve(batch.size());
  for (const auto* e : batch) {
    s.push_back(next ? &e->s_next : &e->s);
    th.push_back(&e->theta);
  }
  return policy.inputs(s, th);
}

}  // namespace

Eigen::VectorXd td_targets(const QPolicy& policy, const std::vector<const Experience*>& batch, double gamma,
                           TargetRule rule) {
  const Tensor next = batch_inputs(policy, batch, true);
  const Tensor q_next = policy.target().predict(next, Exec::serial);
  Eigen::VectorXd v(q_next.rows());
  if (rule == TargetRule::plain_max) {
    v = q_next.rowwise().maxCoeff();
  } else {
    const Tensor q_online = policy.online().predict(next, Exec::serial);
    for (Eigen::Index i = 0; i < v.size(); ++i) {
      Eigen::Index a = 0;
      q_online.row(i).maxCoeff(&a);
      v(i) = q_next(i, a);
    }
  }
  Eigen::VectorXd y(v.size());
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    const auto& e = *batch[static_cast<std::size_t>(i)];
    y(i) = e.reward + (e.terminal ? 0.0 : gamma * v(i));
  }
  return y;
}

Var td_loss(const QPolicy& policy, const std::vector<const Experience*>& batch, const Eigen::VectorXd& targets) {
  if (targets.size() != static_cast<Eigen::Index>(batch.size()))
    throw Error(ErrorKind::misaligned_batch, "one target per experience");
  std::vector<int> actions;
  actions.reserve(batch.size());
  for (const auto* e : batch) actions.push_back(e->action);
  const Var q = diff::pick(policy.online().forward(diff::constant(batch_inputs(policy, batch, false))), actions);
  return diff::mean(diff::square(diff::sub(q, diff::constant(targets))));
}

// --- state maps ---------------------------------------------------------------------------

namespace {

Eigen::VectorXd project(const std::vector<double>& obs, const std::vector<int>& idx) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(idx.size()));
  for (std::size_t i = 0; i < idx.size(); ++i) out(static_cast<Eigen::Index>(i)) = obs.at(static_cast<std::size_t>(idx[i]));
  return out;
}

void check_indices(const std::vector<int>& idx, int width) {
  for (int i : idx) {
    if (i < 0 || i >= width) throw Error(ErrorKind::dimension_mismatch, "s^min index out of range");
  }
}

}  // namespace

StateMap observed_state(const std::vector<int>& indices, int obs_dim, const modelest::DomainModel* model) {
  check_indices(indices, obs_dim);
  StateMap m;
  m.dim = static_cast<int>(indices.size());
  m.mean = Eigen::VectorXd::Zero(m.dim);
  m.std = Eigen::VectorXd::Ones(m.dim);
  if (model != nullptr) {
    for (int i = 0; i < m.dim; ++i) {
      m.mean(i) = model->obs_mean()(indices[static_cast<std::size_t>(i)]);
      m.std(i) = model->obs_std()(indices[static_cast<std::size_t>(i)]);
    }
  }
  m.fn = [indices](const std::vector<envs::Transition>& h, const Eigen::RowVectorXd&, Rng&) {
    return project(h.back().obs, indices);
  };
  return m;
}

Eigen::VectorXd infer_state_min(const modelest::DomainModel& model, const std::vector<envs::Transition>& history,
                                const Eigen::RowVectorXd& theta_model, const std::vector<int>& indices, Rng& rng) {
  if (!model.trained()) throw Error(ErrorKind::untrained_model, "s^min inference needs a trained model");
  if (history.empty()) throw Error(ErrorKind::empty_rollouts, "no observation to infer from");
  if (model.mode() == modelest::Mode::mdp) {
    check_indices(indices, model.obs_dim());
    return project(history.back().obs, indices);
  }
  check_indices(indices, model.state_dim());
  const Tensor window = model.window_row(history, static_cast<int>(history.size()) - 1);
  const auto [mu, log_sigma] = model.encode(window, theta_model);
  Eigen::VectorXd out(static_cast<Eigen::Index>(indices.size()));
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const int k = indices[i];
    out(static_cast<Eigen::Index>(i)) = mu(0, k) + std::exp(log_sigma(0, k)) * rng.normal();
  }
  return out;
}

StateMap model_state(const modelest::DomainModel& model, const std::vector<int>& indices) {
  if (!model.trained()) throw Error(ErrorKind::untrained_model, "s^min inference needs a trained model");
  if (model.mode() == modelest::Mode::mdp) return observed_state(indices, model.obs_dim(), &model);
  check_indices(indices, model.state_dim());
  StateMap m;
  m.dim = static_cast<int>(indices.size());
  m.mean = Eigen::VectorXd::Zero(m.dim);
  m.std = Eigen::VectorXd::Ones(m.dim);
  m.fn = [&model, indices](const std::vector<envs::Transition>& h, const Eigen::RowVectorXd& theta, Rng& rng) {
    return infer_state_min(model, h, theta, indices, rng);
  };
  return m;
}

// --- training ----------------------------------------------------------------------------

std::string curve_csv(const std::vector<CurveRow>& rows) {
  std::string out = io::csv_line({"step", "epsilon", "mean_td_loss", "eval_score"});
  for (const auto& r : rows) {
    out += io::csv_line({std::to_string(r.step), io::format_double(r.epsilon), io::format_double(r.mean_td_loss),
                         io::format_double(r.eval_score)});
  }
  return out;
}

namespace {

envs::Transition observation(const Eigen::VectorXd& obs, int t) {
  envs::Transition tr;
  tr.t = t;
  tr.obs.assign(obs.data(), obs.data() + obs.size());
  return tr;
}

struct Episode {
  envs::EnvPtr env;
  Rng env_rng{0};
  std::vector<envs::Transition> history;
  Eigen::VectorXd s;
  bool alive = false;
};

}  // namespace

TrainResult train_multi_domain(const std::vector<TrainDomain>& domains, const StateMap& state,
                               const PolicyConfig& cfg) {
  if (domains.empty()) throw Error(ErrorKind::no_source_domains, "training needs at least one domain");
  if (cfg.batch_size < 1 || cfg.train_every < 1 || cfg.episodes < 0 || cfg.max_steps < 1)
    throw Error(ErrorKind::config_error, "policy budgets must be positive");
  const int n_actions = domains.front().env->num_actions();
  const auto theta_dim = domains.front().theta_min.size();
  for (const auto& d : domains) {
    if (d.env == nullptr) throw Error(ErrorKind::invalid_argument, "domain without an environment");
    if (d.theta_min.size() != theta_dim) throw Error(ErrorKind::dimension_mismatch, "theta^min widths differ");
    if (d.env->num_actions() != n_actions) throw Error(ErrorKind::dimension_mismatch, "action sets differ");
  }

  // Factor inputs are standardized across the source domains.
  Eigen::VectorXd in_mean(state.dim + theta_dim), in_std(state.dim + theta_dim);
  in_mean.head(state.dim) = state.mean;
  in_std.head(state.dim) = state.std;
  for (Eigen::Index j = 0; j < theta_dim; ++j) {
    std::vector<double> col;
    for (const auto& d : domains) col.push_back(d.theta_min(j));
    in_mean(state.dim + j) = stats::mean(col);
    const double sd = stats::stddev(col);
    in_std(state.dim + j) = sd > 1e-8 ? sd : 1.0;
  }

  Rng init_rng(derive_seed(cfg.seed, 1));
  Rng act_rng(derive_seed(cfg.seed, 2));
  Rng batch_rng(derive_seed(cfg.seed, 3));
  Rng state_rng(derive_seed(cfg.seed, 5));
  TrainResult out;
  out.policy = QPolicy(state.dim, static_cast<int>(theta_dim), n_actions, cfg.hidden, in_mean, in_std, init_rng);
  QPolicy& pol = out.policy;
  diff::Adam opt(pol.online().params(), {cfg.lr});
  ReplayBuffer buffer(cfg.capacity);

  std::vector<Episode> eps(domains.size());
  for (std::size_t k = 0; k < domains.size(); ++k) {
    eps[k].env = domains[k].env->clone();
    eps[k].env_rng = Rng(derive_seed(cfg.seed, 4, k));
  }
  const std::size_t warmup = std::max<std::size_t>(static_cast<std::size_t>(std::max(cfg.learning_starts, 0)),
                                                   static_cast<std::size_t>(cfg.batch_size));
  long step = 0;
  std::vector<const Experience*> batch(static_cast<std::size_t>(cfg.batch_size));

  for (int m = 0; m < cfg.episodes; ++m) {
    for (std::size_t k = 0; k < domains.size(); ++k) {
      auto& e = eps[k];
      e.history.clear();
      e.history.push_back(observation(e.env->reset(e.env_rng), 0));
      e.s = state.fn(e.history, domains[k].theta_model, state_rng);
      e.alive = true;
    }
    double loss_sum = 0.0;
    int updates = 0;
    const double eps_now = epsilon_at(cfg, m, cfg.episodes);
    for (int t = 0; t < cfg.max_steps; ++t) {
      bool any = false;
      for (std::size_t k = 0; k < domains.size(); ++k) {
        auto& e = eps[k];
        if (!e.alive) continue;
        any = true;
        const int a = pol.act(e.s, domains[k].theta_min, eps_now, act_rng);
        const auto st = e.env->step(a, e.env_rng);
        e.history.back().action = a;
        e.history.back().reward = st.reward;
        e.history.back().done = st.done;
        e.history.push_back(observation(st.obs, t + 1));
        Experience x;
        x.s = e.s;
        x.action = a;
        x.reward = st.reward;
        x.s_next = state.fn(e.history, domains[k].theta_model, state_rng);
        x.theta = domains[k].theta_min;
        x.terminal = st.done && !st.truncated;
        x.domain = domains[k].domain_id;
        e.s = x.s_next;
        buffer.push(std::move(x));
        if (st.done) e.alive = false;
        ++step;

        if (buffer.size() >= warmup && step % cfg.train_every == 0) {
          const auto idx = buffer.sample(batch.size(), batch_rng);
          for (std::size_t i = 0; i < idx.size(); ++i) batch[i] = &buffer.at(idx[i]);
          const Eigen::VectorXd y = td_targets(pol, batch, cfg.gamma, cfg.target_rule);
          opt.zero_grad();
          const Var loss = td_loss(pol, batch, y);
          if (!std::isfinite(loss.scalar()))
            throw Error(ErrorKind::nan_loss, "non-finite TD loss at step " + std::to_string(step));
          diff::backward(loss);
          opt.step();
          loss_sum += loss.scalar();
          out.losses.push_back(loss.scalar());
          ++updates;
        }
      }
      if (!any) break;
    }
    pol.sync_target();
    opt.set_lr(opt.lr() * cfg.lr_decay);

    CurveRow row;
    row.step = step;
    row.epsilon = eps_now;
    row.mean_td_loss = updates > 0 ? loss_sum / updates : std::numeric_limits<double>::quiet_NaN();
    row.eval_score = std::numeric_limits<double>::quiet_NaN();
    if (cfg.eval_every > 0 && (m + 1) % cfg.eval_every == 0) {
      double total = 0.0;
      for (std::size_t k = 0; k < domains.size(); ++k) {
        total += deploy_target(pol, domains[k].theta_min, domains[k].theta_model, *domains[k].env, state,
                               cfg.eval_episodes, cfg.max_steps, derive_seed(cfg.seed, 6 + k, m))
                     .mean;
      }
      row.eval_score = total / static_cast<double>(domains.size());
    }
    out.curve.push_back(row);
  }
  return out;
}

TrainResult baseline_non_transfer(std::vector<TrainDomain> domains, const StateMap& state,
                                  const PolicyConfig& cfg) {
  for (auto& d : domains) d.theta_min = Eigen::VectorXd();
  return train_multi_domain(domains, state, cfg);
}

TrainResult baseline_oracle(const envs::Environment& target, const StateMap& state, const PolicyConfig& cfg) {
  TrainDomain d;
  d.env = &target;
  return train_multi_domain({d}, state, cfg);
}

ScoreStats deploy_target(const QPolicy& policy, const Eigen::VectorXd& theta_min,
                         const Eigen::RowVectorXd& theta_model, const envs::Environment& env, const StateMap& state,
                         int n_eval, int max_steps, std::uint64_t seed, Exec exec) {
  if (n_eval < 1) throw Error(ErrorKind::invalid_argument, "n_eval must be positive");
  std::vector<double> scores(static_cast<std::size_t>(n_eval));
  auto episode = [&](int i) {
    Rng env_rng(derive_seed(seed, static_cast<std::uint64_t>(i), 1));
    Rng state_rng(derive_seed(seed, static_cast<std::uint64_t>(i), 2));
    const auto e = env.clone();
    std::vector<envs::Transition> h{observation(e->reset(env_rng), 0)};
    double score = 0.0;
    for (int t = 0; t < max_steps; ++t) {
      const int a = policy.greedy(state.fn(h, theta_model, state_rng), theta_min);
      const auto st = e->step(a, env_rng);
      score += st.reward;
      if (st.done) break;
      h.back().action = a;
      h.back().reward = st.reward;
      h.push_back(observation(st.obs, t + 1));
    }
    scores[static_cast<std::size_t>(i)] = score;
  };
  if (exec == Exec::parallel) {
    std::exception_ptr failure;
#pragma omp parallel for schedule(dynamic)
    for (int i = 0; i < n_eval; ++i) {
      try {
        episode(i);
      } catch (...) {
#pragma omp critical
        failure = std::current_exception();
      }
    }
    if (failure) std::rethrow_exception(failure);
  } else {
    for (int i = 0; i < n_eval; ++i) episode(i);
  }
  ScoreStats s;
  s.scores = scores;
  s.mean = stats::mean(scores);
  s.std = stats::stddev(scores);
  return s;
}

}  // namespace adarl::policy
