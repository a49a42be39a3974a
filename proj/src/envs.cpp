#include "adarl/envs.hpp"

#include <algorithm>
#include <exception>
#include <cmath>
#include <numbers>
#include <sstream>

#include <Eigen/Eigenvalues>

#include "adarl/error.hpp"
#include "adarl/io.hpp"

namespace adarl::envs {

namespace {

constexpr double kXLimit = 2.4;
constexpr double kAngleLimit = 12.0 * 2.0 * std::numbers::pi / 360.0;


}  // namespace

void validate(const CartpoleParams& p) {
  if (!(p.gravity > 0.0)) throw Error(ErrorKind::invalid_argument, "gravity must be positive");
  if (!(p.cart_mass > 0.0) || !(p.pole_mass > 0.0)) {
    throw Error(ErrorKind::invalid_argument, "masses must be positive");
  }
  if (!(p.dt > 0.0)) throw Error(ErrorKind::invalid_argument, "dt must be positive");
  if (p.episode_cap < 1) throw Error(ErrorKind::invalid_argument, "episode cap must be >= 1");
}

CartState cartpole_dynamics(const CartState& s, double force, const CartpoleParams& p) {
  if (!s.allFinite() || !std::isfinite(force)) throw Error(ErrorKind::non_finite_state, "cart-pole state");
  const double x_dot = s(1);
  const double phi = s(2);
  const double phi_dot = s(3);
  const double cos_phi = std::cos(phi);
  const double sin_phi = std::sin(phi);
  const double total_mass = p.cart_mass + p.pole_mass;
  const double pole_moment = p.pole_mass * p.pole_half_length;

  const double temp = (force + pole_moment * phi_dot * phi_dot * sin_phi) / total_mass;
  const double phi_acc = (p.gravity * sin_phi - cos_phi * temp) /
                         (p.pole_half_length * (4.0 / 3.0 - p.pole_mass * cos_phi * cos_phi / total_mass));
  const double x_acc = temp - pole_moment * phi_acc * cos_phi / total_mass;

  CartState next;
  next(0) = s(0) + p.dt * x_dot;
  next(1) = x_dot + p.dt * x_acc;
  next(2) = phi + p.dt * phi_dot;
  next(3) = phi_dot + p.dt * phi_acc;
  return next;
}

CartpoleStep cartpole_step(const CartState& state, int action, const CartpoleParams& params, int steps_taken) {
  if (action != 0 && action != 1) throw Error(ErrorKind::invalid_argument, "cart-pole action must be 0 or 1");
  const double force = action == 1 ? params.force_magnitude : -params.force_magnitude;
  CartpoleStep out;
  out.next = cartpole_dynamics(state, force, params);
  const bool failed = std::abs(out.next(0)) > kXLimit || std::abs(out.next(2)) > kAngleLimit;
  const bool capped = steps_taken + 1 >= params.episode_cap;
  out.reward = failed ? 0.0 : 1.0;
  out.done = failed || capped;
  out.truncated = capped && !failed;
  return out;
}

CartpoleEnv::CartpoleEnv(CartpoleParams params) : params_(params) { validate(params_); }

Eigen::VectorXd CartpoleEnv::reset(Rng& rng) {
  for (int i = 0; i < 4; ++i) state_(i) = rng.uniform(-0.05, 0.05);
  steps_ = 0;
  return state_;
}

Environment::Step CartpoleEnv::step(int action, Rng&) {
  const auto r = cartpole_step(state_, action, params_, steps_);
  state_ = r.next;
  ++steps_;
  return {state_, r.reward, r.done, r.truncated};
}

nlohmann::json CartpoleEnv::describe() const {
  return {{"env", "cartpole"},          {"gravity", params_.gravity},
          {"cart_mass", params_.cart_mass}, {"pole_mass", params_.pole_mass},
          {"pole_half_length", params_.pole_half_length}, {"force_magnitude", params_.force_magnitude},
          {"dt", params_.dt},           {"episode_cap", params_.episode_cap}};
}

ChangeFactor change_factor_from_string(const std::string& s) {
  if (s == "gravity") return ChangeFactor::gravity;
  if (s == "mass") return ChangeFactor::mass;
  if (s == "both") return ChangeFactor::both;
  if (s == "noise") return ChangeFactor::noise;
  throw Error(ErrorKind::invalid_argument, "unknown change factor '" + s + "'");
}

std::string to_string(ChangeFactor f) {
  switch (f) {
    case ChangeFactor::gravity: return "gravity";
    case ChangeFactor::mass: return "mass";
    case ChangeFactor::both: return "both";
    case ChangeFactor::noise: return "noise";
  }
  return "?";
}

std::vector<EnvPtr> make_cartpole_domains(ChangeFactor factor, const std::vector<std::vector<double>>& values,
                                          const CartpoleParams& base) {
  if (values.empty()) throw Error(ErrorKind::empty_values, "no change-factor values given");
  const std::size_t arity = factor == ChangeFactor::both ? 2 : 1;
  std::vector<EnvPtr> out;
  for (const auto& v : values) {
    if (v.size() != arity) {
      throw Error(ErrorKind::invalid_argument, "change factor " + to_string(factor) + " expects " +
                                                   std::to_string(arity) + " value(s) per domain");
    }
    if (factor != ChangeFactor::noise && std::any_of(v.begin(), v.end(), [](double x) { return !(x > 0.0); })) {
      throw Error(ErrorKind::invalid_argument, "change-factor values must be positive");
    }
    CartpoleParams p = base;
    switch (factor) {
      case ChangeFactor::gravity: p.gravity = v[0]; break;
      case ChangeFactor::mass: p.cart_mass = v[0]; break;
      case ChangeFactor::both:
        p.gravity = v[0];
        p.cart_mass = v[1];
        break;
      case ChangeFactor::noise: break;
    }
    EnvPtr env = std::make_unique<CartpoleEnv>(p);
    if (factor == ChangeFactor::noise) env = noisy_obs_wrapper(std::move(env), v[0]);
    out.push_back(std::move(env));
  }
  return out;
}

// --- noisy observations ----------------------------------------------------

NoisyObsEnv::NoisyObsEnv(EnvPtr inner, double sigma) : inner_(std::move(inner)), sigma_(sigma) {
  if (!(sigma >= 0.0)) throw Error(ErrorKind::negative_sigma, "observation noise must be >= 0");
}

NoisyObsEnv::NoisyObsEnv(const NoisyObsEnv& other) : inner_(other.inner_->clone()), sigma_(other.sigma_) {}

Eigen::VectorXd NoisyObsEnv::corrupt(Eigen::VectorXd obs, Rng& rng) const {
  if (sigma_ == 0.0) return obs;
  for (Eigen::Index i = 0; i < obs.size(); ++i) obs(i) += sigma_ * rng.normal();
  return obs;
}

Eigen::VectorXd NoisyObsEnv::reset(Rng& rng) { return corrupt(inner_->reset(rng), rng); }

Environment::Step NoisyObsEnv::step(int action, Rng& rng) {
  Step s = inner_->step(action, rng);
  s.obs = corrupt(std::move(s.obs), rng);
  return s;
}

nlohmann::json NoisyObsEnv::describe() const {
  auto j = inner_->describe();
  j["noise_sigma"] = sigma_;
  return j;
}

EnvPtr noisy_obs_wrapper(EnvPtr env, double sigma) { return std::make_unique<NoisyObsEnv>(std::move(env), sigma); }

// --- synthetic POMDP -------------------------------------------------------

double SyntheticPomdpSpec::spectral_radius() const {
  if (transition.size() == 0) return 0.0;
  Eigen::EigenSolver<Eigen::MatrixXd> es(transition, false);
  return es.eigenvalues().cwiseAbs().maxCoeff();
}

SyntheticPomdpSpec sample_synthetic_pomdp(const dbn::MaskSet& masks, int n_domains, std::uint64_t seed,
                                          int obs_dim) {
  dbn::validate_masks(masks);
  if (n_domains < 1) throw Error(ErrorKind::invalid_argument, "need at least one domain");
  const int d = masks.d;
  const int p = masks.p;
  Rng rng(seed);
  auto weight = [&] {
    const double magnitude = rng.uniform(0.3, 0.9);
    return rng.bernoulli(0.5) ? magnitude : -magnitude;
  };

  SyntheticPomdpSpec spec;
  spec.masks = masks;
  spec.n_domains = n_domains;
  spec.obs_dim = obs_dim > 0 ? obs_dim : d;
  spec.seed = seed;
  spec.transition = Eigen::MatrixXd::Zero(d, d);
  spec.action_weights = Eigen::VectorXd::Zero(d);
  spec.theta_weights = Eigen::MatrixXd::Zero(d, p);
  spec.observation = Eigen::MatrixXd::Zero(spec.obs_dim, d);
  spec.reward_weights = Eigen::VectorXd::Zero(d);
  for (int i = 0; i < d; ++i) {
    for (int j = 0; j < d; ++j) {
      if (masks.css[i][j]) spec.transition(i, j) = weight();
    }
    if (masks.cas[i]) spec.action_weights(i) = weight();
    for (int m = 0; m < p; ++m) {
      if (masks.cts[i][m]) spec.theta_weights(i, m) = weight();
    }
    if (masks.csr[i]) spec.reward_weights(i) = weight();
  }
  for (int j = 0; j < d; ++j) {
    if (!masks.cso[j]) continue;
    for (int o = 0; o < spec.obs_dim; ++o) spec.observation(o, j) = weight();
  }
  if (masks.car) spec.reward_action_weight = weight();

  int attempts = 0;
  while (spec.spectral_radius() >= 0.95) {
    if (++attempts > 100) throw Error(ErrorKind::stability_unreachable, "transition matrix stays unstable");
    spec.transition *= 0.9;
  }

  // Evenly spread change factors, shuffled per component so domains differ.
  auto spread = [&](int k) { return n_domains == 1 ? 0.0 : -1.0 + 2.0 * k / (n_domains - 1); };
  auto shuffled_column = [&] {
    std::vector<double> v(n_domains);
    for (int k = 0; k < n_domains; ++k) v[k] = spread(k) + rng.uniform(-0.05, 0.05);
    std::shuffle(v.begin(), v.end(), rng.engine());
    return v;
  };
  spec.theta_s = Eigen::MatrixXd::Zero(n_domains, p);
  for (int m = 0; m < p; ++m) {
    const auto col = shuffled_column();
    for (int k = 0; k < n_domains; ++k) spec.theta_s(k, m) = col[k];
  }
  spec.theta_o = Eigen::VectorXd::Zero(n_domains);
  spec.theta_r = Eigen::VectorXd::Zero(n_domains);
  const auto o = shuffled_column();
  const auto r = shuffled_column();
  for (int k = 0; k < n_domains; ++k) {
    spec.theta_o(k) = o[k];
    spec.theta_r(k) = r[k];
  }
  return spec;
}

namespace {

nlohmann::json matrix_json(const Eigen::MatrixXd& m) {
  auto rows = nlohmann::json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    auto row = nlohmann::json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(row);
  }
  return rows;
}

Eigen::MatrixXd matrix_from(const nlohmann::json& j, Eigen::Index rows, Eigen::Index cols) {
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index c = 0; c < cols; ++c) m(i, c) = j.at(i).at(c).get<double>();
  return m;
}

Eigen::VectorXd vector_from(const nlohmann::json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

std::vector<double> to_std(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }

}  // namespace

nlohmann::json to_json(const SyntheticPomdpSpec& s) {
  return {{"masks", dbn::to_json(s.masks)},
          {"n_domains", s.n_domains},
          {"obs_dim", s.obs_dim},
          {"transition", matrix_json(s.transition)},
          {"action_weights", to_std(s.action_weights)},
          {"theta_weights", matrix_json(s.theta_weights)},
          {"observation", matrix_json(s.observation)},
          {"reward_weights", to_std(s.reward_weights)},
          {"reward_action_weight", s.reward_action_weight},
          {"theta_s", matrix_json(s.theta_s)},
          {"theta_o", to_std(s.theta_o)},
          {"theta_r", to_std(s.theta_r)},
          {"noise", {s.noise_s, s.noise_o, s.noise_r}},
          {"seed", s.seed}};
}

SyntheticPomdpSpec synthetic_from_json(const nlohmann::json& j) {
  SyntheticPomdpSpec s;
  s.masks = dbn::masks_from_json(j.at("masks"));
  s.n_domains = j.at("n_domains").get<int>();
  s.obs_dim = j.at("obs_dim").get<int>();
  const int d = s.masks.d;
  const int p = s.masks.p;
  s.transition = matrix_from(j.at("transition"), d, d);
  s.action_weights = vector_from(j.at("action_weights"));
  s.theta_weights = matrix_from(j.at("theta_weights"), d, p);
  s.observation = matrix_from(j.at("observation"), s.obs_dim, d);
  s.reward_weights = vector_from(j.at("reward_weights"));
  s.reward_action_weight = j.at("reward_action_weight").get<double>();
  s.theta_s = matrix_from(j.at("theta_s"), s.n_domains, p);
  s.theta_o = vector_from(j.at("theta_o"));
  s.theta_r = vector_from(j.at("theta_r"));
  const auto noise = j.at("noise").get<std::vector<double>>();
  s.noise_s = noise.at(0);
  s.noise_o = noise.at(1);
  s.noise_r = noise.at(2);
  s.seed = j.at("seed").get<std::uint64_t>();
  return s;
}

SyntheticPomdpEnv::SyntheticPomdpEnv(std::shared_ptr<const SyntheticPomdpSpec> spec, int domain,
                                     bool observe_state, int burn_in)
    : spec_(std::move(spec)), domain_(domain), observe_state_(observe_state), burn_in_(burn_in) {
  if (domain_ < 0 || domain_ >= spec_->n_domains) throw Error(ErrorKind::invalid_argument, "domain out of range");
  state_ = Eigen::VectorXd::Zero(spec_->masks.d);
}

int SyntheticPomdpEnv::obs_dim() const { return observe_state_ ? spec_->masks.d : spec_->obs_dim; }

void SyntheticPomdpEnv::advance(int action, Rng& rng) {
  const auto& s = *spec_;
  const double a = action == 1 ? 1.0 : -1.0;
  Eigen::VectorXd next = s.transition * state_ + s.action_weights * a;
  if (s.masks.p > 0) next += s.theta_weights * s.theta_s.row(domain_).transpose();
  for (Eigen::Index i = 0; i < next.size(); ++i) next(i) += s.noise_s * rng.normal();
  state_ = std::move(next);
}

Eigen::VectorXd SyntheticPomdpEnv::observe(Rng& rng) const {
  if (observe_state_) return state_;
  const auto& s = *spec_;
  Eigen::VectorXd o = s.observation * state_;
  const double offset = s.masks.cto ? s.theta_o(domain_) : 0.0;
  for (Eigen::Index i = 0; i < o.size(); ++i) o(i) += offset + s.noise_o * rng.normal();
  return o;
}

Eigen::VectorXd SyntheticPomdpEnv::reset(Rng& rng) {
  state_.setZero();
  for (int i = 0; i < burn_in_; ++i) advance(rng.uniform_int(0, 1), rng);
  return observe(rng);
}

Environment::Step SyntheticPomdpEnv::step(int action, Rng& rng) {
  if (action != 0 && action != 1) throw Error(ErrorKind::invalid_argument, "synthetic action must be 0 or 1");
  const auto& s = *spec_;
  const double a = action == 1 ? 1.0 : -1.0;
  double reward = s.reward_weights.dot(state_) + s.reward_action_weight * a + s.noise_r * rng.normal();
  if (s.masks.ctr) reward += s.theta_r(domain_);
  advance(action, rng);
  return {observe(rng), reward, false, false};
}

nlohmann::json SyntheticPomdpEnv::describe() const {
  const auto& s = *spec_;
  nlohmann::json theta_s = nlohmann::json::array();
  for (Eigen::Index m = 0; m < s.theta_s.cols(); ++m) theta_s.push_back(s.theta_s(domain_, m));
  return {{"env", "synthetic"},
          {"domain", domain_},
          {"theta_s", theta_s},
          {"theta_o", s.theta_o(domain_)},
          {"theta_r", s.theta_r(domain_)},
          {"observe_state", observe_state_}};
}

std::vector<EnvPtr> make_synthetic_domains(const SyntheticPomdpSpec& spec, bool observe_state) {
  auto shared = std::make_shared<const SyntheticPomdpSpec>(spec);
  std::vector<EnvPtr> out;
  for (int k = 0; k < spec.n_domains; ++k) out.push_back(std::make_unique<SyntheticPomdpEnv>(shared, k, observe_state));
  return out;
}

// --- datasets ---------------------------------------------------------------

std::size_t TrajectoryDataset::size() const {
  std::size_t n = 0;
  for (const auto& e : episodes) n += e.size();
  return n;
}

std::vector<int> TrajectoryDataset::domain_ids() const {
  std::vector<int> ids;
  for (const auto& e : episodes) {
    if (!e.empty()) ids.push_back(e.front().domain_id);
  }
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  return ids;
}

void TrajectoryDataset::validate() const {
  for (const auto& e : episodes) {
    for (std::size_t i = 0; i < e.size(); ++i) {
      if (!std::isfinite(e[i].reward)) throw Error(ErrorKind::parse_error, "non-finite reward");
      if (i == 0) continue;
      if (e[i].t <= e[i - 1].t) throw Error(ErrorKind::parse_error, "time index not increasing within episode");
      if (e[i].domain_id != e[0].domain_id || e[i].episode != e[0].episode) {
        throw Error(ErrorKind::parse_error, "domain or episode changes within an episode");
      }
    }
  }
}

Policy random_policy(int num_actions) {
  return [num_actions](const Eigen::VectorXd&, Rng& rng) { return rng.uniform_int(0, num_actions - 1); };
}

namespace {

std::vector<std::vector<Transition>> roll_domain(Environment& env, const Policy& policy, int domain_id,
                                                 int n_episodes, int max_steps, Rng rng) {
  std::vector<std::vector<Transition>> episodes;
  episodes.reserve(n_episodes);
  for (int e = 0; e < n_episodes; ++e) {
    std::vector<Transition> steps;
    Eigen::VectorXd obs = env.reset(rng);
    for (int t = 0; t < max_steps; ++t) {
      Transition tr;
      tr.domain_id = domain_id;
      tr.episode = e;
      tr.t = t;
      tr.obs.assign(obs.data(), obs.data() + obs.size());
      tr.action = policy(obs, rng);
      const auto s = env.step(tr.action, rng);
      tr.reward = s.reward;
      tr.done = s.done;
      steps.push_back(std::move(tr));
      if (s.done) break;
      obs = s.obs;
    }
    episodes.push_back(std::move(steps));
  }
  return episodes;
}

}  // namespace

TrajectoryDataset collect_rollouts(const std::vector<EnvPtr>& domains, const Policy& policy, int n_episodes,
                                   int max_steps, std::uint64_t seed, Exec exec, const std::vector<int>& domain_ids) {
  if (n_episodes < 1) throw Error(ErrorKind::invalid_argument, "need at least one episode");
  if (max_steps < 1) throw Error(ErrorKind::invalid_argument, "need at least one step");
  if (domains.empty()) throw Error(ErrorKind::no_source_domains, "no domains to roll out");
  if (!domain_ids.empty() && domain_ids.size() != domains.size()) {
    throw Error(ErrorKind::length_mismatch, "domain ids must match domains");
  }
  const int n = static_cast<int>(domains.size());
  std::vector<std::vector<std::vector<Transition>>> per_domain(n);
  auto id_of = [&](int k) { return domain_ids.empty() ? k : domain_ids[k]; };
  auto work = [&](int k) {
    auto env = domains[k]->clone();
    per_domain[k] = roll_domain(*env, policy, id_of(k), n_episodes, max_steps, Rng(derive_seed(seed, 17, id_of(k))));
  };
  if (exec == Exec::parallel) {
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(n));
#pragma omp parallel for schedule(dynamic, 1)
    for (int k = 0; k < n; ++k) {
      try {
        work(k);
      } catch (...) {
        errors[static_cast<std::size_t>(k)] = std::current_exception();
      }
    }
    for (const auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  } else {
    for (int k = 0; k < n; ++k) work(k);
  }

  TrajectoryDataset data;
  data.seed = seed;
  for (int k = 0; k < n; ++k) {
    data.domains.push_back({id_of(k), domains[k]->describe()});
    for (auto& e : per_domain[k]) data.episodes.push_back(std::move(e));
  }
  data.config = {{"n_episodes", n_episodes}, {"max_steps", max_steps}};
  return data;
}

std::string to_jsonl(const TrajectoryDataset& data) {
  std::string out;
  for (const auto& e : data.episodes) {
    for (const auto& tr : e) {
      nlohmann::json j{{"domain_id", tr.domain_id}, {"episode", tr.episode}, {"t", tr.t},
                       {"obs", tr.obs},             {"action", tr.action},   {"reward", tr.reward},
                       {"done", tr.done}};
      out += j.dump();
      out.push_back('\n');
    }
  }
  return out;
}

nlohmann::json metadata(const TrajectoryDataset& data) {
  nlohmann::json domains = nlohmann::json::array();
  for (const auto& d : data.domains) domains.push_back({{"domain_id", d.domain_id}, {"truth", d.truth}});
  return {{"schema_version", data.schema_version}, {"seed", data.seed}, {"config", data.config}, {"domains", domains}};
}

TrajectoryDataset from_jsonl(const std::string& jsonl, const nlohmann::json& meta) {
  TrajectoryDataset data;
  try {
    data.schema_version = meta.at("schema_version").get<int>();
    if (data.schema_version != TrajectoryDataset::kSchemaVersion) {
      throw Error(ErrorKind::parse_error, "unsupported dataset schema version");
    }
    data.seed = meta.at("seed").get<std::uint64_t>();
    data.config = meta.at("config");
    for (const auto& d : meta.at("domains")) data.domains.push_back({d.at("domain_id").get<int>(), d.at("truth")});

    std::istringstream in(jsonl);
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const auto j = nlohmann::json::parse(line);
      Transition tr;
      tr.domain_id = j.at("domain_id").get<int>();
      tr.episode = j.at("episode").get<int>();
      tr.t = j.at("t").get<int>();
      tr.obs = j.at("obs").get<std::vector<double>>();
      tr.action = j.at("action").get<int>();
      tr.reward = j.at("reward").get<double>();
      tr.done = j.at("done").get<bool>();
      const bool new_episode = data.episodes.empty() || data.episodes.back().back().episode != tr.episode ||
                               data.episodes.back().back().domain_id != tr.domain_id;
      if (new_episode) data.episodes.emplace_back();
      data.episodes.back().push_back(std::move(tr));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::parse_error, std::string("dataset: ") + e.what());
  }
  data.validate();
  return data;
}

void save_dataset(const TrajectoryDataset& data, const std::string& path_jsonl, const std::string& path_meta) {
  io::write_file(path_jsonl, to_jsonl(data));
  io::write_json(path_meta, metadata(data));
}

TrajectoryDataset load_dataset(const std::string& path_jsonl, const std::string& path_meta) {
  return from_jsonl(io::read_file(path_jsonl), io::read_json(path_meta));
}

}  // namespace adarl::envs
