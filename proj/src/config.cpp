#include "adarl/config.hpp"

#include <set>

#include "adarl/error.hpp"
#include "adarl/io.hpp"

namespace adarl::config {

std::string to_string(Game g) {
  switch (g) {
    case Game::cartpole_mdp: return "cartpole_mdp";
    case Game::cartpole_pomdp_noisy: return "cartpole_pomdp_noisy";
    case Game::synthetic_pomdp: return "synthetic_pomdp";
  }
  return "?";
}

Game game_from_string(const std::string& s) {
  if (s == "cartpole_mdp") return Game::cartpole_mdp;
  if (s == "cartpole_pomdp_noisy") return Game::cartpole_pomdp_noisy;
  if (s == "synthetic_pomdp") return Game::synthetic_pomdp;
  throw Error(ErrorKind::config_error, "unknown game '" + s + "'");
}

std::vector<Setting> cartpole_settings() {
  using envs::ChangeFactor;
  const std::vector<std::vector<double>> g{{5}, {10}, {20}, {30}, {40}};
  const std::vector<std::vector<double>> m{{0.5}, {1.5}, {2.5}, {3.5}, {4.5}};
  const std::vector<std::vector<double>> gm{{5, 0.5}, {10, 1.5}, {20, 2.5}, {30, 3.5}, {40, 4.5}};
  return {{"G_in", ChangeFactor::gravity, g, {15}},   {"G_out", ChangeFactor::gravity, g, {55}},
          {"M_in", ChangeFactor::mass, m, {1.0}},     {"M_out", ChangeFactor::mass, m, {5.5}},
          {"G&M", ChangeFactor::both, gm, {15, 1.0}}};
}

std::vector<Setting> noisy_cartpole_settings() {
  using envs::ChangeFactor;
  auto s = cartpole_settings();
  const std::vector<std::vector<double>> n{{0.25}, {0.75}, {1.25}, {1.75}, {2.25}};
  s.push_back({"N_in", ChangeFactor::noise, n, {0.5}});
  s.push_back({"N_out", ChangeFactor::noise, n, {2.75}});
  return s;
}

ExperimentConfig preset(Game game, const std::string& budget) {
  if (budget != "desk" && budget != "full") throw Error(ErrorKind::config_error, "budget must be 'desk' or 'full'");
  ExperimentConfig c;
  c.game = game;
  c.budget = budget;
  for (std::uint64_t s = 0; s < 30; ++s) c.seeds.push_back(s);
  c.rollout_episodes = 200;
  c.rollout_steps = 40;
  c.model.epochs = 100;
  c.model.batch_size = 64;
  c.policy.episodes = 60;  // outer episodes; 300 episodes over 5 sources
  c.eval_max_steps = envs::CartpoleParams{}.episode_cap;
  switch (game) {
    case Game::cartpole_mdp:
      c.settings = cartpole_settings();
      c.model.mode = modelest::Mode::mdp;
      break;
    case Game::cartpole_pomdp_noisy:
      c.settings = noisy_cartpole_settings();
      c.model.mode = modelest::Mode::pomdp;
      break;
    case Game::synthetic_pomdp: {
      Setting s;
      s.name = "synthetic";
      s.n_sources = 5;
      c.settings = {s};
      c.model.mode = modelest::Mode::pomdp;
      break;
    }
  }
  if (budget == "full") {
    c.rollout_episodes = 10000;
    c.model.latent_dim = 20;
    c.model.epochs = 1000;
    c.model.batch_size = 20;
    c.model.lr = 0.01;
    c.model.lr_decay = 0.999;
    c.policy.lr = 0.01;
    c.policy.lr_decay = 0.999;
  }
  return c;
}

namespace {

using nlohmann::json;

/// Reads optional keys of one object and rejects the ones nobody asked for.
class Reader {
 public:
  Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw Error(ErrorKind::config_error, path_ + " must be an object");
  }

  template <class T>
  void get(const std::string& key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw Error(ErrorKind::config_error, path_ + "." + key + ": " + e.what());
    }
  }

  bool has(const std::string& key) const { return j_.contains(key); }

  Reader child(const std::string& key) {
    seen_.insert(key);
    static const json empty = json::object();
    return Reader(j_.contains(key) ? j_.at(key) : empty, path_ + "." + key);
  }

  const json& raw(const std::string& key) {
    seen_.insert(key);
    return j_.at(key);
  }

  void finish() const {
    for (const auto& item : j_.items()) {
      if (!seen_.count(item.key())) throw Error(ErrorKind::config_error, "unknown key " + path_ + "." + item.key());
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

void read_model(Reader r, modelest::ModelConfig& m) {
  std::string mode = modelest::to_string(m.mode);
  r.get("mode", mode);
  m.mode = modelest::mode_from_string(mode);
  r.get("latent_dim", m.latent_dim);
  r.get("hidden", m.hidden);
  r.get("components", m.components);
  r.get("lag", m.lag);
  r.get("epochs", m.epochs);
  r.get("batch_size", m.batch_size);
  r.get("lr", m.lr);
  r.get("lr_decay", m.lr_decay);
  r.get("free_bits", m.free_bits);
  r.get("gate_init", m.gate_init);
  r.get("gate_temperature", m.gate_temperature);
  r.get("theta_init_scale", m.theta_init_scale);
  r.get("threshold", m.threshold);
  Reader l = r.child("lambda");
  l.get("kl", m.lambda.kl);
  l.get("cso", m.lambda.cso);
  l.get("csr", m.lambda.csr);
  l.get("car", m.lambda.car);
  l.get("css", m.lambda.css);
  l.get("cas", m.lambda.cas);
  l.get("cts", m.lambda.cts);
  l.get("theta", m.lambda.theta);
  l.finish();
  r.finish();
}

void read_policy(Reader r, policy::PolicyConfig& p) {
  r.get("hidden", p.hidden);
  r.get("gamma", p.gamma);
  r.get("lr", p.lr);
  r.get("lr_decay", p.lr_decay);
  r.get("batch_size", p.batch_size);
  r.get("capacity", p.capacity);
  r.get("eps_start", p.eps_start);
  r.get("eps_end", p.eps_end);
  r.get("eps_fraction", p.eps_fraction);
  r.get("episodes", p.episodes);
  r.get("max_steps", p.max_steps);
  r.get("learning_starts", p.learning_starts);
  r.get("train_every", p.train_every);
  std::string rule = policy::to_string(p.target_rule);
  r.get("target_rule", rule);
  p.target_rule = policy::target_rule_from_string(rule);
  r.finish();
}

Setting read_setting(const json& j, std::size_t i) {
  Reader r(j, "settings[" + std::to_string(i) + "]");
  Setting s;
  std::string factor = "gravity";
  r.get("name", s.name);
  r.get("factor", factor);
  s.factor = envs::change_factor_from_string(factor);
  r.get("sources", s.sources);
  r.get("target", s.target);
  r.get("n_sources", s.n_sources);
  r.finish();
  return s;
}

}  // namespace

ExperimentConfig parse(const nlohmann::json& j) {
  if (!j.is_object()) throw Error(ErrorKind::config_error, "configuration must be an object");
  Reader r(j, "config");
  int version = 0;
  r.get("schema_version", version);
  if (version != kSchemaVersion)
    throw Error(ErrorKind::config_error, "schema_version must be " + std::to_string(kSchemaVersion));
  std::string game = "cartpole_mdp", budget = "desk";
  r.get("game", game);
  r.get("budget", budget);
  ExperimentConfig c = preset(game_from_string(game), budget);

  if (r.has("settings")) {
    const json& arr = r.raw("settings");
    if (!arr.is_array()) throw Error(ErrorKind::config_error, "settings must be a list");
    c.settings.clear();
    for (std::size_t i = 0; i < arr.size(); ++i) c.settings.push_back(read_setting(arr[i], i));
  } else {
    r.child("settings");
  }
  r.get("n_target", c.n_target);
  r.get("seeds", c.seeds);
  r.get("alpha", c.alpha);
  r.get("delta", c.delta);
  {
    Reader ro = r.child("rollouts");
    ro.get("episodes", c.rollout_episodes);
    ro.get("max_steps", c.rollout_steps);
    ro.finish();
  }
  read_model(r.child("model"), c.model);
  {
    Reader a = r.child("adapt");
    a.get("steps", c.adapt_steps);
    a.get("lr", c.adapt_lr);
    a.finish();
  }
  read_policy(r.child("policy"), c.policy);
  {
    Reader e = r.child("eval");
    e.get("episodes", c.eval_episodes);
    e.get("max_steps", c.eval_max_steps);
    e.finish();
  }
  {
    Reader s = r.child("synthetic");
    s.get("d", c.synthetic.d);
    s.get("p", c.synthetic.p);
    s.get("density", c.synthetic.density);
    s.get("obs_dim", c.synthetic.obs_dim);
    s.get("structure_seed", c.synthetic.structure_seed);
    s.finish();
  }
  r.get("output_dir", c.output_dir);
  r.finish();
  validate(c);
  return c;
}

ExperimentConfig load(const std::string& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(io::read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::config_error, path + ": " + e.what());
  }
  return parse(j);
}

void validate(const ExperimentConfig& c) {
  auto fail = [](const std::string& m) { throw Error(ErrorKind::config_error, m); };
  if (c.schema_version != kSchemaVersion) fail("unsupported schema version");
  if (c.seeds.empty()) fail("seeds must be a nonempty list");
  if (c.settings.empty()) fail("at least one setting is required");
  if (c.n_target < 1) fail("n_target must be positive");
  if (c.rollout_episodes < 1 || c.rollout_steps < 2) fail("rollout budgets too small");
  if (c.eval_episodes < 1 || c.eval_max_steps < 1) fail("evaluation budgets must be positive");
  if (c.adapt_steps < 0) fail("adapt.steps must be non-negative");
  if (!(c.alpha > 0.0 && c.alpha < 1.0)) fail("alpha must lie in (0, 1)");
  if (!(c.delta > 0.0 && c.delta <= 1.0)) fail("delta must lie in (0, 1]");
  if (c.model.epochs < 0 || c.model.batch_size < 1) fail("model budgets must be positive");
  if (c.policy.episodes < 0 || c.policy.max_steps < 1 || c.policy.batch_size < 1 || c.policy.train_every < 1)
    fail("policy budgets must be positive");
  if (c.output_dir.empty()) fail("output_dir must not be empty");
  std::set<std::string> names;
  for (const auto& s : c.settings) {
    if (s.name.empty()) fail("every setting needs a name");
    if (!names.insert(s.name).second) fail("duplicate setting name '" + s.name + "'");
    if (c.game == Game::synthetic_pomdp) {
      if (s.n_sources < 2) fail("setting " + s.name + ": at least two source domains");
      continue;
    }
    if (s.factor == envs::ChangeFactor::noise && c.game == Game::cartpole_mdp)
      fail("setting " + s.name + ": observation noise needs the noisy-observation game");
    const std::size_t arity = s.factor == envs::ChangeFactor::both ? 2 : 1;
    if (s.sources.size() < 2) fail("setting " + s.name + ": at least two source domains");
    for (const auto& v : s.sources) {
      if (v.size() != arity) fail("setting " + s.name + ": wrong number of values per source");
    }
    if (s.target.size() != arity) fail("setting " + s.name + ": wrong number of target values");
  }
}

nlohmann::json to_json(const ExperimentConfig& c) {
  nlohmann::json settings = nlohmann::json::array();
  for (const auto& s : c.settings) {
    settings.push_back({{"name", s.name},
                        {"factor", envs::to_string(s.factor)},
                        {"sources", s.sources},
                        {"target", s.target},
                        {"n_sources", s.n_sources}});
  }
  nlohmann::json model = modelest::to_json(c.model);
  nlohmann::json m = {{"mode", model.at("mode")},
                      {"latent_dim", c.model.latent_dim},
                      {"hidden", c.model.hidden},
                      {"components", c.model.components},
                      {"lag", c.model.lag},
                      {"epochs", c.model.epochs},
                      {"batch_size", c.model.batch_size},
                      {"lr", c.model.lr},
                      {"lr_decay", c.model.lr_decay},
                      {"free_bits", c.model.free_bits},
                      {"gate_init", c.model.gate_init},
                      {"gate_temperature", c.model.gate_temperature},
                      {"theta_init_scale", c.model.theta_init_scale},
                      {"threshold", c.model.threshold},
                      {"lambda", model.at("lambda")}};
  const auto& p = c.policy;
  nlohmann::json pol = {{"hidden", p.hidden},
                        {"gamma", p.gamma},
                        {"lr", p.lr},
                        {"lr_decay", p.lr_decay},
                        {"batch_size", p.batch_size},
                        {"capacity", p.capacity},
                        {"eps_start", p.eps_start},
                        {"eps_end", p.eps_end},
                        {"eps_fraction", p.eps_fraction},
                        {"episodes", p.episodes},
                        {"max_steps", p.max_steps},
                        {"learning_starts", p.learning_starts},
                        {"train_every", p.train_every},
                        {"target_rule", policy::to_string(p.target_rule)}};
  return {{"schema_version", c.schema_version},
          {"game", to_string(c.game)},
          {"budget", c.budget},
          {"settings", settings},
          {"n_target", c.n_target},
          {"seeds", c.seeds},
          {"alpha", c.alpha},
          {"delta", c.delta},
          {"rollouts", {{"episodes", c.rollout_episodes}, {"max_steps", c.rollout_steps}}},
          {"model", m},
          {"adapt", {{"steps", c.adapt_steps}, {"lr", c.adapt_lr}}},
          {"policy", pol},
          {"eval", {{"episodes", c.eval_episodes}, {"max_steps", c.eval_max_steps}}},
          {"synthetic",
           {{"d", c.synthetic.d},
            {"p", c.synthetic.p},
            {"density", c.synthetic.density},
            {"obs_dim", c.synthetic.obs_dim},
            {"structure_seed", c.synthetic.structure_seed}}},
          {"output_dir", c.output_dir}};
}

std::string config_hash(const ExperimentConfig& c) {
  nlohmann::json j = to_json(c);
  j.erase("output_dir");
  return io::sha256_hex(j.dump());
}

}  // namespace adarl::config
