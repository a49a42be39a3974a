#include "adarl/pipeline.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <exception>
#include <limits>
#include <memory>
#include <sstream>

#include "adarl/dbn.hpp"
#include "adarl/envs.hpp"
#include "adarl/error.hpp"
#include "adarl/io.hpp"
#include "adarl/modelest.hpp"
#include "adarl/pacbound.hpp"
#include "adarl/policy.hpp"
#include "adarl/rng.hpp"
#include "adarl/stats.hpp"

namespace adarl::pipeline {

using config::ExperimentConfig;
using config::Game;
using nlohmann::json;

std::string to_string(Stage s) {
  switch (s) {
    case Stage::generate: return "generate";
    case Stage::identify: return "identify";
    case Stage::estimate: return "estimate";
    case Stage::extract: return "extract";
    case Stage::train: return "train";
    case Stage::adapt: return "adapt";
    case Stage::evaluate: return "evaluate";
    case Stage::bound: return "bound";
    case Stage::report: return "report";
  }
  return "?";
}

Stage stage_from_string(const std::string& s) {
  for (Stage st : kAllStages) {
    if (to_string(st) == s) return st;
  }
  throw Error(ErrorKind::invalid_argument, "unknown stage '" + s + "'");
}

std::string seed_dir(const ExperimentConfig& cfg, std::uint64_t seed) {
  return cfg.output_dir + "/seed_" + std::to_string(seed);
}

namespace {

constexpr double kNoiseSigma = 0.1;  // observation noise of the noisy game when noise is not the changing factor
const char* const kVariants[] = {"adarl", "adarl_star"};

std::string safe_name(const std::string& s) {
  std::string out;
  for (char c : s) out += std::isalnum(static_cast<unsigned char>(c)) ? c : '_';
  return out;
}

/// Settings that share source domains share every source-side artifact.
struct Group {
  std::string name;
  std::vector<std::size_t> settings;
};

std::vector<Group> groups_of(const ExperimentConfig& cfg) {
  std::vector<Group> out;
  for (std::size_t i = 0; i < cfg.settings.size(); ++i) {
    const auto& s = cfg.settings[i];
    bool placed = false;
    for (auto& g : out) {
      const auto& head = cfg.settings[g.settings.front()];
      if (head.factor == s.factor && head.sources == s.sources && head.n_sources == s.n_sources) {
        g.settings.push_back(i);
        placed = true;
        break;
      }
    }
    if (!placed) out.push_back({"group" + std::to_string(out.size()), {i}});
  }
  return out;
}

int theta_arity(const ExperimentConfig& cfg, const config::Setting& s) {
  if (cfg.game == Game::synthetic_pomdp) return cfg.synthetic.p;
  return s.factor == envs::ChangeFactor::both ? 2 : 1;
}

/// Source domains followed by the setting's target domain.
struct Domains {
  std::vector<envs::EnvPtr> sources;
  envs::EnvPtr target;
};

Domains make_domains(const ExperimentConfig& cfg, const config::Setting& s, std::uint64_t seed) {
  Domains d;
  if (cfg.game == Game::synthetic_pomdp) {
    const auto& sc = cfg.synthetic;
    const dbn::MaskSet masks = dbn::random_dag(sc.d, sc.p, sc.density, sc.structure_seed);
    const auto spec =
        envs::sample_synthetic_pomdp(masks, s.n_sources + 1, derive_seed(sc.structure_seed, seed), sc.obs_dim);
    auto all = envs::make_synthetic_domains(spec, false);
    d.target = std::move(all.back());
    all.pop_back();
    d.sources = std::move(all);
    return d;
  }
  d.sources = envs::make_cartpole_domains(s.factor, s.sources);
  d.target = std::move(envs::make_cartpole_domains(s.factor, {s.target}).front());
  if (cfg.game == Game::cartpole_pomdp_noisy && s.factor != envs::ChangeFactor::noise) {
    for (auto& e : d.sources) e = envs::noisy_obs_wrapper(std::move(e), kNoiseSigma);
    d.target = envs::noisy_obs_wrapper(std::move(d.target), kNoiseSigma);
  }
  return d;
}

// --- artifacts ---------------------------------------------------------------------------

class Store {
 public:
  Store(const ExperimentConfig& cfg, std::uint64_t seed)
      : seed_(seed), hash_(config::config_hash(cfg)), root_(seed_dir(cfg, seed)) {}

  const std::string& hash() const { return hash_; }
  std::string path(const std::string& rel) const { return root_ + "/" + rel; }

  void put(const std::string& rel, const std::string& stage, const json& payload) const {
    io::write_json(path(rel), {{"config_hash", hash_}, {"stage", stage}, {"seed", seed_}, {"payload", payload}});
  }

  json get(const std::string& rel) const {
    const std::string p = path(rel);
    if (!io::exists(p)) throw Error(ErrorKind::io_error, "missing input " + p);
    const json j = io::read_json(p);
    check_hash(j.value("config_hash", std::string()), p);
    return j.at("payload");
  }

  void put_text(const std::string& rel, const std::string& text) const {
    io::write_file(path(rel), "# config_hash " + hash_ + "\n" + text);
  }

  void put_dataset(const std::string& rel, envs::TrajectoryDataset data) const {
    data.config = {{"config_hash", hash_}};
    envs::save_dataset(data, path(rel + ".jsonl"), path(rel + ".meta.json"));
  }

  envs::TrajectoryDataset get_dataset(const std::string& rel) const {
    const std::string p = path(rel + ".jsonl");
    if (!io::exists(p)) throw Error(ErrorKind::io_error, "missing input " + p);
    auto data = envs::load_dataset(p, path(rel + ".meta.json"));
    check_hash(data.config.value("config_hash", std::string()), p);
    return data;
  }

  void check_hash(const std::string& found, const std::string& where) const {
    if (found != hash_)
      throw Error(ErrorKind::hash_mismatch, where + " was written under config " + (found.empty() ? "?" : found) +
                                                ", current config is " + hash_);
  }

 private:
  std::uint64_t seed_;
  std::string hash_;
  std::string root_;
};

std::string group_rel(const Group& g, const std::string& file) { return g.name + "/" + file; }
std::string setting_rel(const config::Setting& s, const std::string& file) {
  return "setting_" + safe_name(s.name) + "/" + file;
}

/// Structured-text theta dump.
std::string theta_text(const modelest::ChangeFactors& c) { return modelest::serialize(c); }

struct Extracted {
  std::vector<int> smin;
  std::vector<dbn::ThetaId> thetamin;
};

Extracted load_extracted(const Store& st, const Group& g, const std::string& variant) {
  const json j = st.get(group_rel(g, "minrep_" + variant + ".json"));
  const auto rep = dbn::minrep_from_json(j.at("minrep"));
  return {rep.states, rep.thetas};
}

modelest::DomainModel load_model(const Store& st, const Group& g, const std::string& variant) {
  return modelest::DomainModel::from_json(st.get(group_rel(g, "model_" + variant + ".json")));
}

policy::QPolicy load_policy(const Store& st, const std::string& rel) { return policy::QPolicy::from_json(st.get(rel)); }

Eigen::VectorXd theta_min_row(const modelest::ChangeFactors& c, int row, const std::vector<dbn::ThetaId>& ids) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(ids.size()));
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const auto& id = ids[i];
    switch (id.kind) {
      case dbn::ThetaId::Kind::state: out(static_cast<Eigen::Index>(i)) = c.theta_s(row, id.index); break;
      case dbn::ThetaId::Kind::reward: out(static_cast<Eigen::Index>(i)) = c.theta_r(row); break;
      case dbn::ThetaId::Kind::observation: out(static_cast<Eigen::Index>(i)) = c.theta_o(row); break;
    }
  }
  return out;
}

std::vector<int> all_indices(int n) {
  std::vector<int> v(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) v[static_cast<std::size_t>(i)] = i;
  return v;
}

policy::PolicyConfig policy_config(const ExperimentConfig& cfg, std::uint64_t seed) {
  policy::PolicyConfig p = cfg.policy;
  p.seed = seed;
  return p;
}

json score_json(const policy::ScoreStats& s) { return {{"mean", s.mean}, {"std", s.std}, {"scores", s.scores}}; }

// --- stages ------------------------------------------------------------------------------

struct SeedRun {
  const ExperimentConfig& cfg;
  std::uint64_t seed;
  Store st;
  std::vector<Group> groups;

  SeedRun(const ExperimentConfig& c, std::uint64_t s) : cfg(c), seed(s), st(c, s), groups(groups_of(c)) {}

  const config::Setting& head(const Group& g) const { return cfg.settings[g.settings.front()]; }

  void generate() const {
    for (std::size_t gi = 0; gi < groups.size(); ++gi) {
      const Group& g = groups[gi];
      const Domains d = make_domains(cfg, head(g), seed);
      std::vector<int> ids = all_indices(static_cast<int>(d.sources.size()));
      const auto data = envs::collect_rollouts(d.sources, envs::random_policy(2), cfg.rollout_episodes,
                                               cfg.rollout_steps, derive_seed(seed, gi, 1), Exec::parallel, ids);
      st.put_dataset(group_rel(g, "sources"), data);
      for (std::size_t si : g.settings) {
        const auto& s = cfg.settings[si];
        const Domains ds = make_domains(cfg, s, seed);
        std::vector<envs::EnvPtr> target;
        target.push_back(ds.target->clone());
        const auto tdata = envs::collect_rollouts(target, envs::random_policy(2), cfg.n_target, cfg.rollout_steps,
                                                  derive_seed(seed, 1000 + si, 2), Exec::parallel,
                                                  {static_cast<int>(ds.sources.size())});
        st.put_dataset(setting_rel(s, "target"), tdata);
      }
    }
  }

  void identify() const {
    for (const Group& g : groups) {
      const auto data = st.get_dataset(group_rel(g, "sources"));
      modelest::ThetaBlocks blocks;
      blocks.state_dim = theta_arity(cfg, head(g));
      json payload;
      if (cfg.game == Game::cartpole_mdp) {
        stats::RecoveryOptions opts;
        opts.alpha = cfg.alpha;
        const auto rec = stats::recover_mdp_structure(data, opts);
        blocks.state = std::any_of(rec.state_change.begin(), rec.state_change.end(), [](bool b) { return b; });
        blocks.observation = false;
        blocks.reward = rec.reward_change;
        payload["structure"] = stats::to_json(rec);
        st.put_text(group_rel(g, "masks_identified.txt"), dbn::serialize(rec.masks));
      } else {
        const auto loc = stats::localize_changes_pomdp(data, cfg.alpha);
        blocks = modelest::theta_blocks_from(loc, blocks.state_dim);
        payload["localization"] = stats::to_json(loc);
      }
      payload["blocks"] = {{"state", blocks.state},
                           {"observation", blocks.observation},
                           {"reward", blocks.reward},
                           {"state_dim", blocks.state_dim}};
      st.put(group_rel(g, "structure.json"), "identify", payload);
    }
  }

  modelest::ThetaBlocks blocks_of(const Group& g) const {
    const json b = st.get(group_rel(g, "structure.json")).at("blocks");
    modelest::ThetaBlocks t;
    t.state = b.at("state").get<bool>();
    t.observation = b.at("observation").get<bool>();
    t.reward = b.at("reward").get<bool>();
    t.state_dim = b.at("state_dim").get<int>();
    return t;
  }

  void estimate() const {
    for (std::size_t gi = 0; gi < groups.size(); ++gi) {
      const Group& g = groups[gi];
      const auto data = st.get_dataset(group_rel(g, "sources"));
      for (int v = 0; v < 2; ++v) {
        modelest::ModelConfig mc = cfg.model;
        mc.theta = blocks_of(g);
        mc.seed = derive_seed(seed, gi, 3 + static_cast<std::uint64_t>(v));
        if (v == 1) {
          const int d = mc.mode == modelest::Mode::mdp ? static_cast<int>(data.episodes.front().front().obs.size())
                                                        : mc.latent_dim;
          mc.fixed_masks = dbn::MaskSet::ones(d, mc.theta.state_dim);
        }
        const auto fitted = modelest::fit(data, mc);
        st.put(group_rel(g, std::string("model_") + kVariants[v] + ".json"), "estimate", fitted.model.to_json());
        io::write_file(st.path(group_rel(g, std::string("curve_model_") + kVariants[v] + ".csv")),
                       modelest::curve_csv(fitted.curve));
      }
    }
  }

  void extract() const {
    for (const Group& g : groups) {
      for (const char* v : kVariants) {
        const auto model = load_model(st, g, v);
        const dbn::MaskSet masks = modelest::binarize_masks(model, cfg.model.threshold);
        dbn::MinimalRepresentation rep;
        rep.states = dbn::compact_state_indices(masks);
        bool fallback = false;
        if (rep.states.empty()) {
          rep.states = all_indices(model.state_dim());
          fallback = true;
        }
        rep.thetas = dbn::compact_theta_indices(masks, rep.states);
        st.put(group_rel(g, std::string("minrep_") + v + ".json"), "extract",
               {{"masks", dbn::to_json(masks)}, {"minrep", dbn::to_json(rep)}, {"all_states_fallback", fallback}});
        st.put_text(group_rel(g, std::string("masks_") + v + ".txt"), dbn::serialize(masks));
        st.put_text(group_rel(g, std::string("theta_") + v + ".txt"), theta_text(model.change_factors()));
      }
    }
  }

  std::vector<policy::TrainDomain> train_domains(const Domains& d, const modelest::DomainModel& model,
                                                 const Extracted& ex) const {
    const auto cf = model.change_factors();
    std::vector<policy::TrainDomain> out;
    for (std::size_t k = 0; k < d.sources.size(); ++k) {
      policy::TrainDomain td;
      td.env = d.sources[k].get();
      td.theta_min = theta_min_row(cf, static_cast<int>(k), ex.thetamin);
      td.theta_model = model.theta_all_row(cf, static_cast<int>(k));
      td.domain_id = static_cast<int>(k);
      out.push_back(td);
    }
    return out;
  }

  policy::StateMap plain_state(const modelest::DomainModel& model) const {
    return policy::observed_state(all_indices(model.obs_dim()), model.obs_dim(), &model);
  }

  void save_policy(const std::string& rel, const policy::TrainResult& r) const {
    st.put(rel, "train", r.policy.to_json());
    const auto dot = rel.rfind('.');
    io::write_file(st.path(rel.substr(0, dot) + "_curve.csv"), policy::curve_csv(r.curve));
  }

  void train() const {
    for (std::size_t gi = 0; gi < groups.size(); ++gi) {
      const Group& g = groups[gi];
      const Domains d = make_domains(cfg, head(g), seed);
      const auto model = load_model(st, g, "adarl");
      for (int v = 0; v < 2; ++v) {
        const auto m = v == 0 ? model : load_model(st, g, kVariants[v]);
        const Extracted ex = load_extracted(st, g, kVariants[v]);
        const auto r = policy::train_multi_domain(train_domains(d, m, ex), policy::model_state(m, ex.smin),
                                                  policy_config(cfg, derive_seed(seed, gi, 10 + static_cast<std::uint64_t>(v))));
        save_policy(group_rel(g, std::string("policy_") + kVariants[v] + ".json"), r);
      }
      const Extracted ex = load_extracted(st, g, "adarl");
      const auto non_t = policy::baseline_non_transfer(train_domains(d, model, ex), plain_state(model),
                                                       policy_config(cfg, derive_seed(seed, gi, 12)));
      save_policy(group_rel(g, "policy_non_t.json"), non_t);

      for (std::size_t si : g.settings) {
        const auto& s = cfg.settings[si];
        const Domains ds = make_domains(cfg, s, seed);
        policy::PolicyConfig pc = policy_config(cfg, derive_seed(seed, 1000 + si, 13));
        pc.episodes *= static_cast<int>(ds.sources.size());
        const auto oracle = policy::baseline_oracle(*ds.target, plain_state(model), pc);
        save_policy(setting_rel(s, "policy_oracle.json"), oracle);
      }
    }
  }

  void adapt() const {
    for (const Group& g : groups) {
      for (const char* v : kVariants) {
        const auto model = load_model(st, g, v);
        for (std::size_t si : g.settings) {
          const auto& s = cfg.settings[si];
          const auto tdata = st.get_dataset(setting_rel(s, "target"));
          const auto r =
              modelest::adapt_theta_target(model, tdata, cfg.adapt_steps, derive_seed(seed, 1000 + si, 14), cfg.adapt_lr);
          st.put(setting_rel(s, std::string("theta_target_") + v + ".json"), "adapt",
                 {{"theta", modelest::to_json(r.theta)}, {"loss", r.loss}});
          st.put_text(setting_rel(s, std::string("theta_target_") + v + ".txt"), theta_text(r.theta));
        }
      }
    }
  }

  /// Policy, factor inputs and state map of one method, ready for deployment.
  struct Deployable {
    modelest::DomainModel model;
    policy::QPolicy policy;
    Eigen::VectorXd theta_min;
    Eigen::RowVectorXd theta_model;
    policy::StateMap state;
  };

  std::unique_ptr<Deployable> deployable(const Group& g, const config::Setting& s, const std::string& method,
                                         const modelest::ChangeFactors* theta = nullptr, int row = 0) const {
    auto out = std::make_unique<Deployable>();
    if (method == "AdaRL" || method == "AdaRL_star") {
      const std::string v = method == "AdaRL" ? "adarl" : "adarl_star";
      out->model = load_model(st, g, v);
      const Extracted ex = load_extracted(st, g, v);
      out->policy = load_policy(st, group_rel(g, "policy_" + v + ".json"));
      modelest::ChangeFactors target;
      if (theta == nullptr) {
        target = modelest::change_factors_from_json(st.get(setting_rel(s, "theta_target_" + v + ".json")).at("theta"));
        theta = &target;
        row = 0;
      }
      out->theta_min = theta_min_row(*theta, row, ex.thetamin);
      out->theta_model = out->model.theta_all_row(*theta, row);
      out->state = policy::model_state(out->model, ex.smin);
      return out;
    }
    out->model = load_model(st, g, "adarl");
    out->policy = load_policy(st, method == "Non_t" ? group_rel(g, "policy_non_t.json")
                                                    : setting_rel(s, "policy_oracle.json"));
    out->state = plain_state(out->model);
    return out;
  }

  std::uint64_t eval_seed(std::size_t si) const { return derive_seed(seed, 1000 + si, 15); }

  void evaluate() const {
    for (const Group& g : groups) {
      for (std::size_t si : g.settings) {
        const auto& s = cfg.settings[si];
        const Domains ds = make_domains(cfg, s, seed);
        json scores = json::object();
        for (const auto& method : kMethods) {
          const auto dep = deployable(g, s, method);
          const auto r = policy::deploy_target(dep->policy, dep->theta_min, dep->theta_model, *ds.target, dep->state,
                                               cfg.eval_episodes, cfg.eval_max_steps, eval_seed(si));
          scores[method] = score_json(r);
        }
        st.put(setting_rel(s, "scores.json"), "evaluate", scores);
      }
    }
  }

  void bound() const {
    std::vector<pacbound::TrialRow> rows;
    json per_setting = json::object();
    for (const Group& g : groups) {
      for (std::size_t si : g.settings) {
        const auto& s = cfg.settings[si];
        const Domains ds = make_domains(cfg, s, seed);
        const double cap = cfg.eval_max_steps;
        auto loss = [cap](double score) { return std::clamp(1.0 - score / cap, 0.0, 1.0); };

        const auto model = load_model(st, g, "adarl");
        const auto cf = model.change_factors();
        pacbound::BoundInputs in;
        in.n = static_cast<int>(ds.sources.size());
        in.delta = cfg.delta;
        for (std::size_t k = 0; k < ds.sources.size(); ++k) {
          const auto dep = deployable(g, s, "AdaRL", &cf, static_cast<int>(k));
          const auto r = policy::deploy_target(dep->policy, dep->theta_min, dep->theta_model, *ds.sources[k],
                                               dep->state, cfg.eval_episodes, cfg.eval_max_steps,
                                               derive_seed(seed, 1000 + si, 16 + k));
          double e = 0.0;
          for (double x : r.scores) e += loss(x) / static_cast<double>(r.scores.size());
          in.er_hat.push_back(e);
          in.m.push_back(cfg.eval_episodes);
        }

        // Q: Gaussian fitted to the sources' theta^min; P: standard normal.
        const Extracted ex = load_extracted(st, g, "adarl");
        double kl = 0.0;
        if (!ex.thetamin.empty()) {
          const auto dim = static_cast<Eigen::Index>(ex.thetamin.size());
          Eigen::MatrixXd values(in.n, dim);
          for (int k = 0; k < in.n; ++k) values.row(k) = theta_min_row(cf, k, ex.thetamin).transpose();
          Eigen::VectorXd mu = values.colwise().mean().transpose();
          Eigen::VectorXd sd(dim);
          for (Eigen::Index c = 0; c < dim; ++c) {
            const double var = (values.col(c).array() - mu(c)).square().sum() / (in.n - 1);
            sd(c) = std::max(0.05, std::sqrt(var));
          }
          kl = pacbound::gaussian_kl_diag(mu, sd, Eigen::VectorXd::Zero(dim), Eigen::VectorXd::Ones(dim));
        }
        in.kl = {kl};

        const json sc = st.get(setting_rel(s, "scores.json")).at("AdaRL").at("scores");
        double realized = 0.0;
        for (const auto& x : sc) realized += loss(x.get<double>()) / static_cast<double>(sc.size());

        pacbound::TrialRow row;
        row.n = in.n;
        row.m = cfg.eval_episodes;
        row.kl = kl;
        row.delta = cfg.delta;
        row.er_hat_mean = stats::mean(in.er_hat);
        row.bound = pacbound::compute_bound(in);
        row.realized_error = realized;
        rows.push_back(row);
        per_setting[s.name] = {{"er_hat", in.er_hat}, {"kl", kl}, {"bound", row.bound}, {"realized_error", realized}};
      }
    }
    st.put("bound.json", "bound", per_setting);
    io::write_file(st.path("bound.csv"), pacbound::coverage_csv(rows));
  }

  void run(Stage stage) const {
    switch (stage) {
      case Stage::generate: generate(); break;
      case Stage::identify: identify(); break;
      case Stage::estimate: estimate(); break;
      case Stage::extract: extract(); break;
      case Stage::train: train(); break;
      case Stage::adapt: adapt(); break;
      case Stage::evaluate: evaluate(); break;
      case Stage::bound: bound(); break;
      case Stage::report: break;
    }
  }
};

std::string marker_rel(Stage s) { return "stage_" + to_string(s) + ".json"; }

/// True when a completed marker for this stage and config exists.
bool completed(const Store& st, Stage s) {
  const std::string p = st.path(marker_rel(s));
  if (!io::exists(p)) return false;
  st.check_hash(io::read_json(p).value("config_hash", std::string()), p);
  return true;
}

double nan() { return std::numeric_limits<double>::quiet_NaN(); }

double paired_p(const std::vector<double>& a, const std::vector<double>& b) {
  try {
    return stats::wilcoxon_signed_rank(a, b).p_value;
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::all_ties) return 1.0;
    throw;
  }
}

}  // namespace

void run_stage(const ExperimentConfig& cfg, Stage stage, std::uint64_t seed, const RunOptions& opts) {
  if (stage == Stage::report) {
    build_report(cfg);
    return;
  }
  const SeedRun run(cfg, seed);
  if (opts.resume && completed(run.st, stage)) return;
  try {
    run.run(stage);
    run.st.put(marker_rel(stage), to_string(stage), json::object());
  } catch (const std::exception& e) {
    json diag = {{"stage", to_string(stage)}, {"seed", seed}, {"config_hash", run.st.hash()}, {"message", e.what()}};
    if (const auto* err = dynamic_cast<const Error*>(&e)) diag["kind"] = std::string(adarl::to_string(err->kind()));
    try {
      io::write_json(run.st.path("failure.json"), diag);
    } catch (...) {
    }
    throw Error(ErrorKind::stage_failure,
                "stage " + to_string(stage) + " failed for seed " + std::to_string(seed) + ": " + e.what());
  }
}

ReportBundle run_pipeline(const ExperimentConfig& cfg, const RunOptions& opts) {
  config::validate(cfg);
  const auto n = static_cast<long>(cfg.seeds.size());
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(n));
#pragma omp parallel for schedule(dynamic, 1) if (opts.exec == Exec::parallel)
  for (long i = 0; i < n; ++i) {
    try {
      for (Stage s : kAllStages) {
        if (s != Stage::report) run_stage(cfg, s, cfg.seeds[static_cast<std::size_t>(i)], opts);
      }
    } catch (...) {
      errors[static_cast<std::size_t>(i)] = std::current_exception();
    }
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return build_report(cfg);
}

std::string report_csv(const std::vector<ReportRow>& rows) {
  std::string out = io::csv_line({"method", "setting", "mean", "std", "wilcoxon_p_vs_AdaRL"});
  for (const auto& r : rows) {
    out += io::csv_line({r.method, r.setting, io::format_double(r.mean), io::format_double(r.std),
                         std::isnan(r.p_vs_adarl) ? "NA" : io::format_double(r.p_vs_adarl)});
  }
  return out;
}

ReportBundle build_report(const ExperimentConfig& cfg) {
  ReportBundle b;
  b.seeds = cfg.seeds;
  b.config_hash = config::config_hash(cfg);
  std::string bound_rows;
  for (std::uint64_t seed : cfg.seeds) {
    const Store st(cfg, seed);
    for (const auto& s : cfg.settings) {
      const json sc = st.get(setting_rel(s, "scores.json"));
      for (const auto& m : kMethods) b.scores[s.name][m].push_back(sc.at(m).at("mean").get<double>());
    }
    const std::string bp = st.path("bound.csv");
    if (io::exists(bp)) {
      std::istringstream lines(io::read_file(bp));
      std::string line;
      std::getline(lines, line);
      while (std::getline(lines, line)) bound_rows += std::to_string(seed) + "," + line + "\n";
    }
  }
  const bool enough = cfg.seeds.size() >= 6;
  std::map<std::string, std::vector<SignificanceRow>> tables;
  for (const auto& s : cfg.settings) {
    const auto& by = b.scores.at(s.name);
    for (const auto& m : kMethods) {
      ReportRow r;
      r.method = m;
      r.setting = s.name;
      r.mean = stats::mean(by.at(m));
      r.std = stats::stddev(by.at(m));
      r.n = static_cast<int>(by.at(m).size());
      r.p_vs_adarl = (m == "AdaRL" || !enough) ? nan() : paired_p(by.at("AdaRL"), by.at(m));
      b.rows.push_back(r);
    }
    if (enough) tables[s.name] = report_significance(by);
  }
  b.csv = report_csv(b.rows);
  io::write_file(cfg.output_dir + "/report.csv", b.csv);
  io::write_json(cfg.output_dir + "/report.meta.json", {{"config_hash", b.config_hash}, {"seeds", cfg.seeds}});
  io::write_file(cfg.output_dir + "/bound.csv",
                 io::csv_line({"seed", "n", "m", "kl", "delta", "er_hat_mean", "bound", "realized_error"}) + bound_rows);
  if (enough) io::write_file(cfg.output_dir + "/significance.md", significance_markdown(tables));
  return b;
}

std::vector<SignificanceRow> report_significance(const std::map<std::string, std::vector<double>>& scores_by_method,
                                                 double level) {
  const auto base = scores_by_method.find("AdaRL");
  if (base == scores_by_method.end()) throw Error(ErrorKind::invalid_argument, "AdaRL scores are required");
  for (const auto& [m, v] : scores_by_method) {
    if (v.size() < 6) throw Error(ErrorKind::insufficient_seeds, m + " has " + std::to_string(v.size()) + " seeds, need 6");
    if (v.size() != base->second.size()) throw Error(ErrorKind::length_mismatch, m + " is not paired with AdaRL");
  }
  std::vector<SignificanceRow> out;
  std::vector<std::string> order;
  for (const auto& m : kMethods) {
    if (scores_by_method.count(m)) order.push_back(m);
  }
  for (const auto& [m, v] : scores_by_method) {
    if (std::find(order.begin(), order.end(), m) == order.end()) order.push_back(m);
  }
  double best = -std::numeric_limits<double>::infinity();
  for (const auto& m : order) {
    const auto& v = scores_by_method.at(m);
    SignificanceRow r;
    r.method = m;
    r.mean = stats::mean(v);
    r.std = stats::stddev(v);
    r.p_value = m == "AdaRL" ? nan() : paired_p(base->second, v);
    r.marker = m != "AdaRL" && r.p_value < level && stats::mean(base->second) > r.mean;
    best = std::max(best, r.mean);
    out.push_back(r);
  }
  for (auto& r : out) r.best = r.mean == best;
  return out;
}

std::string significance_markdown(const std::map<std::string, std::vector<SignificanceRow>>& tables) {
  auto p_text = [](double p) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3g", p);
    return std::string(buf);
  };
  std::string out = "| setting | method | mean ± std | p vs AdaRL |\n|---|---|---|---|\n";
  for (const auto& [setting, rows] : tables) {
    for (const auto& r : rows) {
      std::ostringstream cell;
      cell.precision(1);
      cell << std::fixed << r.mean << " ± " << r.std;
      const std::string mean = r.best ? "**" + cell.str() + "**" : cell.str();
      out += "| " + setting + " | " + r.method + (r.marker ? " •" : "") + " | " + mean + " | " +
             (std::isnan(r.p_value) ? "NA" : p_text(r.p_value)) + " |\n";
    }
  }
  return out;
}

}  // namespace adarl::pipeline
