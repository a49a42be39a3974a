// Acceptance suite: one PASS/FAIL line per criterion. Pass criterion numbers
// as arguments to run a subset.
#include <algorithm>
#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <limits>
#include <set>
#include <sstream>
#include <string>

#include "adarl/config.hpp"
#include "adarl/dbn.hpp"
#include "adarl/io.hpp"
#include "adarl/modelest.hpp"
#include "adarl/pacbound.hpp"
#include "adarl/pipeline.hpp"
#include "adarl/policy.hpp"
#include "adarl/stats.hpp"

using namespace adarl;

namespace {

// Tolerances and budgets.
constexpr int kMinrepMasks = 200;
constexpr double kMinrepSeconds = 10.0;
constexpr double kStructureF1 = 0.9;
constexpr int kStructureFlagSeeds = 18;
constexpr double kStructureSeconds = 300.0;
constexpr int kLocalizationSeeds = 18;
constexpr double kTransferP = 0.05;
constexpr int kStarSettings = 4;
constexpr double kTransferSeconds = 3600.0;
constexpr double kPearson = 0.9;
constexpr double kFewShotTolerance = 0.15;
constexpr double kGradTolerance = 1e-4;
constexpr int kGradTrials = 100;
constexpr double kWorkedExampleTolerance = 1e-12;
constexpr int kMonotonicityInputs = 1000;
constexpr int kCoverageTrials = 200;
constexpr double kCoverageQuantile = 0.01;
constexpr double kMogTolerance = 1e-3;
constexpr int kMogHeads = 50;

using Clock = std::chrono::steady_clock;
double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, x);
  return buf;
}

// --- 1 ---------------------------------------------------------------------------------

Verdict minrep() {
  const auto t0 = Clock::now();
  int checked = 0, skipped = 0, mismatches = 0;
  for (std::uint64_t seed = 0; checked < kMinrepMasks; ++seed) {
    Rng rng(derive_seed(seed, 1));
    const int d = rng.uniform_int(1, 6);
    const int p = rng.uniform_int(0, 3);
    const dbn::MaskSet m = dbn::random_dag(d, p, rng.uniform(0.1, 0.7), derive_seed(seed, 2));
    if (!dbn::action_reaches_reward(m, d + 2)) {
      ++skipped;
      continue;
    }
    const auto smin = dbn::compact_state_indices(m);
    const auto oracle = dbn::lemma1_oracle(m, d + 2);
    if (oracle.states != smin || oracle.thetas != dbn::compact_theta_indices(m, smin)) ++mismatches;
    ++checked;
  }
  const double secs = seconds_since(t0);
  return {mismatches == 0 && secs < kMinrepSeconds,
          std::to_string(checked) + " masks, " + std::to_string(mismatches) + " mismatches, " +
              std::to_string(skipped) + " skipped (action cannot reach reward), " + fmt("%.2f s", secs)};
}

// --- 2 ---------------------------------------------------------------------------------

Verdict structure() {
  const auto t0 = Clock::now();
  double f1 = 0.0;
  int flags_ok = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto m = dbn::random_dag(5, 1, 0.4, 1000 + seed);
    const auto spec = envs::sample_synthetic_pomdp(m, 5, 2000 + seed);
    const auto data = envs::collect_rollouts(envs::make_synthetic_domains(spec, true), envs::random_policy(2), 1,
                                             2001, 3000 + seed);
    stats::RecoveryOptions opts;
    opts.alpha = 0.01;
    const auto r = stats::recover_mdp_structure(data, opts);
    f1 += stats::edge_f1(m, r.masks) / 20.0;
    bool ok = r.reward_change == (m.ctr == 1);
    for (int i = 0; i < 5; ++i) ok = ok && r.state_change[static_cast<std::size_t>(i)] == (m.cts[i][0] == 1);
    flags_ok += ok ? 1 : 0;
  }
  const double secs = seconds_since(t0);
  return {f1 >= kStructureF1 && flags_ok >= kStructureFlagSeeds && secs < kStructureSeconds,
          "mean edge F1 " + fmt("%.3f", f1) + ", change flags correct in " + std::to_string(flags_ok) + "/20 seeds, " +
              fmt("%.1f s", secs)};
}

// --- 3 ---------------------------------------------------------------------------------

dbn::MaskSet localization_family(int c) {
  auto m = dbn::MaskSet::zeros(2, 1);
  m.css[0][0] = 1;
  m.css[1][1] = 1;
  m.car = 1;
  switch (c) {
    case 1: m.cso = {1, 0}; m.csr = {0, 1}; m.cts[1][0] = 1; break;  // theta^s on a state hidden from o
    case 2: m.cso = {1, 0}; m.csr = {1, 0}; m.ctr = 1; break;        // reward only
    case 3: m.cso = {1, 1}; m.csr = {1, 0}; m.cts[1][0] = 1; break;  // theta^s, state seen through o
    case 4: m.cso = {1, 1}; m.csr = {1, 0}; m.cto = 1; break;        // observation only
  }
  return m;
}

Verdict localization() {
  bool pass = true;
  std::string detail;
  for (int c = 1; c <= 4; ++c) {
    int hits = 0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      const auto spec = envs::sample_synthetic_pomdp(localization_family(c), 5, 100 * c + seed, 3);
      const auto data = envs::collect_rollouts(envs::make_synthetic_domains(spec, false), envs::random_policy(2), 1,
                                               2000, 7000 + 100 * c + seed);
      const auto l = stats::localize_changes_pomdp(data, 0.01);
      hits += std::find(l.cases.begin(), l.cases.end(), static_cast<stats::ChangeCase>(c - 1)) != l.cases.end();
    }
    pass = pass && hits >= kLocalizationSeeds;
    detail += (c > 1 ? ", " : "") + std::string("C") + std::to_string(c) + " " + std::to_string(hits) + "/20";
  }
  return {pass, detail};
}

// --- 4 ---------------------------------------------------------------------------------

Verdict transfer(const std::string& source_dir, const std::string& work_dir) {
  auto cfg = config::load(source_dir + "/configs/criterion4.json");
  cfg.output_dir = work_dir + "/criterion4";
  std::filesystem::remove_all(cfg.output_dir);
  const auto t0 = Clock::now();
  const auto report = pipeline::run_pipeline(cfg);
  const double secs = seconds_since(t0);

  int non_t_ok = 0, star_ok = 0, oracle_ok = 0;
  std::ostringstream detail;
  for (const auto& s : cfg.settings) {
    const auto& sc = report.scores.at(s.name);
    const double ada = stats::mean(sc.at("AdaRL"));
    const double non_t = stats::mean(sc.at("Non_t"));
    const double star = stats::mean(sc.at("AdaRL_star"));
    const double oracle = stats::mean(sc.at("Oracle"));
    double p = 1.0;
    for (const auto& r : report.rows) {
      if (r.setting == s.name && r.method == "Non_t") p = r.p_vs_adarl;
    }
    non_t_ok += (non_t < ada && p < kTransferP) ? 1 : 0;
    star_ok += ada >= star ? 1 : 0;
    oracle_ok += oracle >= ada ? 1 : 0;
    detail << s.name << " AdaRL " << fmt("%.1f", ada) << " star " << fmt("%.1f", star) << " Non_t "
           << fmt("%.1f", non_t) << " (p " << fmt("%.3g", p) << ") Oracle " << fmt("%.1f", oracle) << "; ";
  }
  const int n = static_cast<int>(cfg.settings.size());
  detail << "Non_t<AdaRL significant in " << non_t_ok << "/" << n << ", AdaRL>=star in " << star_ok << "/" << n
         << ", Oracle>=AdaRL in " << oracle_ok << "/" << n << ", " << fmt("%.0f s", secs);
  return {non_t_ok == n && star_ok >= kStarSettings && oracle_ok == n && secs < kTransferSeconds, detail.str()};
}

// --- 5 and 6 ---------------------------------------------------------------------------

struct GravityModel {
  std::vector<double> gravity{5, 10, 20, 30, 40};
  double target = 15;
  std::vector<envs::EnvPtr> sources = envs::make_cartpole_domains(envs::ChangeFactor::gravity, {{5}, {10}, {20}, {30}, {40}});
  envs::EnvPtr target_env = std::move(envs::make_cartpole_domains(envs::ChangeFactor::gravity, {{15}}).front());
  config::ExperimentConfig cfg;
  modelest::DomainModel model;

  explicit GravityModel(const std::string& source_dir) {
    cfg = config::load(source_dir + "/configs/criterion4.json");
    const auto data = envs::collect_rollouts(sources, envs::random_policy(2), cfg.rollout_episodes, cfg.rollout_steps, 1);
    modelest::ModelConfig mc = cfg.model;
    mc.seed = 1;
    model = modelest::fit(data, mc).model;
  }

  modelest::AdaptResult adapt(int n_target) const {
    std::vector<envs::EnvPtr> t;
    t.push_back(target_env->clone());
    const auto data = envs::collect_rollouts(t, envs::random_policy(2), n_target, cfg.rollout_steps, 2,
                                             Exec::parallel, {5});
    return modelest::adapt_theta_target(model, data, cfg.adapt_steps, 3, cfg.adapt_lr);
  }
};

Verdict interpretability(const GravityModel& g) {
  const auto cf = g.model.change_factors();
  std::vector<double> est, truth = g.gravity;
  for (int k = 0; k < 5; ++k) est.push_back(cf.theta_s(k, 0));
  est.push_back(g.adapt(50).theta.theta_s(0, 0));
  truth.push_back(g.target);
  const double rho = std::abs(stats::spearman(est, truth));
  const double r = std::abs(stats::pearson(est, truth));
  std::ostringstream d;
  d << "|Spearman| " << fmt("%.3f", rho) << ", |Pearson| " << fmt("%.3f", r) << ", theta";
  for (double e : est) d << " " << fmt("%.3f", e);
  return {rho == 1.0 && r >= kPearson, d.str()};
}

Verdict few_shot(const GravityModel& g) {
  const dbn::MaskSet masks = modelest::binarize_masks(g.model, g.cfg.model.threshold);
  auto smin = dbn::compact_state_indices(masks);
  if (smin.empty()) smin = {0, 1, 2, 3};
  const auto thetas = dbn::compact_theta_indices(masks, smin);
  const auto cf = g.model.change_factors();
  auto theta_min = [&](const modelest::ChangeFactors& c, int row) {
    Eigen::VectorXd v(static_cast<Eigen::Index>(thetas.size()));
    for (std::size_t i = 0; i < thetas.size(); ++i) {
      const auto& id = thetas[i];
      const auto e = static_cast<Eigen::Index>(i);
      switch (id.kind) {
        case dbn::ThetaId::Kind::state: v(e) = c.theta_s(row, id.index); break;
        case dbn::ThetaId::Kind::reward: v(e) = c.theta_r(row); break;
        case dbn::ThetaId::Kind::observation: v(e) = c.theta_o(row); break;
      }
    }
    return v;
  };
  std::vector<policy::TrainDomain> doms;
  for (int k = 0; k < 5; ++k)
    doms.push_back({g.sources[static_cast<std::size_t>(k)].get(), theta_min(cf, k), g.model.theta_all_row(cf, k), k});
  const auto state = policy::model_state(g.model, smin);
  policy::PolicyConfig pc = g.cfg.policy;
  pc.seed = 4;
  const auto trained = policy::train_multi_domain(doms, state, pc);

  auto score = [&](int n_target) {
    const auto a = g.adapt(n_target);
    return policy::deploy_target(trained.policy, theta_min(a.theta, 0), g.model.theta_all_row(a.theta, 0), *g.target_env,
                                 state, g.cfg.eval_episodes, g.cfg.eval_max_steps, 5)
        .mean;
  };
  const double small = score(20);
  const double large = score(10000);
  const double gap = std::abs(small - large) / std::max(large, 1e-12);
  return {gap <= kFewShotTolerance, "score N_target=20 " + fmt("%.1f", small) + ", N_target=10000 " +
                                        fmt("%.1f", large) + ", relative gap " + fmt("%.3f", gap)};
}

// --- 7 ---------------------------------------------------------------------------------

Verdict gradients() {
  using modelest::Mode;
  std::map<std::string, double> worst;
  Rng rng(71);
  for (int trial = 0; trial < kGradTrials; ++trial) {
    for (Mode mode : {Mode::mdp, Mode::pomdp}) {
      modelest::ModelConfig c;
      c.mode = mode;
      c.hidden = {rng.uniform_int(2, 5)};
      c.components = rng.uniform_int(1, 3);
      c.latent_dim = rng.uniform_int(1, 3);
      c.lag = rng.uniform_int(1, 3);
      c.theta_init_scale = 0.5;
      c.gate_init = rng.uniform(-1.0, 1.0);
      c.seed = derive_seed(71, trial, static_cast<std::uint64_t>(mode));
      if (mode == Mode::pomdp) c.theta = {true, true, true, 1};
      const auto doms = mode == Mode::mdp
                            ? envs::make_cartpole_domains(envs::ChangeFactor::gravity, {{5}, {20}})
                            : envs::make_cartpole_domains(envs::ChangeFactor::noise, {{0.25}, {1.25}});
      const auto data = envs::collect_rollouts(doms, envs::random_policy(2), 2, 8, c.seed);
      modelest::DomainModel m(c, 4, data.domain_ids());
      m.set_normalizer(data);
      const auto prep = m.prepare(data);
      std::vector<Eigen::Index> rows;
      const int n = rng.uniform_int(1, 5);
      for (int i = 0; i < n; ++i) rows.push_back(rng.uniform_int(0, static_cast<int>(prep.size()) - 1));
      const auto b = prep.take(rows);
      std::vector<diff::Var> params = m.shared_params();
      for (const auto& v : m.gate_params()) params.push_back(v);
      for (const auto& v : m.theta_params()) params.push_back(v);
      const std::string tag = "/" + modelest::to_string(mode);
      auto check = [&](const std::string& name, const std::function<diff::Var(Rng&)>& loss) {
        const double e = diff::grad_check(
                             [&] {
                               Rng r(derive_seed(c.seed, 9));
                               return loss(r);
                             },
                             params)
                             .max_rel_error;
        worst[name + tag] = std::max(worst[name + tag], e);
      };
      check("rec", [&](Rng& r) { return modelest::loss_rec(m, b, r); });
      check("pred", [&](Rng& r) { return modelest::loss_pred(m, b, r); });
      check("kl", [&](Rng& r) { return modelest::loss_kl(m, b, r); });
      check("reg", [&](Rng&) { return modelest::loss_reg(m); });
      check("total", [&](Rng& r) { return m.losses(b, m.theta_rows(b.domain), r).total; });
    }
    // TD loss of the Q-network.
    const int s_dim = rng.uniform_int(1, 4), t_dim = rng.uniform_int(0, 2);
    Rng init(derive_seed(72, trial));
    const policy::QPolicy q(s_dim, t_dim, 2, {rng.uniform_int(2, 6), rng.uniform_int(2, 6)},
                            Eigen::VectorXd::Zero(s_dim + t_dim), Eigen::VectorXd::Ones(s_dim + t_dim), init);
    std::vector<policy::Experience> xs(static_cast<std::size_t>(rng.uniform_int(1, 6)));
    for (auto& e : xs) {
      e.s = Eigen::VectorXd::NullaryExpr(s_dim, [&] { return rng.normal(); });
      e.s_next = Eigen::VectorXd::NullaryExpr(s_dim, [&] { return rng.normal(); });
      e.theta = Eigen::VectorXd::NullaryExpr(t_dim, [&] { return rng.normal(); });
      e.action = rng.uniform_int(0, 1);
      e.reward = rng.normal();
      e.terminal = rng.bernoulli(0.2);
    }
    std::vector<const policy::Experience*> batch;
    for (const auto& e : xs) batch.push_back(&e);
    const Eigen::VectorXd y = policy::td_targets(q, batch, 0.99, policy::TargetRule::double_dqn);
    worst["td"] = std::max(worst["td"],
                           diff::grad_check([&] { return policy::td_loss(q, batch, y); }, q.online().params()).max_rel_error);
  }
  double max_err = 0.0;
  std::string detail;
  for (const auto& [name, e] : worst) {
    max_err = std::max(max_err, e);
    detail += name + " " + fmt("%.2e", e) + ", ";
  }
  return {max_err <= kGradTolerance, detail + std::to_string(kGradTrials) + " trials each"};
}

// --- 8 ---------------------------------------------------------------------------------

/// Smallest k with P(Binomial(n, q) < k) > quantile: the lowest count a
/// bound holding with probability q would reach at that quantile.
int binomial_threshold(int n, double q, double quantile) {
  double cdf = 0.0;
  for (int k = 0; k <= n; ++k) {
    const double log_pmf = std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0) + k * std::log(q) +
                           (n - k) * std::log1p(-q);
    cdf += std::exp(log_pmf);
    if (cdf > quantile) return k;
  }
  return n;
}

Verdict pac_bound() {
  pacbound::BoundInputs ex;
  ex.n = 5;
  ex.m.assign(5, 100);
  ex.er_hat.assign(5, 0.0);
  ex.kl = {0.0};
  ex.delta = 0.05;
  const double by_hand = std::sqrt(std::log(20000.0) / 198.0) + std::sqrt(std::log(200.0) / 8.0);
  const double b = pacbound::compute_bound(ex);
  const bool worked = std::abs(b - by_hand) <= kWorkedExampleTolerance && std::abs(b - 1.0375) < 5e-5;

  Rng rng(8);
  int violations = 0;
  for (int t = 0; t < kMonotonicityInputs; ++t) {
    pacbound::BoundInputs in;
    in.n = rng.uniform_int(2, 30);
    for (int k = 0; k < in.n; ++k) {
      in.m.push_back(rng.uniform_int(2, 2000));
      in.er_hat.push_back(rng.uniform());
    }
    in.kl = {rng.uniform(0.0, 20.0)};
    in.delta = rng.uniform(1e-4, 1.0);
    const double base = pacbound::compute_bound(in);
    auto more_kl = in;
    more_kl.kl[0] += rng.uniform(0.01, 5.0);
    violations += pacbound::compute_bound(more_kl) > base ? 0 : 1;
    auto smaller_delta = in;
    smaller_delta.delta *= rng.uniform(0.1, 0.99);
    violations += pacbound::compute_bound(smaller_delta) > base ? 0 : 1;
    auto more_m = in;
    for (auto& mk : more_m.m) mk *= 2;
    const auto before = pacbound::bound_terms(in).domain, after = pacbound::bound_terms(more_m).domain;
    for (std::size_t k = 0; k < before.size(); ++k) violations += after[k] < before[k] ? 0 : 1;
    // More domains at a fixed per-domain sample count m >= n + 1.
    auto uniform = [&](int n, long m) {
      pacbound::BoundInputs u;
      u.n = n;
      u.m.assign(static_cast<std::size_t>(n), m);
      u.er_hat.assign(static_cast<std::size_t>(n), in.er_hat[0]);
      u.kl = in.kl;
      u.delta = in.delta;
      return pacbound::compute_bound(u);
    };
    const long m = rng.uniform_int(in.n + 1, 2000);
    violations += uniform(in.n + 1, m) < uniform(in.n, m) ? 0 : 1;
  }

  pacbound::CoverageSpec spec;
  spec.trials = kCoverageTrials;
  const auto cov = pacbound::bound_holds_empirically(spec);
  const int threshold = binomial_threshold(kCoverageTrials, 1.0 - spec.delta, kCoverageQuantile);
  return {worked && violations == 0 && cov.holds >= threshold,
          "worked example " + fmt("%.6f", b) + " (hand " + fmt("%.6f", by_hand) + "), " +
              std::to_string(violations) + " monotonicity violations over " + std::to_string(kMonotonicityInputs) +
              " inputs, coverage " + std::to_string(cov.holds) + "/" + std::to_string(kCoverageTrials) +
              " (threshold " + std::to_string(threshold) + ")"};
}

// --- 9 ---------------------------------------------------------------------------------

Verdict determinism(const std::string& cli, const std::string& work_dir) {
  const std::string dir = work_dir + "/criterion9";
  std::filesystem::remove_all(dir);
  const nlohmann::json c = {
      {"schema_version", 1},
      {"game", "cartpole_mdp"},
      {"settings",
       {{{"name", "G_in"}, {"factor", "gravity"}, {"sources", {{5}, {10}, {20}, {30}, {40}}}, {"target", {15}}},
        {{"name", "M_out"}, {"factor", "mass"}, {"sources", {{0.5}, {1.5}, {2.5}, {3.5}, {4.5}}}, {"target", {5.5}}}}},
      {"n_target", 10},
      {"rollouts", {{"episodes", 10}, {"max_steps", 40}}},
      {"model", {{"epochs", 3}, {"batch_size", 128}}},
      {"adapt", {{"steps", 30}}},
      {"policy", {{"episodes", 6}, {"max_steps", 100}, {"learning_starts", 64}}},
      {"eval", {{"episodes", 5}, {"max_steps", 200}}},
      {"output_dir", dir + "/unused"}};
  io::write_json(dir + "/config.json", c);
  std::string reports[2];
  for (int run = 0; run < 2; ++run) {
    const std::string out = dir + "/run" + std::to_string(run);
    const std::string cmd = "\"" + cli + "\" run-all --config \"" + dir + "/config.json\" --seed 0 --out \"" + out +
                            "\" > \"" + out + ".log\" 2>&1";
    std::filesystem::create_directories(out);
    if (std::system(cmd.c_str()) != 0) return {false, "run-all exited with an error, see " + out + ".log"};
    reports[run] = io::read_file(out + "/report.csv");
  }
  const bool same = reports[0] == reports[1] && !reports[0].empty();
  return {same, std::string(same ? "identical" : "different") + " report.csv across two runs (" +
                    std::to_string(reports[0].size()) + " bytes)"};
}

// --- 10 --------------------------------------------------------------------------------

Verdict mog_normalization() {
  Rng rng(10);
  double worst = 0.0;
  for (int h = 0; h < kMogHeads; ++h) {
    const int in_dim = rng.uniform_int(1, 4);
    nn::MogHead head(in_dim, {rng.uniform_int(2, 8)}, rng.uniform_int(1, 5), rng);
    const diff::Tensor input = diff::Tensor::NullaryExpr(1, in_dim, [&] { return 2.0 * rng.normal(); });
    const auto x = diff::constant(input);
    auto density = [&](double y) {
      const diff::Tensor t = diff::Tensor::Constant(1, 1, y);
      return std::exp(head.log_density(x, diff::constant(t)).value()(0, 0));
    };
    const double inf = std::numeric_limits<double>::infinity();
    const double integral = boost::math::quadrature::gauss_kronrod<double, 61>::integrate(density, -inf, inf, 15, 1e-10);
    worst = std::max(worst, std::abs(integral - 1.0));
  }
  return {worst <= kMogTolerance,
          std::to_string(kMogHeads) + " heads, max |integral - 1| " + fmt("%.2e", worst) + " (adaptive Gauss-Kronrod)"};
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> wanted;
  for (int i = 1; i < argc; ++i) wanted.insert(std::atoi(argv[i]));
  auto want = [&](int c) { return wanted.empty() || wanted.count(c) > 0; };

  const std::string source_dir = ADARL_SOURCE_DIR;
  const std::string work_dir = ADARL_WORK_DIR;
  const std::string cli = ADARL_CLI_PATH;

  int failures = 0;
  auto report = [&](int c, const std::string& name, const std::function<Verdict()>& fn) {
    if (!want(c)) return;
    const auto t0 = Clock::now();
    Verdict v;
    try {
      v = fn();
    } catch (const std::exception& e) {
      v = {false, std::string("error: ") + e.what()};
    }
    failures += v.pass ? 0 : 1;
    std::printf("criterion %2d %s  %-26s %s [%.1f s]\n", c, v.pass ? "PASS" : "FAIL", name.c_str(), v.detail.c_str(),
                seconds_since(t0));
    std::fflush(stdout);
  };

  report(1, "min-rep correctness", minrep);
  report(2, "structure identifiability", structure);
  report(3, "change localization", localization);
  report(4, "cartpole transfer trend", [&] { return transfer(source_dir, work_dir); });
  std::unique_ptr<GravityModel> gravity;
  if (want(5) || want(6)) gravity = std::make_unique<GravityModel>(source_dir);
  report(5, "theta interpretability", [&] { return interpretability(*gravity); });
  report(6, "few-shot sufficiency", [&] { return few_shot(*gravity); });
  report(7, "gradient fidelity", gradients);
  report(8, "PAC bound", pac_bound);
  report(9, "determinism", [&] { return determinism(cli, work_dir); });
  report(10, "MoG normalization", mog_normalization);
  return failures == 0 ? 0 : 1;
}
