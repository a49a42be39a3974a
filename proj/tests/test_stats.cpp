#include <doctest.h>

#include <cmath>

#include "adarl/envs.hpp"
#include "adarl/rng.hpp"
#include "adarl/stats.hpp"
#include "test_util.hpp"

using namespace adarl;
using namespace adarl::stats;
using adarl::testing::kind_of;

namespace {

Eigen::MatrixXd gaussian_columns(int n, int c, std::uint64_t seed) {
  Rng rng(seed);
  Eigen::MatrixXd m(n, c);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < c; ++j) m(i, j) = rng.normal();
  return m;
}

// Brute-force two-sided signed-rank p-value over every sign assignment.
double brute_force_wilcoxon(const std::vector<double>& diff) {
  const int n = static_cast<int>(diff.size());
  std::vector<double> mag(n);
  for (int i = 0; i < n; ++i) mag[i] = std::abs(diff[i]);
  std::vector<double> rank(n);
  for (int i = 0; i < n; ++i) {
    double below = 0, equal = 0;
    for (int j = 0; j < n; ++j) {
      if (mag[j] < mag[i]) ++below;
      if (mag[j] == mag[i]) ++equal;
    }
    rank[i] = below + (equal + 1.0) / 2.0;
  }
  double total = 0.0, observed = 0.0;
  for (int i = 0; i < n; ++i) {
    total += rank[i];
    if (diff[i] > 0) observed += rank[i];
  }
  const double centre = total / 2.0;
  long hits = 0;
  for (long mask = 0; mask < (1L << n); ++mask) {
    double w = 0.0;
    for (int i = 0; i < n; ++i) {
      if (mask & (1L << i)) w += rank[i];
    }
    if (std::abs(w - centre) >= std::abs(observed - centre) - 1e-9) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(1L << n);
}

}  // namespace

TEST_CASE("partial correlation") {
  Eigen::MatrixXd same = gaussian_columns(50, 1, 1);
  Eigen::MatrixXd xy(50, 2);
  xy << same, same;
  CHECK(partial_correlation(xy, 0, 1, {}) == doctest::Approx(1.0));

  const Eigen::MatrixXd indep = gaussian_columns(10'000, 2, 2);
  CHECK(std::abs(partial_correlation(indep, 0, 1, {})) < 0.05);

  // x -> m -> y
  Eigen::MatrixXd chain = gaussian_columns(10'000, 3, 3);
  chain.col(1) = 0.8 * chain.col(0) + chain.col(1);
  chain.col(2) = -0.7 * chain.col(1) + chain.col(2);
  CHECK(std::abs(partial_correlation(chain, 0, 2, {})) > 0.2);
  CHECK(std::abs(partial_correlation(chain, 0, 2, {1})) < 0.05);
  CHECK(partial_correlation(chain, 0, 2, {1}) == doctest::Approx(partial_correlation(chain, 2, 0, {1})));

  SUBCASE("affine rescaling leaves the estimate unchanged") {
    Eigen::MatrixXd scaled = chain;
    scaled.col(0) = 250.0 * scaled.col(0).array() - 3.0;
    scaled.col(1) = -0.01 * scaled.col(1).array() + 7.0;
    CHECK(partial_correlation(scaled, 0, 2, {1}) == doctest::Approx(partial_correlation(chain, 0, 2, {1})).epsilon(1e-9));
    CHECK(partial_correlation(scaled, 0, 1, {}) == doctest::Approx(-partial_correlation(chain, 0, 1, {})).epsilon(1e-9));
  }

  SUBCASE("collinear conditioning set") {
    Eigen::MatrixXd dup = gaussian_columns(100, 4, 4);
    dup.col(3) = 2.0 * dup.col(2);
    CHECK(kind_of([&] { partial_correlation(dup, 0, 1, {2, 3}); }) == ErrorKind::singular_conditioning_set);
    CHECK(kind_of([&] { partial_correlation(dup.topRows(4), 0, 1, {2}); }) == ErrorKind::insufficient_samples);
  }
}

TEST_CASE("Fisher z test") {
  const auto null = fisher_z_test(0.0, 50, 2, 0.05);
  CHECK(null.p_value == 1.0);
  CHECK(null.independent);

  const auto r = fisher_z_test(0.5, 100, 0, 0.05);
  const double expected = std::sqrt(97.0) * 0.5 * std::log(3.0);
  CHECK(r.statistic == doctest::Approx(expected).epsilon(1e-12));
  CHECK(r.statistic == doctest::Approx(5.408).epsilon(1e-3));
  CHECK(r.p_value < 1e-6);
  CHECK_FALSE(r.independent);

  CHECK(kind_of([] { fisher_z_test(1.0, 100, 0, 0.05); }) == ErrorKind::degenerate_rho);
  CHECK(kind_of([] { fisher_z_test(0.1, 5, 2, 0.05); }) == ErrorKind::insufficient_samples);

  SUBCASE("false-positive rate is calibrated under the null") {
    Rng rng(77);
    int rejections = 0;
    const int trials = 2000;
    for (int t = 0; t < trials; ++t) {
      Eigen::MatrixXd m(200, 3);
      for (int i = 0; i < 200; ++i)
        for (int j = 0; j < 3; ++j) m(i, j) = rng.normal();
      m.col(0) += m.col(2);
      m.col(1) -= m.col(2);
      if (!fisher_z_test(partial_correlation(m, 0, 1, {2}), 200, 1, 0.05).independent) ++rejections;
    }
    const double rate = static_cast<double>(rejections) / trials;
    CHECK(rate >= 0.03);
    CHECK(rate <= 0.07);
  }
}

namespace {

envs::TrajectoryDataset synthetic_mdp(const dbn::MaskSet& masks, int n_domains, int steps, std::uint64_t seed) {
  const auto spec = envs::sample_synthetic_pomdp(masks, n_domains, seed);
  const auto domains = envs::make_synthetic_domains(spec, true);
  return envs::collect_rollouts(domains, envs::random_policy(2), 1, steps, seed + 1);
}

}  // namespace

TEST_CASE("structure recovery on small synthetic MDPs") {
  CHECK(kind_of([] {
          const auto d = synthetic_mdp(dbn::MaskSet::zeros(2, 1), 1, 100, 1);
          recover_mdp_structure(d);
        }) == ErrorKind::fewer_than_two_domains);
  CHECK(kind_of([] { recover_mdp_structure(synthetic_mdp(dbn::MaskSet::zeros(2, 1), 3, 4, 1)); }) ==
        ErrorKind::insufficient_samples);

  SUBCASE("empty graph") {
    const auto data = synthetic_mdp(dbn::MaskSet::zeros(3, 1), 3, 1500, 5);
    const auto r = recover_mdp_structure(data);
    int spurious = 0;
    for (const auto& e : r.edges) spurious += e.present ? 1 : 0;
    CHECK(spurious <= 1);
    for (bool flag : r.state_change) CHECK_FALSE(flag);
    CHECK_FALSE(r.reward_change);
  }

  SUBCASE("known chain with a change on one state") {
    auto m = dbn::MaskSet::zeros(3, 1);
    m.css[0][0] = 1;
    m.css[1][0] = 1;
    m.css[2][1] = 1;
    m.cas[0] = 1;
    m.csr[2] = 1;
    m.car = 1;
    m.cts[1][0] = 1;
    m.ctr = 1;
    const auto data = synthetic_mdp(m, 4, 2000, 11);
    const auto r = recover_mdp_structure(data);
    CHECK(edge_f1(m, r.masks) == doctest::Approx(1.0));
    CHECK(r.state_change == std::vector<bool>{false, true, false});
    CHECK(r.reward_change);

    const auto serial = recover_mdp_structure(data, {0.01, 3, Exec::serial});
    CHECK(dbn::to_json(serial.masks) == dbn::to_json(r.masks));
    CHECK(edge_csv(serial) == edge_csv(r));

    RecoveryOptions pc;
    pc.search = ConditioningSearch::adjacency;
    pc.flags_given = FlagConditioning::all_time_t;
    const auto alt = recover_mdp_structure(data, pc);
    CHECK(edge_f1(m, alt.masks) == doctest::Approx(1.0));
    CHECK(alt.state_change == r.state_change);
    pc.exec = Exec::serial;
    CHECK(edge_csv(recover_mdp_structure(data, pc)) == edge_csv(alt));
  }

  SUBCASE("smaller alpha never adds edges") {
    const auto masks = dbn::random_dag(4, 1, 0.4, 21);
    const auto table = transition_table(synthetic_mdp(masks, 3, 800, 21));
    int previous = 1 << 30;
    for (double alpha : {0.2, 0.05, 0.01, 1e-3, 1e-6}) {
      const auto r = recover_mdp_structure(table, {alpha, 3, Exec::parallel});
      int count = 0;
      for (const auto& e : r.edges) count += e.present ? 1 : 0;
      CHECK(count <= previous);
      previous = count;
    }
  }
}

TEST_CASE("edge F1") {
  auto truth = dbn::MaskSet::zeros(2, 0);
  CHECK(edge_f1(truth, truth) == 1.0);
  truth.css[0][1] = 1;
  truth.car = 1;
  auto est = dbn::MaskSet::zeros(2, 0);
  est.css[0][1] = 1;
  est.cas[0] = 1;
  // tp 1, fp 1, fn 1
  CHECK(edge_f1(truth, est) == doctest::Approx(0.5));
}

TEST_CASE("change localization decision table") {
  const auto both = classify_changes(true, true);
  CHECK(both.no_detectable_change);
  CHECK(both.theta_set.empty());
  const auto reward = classify_changes(true, false);
  CHECK(reward.label == ChangeCase::C2);
  CHECK(reward.theta_set == std::vector<std::string>{"theta_r"});
  const auto obs = classify_changes(false, true);
  CHECK(obs.label == ChangeCase::C4);
  CHECK(obs.theta_set == std::vector<std::string>{"theta_o", "theta_s"});
  CHECK(classify_changes(false, false).theta_set.size() == 3);
}

TEST_CASE("change localization on synthetic POMDPs") {
  auto base = dbn::MaskSet::zeros(2, 1);
  base.css[0][0] = 1;
  base.css[1][1] = 1;
  base.csr[0] = 1;
  base.car = 1;
  base.cso = {1, 0};

  auto roll = [](const dbn::MaskSet& m, std::uint64_t seed) {
    const auto spec = envs::sample_synthetic_pomdp(m, 4, seed);
    return envs::collect_rollouts(envs::make_synthetic_domains(spec, false), envs::random_policy(2), 1, 3000, seed);
  };

  SUBCASE("reward-only change") {
    auto m = base;
    m.ctr = 1;
    const auto l = localize_changes_pomdp(roll(m, 3));
    CHECK(l.label == ChangeCase::C2);
    CHECK(l.theta_set == std::vector<std::string>{"theta_r"});
  }
  SUBCASE("observation-only change") {
    auto m = base;
    m.cto = 1;
    const auto l = localize_changes_pomdp(roll(m, 4));
    CHECK(l.label == ChangeCase::C4);
    CHECK(l.theta_set == std::vector<std::string>{"theta_o", "theta_s"});
  }
  SUBCASE("identical domains") {
    const auto l = localize_changes_pomdp(roll(base, 5));
    CHECK(l.no_detectable_change);
    CHECK(l.theta_set.empty());
  }
}

TEST_CASE("Wilcoxon signed-rank") {
  const std::vector<double> a{1, 2, 3, 4, 5, 6, 7, 8};
  CHECK(kind_of([&] { wilcoxon_signed_rank(a, a); }) == ErrorKind::all_ties);
  CHECK(kind_of([&] { wilcoxon_signed_rank(a, {1, 2}); }) == ErrorKind::length_mismatch);
  CHECK(kind_of([] { wilcoxon_signed_rank({1, 2, 3}, {0, 0, 0}); }) == ErrorKind::insufficient_samples);

  std::vector<double> x(30), y(30);
  Rng rng(9);
  for (int i = 0; i < 30; ++i) {
    y[i] = rng.normal(100, 20);
    x[i] = y[i] + 10.0;
  }
  const auto shifted = wilcoxon_signed_rank(x, y);
  CHECK_FALSE(shifted.exact);
  CHECK(shifted.p_value < 0.001);
  CHECK(shifted.w_plus == doctest::Approx(465.0));

  SUBCASE("exact p-values match sign enumeration") {
    Rng r(31);
    for (int trial = 0; trial < 40; ++trial) {
      const int n = 6 + trial % 10;
      std::vector<double> u(n), v(n), diff;
      for (int i = 0; i < n; ++i) {
        u[i] = std::round(r.normal(0, 3));  // rounding creates ties and zeros
        v[i] = std::round(r.normal(0.5, 3));
        if (u[i] != v[i]) diff.push_back(u[i] - v[i]);
      }
      if (diff.empty()) continue;
      const auto w = wilcoxon_signed_rank(u, v);
      CHECK(w.exact);
      CHECK(w.p_value == doctest::Approx(brute_force_wilcoxon(diff)).epsilon(1e-12));
      CHECK(w.p_value == doctest::Approx(wilcoxon_signed_rank(v, u).p_value).epsilon(1e-12));
    }
    const std::vector<double> eight_a{3.1, -1.2, 4.4, 0.7, 2.2, 5.9, -0.3, 1.8};
    const std::vector<double> zeros(8, 0.0);
    CHECK(wilcoxon_signed_rank(eight_a, zeros).p_value == doctest::Approx(brute_force_wilcoxon(eight_a)));
  }

  SUBCASE("normal approximation tracks the exact null at n = 20") {
    Rng r(5);
    std::vector<double> u(20), v(20, 0.0);
    for (auto& e : u) e = r.normal(0.4, 1.0);
    const auto w = wilcoxon_signed_rank(u, v);
    CHECK_FALSE(w.exact);
    CHECK(std::abs(w.p_value - brute_force_wilcoxon(u)) < 0.01);
    CHECK(w.p_value == doctest::Approx(wilcoxon_signed_rank(v, u).p_value));
  }
}

TEST_CASE("rank correlations") {
  CHECK(ranks({3.0, 1.0, 2.0, 2.0}) == std::vector<double>{4.0, 1.0, 2.5, 2.5});
  CHECK(spearman({1, 2, 3, 4}, {10, 20, 35, 1000}) == doctest::Approx(1.0));
  CHECK(spearman({1, 2, 3, 4}, {4, 3, 2, 1}) == doctest::Approx(-1.0));
  CHECK(pearson({1, 2, 3}, {2, 4, 6}) == doctest::Approx(1.0));
  CHECK(stddev({5.0}) == 0.0);
  CHECK(stddev({1.0, 3.0}) == doctest::Approx(std::sqrt(2.0)));
}
