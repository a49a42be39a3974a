#include <doctest.h>

#include <cmath>
#include <numbers>

#include "adarl/envs.hpp"
#include "adarl/kernels.hpp"
#include "test_util.hpp"

using namespace adarl;
using namespace adarl::envs;
using adarl::testing::kind_of;

TEST_CASE("cart-pole pushes are mirror images at the upright state") {
  const CartpoleParams p;
  const CartState upright = CartState::Zero();
  const auto left = cartpole_step(upright, 0, p);
  const auto right = cartpole_step(upright, 1, p);
  CHECK(left.next(3) == doctest::Approx(-right.next(3)));
  CHECK(left.next(1) == doctest::Approx(-right.next(1)));
  CHECK(left.next(3) * right.next(3) < 0.0);
  CHECK(left.reward == 1.0);
  CHECK_FALSE(left.done);
}

TEST_CASE("stronger gravity accelerates a tilted pole faster") {
  CartState s;
  s << 0.0, 0.0, 0.05, 0.0;
  CartpoleParams low, high;
  low.gravity = 15.0;
  high.gravity = 55.0;
  const double d_low = std::abs(cartpole_step(s, 0, low).next(3) - s(3));
  const double d_high = std::abs(cartpole_step(s, 0, high).next(3) - s(3));
  CHECK(d_high > d_low);

  // Hand evaluation of the angular acceleration at zero velocity.
  auto phi_acc = [&](double g) {
    const double total = 1.1;
    const double temp = -10.0 / total;
    return (g * std::sin(0.05) - std::cos(0.05) * temp) /
           (0.5 * (4.0 / 3.0 - 0.1 * std::cos(0.05) * std::cos(0.05) / total));
  };
  CHECK(cartpole_step(s, 0, high).next(3) == doctest::Approx(0.02 * phi_acc(55.0)).epsilon(1e-12));
}

TEST_CASE("leaving the track ends the episode with zero reward") {
  CartState s;
  s << 2.5, 0.0, 0.0, 0.0;
  const auto r = cartpole_step(s, 1, CartpoleParams{});
  CHECK(r.done);
  CHECK_FALSE(r.truncated);
  CHECK(r.reward == 0.0);

  CartpoleParams capped;
  capped.episode_cap = 3;
  const auto last = cartpole_step(CartState::Zero(), 1, capped, 2);
  CHECK(last.done);
  CHECK(last.truncated);
  CHECK(last.reward == 1.0);

  CartState bad = CartState::Zero();
  bad(2) = std::nan("");
  CHECK(kind_of([&] { cartpole_step(bad, 0, capped); }) == ErrorKind::non_finite_state);
}

TEST_CASE("upright pole with zero force stays exactly upright") {
  const CartpoleParams p;
  CartState s = CartState::Zero();
  for (int i = 0; i < 1000; ++i) s = cartpole_dynamics(s, 0.0, p);
  CHECK(s(2) == 0.0);
  CHECK(s(3) == 0.0);
}

TEST_CASE("cart-pole domain construction") {
  const auto grav = make_cartpole_domains(ChangeFactor::gravity, {{5}, {10}, {20}, {30}, {40}});
  REQUIRE(grav.size() == 5);
  CHECK(grav[3]->describe()["gravity"] == 30.0);
  CHECK(grav[3]->describe()["cart_mass"] == 1.0);

  const auto mass = make_cartpole_domains(ChangeFactor::mass, {{1.0}});
  REQUIRE(mass.size() == 1);
  CHECK(mass[0]->describe()["cart_mass"] == 1.0);

  const auto both = make_cartpole_domains(ChangeFactor::both, {{5, 0.5}, {40, 4.5}});
  REQUIRE(both.size() == 2);
  CHECK(both[1]->describe()["gravity"] == 40.0);
  CHECK(both[1]->describe()["cart_mass"] == 4.5);

  const auto noise = make_cartpole_domains(ChangeFactor::noise, {{0.25}, {0.75}, {1.25}, {1.75}, {2.25}});
  CHECK(noise.size() == 5);
  CHECK(noise[4]->describe()["noise_sigma"] == 2.25);

  CHECK(kind_of([] { make_cartpole_domains(ChangeFactor::gravity, {}); }) == ErrorKind::empty_values);
  CHECK(kind_of([] { make_cartpole_domains(ChangeFactor::gravity, {{-1.0}}); }) == ErrorKind::invalid_argument);
}

TEST_CASE("noisy observation wrapper") {
  CHECK(kind_of([] { noisy_obs_wrapper(std::make_unique<CartpoleEnv>(CartpoleParams{}), -0.1); }) ==
        ErrorKind::negative_sigma);

  SUBCASE("sigma zero is the identity") {
    auto env = noisy_obs_wrapper(std::make_unique<CartpoleEnv>(CartpoleParams{}), 0.0);
    Rng rng(3);
    auto obs = env->reset(rng);
    CHECK(obs == env->latent_state());
    for (int i = 0; i < 20; ++i) {
      const auto s = env->step(i % 2, rng);
      CHECK(s.obs == env->latent_state());
      if (s.done) break;
    }
  }

  SUBCASE("sample variance tracks sigma squared") {
    CartpoleParams p;
    p.episode_cap = 1'000'000;
    auto env = noisy_obs_wrapper(std::make_unique<CartpoleEnv>(p), 0.25);
    Rng rng(11);
    env->reset(rng);
    double sum = 0.0, sum_sq = 0.0;
    int count = 0;
    for (int i = 0; i < 10'000; ++i) {
      const auto s = env->step(i % 2, rng);
      const Eigen::VectorXd diff = s.obs - env->latent_state();
      sum += diff(0);
      sum_sq += diff(0) * diff(0);
      ++count;
      if (s.done) env->reset(rng);
    }
    const double mean = sum / count;
    const double var = sum_sq / count - mean * mean;
    CHECK(std::abs(var - 0.0625) < 0.1 * 0.0625);
  }
}

TEST_CASE("synthetic POMDP sampling") {
  const auto masks = dbn::random_dag(5, 2, 0.4, 9);
  const auto a = sample_synthetic_pomdp(masks, 5, 42);
  const auto b = sample_synthetic_pomdp(masks, 5, 42);
  CHECK(to_json(a) == to_json(b));
  CHECK(a.spectral_radius() < 1.0);

  for (int i = 0; i < 5; ++i) {
    for (int j = 0; j < 5; ++j) {
      if (!masks.css[i][j]) CHECK(a.transition(i, j) == 0.0);
    }
  }
  // Change factors differ between every pair of domains.
  for (int k = 0; k < 5; ++k)
    for (int l = k + 1; l < 5; ++l) CHECK(a.theta_r(k) != a.theta_r(l));

  CHECK(to_json(synthetic_from_json(to_json(a))) == to_json(a));

  SUBCASE("empty graph gives pure noise plus the observation offset") {
    auto zero = dbn::MaskSet::zeros(3, 1);
    zero.cto = 1;
    const auto spec = sample_synthetic_pomdp(zero, 2, 1);
    CHECK(spec.transition.isZero());
    CHECK(spec.observation.isZero());
    auto env = make_synthetic_domains(spec, false);
    Rng rng(5);
    double mean = 0.0;
    env[1]->reset(rng);
    const int n = 4000;
    for (int i = 0; i < n; ++i) mean += env[1]->step(0, rng).obs(0) / n;
    CHECK(std::abs(mean - spec.theta_o(1)) < 0.08);
  }

  SUBCASE("latent covariance stays bounded") {
    auto envs = make_synthetic_domains(a, true);
    Rng rng(8);
    envs[0]->reset(rng);
    Eigen::MatrixXd states(20'000, 5);
    for (int t = 0; t < states.rows(); ++t) {
      envs[0]->step(rng.uniform_int(0, 1), rng);
      states.row(t) = envs[0]->latent_state().transpose();
    }
    const auto first = kernels::covariance(states.topRows(10'000));
    const auto second = kernels::covariance(states.bottomRows(10'000));
    CHECK(second.diagonal().maxCoeff() < 2.0 * first.diagonal().maxCoeff() + 1.0);
    CHECK(states.allFinite());
  }
}

TEST_CASE("rollout collection") {
  const auto domains = make_cartpole_domains(ChangeFactor::gravity, {{5}, {10}, {20}});

  const auto ids = collect_rollouts(domains, random_policy(2), 1, 1, 0, Exec::serial, {4, 7, 9});
  CHECK(ids.domain_ids() == std::vector<int>{4, 7, 9});
  CHECK(kind_of([&] { collect_rollouts(domains, random_policy(2), 1, 1, 0, Exec::serial, {0}); }) ==
        ErrorKind::length_mismatch);
  CHECK(kind_of([&] { collect_rollouts(domains, random_policy(2), 0, 1, 0); }) == ErrorKind::invalid_argument);

  const auto single = make_cartpole_domains(ChangeFactor::gravity, {{9.8}});
  const auto tiny = collect_rollouts(single, random_policy(2), 1, 1, 0);
  CHECK(tiny.size() == 1);

  const auto data = collect_rollouts(single, random_policy(2), 100, 500, 4);
  const double mean_len = static_cast<double>(data.size()) / 100.0;
  CHECK(std::isfinite(mean_len));
  CHECK(mean_len < 500.0);
  CHECK(mean_len > 5.0);

  CHECK(kFullScaleEpisodes == 10000);
  CHECK(kFullScaleSteps == 40);

  SUBCASE("serial and parallel collection agree byte for byte") {
    const auto s = collect_rollouts(domains, random_policy(2), 20, 40, 99, Exec::serial);
    const auto p = collect_rollouts(domains, random_policy(2), 20, 40, 99, Exec::parallel);
    CHECK(to_jsonl(s) == to_jsonl(p));
    CHECK(metadata(s) == metadata(p));
  }

  SUBCASE("serialize, parse, serialize is byte-identical") {
    const auto d = collect_rollouts(domains, random_policy(2), 5, 40, 7);
    const auto text = to_jsonl(d);
    const auto back = from_jsonl(text, metadata(d));
    CHECK(to_jsonl(back) == text);
    CHECK(back.episodes == d.episodes);
    CHECK(back.domain_ids() == std::vector<int>{0, 1, 2});
  }

  SUBCASE("same seed, same bytes") {
    const auto x = collect_rollouts(domains, random_policy(2), 5, 40, 7);
    const auto y = collect_rollouts(domains, random_policy(2), 5, 40, 7);
    CHECK(to_jsonl(x) == to_jsonl(y));
    const auto z = collect_rollouts(domains, random_policy(2), 5, 40, 8);
    CHECK(to_jsonl(x) != to_jsonl(z));
  }
}

TEST_CASE("dataset validation rejects broken episodes") {
  TrajectoryDataset d;
  d.episodes.push_back({Transition{0, 0, 1, {0.0}, 0, 1.0, false}, Transition{0, 0, 1, {0.0}, 0, 1.0, false}});
  CHECK(kind_of([&] { d.validate(); }) == ErrorKind::parse_error);
  CHECK(kind_of([] { from_jsonl("{\"x\":1}\n", nlohmann::json::object()); }) == ErrorKind::parse_error);
}
