#include <doctest.h>

#include "adarl/dbn.hpp"
#include "adarl/error.hpp"
#include "adarl/rng.hpp"

using namespace adarl;
using namespace adarl::dbn;
using G = UnrolledGraph;

namespace {

// s_1 -> s_3 -> reward, theta^s feeds s_1 only, theta^r feeds the reward,
// the action drives s_2 and s_3; s_2 never reaches the reward.
MaskSet figure_one_pattern() {
  MaskSet m = MaskSet::zeros(3, 1);
  m.csr = {0, 0, 1};
  m.css[2][0] = 1;
  m.css[1][1] = 1;
  m.cas = {0, 1, 1};
  m.cts[0][0] = 1;
  m.ctr = 1;
  m.cso = {1, 1, 1};
  m.cto = 1;
  return m;
}

ErrorKind kind_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an adarl::Error");
  return ErrorKind::invalid_argument;
}

}  // namespace

TEST_CASE("validate_masks accepts zeros and rejects malformed shapes") {
  CHECK_NOTHROW(validate_masks(MaskSet::zeros(2, 1)));

  MaskSet bad = MaskSet::zeros(2, 1);
  bad.css = {{0, 0, 0}, {0, 0, 0}};
  CHECK(kind_of([&] { validate_masks(bad); }) == ErrorKind::dimension_mismatch);

  MaskSet two = MaskSet::zeros(2, 1);
  two.cas[1] = 2;
  CHECK(kind_of([&] { validate_masks(two); }) == ErrorKind::non_binary_entry);
}

TEST_CASE("compact_state_indices") {
  MaskSet m = MaskSet::zeros(3, 0);
  m.csr = {0, 0, 1};
  m.css[2][0] = 1;
  CHECK(compact_state_indices(m) == std::vector<int>{0, 2});

  CHECK(compact_state_indices(MaskSet::zeros(4, 1)).empty());

  MaskSet all = MaskSet::zeros(4, 0);
  all.csr = {1, 1, 1, 1};
  CHECK(compact_state_indices(all) == std::vector<int>{0, 1, 2, 3});
}

TEST_CASE("compact_theta_indices") {
  const MaskSet fig = figure_one_pattern();
  const auto smin = compact_state_indices(fig);
  CHECK(smin == std::vector<int>{0, 2});
  CHECK(compact_theta_indices(fig, smin) == std::vector<ThetaId>{ThetaId::state(0), ThetaId::reward()});

  const MaskSet zero = MaskSet::zeros(3, 2);
  CHECK(compact_theta_indices(zero, compact_state_indices(zero)).empty());

  MaskSet obs_only = MaskSet::zeros(3, 1);
  obs_only.cto = 1;
  obs_only.cso = {1, 1, 1};
  CHECK(compact_theta_indices(obs_only, compact_state_indices(obs_only)).empty());
}

TEST_CASE("unrolled graph carries exactly the mask-induced edges") {
  const MaskSet fig = figure_one_pattern();
  const int horizon = 4;
  G g(fig, horizon);
  CHECK(g.is_acyclic());
  // per slice: theta->s (1), obs edges (3 + theta_o), reward edges (csr 1 + theta_r), r->R
  // plus transitions into slices 2..T: css (2) + cas (2)
  const std::size_t per_slice = 1 + 3 + 1 + 1 + 1 + 1;
  const std::size_t transitions = 4;
  CHECK(g.edge_count() == horizon * per_slice + (horizon - 1) * transitions);
  for (int t = 2; t <= horizon + 1; ++t) {
    const int r = g.id(G::reward(t));
    const auto& kids = g.children()[r];
    CHECK(std::find(kids.begin(), kids.end(), g.id(G::future_return())) != kids.end());
  }
  CHECK(kind_of([&] { (void)g.id(G::state(5, 1)); }) == ErrorKind::unknown_node);
}

TEST_CASE("d_separated on elementary patterns") {
  // chain s_1 -> s_2 -> ... realised as s_{0,1} -> s_{0,2} -> s_{0,3}
  MaskSet chain = MaskSet::zeros(1, 0);
  chain.css[0][0] = 1;
  G g(chain, 3);
  CHECK(d_separated(g, G::state(0, 1), G::state(0, 3), {G::state(0, 2)}));
  CHECK_FALSE(d_separated(g, G::state(0, 1), G::state(0, 3), {}));

  // collider s_{0,1} -> s_{0,2} <- a_1
  MaskSet collider = MaskSet::zeros(1, 0);
  collider.css[0][0] = 1;
  collider.cas[0] = 1;
  G c(collider, 2);
  CHECK(d_separated(c, G::state(0, 1), G::action(1), {}));
  CHECK_FALSE(d_separated(c, G::state(0, 1), G::action(1), {G::state(0, 2)}));

  // s_2 of the figure pattern never reaches a reward: blocked given R.
  const MaskSet fig = figure_one_pattern();
  G f(fig, 4);
  CHECK(d_separated(f, G::state(1, 1), G::action(1), {G::future_return(), G::theta(ThetaId::state(0)),
                                                        G::theta(ThetaId::observation()),
                                                        G::theta(ThetaId::reward())}));
  CHECK_FALSE(d_separated(f, G::state(0, 1), G::action(1), {G::future_return()}));
}

TEST_CASE("lemma oracle agrees with the fixpoint on fixed patterns") {
  const MaskSet fig = figure_one_pattern();
  const auto smin = compact_state_indices(fig);
  const auto rep = lemma1_oracle(fig, 4);
  CHECK(rep.states == smin);
  CHECK(rep.thetas == compact_theta_indices(fig, smin));

  const auto zero = lemma1_oracle(MaskSet::zeros(3, 2), 3);
  CHECK(zero.states.empty());
  CHECK(zero.thetas.empty());

  const auto full = lemma1_oracle(MaskSet::ones(3, 2), 3);
  CHECK(full.states == std::vector<int>{0, 1, 2});
  CHECK(full.thetas == std::vector<ThetaId>{ThetaId::state(0), ThetaId::state(1), ThetaId::reward()});

  CHECK(kind_of([&] { lemma1_oracle(fig, 1); }) == ErrorKind::horizon_too_small);
}

TEST_CASE("random_dag determinism and extremes") {
  CHECK(random_dag(4, 2, 0.0, 1) == MaskSet::zeros(4, 2));
  CHECK(random_dag(4, 2, 1.0, 1) == MaskSet::ones(4, 2));
  CHECK(random_dag(4, 2, 0.5, 7) == random_dag(4, 2, 0.5, 7));
  CHECK_NOTHROW(validate_masks(random_dag(4, 2, 0.5, 7)));
}

TEST_CASE("property: fixpoint equals the d-separation oracle") {
  // The oracle needs the action to matter for the return; masks where a_1
  // has no directed path to R are skipped and counted.
  int checked = 0;
  int skipped = 0;
  for (std::uint64_t seed = 0; checked < 200; ++seed) {
    Rng rng(seed);
    const int d = rng.uniform_int(1, 6);
    const int p = rng.uniform_int(0, 3);
    const double density = rng.uniform(0.1, 0.7);
    const MaskSet m = random_dag(d, p, density, seed * 31 + 5);
    if (!action_reaches_reward(m, d + 2)) {
      ++skipped;
      continue;
    }
    const auto smin = compact_state_indices(m);
    const auto rep = lemma1_oracle(m, d + 2);
    CHECK(rep.states == smin);
    CHECK(rep.thetas == compact_theta_indices(m, smin));
    ++checked;
  }
  MESSAGE("skipped " << skipped << " masks where the action cannot reach the reward");
}

TEST_CASE("property: monotonicity, theta^o exclusion, symmetry") {
  for (std::uint64_t seed = 0; seed < 300; ++seed) {
    Rng rng(seed + 1000);
    const int d = rng.uniform_int(1, 6);
    const int p = rng.uniform_int(0, 3);
    MaskSet m = random_dag(d, p, rng.uniform(0.1, 0.6), seed);
    const auto before = compact_state_indices(m);

    MaskSet more = m;
    const int i = rng.uniform_int(0, d - 1);
    const int j = rng.uniform_int(0, d - 1);
    if (rng.bernoulli(0.5)) {
      more.css[i][j] = 1;
    } else {
      more.csr[i] = 1;
    }
    const auto after = compact_state_indices(more);
    CHECK(std::includes(after.begin(), after.end(), before.begin(), before.end()));

    m.cto = 1;
    const auto thetas = compact_theta_indices(m, before);
    CHECK(std::find(thetas.begin(), thetas.end(), ThetaId::observation()) == thetas.end());

    G g(m, 3);
    const int x = rng.uniform_int(0, g.size() - 1);
    const int y = rng.uniform_int(0, g.size() - 1);
    if (x == y) continue;
    std::vector<int> z;
    for (int v = 0; v < g.size(); ++v) {
      if (v != x && v != y && rng.bernoulli(0.2)) z.push_back(v);
    }
    CHECK(d_separated(g, x, y, z) == d_separated(g, y, x, z));
  }
}

TEST_CASE("mask serialization round-trips") {
  const MaskSet m = random_dag(5, 2, 0.4, 99);
  const std::string text = serialize(m);
  CHECK(parse_masks(text) == m);
  CHECK(serialize(parse_masks(text)) == text);
  CHECK(kind_of([] { parse_masks("{\"d\": 2}"); }) == ErrorKind::parse_error);
}
