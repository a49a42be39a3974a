#include <doctest.h>

#include <cmath>
#include <numbers>

#include "adarl/diffcore.hpp"
#include "adarl/nn.hpp"
#include "adarl/rng.hpp"
#include "test_util.hpp"

using namespace adarl;
using namespace adarl::diff;
using adarl::testing::kind_of;

namespace {

Tensor random_tensor(int r, int c, Rng& rng, double scale = 1.0) {
  Tensor t(r, c);
  for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = scale * rng.normal();
  return t;
}

double normal_pdf(double x, double mu, double sigma) {
  const double z = (x - mu) / sigma;
  return std::exp(-0.5 * z * z) / (sigma * std::sqrt(2.0 * std::numbers::pi));
}

}  // namespace

TEST_CASE("square of a scalar has gradient 2w") {
  Var w = parameter(Tensor::Constant(1, 1, 3.0));
  backward(square(w));
  CHECK(w.grad()(0, 0) == doctest::Approx(6.0));
}

TEST_CASE("a parameter used twice collects both paths") {
  Var w = parameter(Tensor::Constant(1, 1, 2.0));
  // L = w*w + 3w  ->  dL/dw = 2w + 3
  Var loss = add(mul(w, w), scale(w, 3.0));
  backward(loss);
  CHECK(w.grad()(0, 0) == doctest::Approx(7.0));
  // Gradients accumulate across backward calls until cleared.
  backward(loss);
  CHECK(w.grad()(0, 0) == doctest::Approx(14.0));
  w.zero_grad();
  CHECK_FALSE(w.has_grad());
}

TEST_CASE("backward rejects non-scalar losses") {
  Var w = parameter(Tensor::Ones(2, 1));
  CHECK(kind_of([&] { backward(w); }) == ErrorKind::non_scalar_loss);
  CHECK(kind_of([&] { add(w, constant(Tensor::Ones(1, 2))); }) == ErrorKind::shape_mismatch);
  CHECK(kind_of([&] { matmul(w, w); }) == ErrorKind::shape_mismatch);
}

TEST_CASE("constants carry no tape") {
  Var c = constant(Tensor::Ones(2, 2));
  Var y = tanh(c);
  CHECK_FALSE(y.requires_grad());
  CHECK(y.node()->parents.empty());
}

TEST_CASE("every op matches central differences") {
  Rng rng(11);
  Var a = parameter(random_tensor(4, 3, rng));
  Var b = parameter(random_tensor(3, 2, rng));
  Var row = parameter(random_tensor(1, 3, rng));
  Var col = parameter(random_tensor(4, 1, rng));
  Var pos = parameter((random_tensor(4, 3, rng).array().abs() + 0.5).matrix());
  const std::vector<int> idx{2, 0, 1, 1};
  const std::vector<int> gather{3, 0, 3};

  const std::vector<std::pair<const char*, std::function<Var()>>> cases = {
      {"add/sub", [&] { return sum(square(sub(add(a, pos), scale(a, 0.5)))); }},
      {"matmul", [&] { return sum(tanh(matmul(a, b))); }},
      {"rows/cols", [&] { return sum(mul_col(mul_row(add_row(a, row), row), col)); }},
      {"sigmoid/exp/log", [&] { return sum(add(log(pos), mul(sigmoid(a), exp(scale(a, 0.3))))); }},
      {"abs/max/clamp", [&] { return sum(add(abs(a), add(max_const(a, 0.1), clamp(a, -0.5, 0.5)))); }},
      {"reductions", [&] { return sum(square(add(sum_rows(a), scale(sum_rows(pos), 0.1)))); }},
      {"sum_cols/mean", [&] { return mean(square(sum_cols(mul(a, pos)))); }},
      {"concat/slice", [&] { return sum(square(slice_cols(concat_cols({a, pos, col}), 2, 4))); }},
      {"gather/pick", [&] { return sum(square(add(pick(a, {0, 2, 1, 0}), sum_cols(gather_rows(a, {0, 1, 2, 3}))))); }},
      {"gather repeats", [&] { return sum(square(gather_rows(a, gather))); }},
      {"softmax", [&] { return sum(mul(softmax_rows(a), pos)); }},
      {"log_softmax", [&] { return sum(square(log_softmax_rows(a))); }},
      {"pick log_softmax", [&] { return neg(mean(pick(log_softmax_rows(a), idx))); }},
      {"logsumexp", [&] { return sum(square(logsumexp_rows(a))); }},
      {"gaussian", [&] { return sum(gaussian_log_density(a, scale(pos, 0.3), mul(a, pos))); }},
  };
  for (const auto& [name, fn] : cases) {
    CAPTURE(name);
    const GradCheck gc = grad_check(fn, {a, b, row, col, pos});
    CHECK(gc.entries == 12 + 6 + 3 + 4 + 12);
    CHECK(gc.max_rel_error <= 1e-4);
  }
}

TEST_CASE("three-layer Mlp gradients match finite differences") {
  Rng rng(5);
  for (int trial = 0; trial < 5; ++trial) {
    nn::Mlp net({3, 6, 5, 2}, rng);
    const Tensor x = random_tensor(7, 3, rng);
    const Tensor y = random_tensor(7, 2, rng);
    auto loss = [&] { return mean(square(sub(net.forward(constant(x)), constant(y)))); };
    const GradCheck gc = grad_check(loss, net.params());
    CHECK(gc.max_rel_error <= 1e-4);
    CHECK(gc.entries == 3 * 6 + 6 + 6 * 5 + 5 + 5 * 2 + 2);
  }
}

TEST_CASE("Mlp predict matches the tape forward pass") {
  Rng rng(8);
  nn::Mlp net({4, 16, 16, 3}, rng);
  const Tensor x = random_tensor(50, 4, rng);
  const Tensor taped = net.forward(constant(x)).value();
  CHECK((net.predict(x) - taped).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(net.predict(x, Exec::parallel) == net.predict(x, Exec::serial));
  CHECK(kind_of([&] { net.predict(Tensor::Zero(2, 3)); }) == ErrorKind::dimension_mismatch);

  NamedTensors dump;
  net.export_to(dump, "q");
  nn::Mlp other({4, 16, 16, 3}, rng);
  other.import_from(tensors_from_json(tensors_to_json(dump)), "q");
  CHECK(other.predict(x) == net.predict(x));
  nn::Mlp copy = net.clone();
  copy.params()[0].mutable_value()(0, 0) += 1.0;
  CHECK(copy.predict(x) != net.predict(x));
}

TEST_CASE("mixture log density at known points") {
  SUBCASE("single standard normal at its mode") {
    Var out = mog_log_density(constant(Tensor::Zero(1, 1)), constant(Tensor::Zero(1, 1)), constant(Tensor::Zero(1, 1)),
                              constant(Tensor::Zero(1, 1)));
    CHECK(out.scalar() == doctest::Approx(-0.5 * std::log(2.0 * std::numbers::pi)).epsilon(1e-12));
    CHECK(out.scalar() == doctest::Approx(-0.9189).epsilon(1e-4));
  }
  SUBCASE("two equal components at +-1") {
    Tensor means(1, 2);
    means << -1.0, 1.0;
    Var out = mog_log_density(constant(Tensor::Zero(1, 2)), constant(means), constant(Tensor::Zero(1, 2)),
                              constant(Tensor::Zero(1, 1)));
    const double direct = std::log(0.5 * std::exp(-0.5) * 2.0 / std::sqrt(2.0 * std::numbers::pi));
    CHECK(out.scalar() == doctest::Approx(direct).epsilon(1e-12));
    CHECK(out.scalar() == doctest::Approx(-1.4189).epsilon(1e-4));
  }
  SUBCASE("matches the summed component densities") {
    Rng rng(3);
    const Tensor lg = random_tensor(6, 3, rng), mu = random_tensor(6, 3, rng), ls = random_tensor(6, 3, rng, 0.5);
    const Tensor y = random_tensor(6, 1, rng);
    const Tensor out = mog_log_density(constant(lg), constant(mu), constant(ls), constant(y)).value();
    for (int i = 0; i < 6; ++i) {
      const Eigen::ArrayXd w = lg.row(i).array().exp() / lg.row(i).array().exp().sum();
      double p = 0.0;
      for (int k = 0; k < 3; ++k) p += w(k) * normal_pdf(y(i, 0), mu(i, k), std::exp(ls(i, k)));
      CHECK(out(i, 0) == doctest::Approx(std::log(p)).epsilon(1e-12));
    }
  }
  SUBCASE("shape errors") {
    CHECK(kind_of([] {
            mog_log_density(constant(Tensor::Zero(2, 2)), constant(Tensor::Zero(2, 2)), constant(Tensor::Zero(2, 2)),
                            constant(Tensor::Zero(3, 1)));
          }) == ErrorKind::dimension_mismatch);
    CHECK(kind_of([] {
            mog_log_density(constant(Tensor::Zero(2, 2)), constant(Tensor::Zero(2, 3)), constant(Tensor::Zero(2, 2)),
                            constant(Tensor::Zero(2, 1)));
          }) == ErrorKind::dimension_mismatch);
  }
}

TEST_CASE("mixture gradients match finite differences") {
  Rng rng(21);
  for (int trial = 0; trial < 20; ++trial) {
    Var lg = parameter(random_tensor(5, 2, rng));
    Var mu = parameter(random_tensor(5, 2, rng));
    Var ls = parameter(random_tensor(5, 2, rng, 0.5));
    Var y = parameter(random_tensor(5, 1, rng));
    auto loss = [&] { return neg(sum(mog_log_density(lg, mu, ls, y))); };
    CHECK(grad_check(loss, {lg, mu, ls, y}).max_rel_error <= 1e-4);
  }
}

TEST_CASE("mixture density heads integrate to one") {
  Rng rng(99);
  for (int trial = 0; trial < 50; ++trial) {
    nn::MogHead head(2, {8}, 2, rng);
    const Tensor input = random_tensor(1, 2, rng);
    const int n = 20001;
    Tensor grid(n, 1);
    for (int i = 0; i < n; ++i) grid(i, 0) = -10.0 + 20.0 * i / (n - 1);
    const Tensor in = input.replicate(n, 1);
    const Tensor lp = head.log_density(constant(in), constant(grid)).value();
    const Eigen::ArrayXd p = lp.col(0).array().exp();
    const double h = 20.0 / (n - 1);
    const double integral = h * (p.sum() - 0.5 * (p(0) + p(n - 1)));
    CHECK(integral == doctest::Approx(1.0).epsilon(1e-3));

    const nn::MogParams mp = head.params_for(constant(input));
    CHECK(softmax_rows(mp.logits).value().sum() == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(mp.log_sigmas.value().cwiseAbs().maxCoeff() < nn::kLogSigmaBound);
  }
}

TEST_CASE("mixture head samples follow the mixture mean") {
  Rng rng(4);
  nn::MogHead head(1, {4}, 2, rng);
  const Tensor in = Tensor::Constant(20000, 1, 0.3);
  const Eigen::VectorXd draws = head.sample(in, rng);
  const double m = head.mean(in.topRows(1))(0);
  const double sd = std::sqrt((draws.array() - draws.mean()).square().mean());
  CHECK(std::abs(draws.mean() - m) < 4.0 * sd / std::sqrt(20000.0));
}

TEST_CASE("softmax and log-sum-exp are stable") {
  Tensor a(3, 4);
  a << 700, 699, -700, 0, -700, -700, -700, -700, 1, 2, 3, 4;
  const Tensor s = softmax_rows(constant(a)).value();
  for (int i = 0; i < 3; ++i) CHECK(std::abs(s.row(i).sum() - 1.0) <= 1e-12);
  const Tensor l = logsumexp_rows(constant(a)).value();
  CHECK(std::isfinite(l(0, 0)));
  CHECK(l(0, 0) == doctest::Approx(700.0 + std::log(1.0 + std::exp(-1.0))).epsilon(1e-12));
  CHECK(l(1, 0) == doctest::Approx(-700.0 + std::log(4.0)).epsilon(1e-12));
  const Tensor ls = log_softmax_rows(constant(a)).value();
  CHECK(ls.allFinite());
}

TEST_CASE("Adam updates") {
  AdamConfig cfg;
  SUBCASE("zero gradient leaves parameters unchanged") {
    Tensor p = Tensor::Constant(2, 2, 1.5);
    AdamState st;
    for (int i = 0; i < 10; ++i) adam_step(p, Tensor::Zero(2, 2), st, cfg);
    CHECK(p == Tensor::Constant(2, 2, 1.5));
  }
  SUBCASE("first step moves by about lr") {
    for (double g : {0.001, 1.0, -250.0}) {
      Tensor p = Tensor::Zero(1, 1);
      AdamState st;
      adam_step(p, Tensor::Constant(1, 1, g), st, cfg);
      CHECK(std::abs(p(0, 0)) == doctest::Approx(cfg.lr).epsilon(1e-4));
      CHECK(p(0, 0) * g < 0.0);
    }
  }
  SUBCASE("quadratic bowl within 500 steps") {
    Var x = parameter(Tensor::Constant(1, 1, 1.0));
    Adam opt({x}, cfg);
    for (int i = 0; i < 500; ++i) {
      opt.zero_grad();
      backward(square(x));
      opt.step();
    }
    CHECK(std::abs(x.scalar()) < 1e-3);
  }
  SUBCASE("deterministic given state") {
    Tensor p1 = Tensor::Constant(1, 3, 0.2), p2 = p1;
    AdamState s1, s2;
    Rng rng(1);
    for (int i = 0; i < 20; ++i) {
      const Tensor g = random_tensor(1, 3, rng);
      adam_step(p1, g, s1, cfg);
      adam_step(p2, g, s2, cfg);
    }
    CHECK(p1 == p2);
  }
  SUBCASE("shape mismatch") {
    Tensor p = Tensor::Zero(2, 2);
    AdamState st;
    CHECK(kind_of([&] { adam_step(p, Tensor::Zero(2, 1), st, cfg); }) == ErrorKind::shape_mismatch);
  }
}

TEST_CASE("sgd follows the negative gradient") {
  Var x = parameter(Tensor::Constant(1, 1, 2.0));
  backward(square(x));
  sgd_step({x}, 0.1);
  CHECK(x.scalar() == doctest::Approx(2.0 - 0.1 * 4.0));
}

TEST_CASE("tensor checkpoints round trip") {
  Rng rng(2);
  NamedTensors t{{"a", random_tensor(2, 3, rng)}, {"b", random_tensor(1, 1, rng)}, {"empty", Tensor(0, 4)}};
  const auto back = tensors_from_json(nlohmann::json::parse(tensors_to_json(t).dump()));
  REQUIRE(back.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(back[i].first == t[i].first);
    CHECK(back[i].second == t[i].second);
  }
  auto bad = tensors_to_json(t);
  bad["version"] = 99;
  CHECK(kind_of([&] { tensors_from_json(bad); }) == ErrorKind::parse_error);
  bad = tensors_to_json(t);
  bad["tensors"][0]["rows"] = 5;
  CHECK(kind_of([&] { tensors_from_json(bad); }) == ErrorKind::parse_error);
}
