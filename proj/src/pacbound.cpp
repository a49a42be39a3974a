#include "adarl/pacbound.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "adarl/error.hpp"
#include "adarl/io.hpp"
#include "adarl/rng.hpp"

namespace adarl::pacbound {

double BoundInputs::total_kl() const { return std::accumulate(kl.begin(), kl.end(), 0.0); }

void validate(const BoundInputs& b) {
  if (b.n < 2) throw Error(ErrorKind::too_few_domains, "the bound needs n >= 2 domains");
  if (static_cast<int>(b.m.size()) != b.n || static_cast<int>(b.er_hat.size()) != b.n)
    throw Error(ErrorKind::length_mismatch, "m and er_hat need one entry per domain");
  for (long mk : b.m) {
    if (mk < 2) throw Error(ErrorKind::invalid_sample_count, "every m_k must be at least 2");
  }
  if (!(b.delta > 0.0 && b.delta <= 1.0)) throw Error(ErrorKind::invalid_delta, "delta must lie in (0, 1]");
  for (double e : b.er_hat) {
    if (!(e >= 0.0 && e <= 1.0)) throw Error(ErrorKind::invalid_argument, "training errors must lie in [0, 1]");
  }
  for (double k : b.kl) {
    if (!(k >= 0.0)) throw Error(ErrorKind::invalid_argument, "KL terms must be non-negative");
  }
}

BoundTerms bound_terms(const BoundInputs& b) {
  validate(b);
  const double kl = b.total_kl();
  const double n = b.n;
  BoundTerms t;
  double sum = 0.0;
  for (int k = 0; k < b.n; ++k) {
    const double mk = static_cast<double>(b.m[static_cast<std::size_t>(k)]);
    const double term = b.er_hat[static_cast<std::size_t>(k)] +
                        std::sqrt((kl + std::log(2.0 * n * mk / b.delta)) / (2.0 * (mk - 1.0)));
    t.domain.push_back(term);
    sum += term;
  }
  t.task = std::sqrt((kl + std::log(2.0 * n / b.delta)) / (2.0 * (n - 1.0)));
  t.bound = sum / n + t.task;
  return t;
}

double compute_bound(const BoundInputs& b) { return bound_terms(b).bound; }

double gaussian_kl_diag(const Eigen::VectorXd& q_mean, const Eigen::VectorXd& q_std, const Eigen::VectorXd& p_mean,
                        const Eigen::VectorXd& p_std) {
  const auto d = q_mean.size();
  if (q_std.size() != d || p_mean.size() != d || p_std.size() != d)
    throw Error(ErrorKind::dimension_mismatch, "Gaussian parameters differ in length");
  if ((q_std.array() <= 0.0).any() || (p_std.array() <= 0.0).any())
    throw Error(ErrorKind::nonpositive_std, "standard deviations must be positive");
  double kl = 0.0;
  for (Eigen::Index i = 0; i < d; ++i) {
    const double ratio = q_std(i) / p_std(i);
    const double diff = (q_mean(i) - p_mean(i)) / p_std(i);
    kl += 0.5 * (ratio * ratio + diff * diff - 1.0) - std::log(ratio);
  }
  return kl;
}

double bounded_loss(double v_hat, double v_star, double v_scale) {
  if (!(v_scale > 0.0)) throw Error(ErrorKind::invalid_argument, "v_scale must be positive");
  return std::min(1.0, std::abs(v_hat - v_star) / v_scale);
}

Eigen::VectorXd value_iteration(const std::vector<Eigen::MatrixXd>& p, const Eigen::MatrixXd& r, double gamma,
                                double tol, int max_iter) {
  const auto s = r.rows();
  if (static_cast<Eigen::Index>(p.size()) != r.cols()) throw Error(ErrorKind::dimension_mismatch, "one matrix per action");
  for (const auto& pa : p) {
    if (pa.rows() != s || pa.cols() != s) throw Error(ErrorKind::dimension_mismatch, "transition matrix shape");
  }
  if (!(gamma >= 0.0 && gamma < 1.0)) throw Error(ErrorKind::invalid_argument, "gamma must lie in [0, 1)");
  Eigen::VectorXd v = Eigen::VectorXd::Zero(s);
  for (int it = 0; it < max_iter; ++it) {
    Eigen::MatrixXd q(s, r.cols());
    for (Eigen::Index a = 0; a < r.cols(); ++a) q.col(a) = r.col(a) + gamma * p[static_cast<std::size_t>(a)] * v;
    const Eigen::VectorXd next = q.rowwise().maxCoeff();
    const double change = (next - v).cwiseAbs().maxCoeff();
    v = next;
    if (change < tol) break;
  }
  return v;
}

namespace {

struct TabularFamily {
  std::vector<Eigen::MatrixXd> p;
  Eigen::MatrixXd r0;
  Eigen::MatrixXd u;
  double gamma = 0.9;

  Eigen::VectorXd values(double theta) const { return value_iteration(p, r0 + theta * u, gamma, 1e-10); }
};

TabularFamily sample_family(const CoverageSpec& spec, Rng& rng) {
  TabularFamily f;
  f.gamma = spec.gamma;
  for (int a = 0; a < spec.actions; ++a) {
    Eigen::MatrixXd pa(spec.states, spec.states);
    for (int i = 0; i < spec.states; ++i) {
      for (int j = 0; j < spec.states; ++j) pa(i, j) = rng.uniform(0.0, 1.0) + 1e-3;
      pa.row(i) /= pa.row(i).sum();
    }
    f.p.push_back(pa);
  }
  f.r0 = Eigen::MatrixXd::NullaryExpr(spec.states, spec.actions, [&] { return rng.uniform(0.0, 1.0); });
  f.u = Eigen::MatrixXd::NullaryExpr(spec.states, spec.actions, [&] { return rng.uniform(-1.0, 1.0); });
  return f;
}

}  // namespace

CoverageResult bound_holds_empirically(const CoverageSpec& spec) {
  if (spec.trials < 1 || spec.n_domains < 2 || spec.samples_per_domain < 2 || spec.posterior_draws < 1 ||
      spec.test_domains < 1)
    throw Error(ErrorKind::invalid_argument, "coverage budgets must be positive");
  CoverageResult out;
  out.rows.resize(static_cast<std::size_t>(spec.trials));
#pragma omp parallel for schedule(dynamic)
  for (int trial = 0; trial < spec.trials; ++trial) {
    Rng rng(derive_seed(spec.seed, static_cast<std::uint64_t>(trial)));
    const TabularFamily fam = sample_family(spec, rng);

    std::vector<double> theta(static_cast<std::size_t>(spec.n_domains)), estimate(theta.size());
    for (std::size_t k = 0; k < theta.size(); ++k) {
      theta[k] = rng.normal(spec.theta_mean, spec.theta_sd);
      estimate[k] = theta[k] + rng.normal(0.0, spec.estimate_noise);
    }
    const double mu = std::accumulate(estimate.begin(), estimate.end(), 0.0) / static_cast<double>(estimate.size());
    double var = 0.0;
    for (double e : estimate) var += (e - mu) * (e - mu);
    const double sd = std::max(0.05, std::sqrt(var / static_cast<double>(estimate.size() - 1)));
    const double kl = gaussian_kl_diag(Eigen::VectorXd::Constant(1, mu), Eigen::VectorXd::Constant(1, sd),
                                       Eigen::VectorXd::Zero(1), Eigen::VectorXd::Ones(1));

    // Posterior hypotheses: value tables planned for drawn factors.
    std::vector<Eigen::VectorXd> hyp;
    for (int j = 0; j < spec.posterior_draws; ++j) hyp.push_back(fam.values(rng.normal(mu, sd)));
    auto expected_loss = [&](const Eigen::VectorXd& v_star, int s) {
      double l = 0.0;
      for (const auto& h : hyp) l += bounded_loss(h(s), v_star(s), spec.v_scale);
      return l / static_cast<double>(hyp.size());
    };

    BoundInputs b;
    b.n = spec.n_domains;
    b.delta = spec.delta;
    b.kl = {kl};
    for (int k = 0; k < spec.n_domains; ++k) {
      const Eigen::VectorXd v_star = fam.values(theta[static_cast<std::size_t>(k)]);
      double err = 0.0;
      for (long i = 0; i < spec.samples_per_domain; ++i) err += expected_loss(v_star, rng.uniform_int(0, spec.states - 1));
      b.m.push_back(spec.samples_per_domain);
      b.er_hat.push_back(err / static_cast<double>(spec.samples_per_domain));
    }

    double realized = 0.0;
    for (int k = 0; k < spec.test_domains; ++k) {
      const Eigen::VectorXd v_star = fam.values(rng.normal(spec.theta_mean, spec.theta_sd));
      for (int s = 0; s < spec.states; ++s) realized += expected_loss(v_star, s);
    }
    realized /= static_cast<double>(spec.test_domains) * spec.states;

    TrialRow& row = out.rows[static_cast<std::size_t>(trial)];
    row.n = b.n;
    row.m = spec.samples_per_domain;
    row.kl = kl;
    row.delta = spec.delta;
    row.er_hat_mean = std::accumulate(b.er_hat.begin(), b.er_hat.end(), 0.0) / b.n;
    row.bound = compute_bound(b);
    row.realized_error = realized;
  }
  for (const auto& r : out.rows) out.holds += r.bound >= r.realized_error ? 1 : 0;
  out.fraction = static_cast<double>(out.holds) / spec.trials;
  return out;
}

std::string coverage_csv(const std::vector<TrialRow>& rows) {
  std::string out = io::csv_line({"n", "m", "kl", "delta", "er_hat_mean", "bound", "realized_error"});
  for (const auto& r : rows) {
    out += io::csv_line({std::to_string(r.n), std::to_string(r.m), io::format_double(r.kl), io::format_double(r.delta),
                         io::format_double(r.er_hat_mean), io::format_double(r.bound),
                         io::format_double(r.realized_error)});
  }
  return out;
}

}  // namespace adarl::pacbound
