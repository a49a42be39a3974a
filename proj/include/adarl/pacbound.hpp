#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace adarl::pacbound {

struct BoundInputs {
  int n = 0;                    // source domains
  std::vector<long> m;          // samples per domain
  std::vector<double> er_hat;   // per-domain training error in [0, 1]
  std::vector<double> kl{0.0};  // KL(Q || P), summed over independent dimensions
  double delta = 0.05;

  double total_kl() const;
};

/// Throws too_few_domains, length_mismatch, invalid_sample_count,
/// invalid_delta or invalid_argument.
void validate(const BoundInputs& b);

struct BoundTerms {
  std::vector<double> domain;  // er_hat_k plus its complexity term
  double task = 0.0;           // the cross-domain complexity term
  double bound = 0.0;
};

BoundTerms bound_terms(const BoundInputs& b);
double compute_bound(const BoundInputs& b);

/// Sum over dimensions of KL(N(q_mean, q_std^2) || N(p_mean, p_std^2)).
double gaussian_kl_diag(const Eigen::VectorXd& q_mean, const Eigen::VectorXd& q_std, const Eigen::VectorXd& p_mean,
                        const Eigen::VectorXd& p_std);

/// min(1, |v_hat - v_star| / v_scale).
double bounded_loss(double v_hat, double v_star, double v_scale);

/// Optimal state values of a tabular MDP. p[a] is the S x S transition
/// matrix of action a, r is S x A.
Eigen::VectorXd value_iteration(const std::vector<Eigen::MatrixXd>& p, const Eigen::MatrixXd& r, double gamma,
                                double tol = 1e-12, int max_iter = 100000);

/// Randomized tabular task family: a fixed random MDP whose rewards shift by
/// theta_k * u(s, a) in domain k, theta_k ~ N(theta_mean, theta_sd^2).
/// Hypotheses are value tables planned for a drawn theta; Q is a Gaussian
/// fitted to noisy per-domain theta estimates and P is N(0, 1).
struct CoverageSpec {
  int states = 5;
  int actions = 2;
  double gamma = 0.9;
  int n_domains = 5;
  long samples_per_domain = 50;
  double theta_mean = 0.5;
  double theta_sd = 0.3;
  double estimate_noise = 0.2;
  double v_scale = 5.0;
  int posterior_draws = 64;
  int test_domains = 400;
  double delta = 0.05;
  int trials = 200;
  std::uint64_t seed = 0;
};

struct TrialRow {
  int n = 0;
  long m = 0;
  double kl = 0.0;
  double delta = 0.0;
  double er_hat_mean = 0.0;
  double bound = 0.0;
  double realized_error = 0.0;
};

struct CoverageResult {
  std::vector<TrialRow> rows;
  int holds = 0;
  double fraction = 0.0;
};

/// Fraction of trials where the bound is at least the realized error.
CoverageResult bound_holds_empirically(const CoverageSpec& spec);

std::string coverage_csv(const std::vector<TrialRow>& rows);

}  // namespace adarl::pacbound
