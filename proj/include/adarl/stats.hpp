#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "adarl/dbn.hpp"
#include "adarl/envs.hpp"
#include "adarl/kernels.hpp"

namespace adarl::stats {

struct CiResult {
  double statistic = 0.0;
  double p_value = 1.0;
  long n_effective = 0;
  int conditioning_size = 0;
  bool independent = true;
};

/// Partial correlation of columns x and y given columns z, read off the
/// inverse of the covariance submatrix over {x, y} ∪ z.
double partial_correlation(const Eigen::MatrixXd& data, int x, int y, const std::vector<int>& z);

/// Same estimator from a precomputed covariance (or correlation) matrix.
double partial_correlation_cov(const Eigen::MatrixXd& cov, int x, int y, const std::vector<int>& z);

CiResult fisher_z_test(double rho, long n, int cond_size, double alpha);

/// Standard normal upper tail doubled: 2 * (1 - Phi(|z|)).
double two_sided_normal_p(double z);

// --- structure recovery ----------------------------------------------------

struct EdgeTest {
  std::string parent;  // "s3", "a"
  std::string child;   // "s1'", "r"
  double p_value = 0.0;  // largest p-value over the searched conditioning sets
  std::vector<std::string> separating_set;
  bool present = false;
};

struct RecoveredStructure {
  dbn::MaskSet masks;              // css, cas, csr, car filled; the rest zero
  std::vector<bool> state_change;  // theta^s edge into s_i
  bool reward_change = false;      // theta^r edge into r
  double alpha = 0.01;
  std::vector<EdgeTest> edges;
  std::vector<double> state_change_p;
  double reward_change_p = 1.0;
};

/// exhaustive: every subset of the other time-t variables.
/// adjacency: PC-stable levels, subsets of the child's current parents only.
enum class ConditioningSearch { exhaustive, adjacency };

/// Conditioning set of the change-flag test: the child's recovered parents,
/// or every time-t variable (robust to a missed parent).
enum class FlagConditioning { recovered_parents, all_time_t };

struct RecoveryOptions {
  double alpha = 0.01;
  int max_conditioning = 3;  // time-t variables; the domain index is always added
  Exec exec = Exec::parallel;
  ConditioningSearch search = ConditioningSearch::exhaustive;
  FlagConditioning flags_given = FlagConditioning::recovered_parents;
};

/// Regression view of an observed-state dataset: one row per consecutive pair
/// (s_t, a_t, r_{t+1}, s_{t+1}) plus one-hot domain indicators (first domain
/// dropped). Actions are coded as -1/+1.
struct TransitionTable {
  Eigen::MatrixXd data;
  int d = 0;
  int n_domains = 0;
  int col_state(int i) const { return i; }
  int col_action() const { return d; }
  int col_next(int i) const { return d + 1 + i; }
  int col_reward() const { return 2 * d + 1; }
  int col_indicator(int j) const { return 2 * d + 2 + j; }
  std::vector<int> indicators() const;
};

TransitionTable transition_table(const envs::TrajectoryDataset& data);

RecoveredStructure recover_mdp_structure(const envs::TrajectoryDataset& data, const RecoveryOptions& opts = {});
RecoveredStructure recover_mdp_structure(const TransitionTable& table, const RecoveryOptions& opts = {});

/// Edge-level precision/recall over css, cas, csr and car.
double edge_f1(const dbn::MaskSet& truth, const dbn::MaskSet& estimate);

nlohmann::json to_json(const RecoveredStructure& r);
std::string edge_csv(const RecoveredStructure& r);

// --- change localization in POMDPs -------------------------------------------

enum class ChangeCase { C1, C2, C3, C4, general };
std::string to_string(ChangeCase c);

struct Localization {
  bool obs_independent = false;     // o_t independent of k
  bool action_independent = false;  // a_t independent of k given r_{t+1}
  double obs_p = 1.0;
  double action_p = 1.0;
  ChangeCase label = ChangeCase::general;
  /// Every case whose antecedent holds under the two verdicts.
  std::vector<ChangeCase> cases;
  /// Change-factor blocks to estimate: subset of {theta_s, theta_o, theta_r}.
  std::vector<std::string> theta_set;
  bool no_detectable_change = false;
};

Localization localize_changes_pomdp(const envs::TrajectoryDataset& data, double alpha = 0.01);
/// Decision table alone, for given verdicts.
Localization classify_changes(bool obs_independent, bool action_independent);

nlohmann::json to_json(const Localization& l);

// --- Wilcoxon signed-rank ------------------------------------------------------

struct WilcoxonResult {
  double w_plus = 0.0;
  int n_used = 0;  // nonzero differences
  double p_value = 1.0;
  bool exact = false;
};

/// Two-sided test of paired samples. Exact null distribution for fewer than
/// 20 nonzero differences, tie-corrected normal approximation above.
WilcoxonResult wilcoxon_signed_rank(const std::vector<double>& a, const std::vector<double>& b);

double spearman(const std::vector<double>& x, const std::vector<double>& y);
double pearson(const std::vector<double>& x, const std::vector<double>& y);
/// Midranks, 1-based.
std::vector<double> ranks(const std::vector<double>& x);

double mean(const std::vector<double>& x);
/// Sample standard deviation; 0 for fewer than two values.
double stddev(const std::vector<double>& x);

}  // namespace adarl::stats
