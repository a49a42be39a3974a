#include "adarl/stats.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <map>
#include <numeric>

#include <Eigen/Eigenvalues>

#include "adarl/error.hpp"
#include "adarl/io.hpp"

namespace adarl::stats {

double two_sided_normal_p(double z) { return std::erfc(std::abs(z) / std::sqrt(2.0)); }

double partial_correlation_cov(const Eigen::MatrixXd& cov, int x, int y, const std::vector<int>& z) {
  if (x == y) throw Error(ErrorKind::invalid_argument, "partial correlation needs distinct columns");
  std::vector<int> idx{x, y};
  idx.insert(idx.end(), z.begin(), z.end());
  const auto k = static_cast<Eigen::Index>(idx.size());
  Eigen::MatrixXd c(k, k);
  for (Eigen::Index i = 0; i < k; ++i) {
    const double vi = cov(idx[i], idx[i]);
    if (!(vi > 0.0)) throw Error(ErrorKind::singular_conditioning_set, "zero-variance column");
    for (Eigen::Index j = 0; j < k; ++j) c(i, j) = cov(idx[i], idx[j]) / std::sqrt(vi * cov(idx[j], idx[j]));
  }
  if (z.empty()) return std::clamp(c(0, 1), -1.0, 1.0);

  const Eigen::Index m = k - 2;
  const Eigen::MatrixXd czz = c.bottomRightCorner(m, m);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(czz, Eigen::EigenvaluesOnly);
  if (es.eigenvalues().minCoeff() < 1e-10) {
    throw Error(ErrorKind::singular_conditioning_set, "conditioning columns are collinear");
  }
  const Eigen::LDLT<Eigen::MatrixXd> solver(czz);
  const Eigen::MatrixXd czxy = c.bottomLeftCorner(m, 2);
  const Eigen::Matrix2d resid = c.topLeftCorner(2, 2) - czxy.transpose() * solver.solve(czxy);
  // A variable fixed by the conditioning set carries no remaining dependence.
  if (!(resid(0, 0) > 1e-12) || !(resid(1, 1) > 1e-12)) return 0.0;
  return std::clamp(resid(0, 1) / std::sqrt(resid(0, 0) * resid(1, 1)), -1.0, 1.0);
}

double partial_correlation(const Eigen::MatrixXd& data, int x, int y, const std::vector<int>& z) {
  if (data.rows() < static_cast<Eigen::Index>(z.size()) + 4) {
    throw Error(ErrorKind::insufficient_samples, "partial correlation needs |z| + 4 samples");
  }
  std::vector<int> cols{x, y};
  cols.insert(cols.end(), z.begin(), z.end());
  Eigen::MatrixXd sub(data.rows(), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t i = 0; i < cols.size(); ++i) sub.col(static_cast<Eigen::Index>(i)) = data.col(cols[i]);
  std::vector<int> zi(z.size());
  std::iota(zi.begin(), zi.end(), 2);
  return partial_correlation_cov(kernels::covariance(sub, Exec::serial), 0, 1, zi);
}

CiResult fisher_z_test(double rho, long n, int cond_size, double alpha) {
  if (!(std::abs(rho) < 1.0)) throw Error(ErrorKind::degenerate_rho, "|rho| must be below 1");
  if (n <= cond_size + 3) throw Error(ErrorKind::insufficient_samples, "Fisher z needs n > |z| + 3");
  CiResult r;
  r.n_effective = n;
  r.conditioning_size = cond_size;
  r.statistic = std::sqrt(static_cast<double>(n - cond_size - 3)) * std::atanh(rho);
  r.p_value = std::clamp(two_sided_normal_p(r.statistic), 0.0, 1.0);
  r.independent = r.p_value >= alpha;
  return r;
}

// --- structure recovery ----------------------------------------------------

std::vector<int> TransitionTable::indicators() const {
  std::vector<int> out(n_domains - 1);
  for (int j = 0; j < n_domains - 1; ++j) out[j] = col_indicator(j);
  return out;
}

namespace {

std::map<int, int> domain_index(const envs::TrajectoryDataset& data) {
  std::map<int, int> index;
  for (int id : data.domain_ids()) index.emplace(id, static_cast<int>(index.size()));
  return index;
}

}  // namespace

TransitionTable transition_table(const envs::TrajectoryDataset& data) {
  const auto index = domain_index(data);
  if (index.size() < 2) throw Error(ErrorKind::fewer_than_two_domains, "structure recovery needs >= 2 domains");
  TransitionTable t;
  t.n_domains = static_cast<int>(index.size());
  std::size_t rows = 0;
  for (const auto& e : data.episodes) {
    if (e.empty()) continue;
    t.d = static_cast<int>(e.front().obs.size());
    rows += e.size() - 1;
  }
  t.data = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(rows), 2 * t.d + 2 + t.n_domains - 1);
  Eigen::Index row = 0;
  for (const auto& e : data.episodes) {
    for (std::size_t i = 0; i + 1 < e.size(); ++i) {
      const auto& cur = e[i];
      const auto& nxt = e[i + 1];
      if (static_cast<int>(cur.obs.size()) != t.d || static_cast<int>(nxt.obs.size()) != t.d) {
        throw Error(ErrorKind::dimension_mismatch, "observation width varies across transitions");
      }
      for (int s = 0; s < t.d; ++s) {
        t.data(row, t.col_state(s)) = cur.obs[s];
        t.data(row, t.col_next(s)) = nxt.obs[s];
      }
      t.data(row, t.col_action()) = cur.action == 1 ? 1.0 : -1.0;
      t.data(row, t.col_reward()) = cur.reward;
      const int k = index.at(cur.domain_id);
      if (k > 0) t.data(row, t.col_indicator(k - 1)) = 1.0;
      ++row;
    }
  }
  return t;
}

namespace {

/// All subsets of {0..n-1} of size <= max_size, smallest first, then lexicographic.
std::vector<std::vector<int>> subsets_up_to(int n, int max_size) {
  std::vector<std::vector<int>> out{{}};
  for (int size = 1; size <= std::min(n, max_size); ++size) {
    std::vector<int> pick(size);
    std::iota(pick.begin(), pick.end(), 0);
    while (true) {
      out.push_back(pick);
      int i = size - 1;
      while (i >= 0 && pick[i] == n - size + i) --i;
      if (i < 0) break;
      ++pick[i];
      for (int j = i + 1; j < size; ++j) pick[j] = pick[j - 1] + 1;
    }
  }
  return out;
}

struct Var {
  int col;
  std::string name;
};

/// Bonferroni-corrected dependence of `child` on any domain indicator.
double domain_dependence_p(const Eigen::MatrixXd& cov, long n, int child, const std::vector<int>& given,
                           const std::vector<int>& indicators) {
  if (!(cov(child, child) > 0.0)) return 1.0;
  double best = 1.0;
  for (int ind : indicators) {
    const double rho = partial_correlation_cov(cov, child, ind, given);
    const double p = std::abs(rho) >= 1.0 ? 0.0 : fisher_z_test(rho, n, static_cast<int>(given.size()), 0.5).p_value;
    best = std::min(best, p);
  }
  return std::min(1.0, best * static_cast<double>(indicators.size()));
}

}  // namespace

RecoveredStructure recover_mdp_structure(const TransitionTable& t, const RecoveryOptions& opts) {
  if (t.n_domains < 2) throw Error(ErrorKind::fewer_than_two_domains, "structure recovery needs >= 2 domains");
  const long n = t.data.rows();
  const auto indicators = t.indicators();
  const int widest = opts.max_conditioning + static_cast<int>(indicators.size()) + t.d;
  if (n <= widest + 3) throw Error(ErrorKind::insufficient_samples, "too few transitions for the CI tests");

  const Eigen::MatrixXd cov = kernels::covariance(t.data, opts.exec);
  const int d = t.d;
  // Constant columns (e.g. a reward that never varies) have no edges.
  auto constant = [&](int col) { return !(cov(col, col) > 1e-14); };

  std::vector<Var> parents;
  for (int j = 0; j < d; ++j) parents.push_back({t.col_state(j), "s" + std::to_string(j)});
  parents.push_back({t.col_action(), "a"});
  std::vector<Var> children;
  for (int i = 0; i < d; ++i) children.push_back({t.col_next(i), "s" + std::to_string(i) + "'"});
  children.push_back({t.col_reward(), "r"});

  const int n_parents = static_cast<int>(parents.size());
  const int n_pairs = static_cast<int>(children.size()) * n_parents;
  std::vector<EdgeTest> edges(n_pairs);

  auto test_with = [&](int pair, const std::vector<int>& pool, const std::vector<std::vector<int>>& sets,
                       EdgeTest& e) {
    const Var& child = children[pair / n_parents];
    const Var& parent = parents[pair % n_parents];
    if (constant(child.col) || constant(parent.col)) {
      e.present = false;
      e.p_value = 1.0;
      e.separating_set = {"k"};
      return;
    }
    for (const auto& subset : sets) {
      std::vector<int> z = indicators;
      for (int s : subset) {
        if (!constant(parents[pool[s]].col)) z.push_back(parents[pool[s]].col);
      }
      const double rho = partial_correlation_cov(cov, parent.col, child.col, z);
      const double p = std::abs(rho) >= 1.0 ? 0.0 : fisher_z_test(rho, n, static_cast<int>(z.size()), opts.alpha).p_value;
      if (p > e.p_value) e.p_value = p;
      if (p >= opts.alpha) {
        e.present = false;
        e.separating_set = {"k"};
        for (int s : subset) e.separating_set.push_back(parents[pool[s]].name);
        return;
      }
    }
  };
  for (int pair = 0; pair < n_pairs; ++pair) {
    edges[pair] = {parents[pair % n_parents].name, children[pair / n_parents].name, 0.0, {}, true};
  }
  auto run = [&](auto&& body) {
    if (opts.exec == Exec::parallel) {
      std::vector<std::exception_ptr> errors(static_cast<std::size_t>(n_pairs));
#pragma omp parallel for schedule(dynamic, 1)
      for (int pair = 0; pair < n_pairs; ++pair) {
        try {
          body(pair);
        } catch (...) {
          errors[static_cast<std::size_t>(pair)] = std::current_exception();
        }
      }
      for (const auto& e : errors) {
        if (e) std::rethrow_exception(e);
      }
    } else {
      for (int pair = 0; pair < n_pairs; ++pair) body(pair);
    }
  };

  if (opts.search == ConditioningSearch::exhaustive) {
    const auto subsets = subsets_up_to(n_parents - 1, opts.max_conditioning);
    run([&](int pair) {
      const int pi = pair % n_parents;
      std::vector<int> pool;
      for (int j = 0; j < n_parents; ++j) {
        if (j != pi) pool.push_back(j);
      }
      test_with(pair, pool, subsets, edges[pair]);
    });
  } else {
    // Level-wise, with adjacency sets frozen at the start of each level.
    for (int level = 0; level <= opts.max_conditioning; ++level) {
      std::vector<char> snapshot(n_pairs);
      for (int pair = 0; pair < n_pairs; ++pair) snapshot[pair] = edges[pair].present;
      run([&](int pair) {
        if (!edges[pair].present) return;
        const int ci = pair / n_parents;
        const int pi = pair % n_parents;
        std::vector<int> pool;
        for (int j = 0; j < n_parents; ++j) {
          if (j != pi && snapshot[ci * n_parents + j]) pool.push_back(j);
        }
        if (static_cast<int>(pool.size()) < level) return;
        std::vector<std::vector<int>> sets;
        for (auto& s : subsets_up_to(static_cast<int>(pool.size()), level)) {
          if (static_cast<int>(s.size()) == level) sets.push_back(std::move(s));
        }
        test_with(pair, pool, sets, edges[pair]);
      });
    }
  }

  RecoveredStructure out;
  out.alpha = opts.alpha;
  out.masks = dbn::MaskSet::zeros(d, 0);
  out.edges = edges;
  auto present = [&](int child, int parent) { return edges[child * n_parents + parent].present; };
  for (int i = 0; i < d; ++i) {
    for (int j = 0; j < d; ++j) out.masks.css[i][j] = present(i, j) ? 1 : 0;
    out.masks.cas[i] = present(i, d) ? 1 : 0;
  }
  for (int j = 0; j < d; ++j) out.masks.csr[j] = present(d, j) ? 1 : 0;
  out.masks.car = present(d, d) ? 1 : 0;

  auto recovered_parents = [&](int child) {
    std::vector<int> cols;
    for (int j = 0; j < n_parents; ++j) {
      if ((opts.flags_given == FlagConditioning::all_time_t || present(child, j)) && !constant(parents[j].col))
        cols.push_back(parents[j].col);
    }
    return cols;
  };
  out.state_change.assign(d, false);
  out.state_change_p.assign(d, 1.0);
  for (int i = 0; i < d; ++i) {
    out.state_change_p[i] = domain_dependence_p(cov, n, children[i].col, recovered_parents(i), indicators);
    out.state_change[i] = out.state_change_p[i] < opts.alpha;
  }
  out.reward_change_p = domain_dependence_p(cov, n, t.col_reward(), recovered_parents(d), indicators);
  out.reward_change = out.reward_change_p < opts.alpha;
  return out;
}

RecoveredStructure recover_mdp_structure(const envs::TrajectoryDataset& data, const RecoveryOptions& opts) {
  return recover_mdp_structure(transition_table(data), opts);
}

double edge_f1(const dbn::MaskSet& truth, const dbn::MaskSet& est) {
  if (truth.d != est.d) throw Error(ErrorKind::dimension_mismatch, "masks of different size");
  int tp = 0, fp = 0, fn = 0;
  auto tally = [&](int t, int e) {
    if (t && e) ++tp;
    if (!t && e) ++fp;
    if (t && !e) ++fn;
  };
  for (int i = 0; i < truth.d; ++i) {
    for (int j = 0; j < truth.d; ++j) tally(truth.css[i][j], est.css[i][j]);
    tally(truth.cas[i], est.cas[i]);
    tally(truth.csr[i], est.csr[i]);
  }
  tally(truth.car, est.car);
  if (tp + fp + fn == 0) return 1.0;
  return 2.0 * tp / (2.0 * tp + fp + fn);
}

nlohmann::json to_json(const RecoveredStructure& r) {
  return {{"masks", dbn::to_json(r.masks)},
          {"alpha", r.alpha},
          {"state_change", r.state_change},
          {"state_change_p", r.state_change_p},
          {"reward_change", r.reward_change},
          {"reward_change_p", r.reward_change_p}};
}

std::string edge_csv(const RecoveredStructure& r) {
  std::string out = io::csv_line({"parent", "child", "p_value", "present", "separating_set"});
  for (const auto& e : r.edges) {
    std::string sep;
    for (std::size_t i = 0; i < e.separating_set.size(); ++i) sep += (i ? " " : "") + e.separating_set[i];
    out += io::csv_line({e.parent, e.child, io::format_double(e.p_value), e.present ? "1" : "0", sep});
  }
  return out;
}

// --- change localization -------------------------------------------------------

std::string to_string(ChangeCase c) {
  switch (c) {
    case ChangeCase::C1: return "C1";
    case ChangeCase::C2: return "C2";
    case ChangeCase::C3: return "C3";
    case ChangeCase::C4: return "C4";
    case ChangeCase::general: return "general";
  }
  return "?";
}

Localization classify_changes(bool obs_independent, bool action_independent) {
  Localization l;
  l.obs_independent = obs_independent;
  l.action_independent = action_independent;
  if (obs_independent && action_independent) {
    l.label = ChangeCase::C1;
    l.cases = {ChangeCase::C1, ChangeCase::C3};
    l.no_detectable_change = true;
  } else if (obs_independent) {
    l.label = ChangeCase::C2;
    l.cases = {ChangeCase::C1, ChangeCase::C2};
    l.theta_set = {"theta_r"};
  } else if (action_independent) {
    l.label = ChangeCase::C4;
    l.cases = {ChangeCase::C3, ChangeCase::C4};
    l.theta_set = {"theta_o", "theta_s"};
  } else {
    l.label = ChangeCase::general;
    l.cases = {ChangeCase::general};
    l.theta_set = {"theta_o", "theta_r", "theta_s"};
  }
  return l;
}

namespace {

Eigen::VectorXd residual(const Eigen::MatrixXd& table, int x, const std::vector<int>& given) {
  Eigen::MatrixXd z(table.rows(), static_cast<Eigen::Index>(given.size()) + 1);
  z.col(0).setOnes();
  for (std::size_t j = 0; j < given.size(); ++j) z.col(static_cast<Eigen::Index>(j) + 1) = table.col(given[j]);
  Eigen::VectorXd r = table.col(x);
  return r - z * z.colPivHouseholderQr().solve(r);
}

/// Integrated autocorrelation time of the score u_t = e_x,t * e_y,t whose mean
/// the correlation test assesses (e = residuals given the conditioning set).
/// u is demeaned per domain and autocorrelations are taken within episodes.
double autocorrelation_time(const Eigen::MatrixXd& table, int x, int y, const std::vector<int>& given,
                            const std::vector<int>& domain_of_row, const std::vector<Eigen::Index>& episode_start) {
  const Eigen::Index n = table.rows();
  Eigen::VectorXd u = residual(table, x, given).cwiseProduct(residual(table, y, given));
  std::map<int, std::pair<double, int>> sums;
  for (Eigen::Index i = 0; i < n; ++i) {
    auto& [s, c] = sums[domain_of_row[i]];
    s += u(i);
    ++c;
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& [s, c] = sums[domain_of_row[i]];
    u(i) -= s / c;
  }
  const double var = u.squaredNorm();
  if (!(var > 0.0)) return 1.0;

  std::vector<Eigen::Index> bounds = episode_start;
  bounds.push_back(n);
  double tau = 1.0;
  for (int lag = 1; lag <= 200; ++lag) {
    double acc = 0.0;
    for (std::size_t e = 0; e + 1 < bounds.size(); ++e) {
      for (Eigen::Index i = bounds[e]; i + lag < bounds[e + 1]; ++i) acc += u(i) * u(i + lag);
    }
    const double rho = acc / var;
    if (rho < 0.05) break;
    tau += 2.0 * rho;
  }
  return tau;
}

double deflated_p(double rho, double n_eff, int cond_size) {
  if (std::abs(rho) >= 1.0) return 0.0;
  const double dof = n_eff - cond_size - 3.0;
  if (dof <= 1.0) return 1.0;
  return std::clamp(two_sided_normal_p(std::sqrt(dof) * std::atanh(rho)), 0.0, 1.0);
}

}  // namespace

Localization localize_changes_pomdp(const envs::TrajectoryDataset& data, double alpha) {
  const auto index = domain_index(data);
  if (index.size() < 2) throw Error(ErrorKind::fewer_than_two_domains, "localization needs >= 2 domains");
  const auto n = static_cast<Eigen::Index>(data.size());
  if (n == 0) throw Error(ErrorKind::insufficient_samples, "empty dataset");
  const int m = static_cast<int>(data.episodes.front().front().obs.size());
  const int nd = static_cast<int>(index.size());
  if (n <= nd + 4) throw Error(ErrorKind::insufficient_samples, "too few transitions for localization");
  // columns: o (m), a, r, indicators (nd - 1)
  Eigen::MatrixXd table = Eigen::MatrixXd::Zero(n, m + 2 + nd - 1);
  std::vector<int> domain_of_row(n);
  std::vector<Eigen::Index> episode_start;
  Eigen::Index row = 0;
  for (const auto& e : data.episodes) {
    episode_start.push_back(row);
    for (const auto& tr : e) {
      if (static_cast<int>(tr.obs.size()) != m) throw Error(ErrorKind::dimension_mismatch, "observation width");
      for (int i = 0; i < m; ++i) table(row, i) = tr.obs[i];
      table(row, m) = tr.action == 1 ? 1.0 : -1.0;
      table(row, m + 1) = tr.reward;
      const int k = index.at(tr.domain_id);
      domain_of_row[row] = k;
      if (k > 0) table(row, m + 1 + k) = 1.0;
      ++row;
    }
  }
  const Eigen::MatrixXd cov = kernels::covariance(table);
  std::vector<int> indicators(nd - 1);
  std::iota(indicators.begin(), indicators.end(), m + 2);
  const double n_rows = static_cast<double>(n);

  double obs_min = 1.0;
  for (int i = 0; i < m; ++i) {
    for (int ind : indicators) {
      const double n_eff = n_rows / autocorrelation_time(table, i, ind, {}, domain_of_row, episode_start);
      obs_min = std::min(obs_min, deflated_p(partial_correlation_cov(cov, i, ind, {}), n_eff, 0));
    }
  }
  const double obs_p = std::min(1.0, obs_min * m * static_cast<double>(indicators.size()));

  double action_min = 1.0;
  for (int ind : indicators) {
    const double n_eff = n_rows / autocorrelation_time(table, m, ind, {m + 1}, domain_of_row, episode_start);
    action_min = std::min(action_min, deflated_p(partial_correlation_cov(cov, m, ind, {m + 1}), n_eff, 1));
  }
  const double action_p = std::min(1.0, action_min * static_cast<double>(indicators.size()));

  Localization l = classify_changes(obs_p >= alpha, action_p >= alpha);
  l.obs_p = obs_p;
  l.action_p = action_p;
  return l;
}

nlohmann::json to_json(const Localization& l) {
  std::vector<std::string> cases;
  for (auto c : l.cases) cases.push_back(to_string(c));
  return {{"obs_independent", l.obs_independent},
          {"action_independent", l.action_independent},
          {"obs_p", l.obs_p},
          {"action_p", l.action_p},
          {"label", to_string(l.label)},
          {"cases", cases},
          {"theta_set", l.theta_set},
          {"no_detectable_change", l.no_detectable_change}};
}

// --- Wilcoxon ------------------------------------------------------------------

std::vector<double> ranks(const std::vector<double>& x) {
  std::vector<std::size_t> order(x.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> r(x.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && x[order[j + 1]] == x[order[i]]) ++j;
    const double mid = (static_cast<double>(i + j) + 2.0) / 2.0;
    for (std::size_t k = i; k <= j; ++k) r[order[k]] = mid;
    i = j + 1;
  }
  return r;
}

WilcoxonResult wilcoxon_signed_rank(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw Error(ErrorKind::length_mismatch, "paired samples differ in length");
  if (a.size() < 6) throw Error(ErrorKind::insufficient_samples, "Wilcoxon test needs at least 6 pairs");
  std::vector<double> diff;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    if (d != 0.0) diff.push_back(d);
  }
  if (diff.empty()) throw Error(ErrorKind::all_ties, "all paired differences are zero");

  std::vector<double> mag(diff.size());
  std::transform(diff.begin(), diff.end(), mag.begin(), [](double d) { return std::abs(d); });
  const auto r = ranks(mag);
  const int n = static_cast<int>(diff.size());

  WilcoxonResult out;
  out.n_used = n;
  for (int i = 0; i < n; ++i) {
    if (diff[i] > 0.0) out.w_plus += r[i];
  }

  if (n < 20) {
    out.exact = true;
    // Null distribution of 2 * W+ over all 2^n sign assignments.
    std::vector<int> doubled(n);
    for (int i = 0; i < n; ++i) doubled[i] = static_cast<int>(std::lround(2.0 * r[i]));
    const int total = std::accumulate(doubled.begin(), doubled.end(), 0);
    std::vector<double> count(total + 1, 0.0);
    count[0] = 1.0;
    for (int w : doubled) {
      for (int v = total; v >= w; --v) count[v] += count[v - w];
    }
    const double centre = total / 2.0;
    const double observed = std::abs(2.0 * out.w_plus - centre);
    double tail = 0.0;
    for (int v = 0; v <= total; ++v) {
      if (std::abs(v - centre) >= observed - 1e-9) tail += count[v];
    }
    out.p_value = std::min(1.0, tail / std::ldexp(1.0, n));
    return out;
  }

  const double nn = n;
  const double mu = nn * (nn + 1.0) / 4.0;
  double var = nn * (nn + 1.0) * (2.0 * nn + 1.0) / 24.0;
  std::map<double, int> ties;
  for (double v : r) ++ties[v];
  for (const auto& [rank, t] : ties) var -= (std::pow(t, 3) - t) / 48.0;
  out.p_value = var > 0.0 ? std::min(1.0, two_sided_normal_p((out.w_plus - mu) / std::sqrt(var))) : 1.0;
  return out;
}

double mean(const std::vector<double>& x) {
  if (x.empty()) return 0.0;
  return std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
}

double stddev(const std::vector<double>& x) {
  if (x.size() < 2) return 0.0;
  const double m = mean(x);
  double s = 0.0;
  for (double v : x) s += (v - m) * (v - m);
  return std::sqrt(s / static_cast<double>(x.size() - 1));
}

double pearson(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) throw Error(ErrorKind::length_mismatch, "correlation inputs differ in length");
  if (x.size() < 2) throw Error(ErrorKind::insufficient_samples, "correlation needs two points");
  const double mx = mean(x), my = mean(y);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

double spearman(const std::vector<double>& x, const std::vector<double>& y) { return pearson(ranks(x), ranks(y)); }

}  // namespace adarl::stats
