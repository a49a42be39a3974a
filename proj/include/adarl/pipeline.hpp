#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "adarl/config.hpp"

namespace adarl::pipeline {

enum class Stage { generate, identify, estimate, extract, train, adapt, evaluate, bound, report };
inline constexpr Stage kAllStages[] = {Stage::generate, Stage::identify, Stage::estimate,
                                       Stage::extract,  Stage::train,    Stage::adapt,
                                       Stage::evaluate, Stage::bound,    Stage::report};
std::string to_string(Stage s);
Stage stage_from_string(const std::string& s);

inline const std::vector<std::string> kMethods{"AdaRL", "AdaRL_star", "Non_t", "Oracle"};

struct RunOptions {
  /// Reuse artifacts already on disk; their config hash must match.
  bool resume = false;
  Exec exec = Exec::parallel;  // across seeds
};

/// Per-seed target scores, keyed by setting then method.
using SeedScores = std::map<std::string, std::map<std::string, double>>;

struct ReportRow {
  std::string method;
  std::string setting;
  double mean = 0.0;
  double std = 0.0;
  double p_vs_adarl = 0.0;  // NaN when not defined
  int n = 0;
};

struct ReportBundle {
  std::vector<ReportRow> rows;
  std::vector<std::uint64_t> seeds;
  /// scores[setting][method][i] belongs to seeds[i].
  std::map<std::string, std::map<std::string, std::vector<double>>> scores;
  std::string csv;
  std::string config_hash;
};

/// Runs one stage of one seed. Inputs come from the artifacts of earlier
/// stages under `<output_dir>/seed_<seed>/`; throws stage_failure (after
/// writing failure.json next to the artifacts) when a stage cannot complete.
void run_stage(const config::ExperimentConfig& cfg, Stage stage, std::uint64_t seed, const RunOptions& opts = {});

/// Every per-seed stage for every configured seed, then the report.
ReportBundle run_pipeline(const config::ExperimentConfig& cfg, const RunOptions& opts = {});

/// Collects the evaluate artifacts of every seed and writes report.csv.
ReportBundle build_report(const config::ExperimentConfig& cfg);

std::string report_csv(const std::vector<ReportRow>& rows);

struct SignificanceRow {
  std::string method;
  double mean = 0.0;
  double std = 0.0;
  double p_value = 0.0;  // NaN for AdaRL itself
  bool marker = false;   // AdaRL significantly better at the 5% level
  bool best = false;     // highest mean
};

/// Table for one setting. Needs AdaRL and at least 6 paired seeds per method
/// (insufficient_seeds otherwise).
std::vector<SignificanceRow> report_significance(const std::map<std::string, std::vector<double>>& scores_by_method,
                                                 double level = 0.05);
/// Markdown rendering: the best mean in bold, significance markers as a bullet.
std::string significance_markdown(const std::map<std::string, std::vector<SignificanceRow>>& tables);

std::string seed_dir(const config::ExperimentConfig& cfg, std::uint64_t seed);

}  // namespace adarl::pipeline
