#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "adarl/config.hpp"
#include "adarl/error.hpp"
#include "adarl/pipeline.hpp"

using namespace adarl;

namespace {

struct Flags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string stage;
  bool resume = false;
};

config::ExperimentConfig load(const Flags& f) {
  config::ExperimentConfig cfg = config::load(f.config);
  if (!f.out.empty()) cfg.output_dir = f.out;
  return cfg;
}

std::vector<std::uint64_t> seeds_for(const config::ExperimentConfig& cfg, const Flags& f) {
  if (!f.seed) return cfg.seeds;
  for (auto s : cfg.seeds) {
    if (s == *f.seed) return {s};
  }
  throw Error(ErrorKind::config_error, "seed " + std::to_string(*f.seed) + " is not in the configured seed list");
}

void run_one(const Flags& f, pipeline::Stage stage) {
  const auto cfg = load(f);
  pipeline::RunOptions opts;
  opts.resume = f.resume;
  if (stage == pipeline::Stage::report) {
    std::cout << pipeline::build_report(cfg).csv;
    return;
  }
  for (auto s : seeds_for(cfg, f)) {
    pipeline::run_stage(cfg, stage, s, opts);
    std::cerr << pipeline::to_string(stage) << " done for seed " << s << "\n";
  }
}

void run_all(const Flags& f) {
  auto cfg = load(f);
  if (f.seed) cfg.seeds = {*f.seed};
  pipeline::RunOptions opts;
  opts.resume = f.resume;
  if (!f.stage.empty()) {
    // Earlier stages are taken from disk; the named stage and later ones rerun.
    const auto from = pipeline::stage_from_string(f.stage);
    bool reached = false;
    for (auto st : pipeline::kAllStages) {
      reached = reached || st == from;
      if (!reached || st == pipeline::Stage::report) continue;
      for (auto s : cfg.seeds) pipeline::run_stage(cfg, st, s, opts);
    }
    std::cout << pipeline::build_report(cfg).csv;
    return;
  }
  std::cout << pipeline::run_pipeline(cfg, opts).csv;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"adarl: multi-domain model estimation, transfer and evaluation"};
  app.require_subcommand(1);
  Flags flags;

  auto add_flags = [&flags](CLI::App* sub, bool with_stage) {
    sub->add_option("--config", flags.config, "experiment configuration (JSON)")->required()->check(CLI::ExistingFile);
    sub->add_option("--seed", flags.seed, "restrict to one seed");
    sub->add_option("--out", flags.out, "output directory (overrides the configuration)");
    sub->add_flag("--resume", flags.resume, "reuse persisted stage outputs");
    if (with_stage) sub->add_option("--stage", flags.stage, "rerun from this stage onwards");
  };

  const std::vector<std::pair<std::string, pipeline::Stage>> stages{
      {"gen-data", pipeline::Stage::generate},        {"identify-structure", pipeline::Stage::identify},
      {"estimate", pipeline::Stage::estimate},        {"extract-minrep", pipeline::Stage::extract},
      {"train-policy", pipeline::Stage::train},       {"adapt", pipeline::Stage::adapt},
      {"evaluate", pipeline::Stage::evaluate},        {"bound", pipeline::Stage::bound},
      {"report", pipeline::Stage::report}};
  std::vector<std::pair<CLI::App*, pipeline::Stage>> subs;
  for (const auto& [name, stage] : stages) {
    auto* sub = app.add_subcommand(name, "run the " + pipeline::to_string(stage) + " stage");
    add_flags(sub, false);
    subs.emplace_back(sub, stage);
  }
  auto* all = app.add_subcommand("run-all", "run every stage for every seed and write the report");
  add_flags(all, true);

  CLI11_PARSE(app, argc, argv);

  try {
    if (all->parsed()) {
      run_all(flags);
    } else {
      for (const auto& [sub, stage] : subs) {
        if (sub->parsed()) run_one(flags, stage);
      }
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.kind() == ErrorKind::config_error ? 2 : 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
