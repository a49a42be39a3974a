#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "adarl/envs.hpp"
#include "adarl/modelest.hpp"
#include "adarl/policy.hpp"

namespace adarl::config {

inline constexpr int kSchemaVersion = 1;

enum class Game { cartpole_mdp, cartpole_pomdp_noisy, synthetic_pomdp };
std::string to_string(Game g);
Game game_from_string(const std::string& s);

/// One transfer problem: source domains and a single target domain. For
/// synthetic games the values are ignored and `n_sources` domains are drawn.
struct Setting {
  std::string name;
  envs::ChangeFactor factor = envs::ChangeFactor::gravity;
  std::vector<std::vector<double>> sources;
  std::vector<double> target;
  int n_sources = 5;  // synthetic only
};

struct SyntheticConfig {
  int d = 5;
  int p = 1;
  double density = 0.4;
  int obs_dim = 3;
  std::uint64_t structure_seed = 0;
};

struct ExperimentConfig {
  int schema_version = kSchemaVersion;
  Game game = Game::cartpole_mdp;
  std::string budget = "desk";  // "desk" or "full"
  std::vector<Setting> settings;
  int n_target = 50;  // target-domain episodes for adaptation
  std::vector<std::uint64_t> seeds;
  double alpha = 0.01;
  double delta = 0.05;
  int rollout_episodes = 100;
  int rollout_steps = 40;
  modelest::ModelConfig model;
  int adapt_steps = 200;
  double adapt_lr = 0.05;
  policy::PolicyConfig policy;
  int eval_episodes = 30;
  int eval_max_steps = 200;
  SyntheticConfig synthetic;
  std::string output_dir = "runs/default";
};

/// The Cartpole source/target table: G_in, G_out, M_in, M_out, G&M.
std::vector<Setting> cartpole_settings();
/// Gravity, mass and noise settings for the noisy-observation game.
std::vector<Setting> noisy_cartpole_settings();

/// Defaults of a budget preset ("desk" or "full") for a game.
ExperimentConfig preset(Game game, const std::string& budget);

/// Parses and validates. Missing keys take the preset defaults; unknown keys
/// at any level and schema versions other than kSchemaVersion raise
/// config_error.
ExperimentConfig parse(const nlohmann::json& j);
ExperimentConfig load(const std::string& path);
nlohmann::json to_json(const ExperimentConfig& c);
void validate(const ExperimentConfig& c);

/// sha256 of the canonical JSON form without the output directory.
std::string config_hash(const ExperimentConfig& c);

}  // namespace adarl::config
