#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "adarl/envs.hpp"
#include "adarl/kernels.hpp"
#include "adarl/modelest.hpp"
#include "adarl/nn.hpp"
#include "adarl/rng.hpp"

namespace adarl::policy {

using diff::Tensor;
using diff::Var;

struct Experience {
  Eigen::VectorXd s;       // s^min_t
  int action = 0;
  double reward = 0.0;     // r_{t+1}
  Eigen::VectorXd s_next;  // s^min_{t+1}
  Eigen::VectorXd theta;   // theta^min of the domain
  bool terminal = false;   // failure: no bootstrap from s_next
  int domain = 0;
};

/// Fixed-capacity ring; once full the oldest item is overwritten.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity);

  void push(Experience e);
  std::size_t size() const { return items_.size(); }
  std::size_t capacity() const { return capacity_; }
  const Experience& at(std::size_t i) const { return items_.at(i); }
  /// n indices drawn uniformly with replacement.
  std::vector<std::size_t> sample(std::size_t n, Rng& rng) const;

 private:
  std::size_t capacity_;
  std::size_t next_ = 0;
  std::vector<Experience> items_;
};

/// double_dqn: the online network picks a', the target network scores it.
/// plain_max: max over the target network.
enum class TargetRule { double_dqn, plain_max };
std::string to_string(TargetRule r);
TargetRule target_rule_from_string(const std::string& s);

struct PolicyConfig {
  std::vector<int> hidden{64, 64};
  double gamma = 0.99;
  double lr = 1e-4;
  double lr_decay = 1.0;  // per outer episode
  int batch_size = 64;
  std::size_t capacity = 50000;
  double eps_start = 1.0;
  double eps_end = 0.05;
  double eps_fraction = 0.5;  // share of the outer episodes spent decaying
  int episodes = 100;         // outer episodes M
  int max_steps = 200;        // steps per episode T
  int learning_starts = 500;  // stored transitions before the first update
  int train_every = 2;        // environment steps per gradient update
  TargetRule target_rule = TargetRule::double_dqn;
  int eval_every = 0;  // outer episodes between greedy evaluations; 0 never
  int eval_episodes = 5;
  std::uint64_t seed = 0;
};

nlohmann::json to_json(const PolicyConfig& c);
PolicyConfig policy_config_from_json(const nlohmann::json& j);

/// Epsilon in outer episode `step` of `planned`.
double epsilon_at(const PolicyConfig& c, double step, double planned);

/// Q over the concatenated input [s^min, theta^min], one output per action,
/// plus a target copy that changes only through sync_target().
class QPolicy {
 public:
  QPolicy() = default;
  /// Inputs are standardized with the given mean and std before the network.
  QPolicy(int state_dim, int theta_dim, int n_actions, const std::vector<int>& hidden, Eigen::VectorXd input_mean,
          Eigen::VectorXd input_std, Rng& rng);

  int state_dim() const { return state_dim_; }
  int theta_dim() const { return theta_dim_; }
  int n_actions() const { return n_actions_; }

  /// Standardized network inputs, one row per (s, theta) pair.
  Tensor inputs(const std::vector<const Eigen::VectorXd*>& s, const std::vector<const Eigen::VectorXd*>& theta) const;
  Eigen::RowVectorXd q_values(const Eigen::VectorXd& s, const Eigen::VectorXd& theta) const;
  int greedy(const Eigen::VectorXd& s, const Eigen::VectorXd& theta) const;
  int act(const Eigen::VectorXd& s, const Eigen::VectorXd& theta, double epsilon, Rng& rng) const;

  const nn::Mlp& online() const { return q_; }
  const nn::Mlp& target() const { return q_target_; }
  void sync_target() { q_target_.copy_from(q_); }

  diff::NamedTensors export_tensors() const;
  void import_tensors(const diff::NamedTensors& t);
  nlohmann::json to_json() const;
  static QPolicy from_json(const nlohmann::json& j);

 private:
  int state_dim_ = 0;
  int theta_dim_ = 0;
  int n_actions_ = 0;
  Eigen::VectorXd input_mean_, input_std_;
  nn::Mlp q_;
  nn::Mlp q_target_;
};

/// Regression targets y = r + gamma * Q'(s', a') with no bootstrap on
/// terminal rows. Computed without a tape.
Eigen::VectorXd td_targets(const QPolicy& policy, const std::vector<const Experience*>& batch, double gamma,
                           TargetRule rule);
/// Mean squared TD error of the online network against fixed targets.
Var td_loss(const QPolicy& policy, const std::vector<const Experience*>& batch, const Eigen::VectorXd& targets);

/// Maps the running history of one episode to s^min. The last history
/// entry carries the current observation; its action and reward are unset.
struct StateMap {
  int dim = 0;
  Eigen::VectorXd mean;  // typical scale of the output, for input standardization
  Eigen::VectorXd std;
  std::function<Eigen::VectorXd(const std::vector<envs::Transition>& history, const Eigen::RowVectorXd& theta_model,
                                Rng& rng)>
      fn;
};

/// Observed state restricted to `indices`, scaled by the model's normalizer
/// when one is given.
StateMap observed_state(const std::vector<int>& indices, int obs_dim, const modelest::DomainModel* model = nullptr);
/// mdp models project the observation; pomdp models sample the encoder.
StateMap model_state(const modelest::DomainModel& model, const std::vector<int>& indices);

/// s^min for the latest entry of `history`. theta_model is the full factor
/// row the encoder conditions on (ignored in mdp mode).
Eigen::VectorXd infer_state_min(const modelest::DomainModel& model, const std::vector<envs::Transition>& history,
                                const Eigen::RowVectorXd& theta_model, const std::vector<int>& indices, Rng& rng);

struct TrainDomain {
  const envs::Environment* env = nullptr;  // prototype; training works on a clone
  Eigen::VectorXd theta_min;                // Q-network input; may be empty
  Eigen::RowVectorXd theta_model;           // encoder conditioning row
  int domain_id = 0;
};

struct CurveRow {
  long step = 0;
  double epsilon = 0.0;
  double mean_td_loss = 0.0;
  double eval_score = 0.0;  // NaN when no evaluation ran
};

std::string curve_csv(const std::vector<CurveRow>& rows);

struct TrainResult {
  QPolicy policy;
  std::vector<CurveRow> curve;
  std::vector<double> losses;  // every update, in order
};

/// Interleaved epsilon-greedy interaction with every domain, one shared
/// replay buffer, minibatch updates and a target sync per outer episode.
TrainResult train_multi_domain(const std::vector<TrainDomain>& domains, const StateMap& state, const PolicyConfig& cfg);

/// Same loop with the factor input removed: no domain conditioning.
TrainResult baseline_non_transfer(std::vector<TrainDomain> domains, const StateMap& state, const PolicyConfig& cfg);
/// Single-domain training directly on the target.
TrainResult baseline_oracle(const envs::Environment& target, const StateMap& state, const PolicyConfig& cfg);

struct ScoreStats {
  double mean = 0.0;
  double std = 0.0;  // sample std; 0 for a single episode
  std::vector<double> scores;
};

/// Greedy episodes in `env`; each episode's score is its undiscounted return.
/// The policy is only read.
ScoreStats deploy_target(const QPolicy& policy, const Eigen::VectorXd& theta_min,
                         const Eigen::RowVectorXd& theta_model, const envs::Environment& env, const StateMap& state,
                         int n_eval, int max_steps, std::uint64_t seed, Exec exec = Exec::parallel);

}  // namespace adarl::policy
