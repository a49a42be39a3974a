#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "adarl/dbn.hpp"
#include "adarl/kernels.hpp"
#include "adarl/rng.hpp"

namespace adarl::envs {

/// Single-owner mutable stepper. Observations are returned by value.
class Environment {
 public:
  struct Step {
    Eigen::VectorXd obs;
    double reward = 0.0;
    bool done = false;       // episode ended (failure or cap)
    bool truncated = false;  // ended by the step cap rather than failure
  };

  virtual ~Environment() = default;
  virtual int obs_dim() const = 0;
  virtual int num_actions() const = 0;
  virtual Eigen::VectorXd reset(Rng& rng) = 0;
  virtual Step step(int action, Rng& rng) = 0;
  /// True underlying state (equals the observation for fully observed envs).
  virtual Eigen::VectorXd latent_state() const = 0;
  virtual std::unique_ptr<Environment> clone() const = 0;
  /// Ground-truth parameters recorded in dataset metadata.
  virtual nlohmann::json describe() const = 0;
};

using EnvPtr = std::unique_ptr<Environment>;

// --- Cartpole ---------------------------------------------------------------

struct CartpoleParams {
  double gravity = 9.8;
  double cart_mass = 1.0;
  double pole_mass = 0.1;
  double pole_half_length = 0.5;
  double force_magnitude = 10.0;
  double dt = 0.02;
  int episode_cap = 500;
};

void validate(const CartpoleParams& p);

/// (x, x_dot, phi, phi_dot)
using CartState = Eigen::Vector4d;

/// Classic cart-pole equations of motion under an arbitrary horizontal
/// force, one explicit Euler step of length dt.
CartState cartpole_dynamics(const CartState& state, double force, const CartpoleParams& params);

struct CartpoleStep {
  CartState next;
  double reward;
  bool done;
  bool truncated;
};

/// action 0 pushes left, 1 pushes right. `steps_taken` counts steps already
/// taken in the episode. Failure (|x| > 2.4 or |phi| > 12 deg after the step)
/// ends the episode with reward 0; reaching the cap ends it with reward 1.
CartpoleStep cartpole_step(const CartState& state, int action, const CartpoleParams& params,
                           int steps_taken = 0);

class CartpoleEnv final : public Environment {
 public:
  explicit CartpoleEnv(CartpoleParams params);

  int obs_dim() const override { return 4; }
  int num_actions() const override { return 2; }
  Eigen::VectorXd reset(Rng& rng) override;
  Step step(int action, Rng& rng) override;
  Eigen::VectorXd latent_state() const override { return state_; }
  EnvPtr clone() const override { return std::make_unique<CartpoleEnv>(*this); }
  nlohmann::json describe() const override;

  const CartpoleParams& params() const { return params_; }
  void set_state(const CartState& s, int steps_taken = 0) {
    state_ = s;
    steps_ = steps_taken;
  }

 private:
  CartpoleParams params_;
  CartState state_ = CartState::Zero();
  int steps_ = 0;
};

enum class ChangeFactor { gravity, mass, both, noise };

ChangeFactor change_factor_from_string(const std::string& s);
std::string to_string(ChangeFactor f);

/// One Cartpole domain per value; each value holds one number (gravity,
/// cart mass or noise sigma) or two for `both` (gravity, cart mass).
/// Noise domains wrap a default Cartpole in a noisy-observation wrapper.
std::vector<EnvPtr> make_cartpole_domains(ChangeFactor factor, const std::vector<std::vector<double>>& values,
                                          const CartpoleParams& base = {});

/// o_t = s_t + eps, eps ~ N(0, sigma^2 I); dynamics untouched.
class NoisyObsEnv final : public Environment {
 public:
  NoisyObsEnv(EnvPtr inner, double sigma);
  NoisyObsEnv(const NoisyObsEnv& other);

  int obs_dim() const override { return inner_->obs_dim(); }
  int num_actions() const override { return inner_->num_actions(); }
  Eigen::VectorXd reset(Rng& rng) override;
  Step step(int action, Rng& rng) override;
  Eigen::VectorXd latent_state() const override { return inner_->latent_state(); }
  EnvPtr clone() const override { return std::make_unique<NoisyObsEnv>(*this); }
  nlohmann::json describe() const override;

  double sigma() const { return sigma_; }
  Environment& inner() { return *inner_; }

 private:
  Eigen::VectorXd corrupt(Eigen::VectorXd obs, Rng& rng) const;

  EnvPtr inner_;
  double sigma_;
};

EnvPtr noisy_obs_wrapper(EnvPtr env, double sigma);

// --- synthetic linear-Gaussian factored POMDP ------------------------------

/// Ground truth for a linear-Gaussian instance of the factored model:
///   s_{t+1} = A s_t + b a_t + W theta^s_k + eps_s
///   o_t     = C s_t + cto * theta^o_k + eps_o
///   r_{t+1} = w . s_t + u a_t + ctr * theta^r_k + eps_r
/// with a_t in {-1, +1} (action index 0/1) and every coefficient zero
/// wherever the corresponding mask entry is zero.
struct SyntheticPomdpSpec {
  dbn::MaskSet masks;
  int n_domains = 0;
  int obs_dim = 0;
  Eigen::MatrixXd transition;      // d x d
  Eigen::VectorXd action_weights;  // d
  Eigen::MatrixXd theta_weights;   // d x p
  Eigen::MatrixXd observation;     // obs_dim x d
  Eigen::VectorXd reward_weights;  // d
  double reward_action_weight = 0.0;
  Eigen::MatrixXd theta_s;  // n_domains x p
  Eigen::VectorXd theta_o;  // n_domains
  Eigen::VectorXd theta_r;  // n_domains
  double noise_s = 1.0;
  double noise_o = 1.0;
  double noise_r = 1.0;
  std::uint64_t seed = 0;

  double spectral_radius() const;
};

/// Weights are drawn from +-[0.3, 0.9] on every unmasked edge; the
/// transition matrix is shrunk until its spectral radius is below 0.95.
SyntheticPomdpSpec sample_synthetic_pomdp(const dbn::MaskSet& masks, int n_domains, std::uint64_t seed,
                                          int obs_dim = 0);

nlohmann::json to_json(const SyntheticPomdpSpec& spec);
SyntheticPomdpSpec synthetic_from_json(const nlohmann::json& j);

class SyntheticPomdpEnv final : public Environment {
 public:
  /// `observe_state` exposes s_t directly (MDP mode).
  SyntheticPomdpEnv(std::shared_ptr<const SyntheticPomdpSpec> spec, int domain, bool observe_state,
                    int burn_in = 50);

  int obs_dim() const override;
  int num_actions() const override { return 2; }
  Eigen::VectorXd reset(Rng& rng) override;
  Step step(int action, Rng& rng) override;
  Eigen::VectorXd latent_state() const override { return state_; }
  EnvPtr clone() const override { return std::make_unique<SyntheticPomdpEnv>(*this); }
  nlohmann::json describe() const override;

 private:
  Eigen::VectorXd observe(Rng& rng) const;
  void advance(int action, Rng& rng);

  std::shared_ptr<const SyntheticPomdpSpec> spec_;
  int domain_;
  bool observe_state_;
  int burn_in_;
  Eigen::VectorXd state_;
};

std::vector<EnvPtr> make_synthetic_domains(const SyntheticPomdpSpec& spec, bool observe_state);

// --- datasets ----------------------------------------------------------------

struct Transition {
  int domain_id = 0;
  int episode = 0;
  int t = 0;
  std::vector<double> obs;  // o_t, observed before acting
  int action = 0;           // a_t
  double reward = 0.0;      // reward that follows a_t
  bool done = false;        // the episode ended after this step
  bool operator==(const Transition&) const = default;
};

struct DomainInfo {
  int domain_id = 0;
  nlohmann::json truth;  // true change-factor values, when known
};

struct TrajectoryDataset {
  static constexpr int kSchemaVersion = 1;
  int schema_version = kSchemaVersion;
  std::uint64_t seed = 0;
  nlohmann::json config = nlohmann::json::object();
  std::vector<DomainInfo> domains;
  std::vector<std::vector<Transition>> episodes;

  std::size_t size() const;
  std::vector<int> domain_ids() const;
  /// Checks t increasing and a constant domain per episode.
  void validate() const;
};

using Policy = std::function<int(const Eigen::VectorXd& obs, Rng& rng)>;

/// Uniform over the discrete action set.
Policy random_policy(int num_actions);

/// Rolls `n_episodes` episodes of at most `max_steps` steps in every domain.
/// Domain k gets its own environment clone and random stream, so the result
/// does not depend on `exec`.
TrajectoryDataset collect_rollouts(const std::vector<EnvPtr>& domains, const Policy& policy, int n_episodes,
                                   int max_steps, std::uint64_t seed, Exec exec = Exec::parallel,
                                   const std::vector<int>& domain_ids = {});

/// JSON Lines, one transition per line.
std::string to_jsonl(const TrajectoryDataset& data);
nlohmann::json metadata(const TrajectoryDataset& data);
TrajectoryDataset from_jsonl(const std::string& jsonl, const nlohmann::json& meta);

void save_dataset(const TrajectoryDataset& data, const std::string& path_jsonl, const std::string& path_meta);
TrajectoryDataset load_dataset(const std::string& path_jsonl, const std::string& path_meta);

/// Defaults used at full scale: 10000 trajectories of 40 steps per domain.
inline constexpr int kFullScaleEpisodes = 10000;
inline constexpr int kFullScaleSteps = 40;

}  // namespace adarl::envs
