#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "adarl/dbn.hpp"
#include "adarl/diffcore.hpp"
#include "adarl/envs.hpp"
#include "adarl/nn.hpp"
#include "adarl/rng.hpp"
#include "adarl/stats.hpp"

namespace adarl::modelest {

using diff::Tensor;
using diff::Var;

/// mdp: states observed, encoder bypassed. pomdp: latent states inferred
/// from a window of recent (o, a, r).
enum class Mode { mdp, pomdp };
std::string to_string(Mode m);
Mode mode_from_string(const std::string& s);

struct LossWeights {
  double kl = 1.0;      // lambda0
  double cso = 0.01;    // lambda1
  double csr = 0.01;    // lambda2
  double car = 0.01;    // lambda3
  double css = 0.01;    // lambda4
  double cas = 0.01;    // lambda5
  double cts = 0.01;    // lambda6
  double theta = 0.001; // lambda7, pairwise minimal-change penalty
};

/// Which change-factor blocks the model carries.
struct ThetaBlocks {
  bool state = true;
  bool observation = false;
  bool reward = false;
  int state_dim = 1;
};

/// Blocks named by a localization verdict; an empty theta set keeps none.
ThetaBlocks theta_blocks_from(const stats::Localization& loc, int state_dim = 1);

struct ModelConfig {
  Mode mode = Mode::mdp;
  int latent_dim = 4;  // pomdp only; mdp uses the observation width
  std::vector<int> hidden{32};
  int components = 2;
  int lag = 3;  // encoder window length
  LossWeights lambda;
  ThetaBlocks theta;
  int epochs = 100;
  int batch_size = 64;
  double lr = 0.01;
  double lr_decay = 0.999;  // per epoch
  double free_bits = 0.5;   // nats per latent dimension
  double gate_init = 3.0;   // initial gate logit
  /// Training samples gates from a binary concrete relaxation at this
  /// temperature; 0 uses the plain sigmoid.
  double gate_temperature = 0.5;
  /// Std dev of the source factors' initial values; 0 starts every domain at 0.
  double theta_init_scale = 0.1;
  double threshold = 0.5;
  /// Gates pinned to these 0/1 values instead of being learned.
  std::optional<dbn::MaskSet> fixed_masks;
  std::uint64_t seed = 0;
};

nlohmann::json to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j);

struct ChangeFactors {
  ThetaBlocks blocks;
  std::vector<int> domain_ids;
  Eigen::MatrixXd theta_s;  // rows follow domain_ids, state_dim columns
  Eigen::VectorXd theta_o;
  Eigen::VectorXd theta_r;
};

nlohmann::json to_json(const ChangeFactors& c);
ChangeFactors change_factors_from_json(const nlohmann::json& j);
/// Structured text block, one line per domain and block.
std::string serialize(const ChangeFactors& c);

/// Aligned minibatch. Row b describes time t of some episode and its
/// successor t+1. Observations are already standardized.
struct Batch {
  Tensor obs;          // o_t
  Tensor action;       // a_t coded -1/+1, n x 1
  Tensor reward;       // r_{t+1}
  Tensor next_obs;     // o_{t+1}
  Tensor next_action;  // a_{t+1}
  Tensor next_reward;  // r_{t+2}
  Tensor target;       // mdp: standardized increments o_{t+1} - o_t
  Tensor window;       // encoder history ending at t
  Tensor next_window;  // encoder history ending at t+1
  std::vector<int> domain;  // row into the model's change factors
  Eigen::Index rows() const { return obs.rows(); }
};

class DomainModel;

/// Standardized view of a dataset ready for batching.
struct PreparedData {
  Batch all;  // every usable row
  Eigen::Index size() const { return all.rows(); }
  Batch take(const std::vector<Eigen::Index>& rows) const;
};

struct LossTerms {
  Var rec;
  Var pred;
  Var kl;
  Var reg;
  Var total;  // rec + pred + kl + reg, the negated objective
};

struct CurveRow {
  int epoch = 0;
  double rec = 0, pred = 0, kl = 0, reg = 0, total = 0;
};

std::string curve_csv(const std::vector<CurveRow>& rows);

class DomainModel {
 public:
  DomainModel() = default;
  /// obs_dim: width of o_t. domain_ids: dataset ids of the source domains.
  DomainModel(const ModelConfig& cfg, int obs_dim, std::vector<int> domain_ids);

  const ModelConfig& config() const { return cfg_; }
  Mode mode() const { return cfg_.mode; }
  int state_dim() const { return d_; }
  int obs_dim() const { return m_; }
  int theta_dim() const { return cfg_.theta.state_dim; }
  int n_domains() const { return static_cast<int>(domain_ids_.size()); }
  const std::vector<int>& domain_ids() const { return domain_ids_; }
  bool trained() const { return trained_; }
  void mark_trained() { trained_ = true; }

  /// Sets standardization from data; fit() calls this.
  void set_normalizer(const envs::TrajectoryDataset& data);
  PreparedData prepare(const envs::TrajectoryDataset& data) const;

  /// Per-row change-factor inputs for a batch.
  struct ThetaRows {
    Var s;  // n x p
    Var o;  // n x 1
    Var r;  // n x 1
  };
  ThetaRows theta_rows(const std::vector<int>& domain) const;
  /// Same target factors on every row, for adaptation.
  static ThetaRows broadcast(const Var& s, const Var& o, const Var& r, Eigen::Index n);

  LossTerms losses(const Batch& b, const ThetaRows& th, Rng& rng) const;
  Var loss_reg() const;

  struct GateValues {
    Eigen::MatrixXd state;     // d x (d + 1 + p)
    Eigen::RowVectorXd reward; // d + 2
    Eigen::RowVectorXd obs;    // d + 1
  };
  /// Gate values in (0, 1), or the pinned 0/1 values.
  GateValues gate_values() const;
  /// With an rng the gate is a relaxed sample, otherwise sigmoid(logit).
  Var state_gate(int i, Rng* rng = nullptr) const;
  Var reward_gate(Rng* rng = nullptr) const;
  Var obs_gate(Rng* rng = nullptr) const;

  ChangeFactors change_factors() const;
  void set_change_factors(const ChangeFactors& c);

  /// Trainable parameters: shared ones, gates, then change factors.
  std::vector<Var> shared_params() const;
  std::vector<Var> gate_params() const;
  std::vector<Var> theta_params() const;

  /// Encoder posterior for windows (pomdp); returns mean and log std.
  std::pair<Tensor, Tensor> encode(const Tensor& window, const Tensor& theta_all) const;
  /// Encoder input row for the history ending at time t of an episode.
  Eigen::RowVectorXd window_row(const std::vector<envs::Transition>& ep, int t) const;
  Eigen::VectorXd standardize_obs(const std::vector<double>& o) const;
  const Eigen::VectorXd& obs_mean() const { return obs_mean_; }
  const Eigen::VectorXd& obs_std() const { return obs_std_; }
  /// All active factors of one set as a single row [theta_s, theta_o, theta_r].
  Eigen::RowVectorXd theta_all_row(const ChangeFactors& c, int row) const;

  /// Mixture-mean prediction of o_{t+1} in original units (mdp mode).
  Tensor mean_next_obs(const Batch& b) const;

  diff::NamedTensors export_tensors() const;
  void import_tensors(const diff::NamedTensors& t);
  nlohmann::json to_json() const;
  static DomainModel from_json(const nlohmann::json& j);

 private:
  Var gate(const Var& logits, const std::vector<double>& fixed, Rng* rng) const;

  ModelConfig cfg_;
  int d_ = 0;
  int m_ = 0;
  std::vector<int> domain_ids_;
  bool trained_ = false;

  Eigen::VectorXd obs_mean_, obs_std_;
  Eigen::VectorXd delta_mean_, delta_std_;
  double reward_mean_ = 0.0, reward_std_ = 1.0;

  // gate logits
  std::vector<Var> state_gate_;  // d rows of 1 x (d + 1 + p): [css_i, cas_i, cts_i]
  Var reward_gate_;              // 1 x (d + 2): [csr, car, ctr]
  Var obs_gate_;                 // 1 x (d + 1): [cso, cto]

  std::vector<nn::MogHead> transition_;
  nn::MogHead reward_;
  nn::Mlp encoder_;
  nn::Mlp obs_decoder_;
  nn::Mlp pred_obs_;
  nn::MogHead pred_reward_;

  Var theta_s_, theta_o_, theta_r_;
};

/// Standalone versions of the objective terms on the model's own factors.
Var loss_rec(const DomainModel& model, const Batch& b, Rng& rng);
Var loss_pred(const DomainModel& model, const Batch& b, Rng& rng);
Var loss_kl(const DomainModel& model, const Batch& b, Rng& rng);
Var loss_reg(const DomainModel& model);

struct FitResult {
  DomainModel model;
  std::vector<CurveRow> curve;
};

FitResult fit(const envs::TrajectoryDataset& data, const ModelConfig& cfg);

/// gate >= threshold -> 1. Blocks the model does not carry come out as 0.
dbn::MaskSet binarize_masks(const DomainModel& model, double threshold = 0.5);

struct AdaptResult {
  ChangeFactors theta;  // one row, for the target domain
  std::vector<double> loss;
};

/// Fits the target's change factors with every shared parameter frozen.
/// Starts from the mean of the source factors.
AdaptResult adapt_theta_target(const DomainModel& model, const envs::TrajectoryDataset& target, int n_steps,
                               std::uint64_t seed, double lr = 0.05);

/// Mean one-step prediction error of the mixture means in original units
/// (mdp mode), per state dimension.
Eigen::VectorXd prediction_mse(const DomainModel& model, const envs::TrajectoryDataset& data);

}  // namespace adarl::modelest
