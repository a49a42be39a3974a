#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace adarl::dbn {

using IntMatrix = std::vector<std::vector<int>>;
using IntVector = std::vector<int>;

/// Binary structural masks of the factored environment model.
///
/// Row i of `css` holds the parents of s_{i,t+1} among s_t, so
/// css[i][j] = 1 iff s_j at time t feeds s_i at time t+1. `cts[i][m]` says
/// whether change factor theta^s_m feeds s_i. The same masks describe every
/// timestep; for multi-domain data they are the union graph over domains.
struct MaskSet {
  int d = 0;
  int p = 0;
  IntMatrix css;
  IntVector cas;
  IntVector csr;
  int car = 0;
  IntMatrix cts;
  int ctr = 0;
  IntVector cso;
  int cto = 0;

  static MaskSet zeros(int d, int p);
  static MaskSet ones(int d, int p);

  std::size_t edge_count() const;
  bool operator==(const MaskSet&) const = default;
};

/// Throws Error{dimension_mismatch | non_binary_entry} when an invariant fails.
void validate_masks(const MaskSet& m);

/// Identifier of one change-factor component.
struct ThetaId {
  enum class Kind : std::uint8_t { state, observation, reward };
  Kind kind = Kind::state;
  int index = 0;  // component index for Kind::state, 0 otherwise

  static ThetaId state(int m) { return {Kind::state, m}; }
  static ThetaId observation() { return {Kind::observation, 0}; }
  static ThetaId reward() { return {Kind::reward, 0}; }

  std::string name() const;
  auto operator<=>(const ThetaId&) const = default;
};

/// State dimensions that reach a future reward: least fixpoint of
/// i in S iff csr[i] = 1 or css[j][i] = 1 for some j in S. Sorted ascending.
std::vector<int> compact_state_indices(const MaskSet& m);

/// Change factors that feed the reward directly or a compact state dimension.
/// theta^o is never included.
std::vector<ThetaId> compact_theta_indices(const MaskSet& m, const std::vector<int>& smin);

/// Time-unrolled ground network of a MaskSet plus the cumulative future
/// reward sink R. States/actions/observations exist for t = 1..T, rewards
/// r_t for t = 2..T+1 (r_{t+1} follows a_t), and R collects every r_t.
class UnrolledGraph {
 public:
  enum class Kind : std::uint8_t { state, action, observation, reward, theta_s, theta_o, theta_r, future_return };

  struct Node {
    Kind kind;
    int index;  // state dimension or theta^s component, 0 otherwise
    int time;   // 0 for time-invariant nodes
    bool operator==(const Node&) const = default;
  };

  UnrolledGraph(const MaskSet& m, int horizon);

  int horizon() const { return horizon_; }
  int size() const { return static_cast<int>(nodes_.size()); }
  const std::vector<Node>& nodes() const { return nodes_; }
  const std::vector<std::vector<int>>& children() const { return children_; }
  const std::vector<std::vector<int>>& parents() const { return parents_; }
  std::size_t edge_count() const;

  /// Node id lookup; nullopt when the node does not exist in this graph.
  std::optional<int> find(const Node& n) const;
  /// Like find() but throws Error{unknown_node}.
  int id(const Node& n) const;

  static Node state(int i, int t) { return {Kind::state, i, t}; }
  static Node action(int t) { return {Kind::action, 0, t}; }
  static Node observation(int t) { return {Kind::observation, 0, t}; }
  static Node reward(int t) { return {Kind::reward, 0, t}; }
  static Node theta(const ThetaId& id);
  static Node future_return() { return {Kind::future_return, 0, 0}; }

  bool is_acyclic() const;

 private:
  int add(const Node& n);
  void edge(int from, int to);

  int horizon_;
  int d_;
  int p_;
  std::vector<Node> nodes_;
  std::vector<std::vector<int>> children_;
  std::vector<std::vector<int>> parents_;
};

/// True iff every path between x and y is blocked by z (Bayes-ball reachability).
bool d_separated(const UnrolledGraph& g, int x, int y, const std::vector<int>& z);
bool d_separated(const UnrolledGraph& g, const UnrolledGraph::Node& x,
                 const UnrolledGraph::Node& y, const std::vector<UnrolledGraph::Node>& z);

struct MinimalRepresentation {
  std::vector<int> states;
  std::vector<ThetaId> thetas;
  bool operator==(const MinimalRepresentation&) const = default;
};

/// Compact representation read purely off d-separation statements on the
/// unrolled graph: s_{i,1} is kept iff it stays d-connected to a_1 given
/// R and every subset of the other time-1 states; theta components likewise
/// against subsets of time-1 states and the other theta components. The
/// theta nodes are held fixed (conditioned on) for the state test since
/// they are constant within a domain.
MinimalRepresentation lemma1_oracle(const MaskSet& m, int horizon);

/// Whether a_1 has a directed path into the future-return node.
bool action_reaches_reward(const MaskSet& m, int horizon);

/// Reproducible random masks; every entry is independently 1 with
/// probability `edge_density`.
MaskSet random_dag(int d, int p, double edge_density, std::uint64_t seed);

nlohmann::json to_json(const MaskSet& m);
MaskSet masks_from_json(const nlohmann::json& j);
std::string serialize(const MaskSet& m);
MaskSet parse_masks(const std::string& text);

nlohmann::json to_json(const MinimalRepresentation& r);
MinimalRepresentation minrep_from_json(const nlohmann::json& j);

}  // namespace adarl::dbn
