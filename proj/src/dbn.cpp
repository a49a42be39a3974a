#include "adarl/dbn.hpp"

#include <algorithm>
#include <deque>

#include "adarl/error.hpp"
#include "adarl/rng.hpp"

namespace adarl::dbn {

namespace {

void check_vector(const IntVector& v, int expected, const char* name) {
  if (static_cast<int>(v.size()) != expected) {
    throw Error(ErrorKind::dimension_mismatch, std::string(name) + " has length " +
                                                   std::to_string(v.size()) + ", expected " +
                                                   std::to_string(expected));
  }
  for (int x : v) {
    if (x != 0 && x != 1) {
      throw Error(ErrorKind::non_binary_entry, std::string(name) + " holds " + std::to_string(x));
    }
  }
}

void check_matrix(const IntMatrix& m, int rows, int cols, const char* name) {
  if (static_cast<int>(m.size()) != rows) {
    throw Error(ErrorKind::dimension_mismatch, std::string(name) + " has " +
                                                   std::to_string(m.size()) + " rows, expected " +
                                                   std::to_string(rows));
  }
  for (const auto& row : m) check_vector(row, cols, name);
}

void check_scalar(int x, const char* name) {
  if (x != 0 && x != 1) {
    throw Error(ErrorKind::non_binary_entry, std::string(name) + " holds " + std::to_string(x));
  }
}

}  // namespace

MaskSet MaskSet::zeros(int d, int p) {
  MaskSet m;
  m.d = d;
  m.p = p;
  m.css.assign(d, IntVector(d, 0));
  m.cas.assign(d, 0);
  m.csr.assign(d, 0);
  m.cts.assign(d, IntVector(p, 0));
  m.cso.assign(d, 0);
  return m;
}

MaskSet MaskSet::ones(int d, int p) {
  MaskSet m;
  m.d = d;
  m.p = p;
  m.css.assign(d, IntVector(d, 1));
  m.cas.assign(d, 1);
  m.csr.assign(d, 1);
  m.car = 1;
  m.cts.assign(d, IntVector(p, 1));
  m.ctr = 1;
  m.cso.assign(d, 1);
  m.cto = 1;
  return m;
}

std::size_t MaskSet::edge_count() const {
  std::size_t n = static_cast<std::size_t>(car + ctr + cto);
  for (const auto& row : css) n += std::count(row.begin(), row.end(), 1);
  for (const auto& row : cts) n += std::count(row.begin(), row.end(), 1);
  n += std::count(cas.begin(), cas.end(), 1);
  n += std::count(csr.begin(), csr.end(), 1);
  n += std::count(cso.begin(), cso.end(), 1);
  return n;
}

void validate_masks(const MaskSet& m) {
  if (m.d <= 0) throw Error(ErrorKind::dimension_mismatch, "d must be positive");
  if (m.p < 0) throw Error(ErrorKind::dimension_mismatch, "p must be nonnegative");
  check_matrix(m.css, m.d, m.d, "css");
  check_vector(m.cas, m.d, "cas");
  check_vector(m.csr, m.d, "csr");
  check_scalar(m.car, "car");
  check_matrix(m.cts, m.d, m.p, "cts");
  check_scalar(m.ctr, "ctr");
  check_vector(m.cso, m.d, "cso");
  check_scalar(m.cto, "cto");
}

std::string ThetaId::name() const {
  switch (kind) {
    case Kind::state: return "theta_s" + std::to_string(index);
    case Kind::observation: return "theta_o";
    case Kind::reward: return "theta_r";
  }
  return "theta_?";
}

std::vector<int> compact_state_indices(const MaskSet& m) {
  validate_masks(m);
  std::vector<char> in(m.d, 0);
  std::deque<int> work;
  for (int i = 0; i < m.d; ++i) {
    if (m.csr[i] == 1) {
      in[i] = 1;
      work.push_back(i);
    }
  }
  // Worklist closure: s_i joins when it feeds a member at the next step.
  while (!work.empty()) {
    const int j = work.front();
    work.pop_front();
    for (int i = 0; i < m.d; ++i) {
      if (!in[i] && m.css[j][i] == 1) {
        in[i] = 1;
        work.push_back(i);
      }
    }
  }
  std::vector<int> out;
  for (int i = 0; i < m.d; ++i) {
    if (in[i]) out.push_back(i);
  }
  return out;
}

std::vector<ThetaId> compact_theta_indices(const MaskSet& m, const std::vector<int>& smin) {
  validate_masks(m);
  std::vector<ThetaId> out;
  for (int k = 0; k < m.p; ++k) {
    const bool hits = std::any_of(smin.begin(), smin.end(), [&](int j) { return m.cts[j][k] == 1; });
    if (hits) out.push_back(ThetaId::state(k));
  }
  if (m.ctr == 1) out.push_back(ThetaId::reward());
  return out;
}

// ---------------------------------------------------------------------------

UnrolledGraph::Node UnrolledGraph::theta(const ThetaId& id) {
  switch (id.kind) {
    case ThetaId::Kind::state: return {Kind::theta_s, id.index, 0};
    case ThetaId::Kind::observation: return {Kind::theta_o, 0, 0};
    case ThetaId::Kind::reward: return {Kind::theta_r, 0, 0};
  }
  return {Kind::theta_o, 0, 0};
}

int UnrolledGraph::add(const Node& n) {
  nodes_.push_back(n);
  children_.emplace_back();
  parents_.emplace_back();
  return static_cast<int>(nodes_.size()) - 1;
}

void UnrolledGraph::edge(int from, int to) {
  children_[from].push_back(to);
  parents_[to].push_back(from);
}

// Layout: [theta_s 0..p-1][theta_o][theta_r][R] then per t = 1..T:
// [s_{0..d-1,t}][a_t][o_t][r_{t+1}].
UnrolledGraph::UnrolledGraph(const MaskSet& m, int horizon) : horizon_(horizon), d_(m.d), p_(m.p) {
  validate_masks(m);
  if (horizon < 1) throw Error(ErrorKind::horizon_too_small, "horizon must be >= 1");
  for (int k = 0; k < p_; ++k) add({Kind::theta_s, k, 0});
  const int theta_o = add({Kind::theta_o, 0, 0});
  const int theta_r = add({Kind::theta_r, 0, 0});
  const int big_r = add(future_return());
  const int base = static_cast<int>(nodes_.size());
  const int stride = d_ + 3;
  for (int t = 1; t <= horizon; ++t) {
    for (int i = 0; i < d_; ++i) add(state(i, t));
    add(action(t));
    add(observation(t));
    add(reward(t + 1));
  }
  auto s_id = [&](int i, int t) { return base + (t - 1) * stride + i; };
  auto a_id = [&](int t) { return base + (t - 1) * stride + d_; };
  auto o_id = [&](int t) { return base + (t - 1) * stride + d_ + 1; };
  auto r_id = [&](int t_action) { return base + (t_action - 1) * stride + d_ + 2; };

  for (int t = 1; t <= horizon; ++t) {
    for (int i = 0; i < d_; ++i) {
      for (int k = 0; k < p_; ++k) {
        if (m.cts[i][k]) edge(k, s_id(i, t));
      }
      if (t > 1) {
        for (int j = 0; j < d_; ++j) {
          if (m.css[i][j]) edge(s_id(j, t - 1), s_id(i, t));
        }
        if (m.cas[i]) edge(a_id(t - 1), s_id(i, t));
      }
      if (m.cso[i]) edge(s_id(i, t), o_id(t));
      if (m.csr[i]) edge(s_id(i, t), r_id(t));
    }
    if (m.cto) edge(theta_o, o_id(t));
    if (m.car) edge(a_id(t), r_id(t));
    if (m.ctr) edge(theta_r, r_id(t));
    edge(r_id(t), big_r);
  }
}

std::size_t UnrolledGraph::edge_count() const {
  std::size_t n = 0;
  for (const auto& c : children_) n += c.size();
  return n;
}

std::optional<int> UnrolledGraph::find(const Node& n) const {
  const int stride = d_ + 3;
  const int base = p_ + 3;
  switch (n.kind) {
    case Kind::theta_s:
      if (n.index >= 0 && n.index < p_) return n.index;
      return std::nullopt;
    case Kind::theta_o: return p_;
    case Kind::theta_r: return p_ + 1;
    case Kind::future_return: return p_ + 2;
    case Kind::state:
      if (n.time < 1 || n.time > horizon_ || n.index < 0 || n.index >= d_) return std::nullopt;
      return base + (n.time - 1) * stride + n.index;
    case Kind::action:
      if (n.time < 1 || n.time > horizon_) return std::nullopt;
      return base + (n.time - 1) * stride + d_;
    case Kind::observation:
      if (n.time < 1 || n.time > horizon_) return std::nullopt;
      return base + (n.time - 1) * stride + d_ + 1;
    case Kind::reward:
      if (n.time < 2 || n.time > horizon_ + 1) return std::nullopt;
      return base + (n.time - 2) * stride + d_ + 2;
  }
  return std::nullopt;
}

int UnrolledGraph::id(const Node& n) const {
  auto found = find(n);
  if (!found) throw Error(ErrorKind::unknown_node, "node not present in unrolled graph");
  return *found;
}

bool UnrolledGraph::is_acyclic() const {
  std::vector<int> indegree(nodes_.size());
  for (std::size_t v = 0; v < nodes_.size(); ++v) indegree[v] = static_cast<int>(parents_[v].size());
  std::deque<int> ready;
  for (std::size_t v = 0; v < nodes_.size(); ++v) {
    if (indegree[v] == 0) ready.push_back(static_cast<int>(v));
  }
  std::size_t seen = 0;
  while (!ready.empty()) {
    const int v = ready.front();
    ready.pop_front();
    ++seen;
    for (int c : children_[v]) {
      if (--indegree[c] == 0) ready.push_back(c);
    }
  }
  return seen == nodes_.size();
}

bool d_separated(const UnrolledGraph& g, int x, int y, const std::vector<int>& z) {
  const int n = g.size();
  if (x < 0 || x >= n || y < 0 || y >= n) throw Error(ErrorKind::unknown_node, "node id out of range");
  std::vector<char> in_z(n, 0);
  for (int v : z) {
    if (v < 0 || v >= n) throw Error(ErrorKind::unknown_node, "conditioning node out of range");
    in_z[v] = 1;
  }
  if (x == y) return false;

  // Ancestors of Z (including Z) decide whether a collider is open.
  std::vector<char> anc(n, 0);
  std::vector<int> stack(z.begin(), z.end());
  while (!stack.empty()) {
    const int v = stack.back();
    stack.pop_back();
    if (anc[v]) continue;
    anc[v] = 1;
    for (int p : g.parents()[v]) stack.push_back(p);
  }

  // Visit states: bit 0 = arrived from a child (moving up), bit 1 = from a parent.
  std::vector<std::uint8_t> visited(n, 0);
  std::vector<std::pair<int, bool>> frontier{{x, true}};
  while (!frontier.empty()) {
    auto [v, up] = frontier.back();
    frontier.pop_back();
    const std::uint8_t bit = up ? 1 : 2;
    if (visited[v] & bit) continue;
    visited[v] |= bit;
    if (v == y && !in_z[v]) return false;
    if (up) {
      if (!in_z[v]) {
        for (int p : g.parents()[v]) frontier.emplace_back(p, true);
        for (int c : g.children()[v]) frontier.emplace_back(c, false);
      }
    } else {
      if (!in_z[v]) {
        for (int c : g.children()[v]) frontier.emplace_back(c, false);
      }
      if (anc[v]) {
        for (int p : g.parents()[v]) frontier.emplace_back(p, true);
      }
    }
  }
  return true;
}

bool d_separated(const UnrolledGraph& g, const UnrolledGraph::Node& x, const UnrolledGraph::Node& y,
                 const std::vector<UnrolledGraph::Node>& z) {
  std::vector<int> ids;
  ids.reserve(z.size());
  for (const auto& n : z) ids.push_back(g.id(n));
  const int xi = g.id(x);
  const int yi = g.id(y);
  for (int v : ids) {
    if (v == xi || v == yi) throw Error(ErrorKind::invalid_argument, "x and y must not be in z");
  }
  return d_separated(g, xi, yi, ids);
}

bool action_reaches_reward(const MaskSet& m, int horizon) {
  UnrolledGraph g(m, horizon);
  const int a = g.id(UnrolledGraph::action(1));
  const int r = g.id(UnrolledGraph::future_return());
  std::vector<char> seen(g.size(), 0);
  std::vector<int> stack{a};
  while (!stack.empty()) {
    const int v = stack.back();
    stack.pop_back();
    if (v == r) return true;
    if (seen[v]) continue;
    seen[v] = 1;
    for (int c : g.children()[v]) stack.push_back(c);
  }
  return false;
}

MinimalRepresentation lemma1_oracle(const MaskSet& m, int horizon) {
  validate_masks(m);
  if (horizon < 2) throw Error(ErrorKind::horizon_too_small, "lemma oracle needs horizon >= 2");
  const UnrolledGraph g(m, horizon);
  using G = UnrolledGraph;
  const int a1 = g.id(G::action(1));
  const int big_r = g.id(G::future_return());

  std::vector<int> states1(m.d);
  for (int i = 0; i < m.d; ++i) states1[i] = g.id(G::state(i, 1));
  std::vector<ThetaId> thetas;
  for (int k = 0; k < m.p; ++k) thetas.push_back(ThetaId::state(k));
  thetas.push_back(ThetaId::observation());
  thetas.push_back(ThetaId::reward());
  std::vector<int> theta_ids;
  for (const auto& t : thetas) theta_ids.push_back(g.id(G::theta(t)));

  // True iff `target` is d-connected to a_1 under every subset of `pool`.
  auto connected_under_all = [&](int target, const std::vector<int>& pool, const std::vector<int>& fixed) {
    const std::size_t n = pool.size();
    std::vector<int> z;
    for (std::uint64_t mask = 0; mask < (std::uint64_t{1} << n); ++mask) {
      z = fixed;
      z.push_back(big_r);
      for (std::size_t b = 0; b < n; ++b) {
        if (mask & (std::uint64_t{1} << b)) z.push_back(pool[b]);
      }
      if (d_separated(g, target, a1, z)) return false;
    }
    return true;
  };

  MinimalRepresentation out;
  for (int i = 0; i < m.d; ++i) {
    std::vector<int> others;
    for (int j = 0; j < m.d; ++j) {
      if (j != i) others.push_back(states1[j]);
    }
    if (connected_under_all(states1[i], others, theta_ids)) out.states.push_back(i);
  }
  for (std::size_t t = 0; t < thetas.size(); ++t) {
    std::vector<int> pool = states1;
    for (std::size_t u = 0; u < thetas.size(); ++u) {
      if (u != t) pool.push_back(theta_ids[u]);
    }
    if (connected_under_all(theta_ids[t], pool, {})) out.thetas.push_back(thetas[t]);
  }
  std::sort(out.thetas.begin(), out.thetas.end());
  return out;
}

MaskSet random_dag(int d, int p, double edge_density, std::uint64_t seed) {
  if (d <= 0 || p < 0) throw Error(ErrorKind::dimension_mismatch, "random_dag needs d > 0, p >= 0");
  if (!(edge_density >= 0.0 && edge_density <= 1.0)) {
    throw Error(ErrorKind::invalid_argument, "edge density must lie in [0, 1]");
  }
  Rng rng(seed);
  auto draw = [&] { return rng.uniform() < edge_density ? 1 : 0; };
  MaskSet m = MaskSet::zeros(d, p);
  for (auto& row : m.css)
    for (auto& x : row) x = draw();
  for (auto& x : m.cas) x = draw();
  for (auto& x : m.csr) x = draw();
  m.car = draw();
  for (auto& row : m.cts)
    for (auto& x : row) x = draw();
  m.ctr = draw();
  for (auto& x : m.cso) x = draw();
  m.cto = draw();
  return m;
}

nlohmann::json to_json(const MaskSet& m) {
  return nlohmann::json{{"d", m.d},     {"p", m.p},     {"css", m.css}, {"cas", m.cas},
                        {"csr", m.csr}, {"car", m.car}, {"cts", m.cts}, {"ctr", m.ctr},
                        {"cso", m.cso}, {"cto", m.cto}};
}

MaskSet masks_from_json(const nlohmann::json& j) {
  MaskSet m;
  try {
    m.d = j.at("d").get<int>();
    m.p = j.at("p").get<int>();
    m.css = j.at("css").get<IntMatrix>();
    m.cas = j.at("cas").get<IntVector>();
    m.csr = j.at("csr").get<IntVector>();
    m.car = j.at("car").get<int>();
    m.cts = j.at("cts").get<IntMatrix>();
    m.ctr = j.at("ctr").get<int>();
    m.cso = j.at("cso").get<IntVector>();
    m.cto = j.at("cto").get<int>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::parse_error, std::string("mask document: ") + e.what());
  }
  validate_masks(m);
  return m;
}

std::string serialize(const MaskSet& m) { return to_json(m).dump(2) + "\n"; }

MaskSet parse_masks(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::parse_error, e.what());
  }
  return masks_from_json(j);
}

nlohmann::json to_json(const MinimalRepresentation& r) {
  std::vector<std::string> names;
  for (const auto& t : r.thetas) names.push_back(t.name());
  return nlohmann::json{{"states", r.states}, {"thetas", names}};
}

MinimalRepresentation minrep_from_json(const nlohmann::json& j) {
  MinimalRepresentation r;
  r.states = j.at("states").get<std::vector<int>>();
  for (const auto& name : j.at("thetas").get<std::vector<std::string>>()) {
    if (name == "theta_o") {
      r.thetas.push_back(ThetaId::observation());
    } else if (name == "theta_r") {
      r.thetas.push_back(ThetaId::reward());
    } else if (name.rfind("theta_s", 0) == 0) {
      r.thetas.push_back(ThetaId::state(std::stoi(name.substr(7))));
    } else {
      throw Error(ErrorKind::parse_error, "unknown theta component " + name);
    }
  }
  return r;
}

}  // namespace adarl::dbn
