#pragma once

#include <algorithm>
#include <optional>
#include <queue>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "clocksync/errors.hpp"
#include "clocksync/theta.hpp"

namespace clocksync {

enum class Role { Auto, Master, BpNode, BrfNode };

inline const char* role_name(Role r) {
  switch (r) {
    case Role::Master: return "mn";
    case Role::BpNode: return "bp";
    case Role::BrfNode: return "brf";
    case Role::Auto: break;
  }
  return "auto";
}

inline Role parse_role(const std::string& s) {
  if (s == "mn" || s == "master") return Role::Master;
  if (s == "bp") return Role::BpNode;
  if (s == "brf") return Role::BrfNode;
  if (s == "auto") return Role::Auto;
  throw ConfigError("unknown node role '" + s + "'");
}

struct NodeSpec {
  std::string id;
  Role role = Role::Auto;
  ClockPrior prior;
  std::optional<std::string> parent;  // only meaningful for BRF nodes
};

/// Undirected link; `sender` is the endpoint that starts each exchange (node j).
/// Unset link fields fall back to the scenario defaults.
struct EdgeSpec {
  int a = 0;
  int b = 0;
  int sender = 0;
  std::optional<double> delay;
  std::optional<std::pair<double, double>> delay_range;
  std::optional<double> sigma_t;
  std::optional<double> sigma_r;

  int receiver() const { return sender == a ? b : a; }
  int other(int n) const { return n == a ? b : a; }
};

class SyncGraph {
 public:
  int add_node(NodeSpec n) {
    if (n.id.empty()) throw ConfigError("node id must not be empty");
    if (index_.count(n.id)) throw ConfigError("duplicate node id '" + n.id + "'");
    if (n.role == Role::Master && !n.prior.is_exact()) n.prior = ClockPrior::master();
    index_[n.id] = static_cast<int>(nodes_.size());
    nodes_.push_back(std::move(n));
    adjacency_.emplace_back();
    return static_cast<int>(nodes_.size()) - 1;
  }

  /// Adds a link; the first endpoint sends unless `sender_id` says otherwise.
  int add_edge(const std::string& a_id, const std::string& b_id, EdgeSpec e = {},
               const std::string& sender_id = {}) {
    e.a = index_of(a_id);
    e.b = index_of(b_id);
    if (e.a == e.b) throw ConfigError("self-loop on '" + a_id + "'");
    for (const auto& [nbr, ei] : adjacency_[e.a]) {
      if (nbr == e.b) throw ConfigError("duplicate edge " + a_id + "-" + b_id);
    }
    e.sender = sender_id.empty() ? e.a : index_of(sender_id);
    if (e.sender != e.a && e.sender != e.b) throw ConfigError("edge sender must be an endpoint");
    const int idx = static_cast<int>(edges_.size());
    edges_.push_back(e);
    adjacency_[e.a].emplace_back(e.b, idx);
    adjacency_[e.b].emplace_back(e.a, idx);
    return idx;
  }

  int index_of(const std::string& id) const {
    auto it = index_.find(id);
    if (it == index_.end()) throw ConfigError("unknown node id '" + id + "'");
    return it->second;
  }
  bool has_node(const std::string& id) const { return index_.count(id) != 0; }

  int node_count() const { return static_cast<int>(nodes_.size()); }
  int edge_count() const { return static_cast<int>(edges_.size()); }
  const std::vector<NodeSpec>& nodes() const { return nodes_; }
  const std::vector<EdgeSpec>& edges() const { return edges_; }
  const NodeSpec& node(int i) const { return nodes_.at(static_cast<std::size_t>(i)); }
  NodeSpec& node(int i) { return nodes_.at(static_cast<std::size_t>(i)); }
  const EdgeSpec& edge(int e) const { return edges_.at(static_cast<std::size_t>(e)); }

  /// (neighbor, edge index) pairs in insertion order.
  const std::vector<std::pair<int, int>>& neighbors(int i) const {
    return adjacency_.at(static_cast<std::size_t>(i));
  }
  int degree(int i) const { return static_cast<int>(neighbors(i).size()); }

  std::optional<int> edge_between(int a, int b) const {
    for (const auto& [nbr, ei] : neighbors(a)) {
      if (nbr == b) return ei;
    }
    return std::nullopt;
  }

  std::vector<int> masters() const {
    std::vector<int> out;
    for (int i = 0; i < node_count(); ++i) {
      if (nodes_[static_cast<std::size_t>(i)].role == Role::Master) out.push_back(i);
    }
    return out;
  }

  /// Connectivity of the subgraph induced by nodes with include[i] set.
  bool is_connected(const std::vector<bool>& include) const {
    int start = -1, count = 0;
    for (int i = 0; i < node_count(); ++i) {
      if (include[static_cast<std::size_t>(i)]) {
        ++count;
        if (start < 0) start = i;
      }
    }
    if (count == 0) return true;
    std::vector<bool> seen(nodes_.size(), false);
    std::queue<int> q;
    q.push(start);
    seen[static_cast<std::size_t>(start)] = true;
    int reached = 1;
    while (!q.empty()) {
      const int n = q.front();
      q.pop();
      for (const auto& [nbr, ei] : neighbors(n)) {
        const auto u = static_cast<std::size_t>(nbr);
        if (include[u] && !seen[u]) {
          seen[u] = true;
          ++reached;
          q.push(nbr);
        }
      }
    }
    return reached == count;
  }

  bool is_connected() const { return is_connected(std::vector<bool>(nodes_.size(), true)); }

  /// Loop-free and connected.
  bool is_tree() const { return is_connected() && edge_count() == node_count() - 1; }

 private:
  std::vector<NodeSpec> nodes_;
  std::vector<EdgeSpec> edges_;
  std::vector<std::vector<std::pair<int, int>>> adjacency_;
  std::unordered_map<std::string, int> index_;
};

}  // namespace clocksync
