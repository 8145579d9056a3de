#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "clocksync/gaussian.hpp"
#include "clocksync/graph.hpp"
#include "clocksync/theta.hpp"
#include "clocksync/timestamp.hpp"

namespace clocksync {

using MatK2 = Eigen::Matrix<double, Eigen::Dynamic, 2>;

struct ObservationOptions {
  /// Variance standing in for sigma_T^2 + sigma_R^2 when a link is declared noiseless.
  double zero_noise_variance = 1e-6;
};

/// Stacked sum-of-stamps rows of one link:  a_ji * theta_i + a_ij * theta_j = z,
/// z ~ N(0, sigma2 * I_K), where i is the responder and j the sender.
struct ObservationPair {
  MatK2 a_ji;
  MatK2 a_ij;
  double sigma2 = 0.0;

  int rounds() const { return static_cast<int>(a_ji.rows()); }
};

inline ObservationPair build_observation(std::span<const TimestampRecord> records, const LinkModel& link,
                                         const ObservationOptions& opts = {}) {
  if (records.size() < 2) throw InvalidArgument("build_observation: need at least 2 rounds");
  const auto k = static_cast<Eigen::Index>(records.size());
  ObservationPair o;
  o.a_ji.resize(k, 2);
  o.a_ij.resize(k, 2);
  for (Eigen::Index r = 0; r < k; ++r) {
    const auto& rec = records[static_cast<std::size_t>(r)];
    o.a_ji(r, 0) = rec.c_i_t2 + rec.c_i_t3;
    o.a_ji(r, 1) = -2.0;
    o.a_ij(r, 0) = -(rec.c_j_t1 + rec.c_j_t4);
    o.a_ij(r, 1) = 2.0;
  }
  o.sigma2 = link.variance_t() + link.variance_r();
  if (o.sigma2 == 0.0) o.sigma2 = opts.zero_noise_variance;
  if (!(o.sigma2 > 0.0)) throw InvalidArgument("build_observation: combined variance must be positive");
  return o;
}

/// One direction of a factor: `target` multiplies the variable the message is sent to,
/// `source` the variable it is sent from.
struct FactorView {
  const MatK2& target;
  const MatK2& source;
  double sigma2;
};

inline FactorView toward_receiver(const ObservationPair& o) { return {o.a_ji, o.a_ij, o.sigma2}; }
inline FactorView toward_sender(const ObservationPair& o) { return {o.a_ij, o.a_ji, o.sigma2}; }

/// A Gaussian message in information form.
struct BpMessage {
  int from = -1;
  int to = -1;
  Gaussian2 gaussian;
  int iteration = 0;
};

struct MessageResult {
  Gaussian2 gaussian;
  /// Set when the source carried no information at all and the message is the
  /// pseudo-inverse (flat-prior) limit.
  bool pseudo_inverse_limit = false;
};

namespace detail {

inline void require_target_rank(const MatK2& target) {
  const double lo = target.col(0).minCoeff(), hi = target.col(0).maxCoeff();
  if (!(hi > lo)) throw SingularObservation("compute_message: target observation matrix is rank deficient");
}

// Lambda and eta of the source variable: prior plus incoming messages, fixed order.
inline std::pair<Mat2, Vec2> accumulate(const Gaussian2& prior, std::span<const Gaussian2> incoming) {
  Mat2 lambda = prior.precision();
  Vec2 eta = prior.potential();
  for (const auto& m : incoming) {
    lambda += m.precision();
    eta += m.potential();
  }
  return {lambda, eta};
}

}  // namespace detail

/// Message from source j to target i after marginalising theta_j out of
/// factor(theta_i, theta_j) * prior_j * prod(incoming messages to j except from i).
///
/// Algebraically equal to the covariance-form update with
/// Omega = sigma2*I + S Lambda^-1 S^T, but computed as a 2x2 Schur complement of the
/// joint precision so it stays exact when Lambda is singular.
inline MessageResult compute_message(const FactorView& f, const ThetaState& prior_source,
                                     std::span<const Gaussian2> incoming) {
  detail::require_target_rank(f.target);
  const double inv_s2 = 1.0 / f.sigma2;

  if (prior_source.gaussian.is_exact()) {
    // Lambda^-1 == 0: Omega = sigma2 * I.
    const Vec2 m = prior_source.gaussian.mean();
    const Mat2 j = inv_s2 * (f.target.transpose() * f.target);
    const Vec2 h = -inv_s2 * (f.target.transpose() * (f.source * m));
    return {Gaussian2::from_information(j, h), false};
  }

  const auto [lambda, eta] = detail::accumulate(prior_source.gaussian, incoming);
  const bool flat_offset = lambda(1, 1) == 0.0 && lambda(0, 1) == 0.0 && lambda(1, 0) == 0.0;

  if (flat_offset) {
    // The source offset is flat, so any constant common to all K rows is unobservable:
    // project the rows onto mean-centred coordinates and marginalise the 1/skew term.
    const Eigen::VectorXd a = f.target.col(0).array() - f.target.col(0).mean();
    const Eigen::VectorXd b = f.source.col(0).array() - f.source.col(0).mean();
    const double aa = inv_s2 * a.squaredNorm();
    const double ab = inv_s2 * a.dot(b);
    const double bb = inv_s2 * b.squaredNorm();
    const double denom = bb + lambda(0, 0);
    if (!(denom > 0.0)) throw SingularObservation("compute_message: source observation matrix is rank deficient");
    Mat2 j = Mat2::Zero();
    Vec2 h = Vec2::Zero();
    j(0, 0) = std::max(0.0, aa - ab * ab / denom);
    h(0) = -ab * eta(0) / denom;
    return {Gaussian2::from_information(j, h), lambda(0, 0) == 0.0};
  }

  const Mat2 m = inv_s2 * (f.source.transpose() * f.source) + lambda;
  const Mat2 c = inv_s2 * (f.target.transpose() * f.source);
  Eigen::LDLT<Mat2> m_ldlt(m);
  if (m_ldlt.info() != Eigen::Success || !detail::is_full_rank_psd(m))
    throw SingularObservation("compute_message: marginalisation system is singular");
  const Eigen::Matrix<double, 2, 2> m_inv_ct = m_ldlt.solve(c.transpose());
  const Mat2 j = inv_s2 * (f.target.transpose() * f.target) - c * m_inv_ct;
  const Vec2 h = -(c * m_ldlt.solve(eta));
  return {Gaussian2::from_information(j, h), false};
}

/// Covariance-form message exactly as the closed-form BP update is usually written:
///   Sigma = [T^T Omega^-1 T]^-1,  Omega = sigma2*I_K + S Lambda^-1 S^T,
///   mu    = -Sigma T^T Omega^-1 S Lambda^-1 eta.
/// Needs an invertible Lambda (or an exact source prior). Dense KxK solve.
inline Gaussian2 compute_message_dense(const FactorView& f, const ThetaState& prior_source,
                                       std::span<const Gaussian2> incoming) {
  detail::require_target_rank(f.target);
  const auto k = f.target.rows();
  Eigen::MatrixXd omega = f.sigma2 * Eigen::MatrixXd::Identity(k, k);
  Vec2 source_mean;
  if (prior_source.gaussian.is_exact()) {
    source_mean = prior_source.gaussian.mean();
  } else {
    const auto [lambda, eta] = detail::accumulate(prior_source.gaussian, incoming);
    if (!detail::is_full_rank_psd(lambda))
      throw SingularObservation("compute_message_dense: Lambda is not invertible");
    const Mat2 lambda_inv = detail::symmetrize(lambda.inverse());
    omega += f.source * lambda_inv * f.source.transpose();
    source_mean = lambda_inv * eta;
  }
  Eigen::LDLT<Eigen::MatrixXd> omega_ldlt(omega);
  if (omega_ldlt.info() != Eigen::Success) throw SingularObservation("compute_message_dense: Omega singular");
  const Mat2 info = f.target.transpose() * omega_ldlt.solve(f.target);
  const Mat2 sigma = detail::symmetrize(info.inverse());
  const Vec2 mu = -sigma * (f.target.transpose() * omega_ldlt.solve(f.source * source_mean));
  return Gaussian2::from_moments(mu, sigma);
}

struct NodeBelief {
  int node = -1;
  Gaussian2 gaussian;
  int iteration = 0;

  bool informative() const { return gaussian.is_exact() || !gaussian.is_non_informative(); }
};

/// Belief = own prior times every incoming message. Precisions add in the order given.
/// An exact prior (master node) is returned unchanged.
inline NodeBelief update_belief(int node, const ThetaState& prior, std::span<const Gaussian2> incoming,
                                int iteration = 0) {
  if (prior.gaussian.is_exact()) return {node, prior.gaussian, iteration};
  Mat2 j = prior.gaussian.precision();
  Vec2 h = prior.gaussian.potential();
  for (const auto& m : incoming) {
    j += m.precision();
    h += m.potential();
  }
  return {node, Gaussian2::from_information(j, h), iteration};
}

inline ClockEstimate bp_estimate(const NodeBelief& belief) {
  if (!belief.informative()) throw NonInformative("bp_estimate: belief carries no information");
  return ThetaState::estimate_from(belief.gaussian);
}

/// Factor graph over the BP-participating nodes. Inactive nodes have no edges.
struct BpNetwork {
  struct Edge {
    int receiver = -1;  // i
    int sender = -1;    // j
    ObservationPair obs;
  };

  std::vector<ThetaState> priors;
  std::vector<bool> active;
  std::vector<bool> master;
  std::vector<Edge> edges;

  int node_count() const { return static_cast<int>(priors.size()); }
};

/// Builds the network from a graph; edges without an observation are left out, and
/// nodes with active[i] == false take no part.
inline BpNetwork make_bp_network(const SyncGraph& g, const std::vector<std::optional<ObservationPair>>& obs,
                                 std::vector<bool> active = {}) {
  if (static_cast<int>(obs.size()) != g.edge_count())
    throw InvalidArgument("make_bp_network: one observation slot per edge required");
  if (active.empty()) active.assign(static_cast<std::size_t>(g.node_count()), true);
  BpNetwork net;
  net.active = std::move(active);
  for (const auto& n : g.nodes()) {
    net.priors.push_back(ThetaState::from_prior(n.prior));
    net.master.push_back(n.role == Role::Master);
  }
  for (int e = 0; e < g.edge_count(); ++e) {
    const auto& spec = g.edge(e);
    const auto& o = obs[static_cast<std::size_t>(e)];
    if (!o) continue;
    if (!net.active[static_cast<std::size_t>(spec.a)] || !net.active[static_cast<std::size_t>(spec.b)]) continue;
    net.edges.push_back({spec.receiver(), spec.sender, *o});
  }
  return net;
}

struct BpOptions {
  int max_iterations = 10;  // L
  double epsilon = 0.01;    // max over nodes of max(|d offset| ns, |d skew| ppm)
  bool allow_no_master = false;
};

struct BpResult {
  /// estimates[l][node] for l = 0..stop_iteration; empty for inactive or uninformed nodes.
  std::vector<std::vector<std::optional<ClockEstimate>>> estimates;
  /// max_change[l] for l >= 1; max_change[0] is +inf.
  std::vector<double> max_change;
  int stop_iteration = 0;
  bool converged = false;
  std::vector<NodeBelief> beliefs;
  std::vector<BpMessage> messages;
  std::vector<std::string> warnings;
};

/// Mixed convergence norm between two estimate snapshots.
inline double estimate_change(const std::vector<std::optional<ClockEstimate>>& now,
                              const std::vector<std::optional<ClockEstimate>>& before,
                              const std::vector<bool>& active) {
  double worst = 0.0;
  for (std::size_t n = 0; n < now.size(); ++n) {
    if (!active[n]) continue;
    if (!now[n] || !before[n]) return std::numeric_limits<double>::infinity();
    const double d_off = std::abs(now[n]->offset - before[n]->offset);
    const double d_skew = std::abs(now[n]->skew - before[n]->skew) * kPpm;
    worst = std::max({worst, d_off, d_skew});
  }
  return worst;
}

/// Synchronous Gaussian BP: every message at iteration l is computed from the
/// messages of iteration l-1; stops once the estimate change drops below epsilon.
inline BpResult run_bp(const BpNetwork& net, const BpOptions& opts = {}) {
  const int n_nodes = net.node_count();
  const int n_edges = static_cast<int>(net.edges.size());
  if (opts.max_iterations < 0) throw InvalidArgument("run_bp: max_iterations must be non-negative");

  std::vector<std::vector<std::pair<int, int>>> adj(static_cast<std::size_t>(n_nodes));
  for (int e = 0; e < n_edges; ++e) {
    const auto& ed = net.edges[static_cast<std::size_t>(e)];
    adj[static_cast<std::size_t>(ed.receiver)].emplace_back(ed.sender, e);
    adj[static_cast<std::size_t>(ed.sender)].emplace_back(ed.receiver, e);
  }

  {
    int masters = 0, start = -1, count = 0;
    for (int i = 0; i < n_nodes; ++i) {
      if (!net.active[static_cast<std::size_t>(i)]) continue;
      ++count;
      if (start < 0) start = i;
      if (net.master[static_cast<std::size_t>(i)] || net.priors[static_cast<std::size_t>(i)].gaussian.is_exact())
        ++masters;
    }
    if (masters == 0 && !opts.allow_no_master)
      throw ConfigError("run_bp: no master node; convergence is not guaranteed (set allow_no_master to override)");
    std::vector<bool> seen(static_cast<std::size_t>(n_nodes), false);
    std::vector<int> stack;
    if (start >= 0) {
      stack.push_back(start);
      seen[static_cast<std::size_t>(start)] = true;
    }
    int reached = start >= 0 ? 1 : 0;
    while (!stack.empty()) {
      const int n = stack.back();
      stack.pop_back();
      for (const auto& [nbr, e] : adj[static_cast<std::size_t>(n)]) {
        if (!seen[static_cast<std::size_t>(nbr)]) {
          seen[static_cast<std::size_t>(nbr)] = true;
          ++reached;
          stack.push_back(nbr);
        }
      }
    }
    if (reached != count) throw ConfigError("run_bp: BP subgraph is not connected");
  }

  // to_receiver[e]: sender -> receiver; to_sender[e]: receiver -> sender.
  std::vector<Gaussian2> to_receiver(static_cast<std::size_t>(n_edges), Gaussian2::non_informative());
  std::vector<Gaussian2> to_sender(static_cast<std::size_t>(n_edges), Gaussian2::non_informative());

  auto incoming_to = [&](int node, int skip_edge, const std::vector<Gaussian2>& rx,
                         const std::vector<Gaussian2>& tx) {
    std::vector<Gaussian2> in;
    for (const auto& [nbr, e] : adj[static_cast<std::size_t>(node)]) {
      if (e == skip_edge) continue;
      const auto& ed = net.edges[static_cast<std::size_t>(e)];
      in.push_back(ed.receiver == node ? rx[static_cast<std::size_t>(e)] : tx[static_cast<std::size_t>(e)]);
    }
    return in;
  };

  auto snapshot = [&](const std::vector<NodeBelief>& beliefs) {
    std::vector<std::optional<ClockEstimate>> est(static_cast<std::size_t>(n_nodes));
    for (int i = 0; i < n_nodes; ++i) {
      if (!net.active[static_cast<std::size_t>(i)]) continue;
      try {
        est[static_cast<std::size_t>(i)] = bp_estimate(beliefs[static_cast<std::size_t>(i)]);
      } catch (const NonInformative&) {
      }
    }
    return est;
  };

  BpResult res;
  std::vector<NodeBelief> beliefs;
  for (int i = 0; i < n_nodes; ++i)
    beliefs.push_back({i, net.priors[static_cast<std::size_t>(i)].gaussian, 0});
  res.estimates.push_back(snapshot(beliefs));
  res.max_change.push_back(std::numeric_limits<double>::infinity());

  bool warned = false;
  for (int l = 1; l <= opts.max_iterations; ++l) {
    std::vector<Gaussian2> next_rx(static_cast<std::size_t>(n_edges)), next_tx(static_cast<std::size_t>(n_edges));
    for (int e = 0; e < n_edges; ++e) {
      const auto& ed = net.edges[static_cast<std::size_t>(e)];
      const auto in_sender = incoming_to(ed.sender, e, to_receiver, to_sender);
      const auto in_receiver = incoming_to(ed.receiver, e, to_receiver, to_sender);
      auto m_rx = compute_message(toward_receiver(ed.obs), net.priors[static_cast<std::size_t>(ed.sender)], in_sender);
      auto m_tx = compute_message(toward_sender(ed.obs), net.priors[static_cast<std::size_t>(ed.receiver)], in_receiver);
      if ((m_rx.pseudo_inverse_limit || m_tx.pseudo_inverse_limit) && !warned) {
        res.warnings.push_back("run_bp: a source node had zero total precision; used the pseudo-inverse limit");
        warned = true;
      }
      next_rx[static_cast<std::size_t>(e)] = m_rx.gaussian;
      next_tx[static_cast<std::size_t>(e)] = m_tx.gaussian;
    }
    to_receiver = std::move(next_rx);
    to_sender = std::move(next_tx);

    for (int i = 0; i < n_nodes; ++i) {
      const auto in = incoming_to(i, -1, to_receiver, to_sender);
      beliefs[static_cast<std::size_t>(i)] = update_belief(i, net.priors[static_cast<std::size_t>(i)], in, l);
    }
    res.estimates.push_back(snapshot(beliefs));
    const double change = estimate_change(res.estimates[static_cast<std::size_t>(l)],
                                          res.estimates[static_cast<std::size_t>(l - 1)], net.active);
    res.max_change.push_back(change);
    res.stop_iteration = l;
    if (change < opts.epsilon) {
      res.converged = true;
      break;
    }
  }

  res.beliefs = beliefs;
  for (int e = 0; e < n_edges; ++e) {
    const auto& ed = net.edges[static_cast<std::size_t>(e)];
    res.messages.push_back({ed.sender, ed.receiver, to_receiver[static_cast<std::size_t>(e)], res.stop_iteration});
    res.messages.push_back({ed.receiver, ed.sender, to_sender[static_cast<std::size_t>(e)], res.stop_iteration});
  }
  return res;
}

}  // namespace clocksync
