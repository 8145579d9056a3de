#pragma once

// Independent reference computations for the test suites. None of these call the
// estimators under test.

#include <Eigen/Dense>
#include <cmath>
#include <random>
#include <vector>

#include "clocksync/clocksync.hpp"

namespace oracle {

using clocksync::ClockParams;
using clocksync::TimestampRecord;

/// Noiseless stamps straight from the clock model; j sends at t1.
inline std::vector<TimestampRecord> noiseless_stamps(const ClockParams& ci, const ClockParams& cj, double d,
                                                     int rounds, double t0, double delta, double turnaround) {
  std::vector<TimestampRecord> out;
  for (int k = 1; k <= rounds; ++k) {
    const double t1 = t0 + (k - 1) * delta;
    const double t2 = t1 + d;
    const double t3 = t2 + turnaround;
    const double t4 = t3 + d;
    out.push_back({k, cj.skew * t1 + cj.offset, ci.skew * t2 + ci.offset, ci.skew * t3 + ci.offset,
                   cj.skew * t4 + cj.offset});
  }
  return out;
}

struct Marginal {
  Eigen::Vector2d mean;
  Eigen::Matrix2d cov;
};

/// Exact posterior marginals of every non-master node: stacks every observation row and
/// every prior into one linear-Gaussian system over the unknown theta vectors and solves
/// the normal equations (with diagonal equilibration). Masters are conditioned on.
inline std::vector<Marginal> joint_posterior(const clocksync::BpNetwork& net) {
  const int n = net.node_count();
  std::vector<int> slot(static_cast<std::size_t>(n), -1);
  int m = 0;
  for (int i = 0; i < n; ++i) {
    if (!net.active[static_cast<std::size_t>(i)]) continue;
    if (net.priors[static_cast<std::size_t>(i)].gaussian.is_exact()) continue;
    slot[static_cast<std::size_t>(i)] = m++;
  }
  Eigen::MatrixXd J = Eigen::MatrixXd::Zero(2 * m, 2 * m);
  Eigen::VectorXd h = Eigen::VectorXd::Zero(2 * m);
  for (int i = 0; i < n; ++i) {
    const int s = slot[static_cast<std::size_t>(i)];
    if (s < 0) continue;
    J.block<2, 2>(2 * s, 2 * s) += net.priors[static_cast<std::size_t>(i)].gaussian.precision();
    h.segment<2>(2 * s) += net.priors[static_cast<std::size_t>(i)].gaussian.potential();
  }
  for (const auto& e : net.edges) {
    const int k = static_cast<int>(e.obs.a_ji.rows());
    // Row r: a_ji(r) * theta_receiver + a_ij(r) * theta_sender = noise.
    for (int r = 0; r < k; ++r) {
      Eigen::VectorXd row = Eigen::VectorXd::Zero(2 * m);
      double rhs = 0.0;
      auto place = [&](int node, const Eigen::RowVector2d& coeff) {
        const int s = slot[static_cast<std::size_t>(node)];
        if (s >= 0) {
          row.segment<2>(2 * s) += coeff.transpose();
        } else {
          rhs -= coeff.dot(net.priors[static_cast<std::size_t>(node)].gaussian.mean());
        }
      };
      place(e.receiver, e.obs.a_ji.row(r));
      place(e.sender, e.obs.a_ij.row(r));
      J += row * row.transpose() / e.obs.sigma2;
      h += row * rhs / e.obs.sigma2;
    }
  }
  const Eigen::VectorXd d = J.diagonal().cwiseSqrt().cwiseInverse();
  const Eigen::MatrixXd Js = d.asDiagonal() * J * d.asDiagonal();
  const Eigen::MatrixXd Ps = Js.fullPivLu().inverse();
  const Eigen::MatrixXd P = d.asDiagonal() * Ps * d.asDiagonal();
  const Eigen::VectorXd mu = P * h;

  std::vector<Marginal> out(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const int s = slot[static_cast<std::size_t>(i)];
    if (s < 0) continue;
    out[static_cast<std::size_t>(i)] = {mu.segment<2>(2 * s), P.block<2, 2>(2 * s, 2 * s)};
  }
  return out;
}

/// Moments of the renormalised pointwise product of two bivariate normal pdfs on a
/// square grid.
inline Marginal grid_product(const Eigen::Vector2d& m1, const Eigen::Matrix2d& c1, const Eigen::Vector2d& m2,
                             const Eigen::Matrix2d& c2, double half_width = 5.0, int steps = 1001) {
  const Eigen::Matrix2d p1 = c1.inverse(), p2 = c2.inverse();
  const double h = 2.0 * half_width / (steps - 1);
  double w_sum = 0.0;
  Eigen::Vector2d s1 = Eigen::Vector2d::Zero();
  Eigen::Matrix2d s2 = Eigen::Matrix2d::Zero();
  for (int a = 0; a < steps; ++a) {
    for (int b = 0; b < steps; ++b) {
      const Eigen::Vector2d x{-half_width + a * h, -half_width + b * h};
      const Eigen::Vector2d d1 = x - m1, d2 = x - m2;
      const double w = std::exp(-0.5 * d1.dot(p1 * d1)) * std::exp(-0.5 * d2.dot(p2 * d2));
      w_sum += w;
      s1 += w * x;
      s2 += w * x * x.transpose();
    }
  }
  Marginal out;
  out.mean = s1 / w_sum;
  out.cov = s2 / w_sum - out.mean * out.mean.transpose();
  return out;
}

inline Eigen::Matrix2d random_spd(std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> eig(lo, hi), ang(0.0, 3.141592653589793);
  const double t = ang(rng);
  Eigen::Matrix2d r;
  r << std::cos(t), -std::sin(t), std::sin(t), std::cos(t);
  const Eigen::Vector2d l{eig(rng), eig(rng)};
  return r * l.asDiagonal() * r.transpose();
}

/// Random tree over n nodes; node 0 is the master, node k > 0 hangs off a random
/// earlier node, which sends on that link.
inline clocksync::SyncGraph random_tree(int n, std::mt19937_64& rng) {
  clocksync::SyncGraph g;
  g.add_node({"n0", clocksync::Role::Master, clocksync::ClockPrior::master(), std::nullopt});
  for (int k = 1; k < n; ++k) {
    g.add_node({"n" + std::to_string(k), clocksync::Role::BpNode, clocksync::ClockPrior::skew_only(), std::nullopt});
    const int parent = std::uniform_int_distribution<int>(0, k - 1)(rng);
    g.add_edge("n" + std::to_string(parent), "n" + std::to_string(k));
  }
  return g;
}

}  // namespace oracle
