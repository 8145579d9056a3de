#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "clocksync/clocksync.hpp"
#include "oracles.hpp"

using namespace clocksync;

namespace {

struct Built {
  NetworkTruth truth;
  NetworkRecords records;
  BpNetwork net;
};

Built build(const SyncGraph& g, std::uint64_t seed, double sigma = 4.0, int rounds = 10) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> off(-1000.0, 1000.0), d(200.0, 300.0);
  std::normal_distribution<double> sk(1.0, 0.01);
  Built b;
  for (int i = 0; i < g.node_count(); ++i) {
    b.truth.clocks.push_back(g.node(i).role == Role::Master ? ClockParams{} : ClockParams{sk(rng), off(rng)});
  }
  for (int e = 0; e < g.edge_count(); ++e) b.truth.links.push_back({d(rng), sigma, sigma});
  b.records = simulate_exchanges(g, b.truth, {rounds, 0.0, 5e6, 1000.0}, seed);
  std::vector<std::optional<ObservationPair>> obs;
  for (int e = 0; e < g.edge_count(); ++e)
    obs.push_back(build_observation(b.records.per_edge[static_cast<std::size_t>(e)],
                                    b.truth.links[static_cast<std::size_t>(e)]));
  b.net = make_bp_network(g, obs);
  return b;
}

SyncGraph chain3() {
  SyncGraph g;
  g.add_node({"mn", Role::Master, ClockPrior::master(), std::nullopt});
  g.add_node({"a", Role::BpNode, ClockPrior::skew_only(), std::nullopt});
  g.add_node({"b", Role::BpNode, ClockPrior::skew_only(), std::nullopt});
  g.add_edge("mn", "a");
  g.add_edge("a", "b");
  return g;
}

void expect_close(const ClockEstimate& e, const ClockParams& t, double rel) {
  EXPECT_NEAR(e.skew, t.skew, rel * t.skew);
  EXPECT_NEAR(e.offset, t.offset, rel * std::max(1.0, std::abs(t.offset)));
}

}  // namespace

TEST(BuildObservation, NoiselessUnitClocksCancel) {
  const auto recs = oracle::noiseless_stamps({1.0, 0.0}, {1.0, 0.0}, 250.0, 10, 0.0, 5e6, 1000.0);
  const auto o = build_observation(recs, {250.0, 4.0, 4.0});
  const Eigen::VectorXd z = o.a_ji * Vec2(1.0, 0.0) + o.a_ij * Vec2(1.0, 0.0);
  EXPECT_LE(z.cwiseAbs().maxCoeff(), 1e-9);
  EXPECT_EQ(o.sigma2, 32.0);
  EXPECT_EQ(o.rounds(), 10);
  EXPECT_TRUE((o.a_ji.col(1).array() == -2.0).all());
  EXPECT_TRUE((o.a_ij.col(1).array() == 2.0).all());
}

TEST(BuildObservation, ReproducesDrawnNoise) {
  const ClockParams ci{1.0004, 321.0}, cj{0.9993, -87.0};
  const LinkModel link{263.0, 4.0, 4.0};
  Rng rng(6);
  std::vector<ExchangeTrace> tr;
  const auto recs = run_rounds(ci, cj, link, {}, rng, &tr);
  const auto o = build_observation(recs, link);
  const Eigen::VectorXd z = o.a_ji * theta_of(ci) + o.a_ij * theta_of(cj);
  for (int k = 0; k < o.rounds(); ++k) {
    EXPECT_NEAR(z[k], tr[static_cast<std::size_t>(k)].noise_t - tr[static_cast<std::size_t>(k)].noise_r, 1e-6);
  }
}

TEST(BuildObservation, NeedsTwoRounds) {
  const auto recs = oracle::noiseless_stamps({1.0, 0.0}, {1.0, 0.0}, 250.0, 1, 0.0, 5e6, 1000.0);
  EXPECT_THROW(build_observation(recs, {250.0, 4.0, 4.0}), InvalidArgument);
}

TEST(BuildObservation, ZeroNoiseUsesPseudoVariance) {
  const auto recs = oracle::noiseless_stamps({1.0, 0.0}, {1.0, 0.0}, 250.0, 3, 0.0, 5e6, 1000.0);
  EXPECT_EQ(build_observation(recs, {250.0, 0.0, 0.0}).sigma2, 1e-6);
  EXPECT_EQ(build_observation(recs, {250.0, 0.0, 0.0}, {1e-3}).sigma2, 1e-3);
}

TEST(BuildObservation, SingleEdgeLeastSquaresRecoversTruth) {
  const ClockParams ci{1.00021, 455.0};
  const auto recs = oracle::noiseless_stamps(ci, {1.0, 0.0}, 250.0, 10, 0.0, 5e6, 1000.0);
  const auto o = build_observation(recs, {250.0, 0.0, 0.0});
  const Eigen::VectorXd rhs = -(o.a_ij * Vec2(1.0, 0.0));
  const Vec2 sol = (o.a_ji.transpose() * o.a_ji).ldlt().solve(o.a_ji.transpose() * rhs);
  EXPECT_NEAR(sol[0], 1.0 / ci.skew, 1e-9);
  EXPECT_NEAR(sol[1], ci.offset / ci.skew, 1e-6 * ci.offset);
}

TEST(ComputeMessage, FromMasterNoiseless) {
  const auto recs = oracle::noiseless_stamps({1.0, 0.0}, {1.0, 0.0}, 250.0, 10, 0.0, 5e6, 1000.0);
  const auto mn = ThetaState::from_prior(ClockPrior::master());
  double prev_trace = 0.0;
  for (double s2 : {1e-2, 1e-4, 1e-6}) {
    auto o = build_observation(recs, {250.0, 0.0, 0.0}, {s2});
    const auto m = compute_message(toward_receiver(o), mn, {}).gaussian;
    EXPECT_NEAR(m.mean()[0], 1.0, 1e-9);
    EXPECT_NEAR(m.mean()[1], 0.0, 1e-6);
    const double tr = m.covariance().trace();
    if (prev_trace > 0.0) {
      EXPECT_NEAR(tr / prev_trace, 1e-2, 1e-6);
    }
    prev_trace = tr;
  }
}

TEST(ComputeMessage, LambdaAtFirstIterationIsThePrior) {
  const auto prior = ThetaState::from_prior(ClockPrior::skew_only());
  const std::vector<Gaussian2> none{Gaussian2::non_informative(), Gaussian2::non_informative()};
  const auto [lambda, eta] = detail::accumulate(prior.gaussian, none);
  EXPECT_EQ(lambda, prior.gaussian.precision());
  EXPECT_EQ(eta, prior.gaussian.potential());
}

TEST(ComputeMessage, SchurMatchesDenseWhenLambdaInvertible) {
  Rng rng(21);
  const ClockParams ci{1.0003, 120.0}, cj{0.9998, -400.0};
  const LinkModel link{250.0, 4.0, 4.0};
  const auto recs = run_rounds(ci, cj, link, {}, rng);
  const auto o = build_observation(recs, link);
  const auto src = ThetaState::from_prior({-400.0, 100.0, 0.9998, 1e-8});
  Mat2 j;
  j << 1e12, 3e4, 3e4, 0.02;
  const std::vector<Gaussian2> in{Gaussian2::from_information(j, j * theta_of(cj))};
  for (const FactorView& f : {toward_receiver(o), toward_sender(o)}) {
    const auto a = compute_message(f, src, in).gaussian;
    const auto b = compute_message_dense(f, src, in);
    EXPECT_TRUE(a.mean().isApprox(b.mean(), 1e-6));
    const Mat2 ca = a.covariance(), cb = b.covariance();
    for (int r = 0; r < 2; ++r)
      for (int c = 0; c < 2; ++c) EXPECT_NEAR(ca(r, c), cb(r, c), 1e-6 * std::sqrt(cb(r, r) * cb(c, c)));
  }
}

TEST(ComputeMessage, DenseRouteRejectsSingularLambda) {
  const auto recs = oracle::noiseless_stamps({1.0, 0.0}, {1.0, 0.0}, 250.0, 10, 0.0, 5e6, 1000.0);
  const auto o = build_observation(recs, {250.0, 4.0, 4.0});
  EXPECT_THROW(compute_message_dense(toward_receiver(o), ThetaState::from_prior(ClockPrior::skew_only()), {}),
               SingularObservation);
}

TEST(ComputeMessage, RankDeficientTarget) {
  std::vector<TimestampRecord> recs(5, TimestampRecord{1, 0.0, 250.0, 1250.0, 1500.0});
  const auto o = build_observation(recs, {250.0, 4.0, 4.0});
  EXPECT_THROW(compute_message(toward_receiver(o), ThetaState::from_prior(ClockPrior::master()), {}),
               SingularObservation);
}

TEST(UpdateBelief, MasterKeepsExactPrior) {
  const auto mn = ThetaState::from_prior(ClockPrior::master());
  const std::vector<Gaussian2> in{Gaussian2::from_moments({3.0, 9.0}, Mat2::Identity())};
  const auto b = update_belief(0, mn, in, 3);
  EXPECT_TRUE(b.gaussian.is_exact());
  EXPECT_EQ(b.gaussian.mean(), Vec2(1.0, 0.0));
}

TEST(UpdateBelief, SingleMessageWithFlatPrior) {
  const auto msg = Gaussian2::from_moments({0.99, 12.0}, Mat2::Identity() * 0.3);
  const auto b = update_belief(1, ThetaState::non_informative(), std::vector<Gaussian2>{msg});
  EXPECT_TRUE(b.gaussian.mean().isApprox(msg.mean(), 1e-14));
  EXPECT_TRUE(b.gaussian.covariance().isApprox(msg.covariance(), 1e-14));
}

TEST(UpdateBelief, EqualCovarianceFusion) {
  Mat2 q;
  q << 2.0, 0.3, 0.3, 1.0;
  const auto m1 = Gaussian2::from_moments({1.0, 4.0}, q), m2 = Gaussian2::from_moments({3.0, 0.0}, q);
  const auto b = update_belief(1, ThetaState::non_informative(), std::vector<Gaussian2>{m1, m2});
  EXPECT_TRUE(b.gaussian.mean().isApprox(Vec2(2.0, 2.0), 1e-12));
  EXPECT_TRUE(b.gaussian.covariance().isApprox(q / 2.0, 1e-12));
}

TEST(UpdateBelief, AllZeroPrecisionRefusesEstimate) {
  const auto b = update_belief(1, ThetaState::non_informative(), std::vector<Gaussian2>{Gaussian2::non_informative()});
  EXPECT_FALSE(b.informative());
  EXPECT_THROW(bp_estimate(b), NonInformative);
}

TEST(BpEstimate, Formula) {
  EXPECT_EQ(bp_estimate({0, Gaussian2::exact({1.0, 0.0}), 0}), (ClockEstimate{1.0, 0.0}));
  const auto e = bp_estimate({0, Gaussian2::exact({1.0002, 300.06}), 0});
  EXPECT_NEAR(e.skew, 1.0 / 1.0002, 1e-15);
  EXPECT_NEAR(e.offset, 300.0, 1e-9);
}

TEST(RunBp, TwoNodeNoiselessConvergesInOneIteration) {
  SyncGraph g;
  g.add_node({"mn", Role::Master, ClockPrior::master(), std::nullopt});
  g.add_node({"a", Role::BpNode, ClockPrior::skew_only(), std::nullopt});
  g.add_edge("mn", "a");
  const auto b = build(g, 3, 0.0);
  const auto res = run_bp(b.net);
  ASSERT_GE(res.stop_iteration, 1);
  expect_close(*res.estimates[1][1], b.truth.clocks[1], 1e-6);
  EXPECT_EQ(res.stop_iteration, 2);
  EXPECT_TRUE(res.converged);
}

TEST(RunBp, ChainNoiselessAfterTwoIterations) {
  const auto b = build(chain3(), 4, 0.0);
  BpOptions opts;
  opts.epsilon = 0.0;
  opts.max_iterations = 2;
  const auto res = run_bp(b.net, opts);
  expect_close(*res.estimates[2][2], b.truth.clocks[2], 1e-6);
  const auto oracle_marg = oracle::joint_posterior(b.net);
  EXPECT_TRUE(res.beliefs[2].gaussian.mean().isApprox(oracle_marg[2].mean, 1e-6));
}

TEST(RunBp, TreesMatchExactInference) {
  std::mt19937_64 rng(77);
  for (int t = 0; t < 5; ++t) {
    const int n = std::uniform_int_distribution<int>(3, 8)(rng);
    const auto g = oracle::random_tree(n, rng);
    const auto b = build(g, 100 + t);
    BpOptions opts;
    opts.epsilon = 1e-9;
    opts.max_iterations = 2 * n;
    const auto res = run_bp(b.net, opts);
    const auto ref = oracle::joint_posterior(b.net);
    for (int i = 1; i < n; ++i) {
      const Vec2 m = res.beliefs[static_cast<std::size_t>(i)].gaussian.mean();
      const Mat2 c = res.beliefs[static_cast<std::size_t>(i)].gaussian.covariance();
      const auto& r = ref[static_cast<std::size_t>(i)];
      for (int a = 0; a < 2; ++a) {
        EXPECT_NEAR(m[a], r.mean[a], 1e-6 * std::max(1.0, std::abs(r.mean[a])));
        for (int bb = 0; bb < 2; ++bb)
          EXPECT_NEAR(c(a, bb), r.cov(a, bb), 1e-6 * std::sqrt(r.cov(a, a) * r.cov(bb, bb)));
      }
    }
  }
}

TEST(RunBp, MasterInvariantAndInformationAdditive) {
  const auto g = default_topology();
  const auto b = build(g, 8);
  const auto res = run_bp(b.net);
  const int mn = g.index_of("v7");
  for (const auto& snap : res.estimates) EXPECT_EQ(*snap[static_cast<std::size_t>(mn)], (ClockEstimate{1.0, 0.0}));

  // Recompute node v1's belief from the final messages in adjacency order.
  const int v1 = g.index_of("v1");
  Mat2 j = b.net.priors[static_cast<std::size_t>(v1)].gaussian.precision();
  for (const auto& [nbr, e] : g.neighbors(v1)) {
    for (const auto& m : res.messages) {
      if (m.from == nbr && m.to == v1) j += m.gaussian.precision();
    }
  }
  EXPECT_EQ(res.beliefs[static_cast<std::size_t>(v1)].gaussian.precision(), j);
}

TEST(RunBp, ConvergenceTraceIsMonotoneAtStop) {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const auto b = build(default_topology(), seed);
    const auto res = run_bp(b.net);
    const auto l = static_cast<std::size_t>(res.stop_iteration);
    if (res.converged) {
      EXPECT_LT(res.max_change[l], 0.01);
      if (l > 1) {
        EXPECT_GE(res.max_change[l - 1], 0.01);
      }
    } else {
      EXPECT_EQ(res.stop_iteration, 10);
    }
  }
}

TEST(RunBp, LoopyStabilityOnDefaultMesh) {
  BpOptions opts;
  opts.epsilon = 0.0;
  opts.max_iterations = 8;
  for (std::uint64_t seed = 1; seed <= 50; ++seed) {
    const auto b = build(default_topology(), seed);
    const auto res = run_bp(b.net, opts);
    for (int n = 0; n < b.net.node_count(); ++n) {
      const auto& e4 = *res.estimates[4][static_cast<std::size_t>(n)];
      const auto& e8 = *res.estimates[8][static_cast<std::size_t>(n)];
      EXPECT_LT(std::abs(e8.offset - e4.offset), 0.1);
      EXPECT_LT(std::abs(e8.skew - e4.skew) * kPpm, 0.01);
    }
  }
}

TEST(RunBp, OffsetInformationArrivesByHopDistance) {
  const auto g = chain3();
  const auto b = build(g, 5);
  BpOptions opts;
  opts.epsilon = 0.0;
  opts.max_iterations = 3;
  const auto res = run_bp(b.net, opts);
  EXPECT_FALSE(res.estimates[0][1]->offset != 0.0);
  EXPECT_NE(res.estimates[1][1]->offset, 0.0);
  EXPECT_EQ(res.estimates[1][2]->offset, 0.0);
  EXPECT_NE(res.estimates[2][2]->offset, 0.0);
}

TEST(RunBp, RefusesWithoutMaster) {
  SyncGraph g;
  g.add_node({"a", Role::BpNode, {0.0, 1e4, 1.0, 1e-4}, std::nullopt});
  g.add_node({"b", Role::BpNode, ClockPrior::skew_only(), std::nullopt});
  g.add_edge("a", "b");
  const auto b = build(g, 2);
  EXPECT_THROW(run_bp(b.net), ConfigError);
  BpOptions opts;
  opts.allow_no_master = true;
  EXPECT_NO_THROW(run_bp(b.net, opts));
}

TEST(RunBp, RefusesDisconnectedNetwork) {
  auto b = build(chain3(), 2);
  b.net.edges.pop_back();
  EXPECT_THROW(run_bp(b.net), ConfigError);
}

TEST(RunBp, FlatPriorsWarnAboutPseudoInverse) {
  SyncGraph g;
  g.add_node({"mn", Role::Master, ClockPrior::master(), std::nullopt});
  for (const char* id : {"a", "b", "c"}) g.add_node({id, Role::BpNode, ClockPrior::flat(), std::nullopt});
  g.add_edge("mn", "a");
  g.add_edge("a", "b");
  g.add_edge("b", "c");
  const auto b = build(g, 9);
  BpOptions opts;
  opts.epsilon = 1e-9;
  const auto res = run_bp(b.net, opts);
  EXPECT_FALSE(res.warnings.empty());
  EXPECT_FALSE(res.estimates[0][1].has_value());
  const auto ref = oracle::joint_posterior(b.net);
  for (int i = 1; i < 4; ++i) {
    const Vec2 m = res.beliefs[static_cast<std::size_t>(i)].gaussian.mean();
    EXPECT_NEAR(m[0], ref[static_cast<std::size_t>(i)].mean[0], 1e-6);
    EXPECT_NEAR(m[1], ref[static_cast<std::size_t>(i)].mean[1], 1e-6 * std::abs(ref[static_cast<std::size_t>(i)].mean[1]));
  }
}
