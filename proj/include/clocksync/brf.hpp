#pragma once

#include <optional>
#include <span>
#include <vector>

#include "clocksync/gaussian.hpp"
#include "clocksync/theta.hpp"
#include "clocksync/timestamp.hpp"

namespace clocksync {

/// How the prediction input u = [0, -dc / skew^{k-1}] is treated.
enum class PredictionModel {
  /// u is a function of the state's own first coordinate, so A*theta + u == theta and the
  /// covariance carries over unchanged (plus process noise). Consistent with the constant
  /// relative clock that the measurement rows assume.
  StateCoupled,
  /// u is a constant built from the previous estimate and the covariance is A*Q*A^T.
  Literal,
};

struct BrfConfig {
  PredictionModel model = PredictionModel::StateCoupled;
  Mat2 process_noise = Mat2::Zero();
};

/// Transition matrix [[1, 0], [dc, 1]] with dc = c_j(t1^k) - c_j(t1^{k-1}).
inline Mat2 brf_transition(double dc) {
  Mat2 a;
  a << 1.0, 0.0, dc, 1.0;
  return a;
}

/// Prediction step. The predicted mean equals the previous mean in both models; the
/// models differ only in the propagated covariance.
inline Gaussian2 predict(const Gaussian2& prev, double c_j_t1_k, double c_j_t1_km1,
                         const Mat2& process_noise = Mat2::Zero(),
                         PredictionModel model = PredictionModel::StateCoupled) {
  const double dc = c_j_t1_k - c_j_t1_km1;
  if (!(dc > 0.0)) throw InvalidArgument("predict: t1 stamps must be strictly increasing");
  const Mat2 noise = detail::symmetrize(process_noise);
  const bool has_noise = !noise.isZero(0.0);

  const bool literal = model == PredictionModel::Literal;
  const Mat2 a = literal ? brf_transition(dc) : Mat2::Identity();
  const double mu1 = literal && !prev.is_non_informative() ? prev.first_mean() : 0.0;
  const Vec2 u = literal ? Vec2{0.0, -dc * mu1} : Vec2::Zero();

  if (prev.is_exact()) {
    const Vec2 m = a * prev.mean() + u;
    if (!has_noise) return Gaussian2::exact(m);
    return Gaussian2::from_moments(m, noise);
  }
  if (prev.form() == Gaussian2::Form::Moment) {
    return Gaussian2::from_moments(a * prev.mean() + u, a * prev.covariance() * a.transpose() + noise);
  }

  // Information form: J' = A^-T J A^-1, h' = A^-T h + J' u. Works for singular J.
  const Mat2 a_inv = a.inverse();
  const Mat2 j_pred = detail::symmetrize(a_inv.transpose() * prev.precision() * a_inv);
  const Vec2 h_pred = a_inv.transpose() * prev.potential() + j_pred * u;
  if (!has_noise) return Gaussian2::from_information(j_pred, h_pred);

  // (J^-1 + N)^-1 = (I + J N)^-1 J, defined for singular J and N alike.
  const Mat2 s = (Mat2::Identity() + j_pred * noise).inverse();
  return Gaussian2::from_information(s * j_pred, s * h_pred);
}

/// Observation matrices of the update step for rounds k-1 and k.
struct BrfObservation {
  Mat2 b;  // [[c_i(t2^k) - c_i(t2^{k-1}), 0], [c_i(t2^k) + c_i(t3^k), -2]]
  Vec2 r;  // [c_j(t1^k) - c_j(t1^{k-1}), c_j(t1^k) + c_j(t4^k)]
  Mat2 noise;  // diag(2 sigma_T^2, sigma_T^2 + sigma_R^2)
};

inline BrfObservation brf_observation(const TimestampRecord& rec_k, const TimestampRecord& rec_km1,
                                      const LinkModel& link) {
  BrfObservation o;
  o.b << rec_k.c_i_t2 - rec_km1.c_i_t2, 0.0, rec_k.c_i_t2 + rec_k.c_i_t3, -2.0;
  o.r << rec_k.c_j_t1 - rec_km1.c_j_t1, rec_k.c_j_t1 + rec_k.c_j_t4;
  o.noise << 2.0 * link.variance_t(), 0.0, 0.0, link.variance_t() + link.variance_r();
  return o;
}

/// Measurement-update density N(B^-1 r, B^-1 R B^-T). A noiseless link yields an exact
/// constraint.
inline Gaussian2 measurement_update(const TimestampRecord& rec_k, const TimestampRecord& rec_km1,
                                    const LinkModel& link) {
  const BrfObservation o = brf_observation(rec_k, rec_km1, link);
  if (o.b(0, 0) == 0.0 || !std::isfinite(o.b(0, 0)))
    throw SingularObservation("measurement_update: identical t2 stamps make B singular");

  // B is lower triangular; solve directly.
  Vec2 mean;
  mean[0] = o.r[0] / o.b(0, 0);
  mean[1] = (o.r[1] - o.b(1, 0) * mean[0]) / o.b(1, 1);

  const bool noiseless_t = o.noise(0, 0) == 0.0;
  const bool noiseless_sum = o.noise(1, 1) == 0.0;
  if (noiseless_t && noiseless_sum) return Gaussian2::exact(mean);
  if (noiseless_t || noiseless_sum)
    throw InvalidArgument("measurement_update: partially noiseless link is not representable");

  const Mat2 b_inv = o.b.inverse();
  return Gaussian2::from_moments(mean, b_inv * o.noise * b_inv.transpose());
}

/// Pairwise filter state of a child clock relative to its parent.
struct BrfState {
  ThetaState state;
  std::optional<TimestampRecord> last_record;
  int round = 0;
};

inline BrfState brf_init(const ThetaState& prior) { return {prior, std::nullopt, 0}; }

/// One predict/update/fuse cycle. Requires a buffered previous record.
inline BrfState brf_step(const BrfState& s, const TimestampRecord& rec_k, const LinkModel& link,
                         const BrfConfig& cfg = {}) {
  if (s.round < 1 || !s.last_record) throw InvalidArgument("brf_step: no buffered previous record");
  const TimestampRecord& prev = *s.last_record;
  const Gaussian2 pred = predict(s.state.gaussian, rec_k.c_j_t1, prev.c_j_t1, cfg.process_noise, cfg.model);
  const Gaussian2 upd = measurement_update(rec_k, prev, link);
  return {ThetaState{gaussian_product(pred, upd)}, rec_k, s.round + 1};
}

/// Feeds one record: the first round only buffers, later rounds run brf_step.
inline BrfState brf_observe(const BrfState& s, const TimestampRecord& rec, const LinkModel& link,
                            const BrfConfig& cfg = {}) {
  if (s.round == 0) return {s.state, rec, 1};
  return brf_step(s, rec, link, cfg);
}

/// (relative skew, relative offset) from the filter's posterior mean.
inline ClockEstimate brf_estimate(const BrfState& s) { return s.state.estimate(); }

/// Runs the filter over every record; element k is the state after k rounds (element 0
/// is the prior).
inline std::vector<BrfState> run_brf(std::span<const TimestampRecord> records, const LinkModel& link,
                                     const ThetaState& prior, const BrfConfig& cfg = {}) {
  std::vector<BrfState> out;
  out.reserve(records.size() + 1);
  out.push_back(brf_init(prior));
  for (const auto& rec : records) out.push_back(brf_observe(out.back(), rec, link, cfg));
  return out;
}

}  // namespace clocksync
