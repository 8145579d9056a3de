#pragma once

#include <cmath>
#include <limits>

#include "clocksync/clock.hpp"
#include "clocksync/gaussian.hpp"

namespace clocksync {

/// Prior knowledge of a clock, stated on offset and skew directly.
/// An infinite variance is a flat (non-informative) prior; zero variance on both
/// coordinates is an exact reference clock.
struct ClockPrior {
  double offset_mean = 0.0;
  double offset_variance = std::numeric_limits<double>::infinity();
  double skew_mean = 1.0;
  double skew_variance = 1e-4;

  static ClockPrior skew_only() { return {}; }
  static ClockPrior master() { return {0.0, 0.0, 1.0, 0.0}; }
  static ClockPrior flat() {
    constexpr double inf = std::numeric_limits<double>::infinity();
    return {0.0, inf, 1.0, inf};
  }

  bool is_exact() const { return offset_variance == 0.0 && skew_variance == 0.0; }

  friend bool operator==(const ClockPrior&, const ClockPrior&) = default;
};

/// Gaussian belief over theta = [1/skew, offset/skew].
struct ThetaState {
  Gaussian2 gaussian;

  /// Maps a ClockPrior onto theta by first-order propagation around the prior means.
  static ThetaState from_prior(const ClockPrior& prior) {
    if (!(prior.skew_mean > 0.0)) throw InvalidArgument("ClockPrior: skew mean must be positive");
    if (prior.offset_variance < 0.0 || prior.skew_variance < 0.0)
      throw InvalidArgument("ClockPrior: variances must be non-negative");
    const Vec2 mean{1.0 / prior.skew_mean, prior.offset_mean / prior.skew_mean};
    if (prior.is_exact()) return {Gaussian2::exact(mean)};
    if (prior.offset_variance == 0.0 || prior.skew_variance == 0.0)
      throw InvalidArgument("ClockPrior: a partially exact prior is not representable");

    const double g2 = prior.skew_mean * prior.skew_mean;
    // d(1/g)/dg = -1/g^2, so var(1/g) ~ var(g)/g^4.
    const double inv_skew_var = prior.skew_variance / (g2 * g2);
    const double offset_var = prior.offset_variance / g2;
    Mat2 J = Mat2::Zero();
    J(0, 0) = std::isinf(inv_skew_var) ? 0.0 : 1.0 / inv_skew_var;
    J(1, 1) = std::isinf(offset_var) ? 0.0 : 1.0 / offset_var;
    return {Gaussian2::from_information(J, J * mean)};
  }

  static ThetaState non_informative() { return {Gaussian2::non_informative()}; }

  /// Clock estimate 1/mean(0), mean(1)/mean(0). When the offset coordinate carries no
  /// precision yet, the offset reads as 0, the nominal mean of a flat offset prior.
  ClockEstimate estimate() const { return estimate_from(gaussian); }

  static ClockEstimate estimate_from(const Gaussian2& g) {
    if (g.is_non_informative()) throw NonInformative("estimate: belief carries no information");
    if (g.offset_uninformed()) {
      const double m0 = g.first_mean();
      if (!(m0 > 0.0) || !std::isfinite(m0)) throw NonInformative("estimate: non-positive 1/skew");
      return {1.0 / m0, 0.0};
    }
    const Vec2 m = g.mean();
    if (!(m[0] > 0.0) || !std::isfinite(m[0]) || !std::isfinite(m[1]))
      throw NonInformative("estimate: non-positive 1/skew");
    return {1.0 / m[0], m[1] / m[0]};
  }
};

/// theta = [1/skew, offset/skew] of a known clock.
inline Vec2 theta_of(const ClockParams& p) { return {1.0 / p.skew, p.offset / p.skew}; }

}  // namespace clocksync
