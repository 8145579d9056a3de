#pragma once

#include <cmath>

#include "clocksync/errors.hpp"

namespace clocksync {

/// Affine clock c(t) = skew * t + offset. Skew is a dimensionless ratio, offset in ns.
struct ClockParams {
  double skew = 1.0;
  double offset = 0.0;

  friend bool operator==(const ClockParams&, const ClockParams&) = default;
};

/// Point estimate of a clock, same units as ClockParams.
using ClockEstimate = ClockParams;

inline constexpr double kPpm = 1e6;

inline double skew_to_ppm(double skew) { return (skew - 1.0) * kPpm; }

inline double read_clock(const ClockParams& p, double t) { return p.skew * t + p.offset; }

/// Parameters of `child` expressed against `parent`'s clock instead of reference time:
/// read_clock(child, t) == read_clock(result, read_clock(parent, t)).
inline ClockParams relative_params(const ClockParams& child, const ClockParams& parent) {
  if (!(parent.skew > 0.0)) throw InvalidArgument("relative_params: parent skew must be positive");
  const double rel_skew = child.skew / parent.skew;
  return {rel_skew, child.offset - rel_skew * parent.offset};
}

/// Inverse of relative_params: absolute child clock from its relative clock and the parent's.
inline ClockParams compose_estimates(const ClockParams& relative, const ClockParams& parent_absolute) {
  if (!(relative.skew > 0.0) || !(parent_absolute.skew > 0.0))
    throw InvalidArgument("compose_estimates: skews must be positive");
  return {relative.skew * parent_absolute.skew,
          relative.offset + relative.skew * parent_absolute.offset};
}

}  // namespace clocksync
