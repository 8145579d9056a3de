#pragma once

#include <algorithm>
#include <cassert>
#include <cmath>
#include <random>
#include <vector>

#include "clocksync/clock.hpp"
#include "clocksync/errors.hpp"

namespace clocksync {

using Rng = std::mt19937_64;

/// Symmetric link: deterministic path delay d plus zero-mean Gaussian stamping noise,
/// T on the j->i leg and R on the i->j leg.
struct LinkModel {
  double delay = 250.0;  // ns
  double sigma_t = 4.0;  // ns
  double sigma_r = 4.0;  // ns

  void validate() const {
    if (!(delay > 0.0)) throw InvalidArgument("LinkModel: delay must be positive");
    if (!(sigma_t >= 0.0) || !(sigma_r >= 0.0))
      throw InvalidArgument("LinkModel: noise standard deviations must be non-negative");
  }
  double variance_t() const { return sigma_t * sigma_t; }
  double variance_r() const { return sigma_r * sigma_r; }
};

/// One two-way exchange as seen by the two local clocks. j sends at t1 and receives
/// the reply at t4; i receives at t2 and replies at t3.
struct TimestampRecord {
  int round = 1;
  double c_j_t1 = 0.0;
  double c_i_t2 = 0.0;
  double c_i_t3 = 0.0;
  double c_j_t4 = 0.0;

  friend bool operator==(const TimestampRecord&, const TimestampRecord&) = default;
};

/// Reference-time instants and the noise actually drawn for one round.
struct ExchangeTrace {
  double t1 = 0.0, t2 = 0.0, t3 = 0.0, t4 = 0.0;
  double noise_t = 0.0;
  double noise_r = 0.0;
};

/// Largest residual of the two stamp equations for a record, given the true clocks and
/// the noise that produced it:
///   (c_i(t2) - th_i)/g_i = (c_j(t1) - th_j)/g_j + d + T
///   (c_i(t3) - th_i)/g_i = (c_j(t4) - th_j)/g_j - d - R
inline double exchange_residual(const TimestampRecord& rec, const ClockParams& clock_i,
                                const ClockParams& clock_j, const LinkModel& link,
                                const ExchangeTrace& trace) {
  const double lhs2 = (rec.c_i_t2 - clock_i.offset) / clock_i.skew;
  const double rhs2 = (rec.c_j_t1 - clock_j.offset) / clock_j.skew + link.delay + trace.noise_t;
  const double lhs3 = (rec.c_i_t3 - clock_i.offset) / clock_i.skew;
  const double rhs3 = (rec.c_j_t4 - clock_j.offset) / clock_j.skew - link.delay - trace.noise_r;
  return std::max(std::abs(lhs2 - rhs2), std::abs(lhs3 - rhs3));
}

/// Simulates one exchange started by j at reference time t1_ref. Noise is drawn as
/// sigma * N(0,1), so the stream consumed is the same whatever the sigmas are.
template <class URBG>
TimestampRecord exchange_round(const ClockParams& clock_i, const ClockParams& clock_j,
                               const LinkModel& link, double t1_ref, double turnaround,
                               URBG& rng, ExchangeTrace* trace = nullptr, int round = 1) {
  if (!(turnaround >= 0.0)) throw InvalidArgument("exchange_round: turnaround must be non-negative");
  link.validate();

  std::normal_distribution<double> unit(0.0, 1.0);
  const double noise_t = link.sigma_t * unit(rng);
  const double noise_r = link.sigma_r * unit(rng);

  ExchangeTrace tr;
  tr.t1 = t1_ref;
  tr.t2 = tr.t1 + link.delay + noise_t;
  tr.t3 = tr.t2 + turnaround;
  tr.t4 = tr.t3 + link.delay + noise_r;
  tr.noise_t = noise_t;
  tr.noise_r = noise_r;

  TimestampRecord rec;
  rec.round = round;
  rec.c_j_t1 = read_clock(clock_j, tr.t1);
  rec.c_i_t2 = read_clock(clock_i, tr.t2);
  rec.c_i_t3 = read_clock(clock_i, tr.t3);
  rec.c_j_t4 = read_clock(clock_j, tr.t4);

  assert(exchange_residual(rec, clock_i, clock_j, link, tr) < 1e-6);
  if (trace != nullptr) *trace = tr;
  return rec;
}

/// Round timing shared by every link of a scenario.
struct RoundSchedule {
  int rounds = 10;             // K
  double t0 = 0.0;             // ns, reference time of the first t1
  double delta = 5e6;          // ns between successive t1
  double turnaround = 1000.0;  // ns between t2 and t3
};

/// K exchanges with record k started at t0 + (k-1)*delta.
template <class URBG>
std::vector<TimestampRecord> run_rounds(const ClockParams& clock_i, const ClockParams& clock_j,
                                        const LinkModel& link, const RoundSchedule& schedule,
                                        URBG& rng, std::vector<ExchangeTrace>* traces = nullptr) {
  if (schedule.rounds < 1) throw InvalidArgument("run_rounds: need at least one round");
  link.validate();
  if (!(schedule.delta > schedule.turnaround + 2.0 * link.delay))
    throw InvalidArgument("run_rounds: delta must exceed turnaround + 2*delay (rounds overlap)");

  std::vector<TimestampRecord> out;
  out.reserve(static_cast<std::size_t>(schedule.rounds));
  if (traces != nullptr) traces->clear();
  for (int k = 1; k <= schedule.rounds; ++k) {
    ExchangeTrace tr;
    const double t1 = schedule.t0 + (k - 1) * schedule.delta;
    out.push_back(exchange_round(clock_i, clock_j, link, t1, schedule.turnaround, rng, &tr, k));
    if (traces != nullptr) traces->push_back(tr);
  }
  return out;
}

}  // namespace clocksync
