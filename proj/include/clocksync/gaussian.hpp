#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>

#include "clocksync/errors.hpp"

namespace clocksync {

using Vec2 = Eigen::Vector2d;
using Mat2 = Eigen::Matrix2d;

namespace detail {

inline Mat2 symmetrize(const Mat2& m) { return 0.5 * (m + m.transpose()); }

// Relative singularity test that is invariant to per-coordinate scaling, so a
// matrix mixing a dimensionless row with an ns row is judged on its correlation.
inline bool is_full_rank_psd(const Mat2& m, double tol = 1e-13) {
  const double a = m(0, 0), d = m(1, 1);
  if (!(a > 0.0) || !(d > 0.0)) return false;
  const double det = a * d - m(0, 1) * m(1, 0);
  return det > tol * a * d;
}

inline bool approx_equal(const Vec2& a, const Vec2& b, double rel) {
  for (int i = 0; i < 2; ++i) {
    if (std::abs(a[i] - b[i]) > rel * std::max({1.0, std::abs(a[i]), std::abs(b[i])})) return false;
  }
  return true;
}

}  // namespace detail

/// Bivariate Gaussian carried in one of three forms:
///  - Moment: built from a mean and an invertible covariance (information form cached),
///  - Information: precision J and potential h = J*mean; J may be singular, and J == 0
///    is the non-informative density N(0, +inf*I),
///  - Exact: a delta at `mean` (zero covariance), used for the master node's prior.
class Gaussian2 {
 public:
  enum class Form { Moment, Information, Exact };

  Gaussian2() : Gaussian2(non_informative()) {}

  static Gaussian2 non_informative() { return from_information(Mat2::Zero(), Vec2::Zero()); }

  static Gaussian2 from_information(const Mat2& precision, const Vec2& potential) {
    Gaussian2 g(Form::Information);
    g.precision_ = detail::symmetrize(precision);
    g.potential_ = potential;
    return g;
  }

  static Gaussian2 from_moments(const Vec2& mean, const Mat2& covariance) {
    const Mat2 cov = detail::symmetrize(covariance);
    if (!detail::is_full_rank_psd(cov))
      throw InvalidArgument("Gaussian2::from_moments: covariance must be symmetric positive definite");
    Gaussian2 g(Form::Moment);
    g.mean_ = mean;
    g.covariance_ = cov;
    g.precision_ = detail::symmetrize(cov.inverse());
    g.potential_ = g.precision_ * mean;
    return g;
  }

  static Gaussian2 exact(const Vec2& mean) {
    Gaussian2 g(Form::Exact);
    g.mean_ = mean;
    g.covariance_.setZero();
    return g;
  }

  Form form() const { return form_; }
  bool is_exact() const { return form_ == Form::Exact; }

  /// Precision matrix. Undefined (infinite) for the exact form.
  const Mat2& precision() const {
    if (is_exact()) throw InvalidArgument("Gaussian2: exact constraint has infinite precision");
    return precision_;
  }
  const Vec2& potential() const {
    if (is_exact()) throw InvalidArgument("Gaussian2: exact constraint has no potential vector");
    return potential_;
  }

  bool is_non_informative() const { return !is_exact() && precision_.isZero(0.0); }

  /// True when the offset coordinate carries exactly zero precision, i.e. only the
  /// 1/skew coordinate is informed. Zeros are structural, never thresholded.
  bool offset_uninformed() const {
    return !is_exact() && precision_(1, 1) == 0.0 && precision_(0, 1) == 0.0 && precision_(1, 0) == 0.0;
  }

  bool has_finite_covariance() const {
    return form_ == Form::Moment || is_exact() || detail::is_full_rank_psd(precision_);
  }

  Vec2 mean() const {
    if (form_ != Form::Information) return mean_;
    if (!detail::is_full_rank_psd(precision_))
      throw NonInformative("Gaussian2::mean: precision is singular");
    return precision_.ldlt().solve(potential_);
  }

  Mat2 covariance() const {
    if (form_ != Form::Information) return covariance_;
    if (!detail::is_full_rank_psd(precision_))
      throw NonInformative("Gaussian2::covariance: precision is singular");
    return detail::symmetrize(precision_.inverse());
  }

  /// Mean of the 1/skew coordinate alone; defined whenever that coordinate is informed,
  /// including offset-uninformed densities.
  double first_mean() const {
    if (form_ != Form::Information) return mean_[0];
    if (offset_uninformed()) {
      if (!(precision_(0, 0) > 0.0)) throw NonInformative("Gaussian2::first_mean: no precision");
      return potential_[0] / precision_(0, 0);
    }
    return mean()[0];
  }

  /// Same density in information form (exact stays exact).
  Gaussian2 to_information() const {
    if (form_ != Form::Moment) return *this;
    return from_information(precision_, potential_);
  }

  /// Same density in moment form. Requires a finite covariance.
  Gaussian2 to_moment() const {
    if (form_ != Form::Information) return *this;
    return from_moments(mean(), covariance());
  }

 private:
  explicit Gaussian2(Form f) : form_(f) {
    mean_.setZero();
    covariance_.setZero();
    precision_.setZero();
    potential_.setZero();
  }

  Form form_;
  Vec2 mean_;
  Mat2 covariance_;
  Mat2 precision_;
  Vec2 potential_;
};

/// Relative tolerance within which two exact constraints are considered the same point.
inline constexpr double kExactAgreement = 1e-6;

/// Normalized product of two Gaussian densities.
///
/// Zero-precision arguments are identities. An exact constraint absorbs any finite
/// density; two exact constraints must agree. A finite product whose precision sum is
/// singular is reported rather than regularized.
inline Gaussian2 gaussian_product(const Gaussian2& a, const Gaussian2& b) {
  if (a.is_exact() && b.is_exact()) {
    if (!detail::approx_equal(a.mean(), b.mean(), kExactAgreement))
      throw InvalidArgument("gaussian_product: conflicting exact constraints");
    return a;
  }
  if (a.is_exact()) return a;
  if (b.is_exact()) return b;
  if (b.is_non_informative()) return a;
  if (a.is_non_informative()) return b;

  Gaussian2 out = Gaussian2::from_information(a.precision() + b.precision(), a.potential() + b.potential());
  if (!out.has_finite_covariance() && !out.offset_uninformed())
    throw SingularObservation("gaussian_product: singular sum of precisions");
  return out;
}

}  // namespace clocksync
