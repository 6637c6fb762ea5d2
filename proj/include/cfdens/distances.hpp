#pragma once

#include "cfdens/data.hpp"

#include <Eigen/Dense>

#include <string>

namespace cfdens {

inline constexpr double kDensityFloor = 1e-8; // q_floor
inline constexpr double kRatioFloor = 1e-12;  // p_floor

enum class DistanceKind { l2sq, kl, chisq, hellinger, smoothed_tv };
enum class SmoothingKind { tanh, erf };

//! A generalized distance D_f(p, q) = \int f(p, q) q dy.
struct DistanceSpec
{
  DistanceKind kind = DistanceKind::l2sq;
  double tv_t = 50.0;
  SmoothingKind tv_kind = SmoothingKind::tanh;

  static DistanceSpec parse(const std::string& text);
  std::string to_string() const;
  std::string name() const;
};

//! Smooth surrogate for |y|, with analytic first and second derivatives.
struct SmoothAbs
{
  double value;
  double d1;
  double d2;
};
SmoothAbs nu_t(double y, double t, SmoothingKind kind = SmoothingKind::tanh);

// Raw discrepancy table. These throw DomainError when q <= kDensityFloor, and
// (for KL and Hellinger derivatives involving log p or 1/sqrt(p)) when
// p <= kRatioFloor.
double f_eval(const DistanceSpec& spec, double p, double q);
double f1(const DistanceSpec& spec, double p, double q);
double f2(const DistanceSpec& spec, double p, double q);
double f21(const DistanceSpec& spec, double p, double q);

// Combinations used by the estimators, in algebraically simplified form so
// that L2sq and smoothed TV need no floor at all. The remaining kinds clamp
// q at kDensityFloor and p at kRatioFloor before evaluation.

//! f(p, q) q, the integrand of the distance itself.
double weighted_f(const DistanceSpec& spec, double p, double q);
//! f(p, q) + q f2'(p, q), the moment-condition factor.
double moment_factor(const DistanceSpec& spec, double p, double q);
//! f1'(p, q) + q f21''(p, q), the influence-function factor.
double gamma_factor(const DistanceSpec& spec, double p, double q);
//! q f1'(p, q).
double weighted_f1(const DistanceSpec& spec, double p, double q);

//! Quadrature of f(p, q) q on the grid. DomainError messages name the grid
//! index when a value is non-finite or negative.
double divergence(const DistanceSpec& spec,
                  const Eigen::Ref<const Eigen::VectorXd>& p,
                  const Eigen::Ref<const Eigen::VectorXd>& q,
                  const EvalGrid& grid);

//! True when the kind needs a positive floor on its densities.
bool needs_floor(const DistanceSpec& spec);

Eigen::VectorXd floor_density(const Eigen::Ref<const Eigen::VectorXd>& values,
                              double floor = kDensityFloor);

} // namespace cfdens
