#pragma once

#include <boost/math/special_functions/erf.hpp>

#include <cmath>
#include <numbers>

namespace cowherd {

inline constexpr double kInvSqrt2Pi = 0.3989422804014326779399460599343818684758586311649;

//! Standard normal density.
inline double norm_pdf(double x)
{
  return kInvSqrt2Pi * std::exp(-0.5 * x * x);
}

//! Standard normal cdf, accurate in both tails.
inline double norm_cdf(double x)
{
  return 0.5 * boost::math::erfc(-x * (std::numbers::sqrt2 / 2.0));
}

//! Upper tail 1 - Phi(x) without cancellation.
inline double norm_sf(double x)
{
  return 0.5 * boost::math::erfc(x * (std::numbers::sqrt2 / 2.0));
}

//! Probit, Phi^{-1}(u) for u in (0, 1).
inline double norm_quantile(double u)
{
  if (u <= 0.0)
    return -INFINITY;
  if (u >= 1.0)
    return INFINITY;
  return -std::numbers::sqrt2 * boost::math::erfc_inv(2.0 * u);
}

} // namespace cowherd
