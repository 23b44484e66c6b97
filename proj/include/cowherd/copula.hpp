#pragma once

#include "cowherd/error.hpp"
#include "cowherd/special.hpp"

#include <algorithm>
#include <cmath>

namespace cowherd {

inline constexpr double kCopulaClamp = 1e-10;

//! Gaussian copula density from the probit scores x = Phi^-1(u), y = Phi^-1(v).
inline double gaussian_copula_density_probit(double x, double y, double rho)
{
  const double r2 = rho * rho;
  const double q = (r2 * (x * x + y * y) - 2.0 * rho * x * y) / (2.0 * (1.0 - r2));
  return std::exp(-q) / std::sqrt(1.0 - r2);
}

//! Bivariate Gaussian copula density c(u, v; rho).  u and v are clamped to
//! [1e-10, 1 - 1e-10] before the probit transform.
inline double gaussian_copula_density(double u, double v, double rho)
{
  if (!(std::abs(rho) < 1.0))
    throw DomainError("gaussian copula requires |rho| < 1");
  if (rho == 0.0)
    return 1.0;
  const double x = norm_quantile(std::clamp(u, kCopulaClamp, 1.0 - kCopulaClamp));
  const double y = norm_quantile(std::clamp(v, kCopulaClamp, 1.0 - kCopulaClamp));
  return gaussian_copula_density_probit(x, y, rho);
}

} // namespace cowherd
