#pragma once

#include "cowherd/error.hpp"
#include "cowherd/grid.hpp"

#include <cmath>
#include <optional>
#include <vector>

namespace cowherd {

//! p(m, t) = sum_k z_k g_k(m) h_k(t); the first `s` components are signal.
//! `rho`, when set, couples each component through a Gaussian copula.
struct MixtureModel
{
  std::vector<double> z;
  std::vector<GridDensity> g;
  std::vector<GridDensity> h;
  std::size_t s = 1;
  std::size_t b = 1;
  std::optional<std::vector<double>> rho;

  std::size_t components() const { return z.size(); }

  void validate() const
  {
    const std::size_t k = z.size();
    if (k == 0 || g.size() != k || h.size() != k)
      throw ShapeError("mixture model needs one (z, g, h) triple per component");
    if (s + b != k)
      throw ShapeError("mixture model: s + b must equal the number of components");
    double sum = 0.0;
    for (double v : z) {
      if (v < 0.0)
        throw DomainError("mixture weights must be nonnegative");
      sum += v;
    }
    if (std::abs(sum - 1.0) > 1e-9)
      throw DomainError("mixture weights must sum to 1");
    for (std::size_t j = 1; j < k; ++j) {
      require_same_grid(g[0], g[j]);
      require_same_grid(h[0], h[j]);
    }
    if (rho && rho->size() != k)
      throw ShapeError("copula correlations: need one per component");
  }

  GridDensity marginal_m() const { return combine(g, z); }
  GridDensity marginal_t() const { return combine(h, z); }

  double joint(double m, double t) const
  {
    double acc = 0.0;
    for (std::size_t k = 0; k < z.size(); ++k)
      acc += z[k] * g[k](m) * h[k](t);
    return acc;
  }

  double signal_fraction() const
  {
    double acc = 0.0;
    for (std::size_t k = 0; k < s; ++k)
      acc += z[k];
    return acc;
  }
};

} // namespace cowherd
