#pragma once

#include "cowherd/error.hpp"
#include "cowherd/rng.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace cowherd {

inline constexpr std::size_t kDefaultGridSize = 2048;

//! Cells of `inner(f, g, w)` where the weight falls below this are dropped.
inline constexpr double kWeightFloor = 1e-12;

//! Finite interval [lo, hi] with lo < hi.
struct Support
{
  double lo = 0.0;
  double hi = 1.0;

  Support() = default;
  Support(double lo_, double hi_) : lo(lo_), hi(hi_)
  {
    if (!std::isfinite(lo) || !std::isfinite(hi) || !(lo < hi))
      throw DomainError("support requires finite lo < hi, got [" + std::to_string(lo) +
                        ", " + std::to_string(hi) + "]");
  }

  double width() const { return hi - lo; }
  bool contains(double x) const { return x >= lo && x <= hi; }
  friend bool operator==(const Support&, const Support&) = default;
};

//! A function tabulated at the G cell midpoints of a uniform grid.
//!
//! Quadrature is the composite midpoint rule: each cell contributes
//! value * width.  Point evaluation interpolates linearly between midpoints
//! and holds the end values over the outer half cells; outside the support
//! the function is zero.  The same type stores densities (flag on, values
//! nonnegative) and signed functions such as weight functions (flag off).
class GridDensity
{
public:
  GridDensity() = default;

  GridDensity(Support support, std::vector<double> values, bool density = true)
    : support_(support), values_(std::move(values)), density_(density)
  {
    if (values_.empty())
      throw ShapeError("grid function needs at least one cell");
    for (double v : values_) {
      if (!std::isfinite(v))
        throw DomainError("grid function value is not finite");
      if (density_ && v < 0.0)
        throw DomainError("density grid has a negative value");
    }
  }

  //! Tabulates `f` at the midpoints of a G-cell grid.
  template <class F>
  static GridDensity tabulate(Support support, std::size_t cells, F&& f, bool density = true)
  {
    std::vector<double> v(cells);
    const double h = support.width() / static_cast<double>(cells);
    for (std::size_t i = 0; i < cells; ++i)
      v[i] = f(support.lo + (static_cast<double>(i) + 0.5) * h);
    return GridDensity(support, std::move(v), density);
  }

  const Support& support() const { return support_; }
  const std::vector<double>& values() const { return values_; }
  std::vector<double>& mutable_values() { return values_; }
  std::size_t size() const { return values_.size(); }
  bool is_density() const { return density_; }
  double step() const { return support_.width() / static_cast<double>(values_.size()); }
  double midpoint(std::size_t i) const
  {
    return support_.lo + (static_cast<double>(i) + 0.5) * step();
  }
  double operator[](std::size_t i) const { return values_[i]; }

  std::vector<double> midpoints() const
  {
    std::vector<double> x(size());
    for (std::size_t i = 0; i < size(); ++i)
      x[i] = midpoint(i);
    return x;
  }

  bool same_grid(const GridDensity& other) const
  {
    return support_ == other.support_ && size() == other.size();
  }

  double operator()(double x) const
  {
    if (!(x >= support_.lo && x <= support_.hi))
      return 0.0;
    const double pos = (x - support_.lo) / step() - 0.5;
    if (pos <= 0.0)
      return values_.front();
    const auto last = static_cast<double>(size() - 1);
    if (pos >= last)
      return values_.back();
    const auto i = static_cast<std::size_t>(pos);
    const double frac = pos - static_cast<double>(i);
    return (1.0 - frac) * values_[i] + frac * values_[i + 1];
  }

  //! Value of the cell containing x (piecewise-constant view); 0 outside.
  double cell_value(double x) const
  {
    if (!(x >= support_.lo && x <= support_.hi))
      return 0.0;
    const auto i = static_cast<std::size_t>((x - support_.lo) / step());
    return values_[std::min(i, size() - 1)];
  }

  double integral() const
  {
    return step() * std::accumulate(values_.begin(), values_.end(), 0.0);
  }

  //! Cumulative integral at the G+1 cell edges (piecewise-constant cells).
  std::vector<double> edge_cdf() const
  {
    std::vector<double> c(size() + 1, 0.0);
    const double h = step();
    for (std::size_t i = 0; i < size(); ++i)
      c[i + 1] = c[i] + values_[i] * h;
    return c;
  }

  //! Cumulative integral at x (not normalized).
  double cdf(double x) const
  {
    if (x <= support_.lo)
      return 0.0;
    const double h = step();
    if (x >= support_.hi)
      return integral();
    const double pos = (x - support_.lo) / h;
    const auto i = std::min(static_cast<std::size_t>(pos), size() - 1);
    double acc = 0.0;
    for (std::size_t k = 0; k < i; ++k)
      acc += values_[k];
    return h * acc + values_[i] * (x - (support_.lo + static_cast<double>(i) * h));
  }

  //! Copy with every value multiplied by c; the density flag is dropped when c < 0.
  GridDensity scaled(double c) const
  {
    std::vector<double> v(values_);
    for (double& x : v)
      x *= c;
    return GridDensity(support_, std::move(v), density_ && c >= 0.0);
  }

  //! Negative values set to zero, then rescaled to unit integral.
  GridDensity clipped_normalized() const
  {
    std::vector<double> v(values_);
    for (double& x : v)
      x = std::max(x, 0.0);
    const double mass = step() * std::accumulate(v.begin(), v.end(), 0.0);
    if (!(mass > 0.0))
      throw DegenerateError("grid function has no positive mass to normalize");
    for (double& x : v)
      x /= mass;
    return GridDensity(support_, std::move(v), true);
  }

  GridDensity as_signed() const { return GridDensity(support_, values_, false); }

private:
  Support support_;
  std::vector<double> values_;
  bool density_ = true;
};

inline void require_same_grid(const GridDensity& a, const GridDensity& b)
{
  if (!a.same_grid(b))
    throw ShapeError("grid mismatch: functions are tabulated on different grids");
}

inline double integrate(const GridDensity& f) { return f.integral(); }

//! Integral of f * g.
inline double inner(const GridDensity& f, const GridDensity& g)
{
  require_same_grid(f, g);
  double acc = 0.0;
  for (std::size_t i = 0; i < f.size(); ++i)
    acc += f[i] * g[i];
  return acc * f.step();
}

//! Integral of f * g / w over cells where w >= kWeightFloor.
inline double inner(const GridDensity& f, const GridDensity& g, const GridDensity& w)
{
  require_same_grid(f, g);
  require_same_grid(f, w);
  double acc = 0.0;
  for (std::size_t i = 0; i < f.size(); ++i)
    if (w[i] >= kWeightFloor)
      acc += f[i] * g[i] / w[i];
  return acc * f.step();
}

//! Differential entropy -int g log g, with 0 log 0 = 0.
inline double entropy(const GridDensity& g)
{
  double acc = 0.0;
  for (double v : g.values()) {
    if (v < 0.0)
      throw DomainError("entropy of a function with negative values");
    if (v > 0.0)
      acc -= v * std::log(v);
  }
  return acc * g.step();
}

inline double l1_distance(const GridDensity& a, const GridDensity& b)
{
  require_same_grid(a, b);
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    acc += std::abs(a[i] - b[i]);
  return acc * a.step();
}

inline double sup_distance(const GridDensity& a, const GridDensity& b)
{
  require_same_grid(a, b);
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    acc = std::max(acc, std::abs(a[i] - b[i]));
  return acc;
}

//! Linear combination sum_k c_k f_k on a shared grid (signed result).
inline GridDensity combine(std::span<const GridDensity> fs, std::span<const double> coef)
{
  if (fs.empty() || fs.size() != coef.size())
    throw ShapeError("combine: need one coefficient per function");
  std::vector<double> v(fs[0].size(), 0.0);
  bool nonneg = true;
  for (std::size_t k = 0; k < fs.size(); ++k) {
    require_same_grid(fs[0], fs[k]);
    nonneg = nonneg && coef[k] >= 0.0 && fs[k].is_density();
    for (std::size_t i = 0; i < v.size(); ++i)
      v[i] += coef[k] * fs[k][i];
  }
  return GridDensity(fs[0].support(), std::move(v), nonneg);
}

//! Quantile of the piecewise-linear cdf of a nonnegative grid function,
//! normalized by its total mass.
class GridQuantile
{
public:
  explicit GridQuantile(const GridDensity& f) : support_(f.support()), edges_(f.edge_cdf())
  {
    const double total = edges_.back();
    if (!(total > 0.0))
      throw DegenerateError("quantile of a function with zero mass");
    for (std::size_t i = 0; i + 1 < edges_.size(); ++i)
      if (edges_[i + 1] < edges_[i])
        throw DomainError("cdf is not monotone (negative density values)");
    for (double& c : edges_)
      c /= total;
    step_ = f.step();
  }

  double operator()(double u) const
  {
    if (u <= 0.0) {
      // leftmost point with positive mass
      auto it = std::upper_bound(edges_.begin(), edges_.end(), 0.0);
      return edge(static_cast<std::size_t>(std::max<std::ptrdiff_t>(it - edges_.begin() - 1, 0)));
    }
    if (u >= 1.0) {
      auto it = std::lower_bound(edges_.begin(), edges_.end(), 1.0);
      return edge(static_cast<std::size_t>(it - edges_.begin()));
    }
    auto it = std::lower_bound(edges_.begin(), edges_.end(), u);
    const auto k = static_cast<std::size_t>(it - edges_.begin()); // edges_[k] >= u > edges_[k-1]
    const double c0 = edges_[k - 1];
    const double c1 = edges_[k];
    const double frac = c1 > c0 ? (u - c0) / (c1 - c0) : 0.0;
    return edge(k - 1) + frac * step_;
  }

  //! Normalized cdf at x.
  double cdf(double x) const
  {
    if (x <= support_.lo)
      return 0.0;
    if (x >= support_.hi)
      return 1.0;
    const double pos = (x - support_.lo) / step_;
    const auto i = std::min(static_cast<std::size_t>(pos), edges_.size() - 2);
    const double frac = pos - static_cast<double>(i);
    return edges_[i] + frac * (edges_[i + 1] - edges_[i]);
  }

  const std::vector<double>& edge_cdf() const { return edges_; }

private:
  double edge(std::size_t k) const { return support_.lo + static_cast<double>(k) * step_; }

  Support support_;
  std::vector<double> edges_;
  double step_ = 0.0;
};

//! Inverse-cdf draws from a nonnegative grid function treated as a density.
inline std::vector<double> sample_grid(const GridDensity& f, std::size_t n, RngStream& rng)
{
  GridQuantile q(f);
  std::vector<double> out(n);
  for (auto& x : out)
    x = q(rng.uniform());
  return out;
}

} // namespace cowherd
