#pragma once

#include "cowherd/error.hpp"
#include "cowherd/grid.hpp"
#include "cowherd/smooth.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <vector>

namespace cowherd {

inline constexpr std::size_t kQuantileGridSize = 512;

using QuantileFn = std::function<double(double)>;

//! Midpoints (k + 1/2) / K of K equal cells in (0, 1).
inline std::vector<double> u_grid(std::size_t k = kQuantileGridSize)
{
  std::vector<double> u(k);
  for (std::size_t i = 0; i < k; ++i)
    u[i] = (static_cast<double>(i) + 0.5) / static_cast<double>(k);
  return u;
}

//! Quantile function of the W2 geodesic from F to G at time t:
//! u -> (1 - t) F^-1(u) + t G^-1(u).
inline QuantileFn wasserstein_geodesic_quantile(QuantileFn finv, QuantileFn ginv, double t)
{
  if (!(t >= 0.0 && t <= 1.0))
    throw DomainError("geodesic time must be in [0, 1]");
  if (t == 0.0)
    return finv;
  if (t == 1.0)
    return ginv;
  return [f = std::move(finv), g = std::move(ginv), t](double u) { return (1.0 - t) * f(u) + t * g(u); };
}

//! W2 distance from quantiles tabulated on the same u grid.
inline double w2_distance(std::span<const double> qa, std::span<const double> qb)
{
  if (qa.size() != qb.size() || qa.empty())
    throw ShapeError("w2 distance needs quantiles on one u grid");
  double acc = 0.0;
  for (std::size_t i = 0; i < qa.size(); ++i)
    acc += (qa[i] - qb[i]) * (qa[i] - qb[i]);
  return std::sqrt(acc / static_cast<double>(qa.size()));
}

//! Q(m, u) = B^-1(u | m) on a grid; each row is nondecreasing in u.
struct QuantileField
{
  std::vector<double> grid_m;
  std::vector<double> grid_u;
  Eigen::MatrixXd Q;
  std::vector<double> lo, hi; // B^-1(0 | m), B^-1(1 | m)
};

//! Density on the cells of `support` whose cdf passes linearly through
//! (lo, 0), (q_k, u_k), (hi, 1).
inline GridDensity density_from_quantiles(std::span<const double> u, std::span<const double> q, double lo,
                                          double hi, const Support& support, std::size_t cells)
{
  std::vector<double> xs, us;
  xs.reserve(u.size() + 2);
  us.reserve(u.size() + 2);
  xs.push_back(lo);
  us.push_back(0.0);
  for (std::size_t k = 0; k < u.size(); ++k) {
    if (q[k] < xs.back())
      throw DomainError("quantile function is not monotone");
    xs.push_back(q[k]);
    us.push_back(u[k]);
  }
  if (hi < xs.back())
    throw DomainError("quantile function is not monotone");
  xs.push_back(hi);
  us.push_back(1.0);
  auto cdf = [&](double t) {
    if (t <= xs.front())
      return 0.0;
    if (t >= xs.back())
      return 1.0;
    const auto k = static_cast<std::size_t>(std::upper_bound(xs.begin(), xs.end(), t) - xs.begin());
    const double x0 = xs[k - 1], x1 = xs[k];
    return x1 > x0 ? us[k - 1] + (us[k] - us[k - 1]) * (t - x0) / (x1 - x0) : us[k];
  };
  std::vector<double> v(cells);
  const double step = support.width() / static_cast<double>(cells);
  double prev = cdf(support.lo);
  for (std::size_t c = 0; c < cells; ++c) {
    const double next = cdf(support.lo + static_cast<double>(c + 1) * step);
    v[c] = std::max(next - prev, 0.0) / step;
    prev = next;
  }
  return GridDensity(support, std::move(v));
}

//! Conditional densities interpolated across the window along the W2 geodesic.
struct InterpolatedConditional
{
  QuantileField field;
  std::vector<GridDensity> slices; // b(t | m) per grid_m
};

inline InterpolatedConditional interpolate_conditional(const GridDensity& b_left, const GridDensity& b_right,
                                                       double c1, double c2, std::span<const double> grid_m,
                                                       std::size_t u_cells = kQuantileGridSize)
{
  if (!(c1 < c2))
    throw DomainError("window needs c1 < c2");
  require_same_grid(b_left, b_right);
  if (!b_left.is_density() || !b_right.is_density())
    throw DomainError("conditional slices must be densities");
  GridQuantile ql(b_left), qr(b_right);
  InterpolatedConditional out;
  auto& f = out.field;
  f.grid_m.assign(grid_m.begin(), grid_m.end());
  f.grid_u = u_grid(u_cells);
  f.Q.resize(static_cast<Eigen::Index>(grid_m.size()), static_cast<Eigen::Index>(u_cells));
  std::vector<double> left(u_cells), right(u_cells);
  for (std::size_t k = 0; k < u_cells; ++k) {
    left[k] = ql(f.grid_u[k]);
    right[k] = qr(f.grid_u[k]);
  }
  const double l0 = ql(0.0), l1 = ql(1.0), r0 = qr(0.0), r1 = qr(1.0);
  std::vector<double> row(u_cells);
  for (std::size_t i = 0; i < grid_m.size(); ++i) {
    const double a = std::clamp((grid_m[i] - c1) / (c2 - c1), 0.0, 1.0);
    for (std::size_t k = 0; k < u_cells; ++k) {
      row[k] = (1.0 - a) * left[k] + a * right[k];
      f.Q(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = row[k];
    }
    f.lo.push_back((1.0 - a) * l0 + a * r0);
    f.hi.push_back((1.0 - a) * l1 + a * r1);
    out.slices.push_back(
      density_from_quantiles(f.grid_u, row, f.lo.back(), f.hi.back(), b_left.support(), b_left.size()));
  }
  return out;
}

//! Signal pieces from a joint p(m, t) and background b(m, t) tabulated on
//! the same (m, t) grid.  z is the background fraction.
struct LocalizedFields
{
  Eigen::MatrixXd s_raw; // (p - z b) / (1 - z), signed
  Eigen::MatrixXd s;     // clipped at 0 and renormalized over the grid
  GridDensity s_t;       // integral of s over m
};

inline LocalizedFields localized_signal(const Eigen::MatrixXd& p, const Eigen::MatrixXd& b, double z,
                                        double step_m, const Support& support_t)
{
  if (p.rows() != b.rows() || p.cols() != b.cols())
    throw ShapeError("joint and background fields differ in shape");
  if (!(z >= 0.0 && z < 1.0))
    throw DomainError("background fraction must be in [0, 1)");
  LocalizedFields out;
  out.s_raw = (p - z * b) / (1.0 - z);
  out.s = out.s_raw.cwiseMax(0.0);
  const double step_t = support_t.width() / static_cast<double>(p.cols());
  const double mass = out.s.sum() * step_m * step_t;
  if (!(mass > 0.0))
    throw DegenerateError("estimated signal has no positive mass");
  out.s /= mass;
  std::vector<double> st(static_cast<std::size_t>(p.cols()));
  for (Eigen::Index j = 0; j < p.cols(); ++j)
    st[static_cast<std::size_t>(j)] = out.s.col(j).sum() * step_m;
  out.s_t = GridDensity(support_t, std::move(st));
  return out;
}

struct OTOptions
{
  double bandwidth_t = 0.05;
  std::optional<double> bandwidth_m; // defaults to bandwidth_t
  std::size_t grid_m = 64;           // cells across the window
  std::size_t grid_t = 512;
  std::size_t u_cells = kQuantileGridSize;
  Support support_m{0.0, 1.0};
  Support support_t{0.0, 1.0};
};

struct OTExtraction
{
  double c1 = 0.0, c2 = 1.0;
  double z_hat = 0.0;
  std::vector<double> grid_m;
  GridDensity b_left, b_right; // sideband fits at c1, c2
  InterpolatedConditional b_cond;
  Eigen::MatrixXd b_joint;
  Eigen::MatrixXd p_joint;
  LocalizedFields signal;
};

//! Localized-signal extraction.  b(t | m) is estimated from the sidebands
//! (m outside [c1, c2]) at c1 and c2, carried across the window along the W2
//! geodesic, and subtracted from the 2-D kde of p.  The signal is taken to
//! vanish outside the window, so s(t) integrates over [c1, c2] only.
//! `background_m` is the background density in m; z_hat the background
//! fraction.
inline OTExtraction extract_localized(const Sample& s, double c1, double c2, const GridDensity& background_m,
                                      double z_hat, const OTOptions& opt = {})
{
  s.validate();
  if (!(z_hat > 0.0 && z_hat < 1.0))
    throw DomainError("z_hat must be inside (0, 1)");
  if (!(c1 < c2) || !(c1 > opt.support_m.lo) || !(c2 < opt.support_m.hi))
    throw DomainError("window must lie strictly inside the m support");
  std::vector<std::size_t> side;
  for (std::size_t i = 0; i < s.size(); ++i)
    if (s.m[i] < c1 || s.m[i] > c2)
      side.push_back(i);
  if (side.size() < 3)
    throw ValidationError("sideband holds fewer than 3 events");
  const double hm = opt.bandwidth_m ? *opt.bandwidth_m : opt.bandwidth_t;

  OTExtraction out;
  out.c1 = c1;
  out.c2 = c2;
  out.z_hat = z_hat;
  const Sample sb = s.subset(side);
  const std::vector<double> edges{c1, c2};
  auto fits = cond_density(sb, opt.bandwidth_t, opt.support_t, opt.grid_t, edges, hm);
  out.b_left = fits.slices[0];
  out.b_right = fits.slices[1];

  const double step_m = (c2 - c1) / static_cast<double>(opt.grid_m);
  for (std::size_t i = 0; i < opt.grid_m; ++i)
    out.grid_m.push_back(c1 + (static_cast<double>(i) + 0.5) * step_m);
  out.b_cond = interpolate_conditional(out.b_left, out.b_right, c1, c2, out.grid_m, opt.u_cells);

  const auto nm = static_cast<Eigen::Index>(opt.grid_m), nt = static_cast<Eigen::Index>(opt.grid_t);
  out.b_joint.resize(nm, nt);
  for (Eigen::Index i = 0; i < nm; ++i) {
    const double g = background_m(out.grid_m[static_cast<std::size_t>(i)]);
    const auto& slice = out.b_cond.slices[static_cast<std::size_t>(i)];
    for (Eigen::Index j = 0; j < nt; ++j)
      out.b_joint(i, j) = g * slice[static_cast<std::size_t>(j)];
  }
  ProductKde2D p_hat(s, hm, opt.bandwidth_t, opt.support_m, opt.support_t);
  const auto ts = GridDensity(opt.support_t, std::vector<double>(opt.grid_t, 0.0), false).midpoints();
  out.p_joint = p_hat.evaluate(out.grid_m, ts);
  out.signal = localized_signal(out.p_joint, out.b_joint, z_hat, step_m, opt.support_t);
  return out;
}

} // namespace cowherd
