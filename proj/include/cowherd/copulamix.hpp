#pragma once

#include "cowherd/copula.hpp"
#include "cowherd/error.hpp"
#include "cowherd/grid.hpp"
#include "cowherd/model.hpp"
#include "cowherd/smooth.hpp"
#include "cowherd/special.hpp"

#include <Eigen/Dense>
#include <boost/math/interpolators/pchip.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

namespace cowherd {

struct CopulaFitOptions
{
  double z0 = 0.5;
  int max_iter = 500;
  double tol = 1e-6;
  double bandwidth_t = 0.0;         // 0: weighted Silverman rule on every pass
  std::optional<Support> support_t; // defaults to the sample range of t
  std::size_t grid_size = 512;
  double max_abs_rho = 0.999;
};

//! Two-component mixture of Gaussian copulas with known g1, g2.
struct CopulaMixtureFit
{
  double z = 0.5;
  Eigen::Matrix2d R1 = Eigen::Matrix2d::Identity();
  Eigen::Matrix2d R2 = Eigen::Matrix2d::Identity();
  // probit scores of the weighted ecdfs at the data points
  std::vector<double> a1, a2, q1, q2;
  std::vector<double> w; // responsibilities of component 1
  std::vector<double> trace; // mean log p(M_i, T_i) after each pass
  int iterations = 0;
  bool converged = false;
  std::string message;
  Support support_t;
  std::vector<double> t;
  GridDensity h1, h2;

  double rho1() const { return R1(0, 1); }
  double rho2() const { return R2(0, 1); }
};

namespace detail {

inline double weighted_correlation(std::span<const double> x, std::span<const double> y,
                                   std::span<const double> w)
{
  double sw = 0.0, mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sw += w[i];
    mx += w[i] * x[i];
    my += w[i] * y[i];
  }
  if (!(sw > 0.0))
    return 0.0;
  mx /= sw;
  my /= sw;
  double sxx = 0.0, syy = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx, dy = y[i] - my;
    sxx += w[i] * dx * dx;
    syy += w[i] * dy * dy;
    sxy += w[i] * dx * dy;
  }
  if (!(sxx > 0.0) || !(syy > 0.0))
    return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

inline Eigen::Matrix2d correlation_matrix(double rho)
{
  Eigen::Matrix2d r;
  r << 1.0, rho, rho, 1.0;
  return r;
}

inline std::vector<std::size_t> ascending_order(std::span<const double> x)
{
  std::vector<std::size_t> order(x.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  return order;
}

inline void probit_scores(std::span<const double> x, std::span<const double> w,
                          std::span<const std::size_t> order, std::vector<double>& out)
{
  Ecdf f(x, w, order);
  out.resize(x.size());
  for (std::size_t i = 0; i < x.size(); ++i)
    out[i] = norm_quantile(f(x[i]));
}

} // namespace detail

//! EM-style fit: weighted ecdfs -> probit maps -> weighted correlations ->
//! z = mean w -> new responsibilities z g1 h1 c1 / p.  h1 and h2 are weighted
//! kdes of t, refreshed on every pass.
inline CopulaMixtureFit fit_copula_mixture(const Sample& s, const GridDensity& g1, const GridDensity& g2,
                                           const CopulaFitOptions& opt = {})
{
  s.validate();
  const std::size_t n = s.size();
  if (n < 10)
    throw ValidationError("copula fit needs at least 10 events");
  if (!(opt.z0 > 0.0 && opt.z0 < 1.0))
    throw DomainError("initial z must be inside (0, 1)");
  if (!(opt.max_abs_rho > 0.0 && opt.max_abs_rho < 1.0))
    throw DomainError("correlation clamp must be inside (0, 1)");

  CopulaMixtureFit fit;
  fit.support_t = opt.support_t ? *opt.support_t : detail::sample_range(s.t);
  fit.t = s.t;
  const auto order_m = detail::ascending_order(s.m);
  const auto order_t = detail::ascending_order(s.t);

  std::vector<double> gm1(n), gm2(n);
  fit.w.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    gm1[i] = g1(s.m[i]);
    gm2[i] = g2(s.m[i]);
    const double d = opt.z0 * gm1[i] + (1.0 - opt.z0) * gm2[i];
    fit.w[i] = d > 0.0 ? opt.z0 * gm1[i] / d : opt.z0;
  }

  KdeOptions kopt;
  kopt.grid_size = opt.grid_size;
  kopt.normalize = true;
  kopt.method = KdeMethod::binned;
  std::vector<double> v(n);
  double z_prev = opt.z0, r1_prev = 0.0, r2_prev = 0.0;
  for (int it = 0; it < opt.max_iter; ++it) {
    const double sw = std::accumulate(fit.w.begin(), fit.w.end(), 0.0);
    if (sw < 1e-6 * static_cast<double>(n) || static_cast<double>(n) - sw < 1e-6 * static_cast<double>(n)) {
      fit.message = "responsibilities collapsed onto one component";
      fit.converged = false;
      break;
    }
    for (std::size_t i = 0; i < n; ++i)
      v[i] = 1.0 - fit.w[i];
    detail::probit_scores(s.m, fit.w, order_m, fit.a1);
    detail::probit_scores(s.t, fit.w, order_t, fit.a2);
    detail::probit_scores(s.m, v, order_m, fit.q1);
    detail::probit_scores(s.t, v, order_t, fit.q2);
    const double r1 = std::clamp(detail::weighted_correlation(fit.a1, fit.a2, fit.w), -opt.max_abs_rho,
                                 opt.max_abs_rho);
    const double r2 =
      std::clamp(detail::weighted_correlation(fit.q1, fit.q2, v), -opt.max_abs_rho, opt.max_abs_rho);
    const double z = sw / static_cast<double>(n);

    const double bw1 = opt.bandwidth_t > 0.0 ? opt.bandwidth_t : silverman_bandwidth(s.t, fit.w);
    const double bw2 = opt.bandwidth_t > 0.0 ? opt.bandwidth_t : silverman_bandwidth(s.t, v);
    fit.h1 = kde(s.t, fit.w, bw1, fit.support_t, kopt);
    fit.h2 = kde(s.t, v, bw2, fit.support_t, kopt);

    double loglik = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double f1 = z * gm1[i] * fit.h1(s.t[i]) * gaussian_copula_density_probit(fit.a1[i], fit.a2[i], r1);
      const double f2 =
        (1.0 - z) * gm2[i] * fit.h2(s.t[i]) * gaussian_copula_density_probit(fit.q1[i], fit.q2[i], r2);
      const double p = f1 + f2;
      fit.w[i] = p > 0.0 ? std::clamp(f1 / p, 0.0, 1.0) : z;
      loglik += std::log(std::max(p, 1e-300));
    }
    fit.trace.push_back(loglik / static_cast<double>(n));
    fit.R1 = detail::correlation_matrix(r1);
    fit.R2 = detail::correlation_matrix(r2);
    fit.iterations = it + 1;
    const double delta = std::abs(z - z_prev) + std::sqrt(2.0) * (std::abs(r1 - r1_prev) + std::abs(r2 - r2_prev));
    z_prev = z;
    r1_prev = r1;
    r2_prev = r2;
    if (it > 0 && delta < opt.tol) {
      fit.converged = true;
      break;
    }
  }
  fit.z = std::accumulate(fit.w.begin(), fit.w.end(), 0.0) / static_cast<double>(n);
  if (!fit.converged && fit.message.empty())
    fit.message = "no convergence in " + std::to_string(opt.max_iter) + " iterations";
  return fit;
}

//! Density phi(a(t)) |a'(t)| of a variable whose probit map is a, with a
//! interpolated monotonically through the knots (x, a).  Returns nullopt when
//! the knots are not strictly increasing.
inline std::optional<GridDensity> probit_map_density(std::vector<double> x, std::vector<double> a,
                                                     const Support& support, std::size_t cells)
{
  if (x.size() != a.size() || x.size() < 4)
    throw ShapeError("probit map needs at least four matching knots");
  for (std::size_t k = 0; k + 1 < a.size(); ++k)
    if (!(a[k + 1] > a[k]) || !(x[k + 1] > x[k]))
      return std::nullopt;
  const double x0 = x.front(), x1 = x.back();
  boost::math::interpolators::pchip<std::vector<double>> spline(std::move(x), std::move(a));
  return GridDensity::tabulate(support, cells, [&](double t) {
    const double u = std::clamp(t, x0, x1);
    return norm_pdf(spline(u)) * std::abs(spline.prime(u));
  });
}

//! Same density from cdf values H at the knots.  Knots where H is 0 or 1
//! have no finite probit score; the intervals next to them get the uniform
//! density (H(x_k+1) - H(x_k)) / (x_k+1 - x_k), the rest the probit map.
inline std::optional<GridDensity> probit_map_density_from_cdf(const std::vector<double>& x,
                                                              const std::vector<double>& H,
                                                              const Support& support, std::size_t cells)
{
  if (x.size() != H.size() || x.size() < 2)
    throw ShapeError("probit map needs matching knots");
  std::size_t first = 0, last = x.size() - 1;
  while (first < last && H[first] <= 0.0)
    ++first;
  while (last > first && H[last] >= 1.0)
    --last;
  std::vector<double> xi, ai;
  for (std::size_t k = first; k <= last; ++k) {
    xi.push_back(x[k]);
    ai.push_back(norm_quantile(H[k]));
  }
  if (xi.size() < 4)
    return std::nullopt;
  const double lo = xi.front(), hi = xi.back();
  auto inner = probit_map_density(std::move(xi), std::move(ai), support, cells);
  if (!inner)
    return std::nullopt;
  auto& v = inner->mutable_values();
  for (std::size_t c = 0; c < cells; ++c) {
    const double t = inner->midpoint(c);
    if (t >= lo && t <= hi)
      continue;
    const auto k = static_cast<std::size_t>(
      std::upper_bound(x.begin(), x.end(), t) - x.begin());
    if (k == 0 || k >= x.size())
      v[c] = 0.0;
    else
      v[c] = (H[k] - H[k - 1]) / (x[k] - x[k - 1]);
  }
  return inner;
}

enum class RecoveryMode
{
  smooth_map, // phi(a2~) |a2~'| with a2~ a monotone cubic through 101 knots
  kde         // weighted kde of t with the final responsibilities
};

struct SignalRecovery
{
  GridDensity h1;
  RecoveryMode mode = RecoveryMode::smooth_map;
  bool fell_back = false;
};

inline SignalRecovery recover_signal_density(const CopulaMixtureFit& fit, RecoveryMode mode = RecoveryMode::smooth_map,
                                             std::size_t cells = 512, std::size_t knots = 101)
{
  if (fit.w.size() != fit.t.size() || fit.t.empty())
    throw ValidationError("copula fit carries no data");
  SignalRecovery out;
  out.mode = mode;
  const Support& st = fit.support_t;
  if (mode == RecoveryMode::smooth_map) {
    Ecdf h(fit.t, fit.w);
    std::vector<double> x(knots), H(knots);
    for (std::size_t k = 0; k < knots; ++k) {
      x[k] = st.lo + st.width() * static_cast<double>(k) / static_cast<double>(knots - 1);
      H[k] = h(x[k]);
      // the clamped ecdf ends stand for the exact 0 and 1 of the support edges
      if (H[k] <= h.lower() + 1e-12)
        H[k] = 0.0;
      else if (H[k] >= h.upper() - 1e-12)
        H[k] = 1.0;
    }
    if (auto d = probit_map_density_from_cdf(x, H, st, cells)) {
      out.h1 = d->clipped_normalized();
      return out;
    }
    out.fell_back = true;
    out.mode = RecoveryMode::kde;
  }
  KdeOptions kopt;
  kopt.grid_size = cells;
  kopt.normalize = true;
  out.h1 = kde(fit.t, fit.w, silverman_bandwidth(fit.t, fit.w), st, kopt);
  return out;
}

enum class Side
{
  signal,
  background
};

//! Copula density implied by a COWs model on one side:
//! c(u, v) = lambda sum_j z_j g_j(m) h_j(t) / ((sum_j z_j g_j(m)) (sum_j z_j h_j(t)))
//! with m, t the quantiles of u, v under the side marginals and lambda the
//! side's total z.
class CowsCopula
{
public:
  CowsCopula(const MixtureModel& model, Side side)
  {
    model.validate();
    const std::size_t first = side == Side::signal ? 0 : model.s;
    const std::size_t last = side == Side::signal ? model.s : model.components();
    for (std::size_t j = first; j < last; ++j) {
      z_.push_back(model.z[j]);
      g_.push_back(model.g[j]);
      h_.push_back(model.h[j]);
    }
    lambda_ = std::accumulate(z_.begin(), z_.end(), 0.0);
    if (!(lambda_ > 0.0))
      throw DegenerateError("copula side has zero total weight");
    qm_.emplace(combine(g_, z_));
    qt_.emplace(combine(h_, z_));
  }

  double operator()(double u, double v) const
  {
    const double m = (*qm_)(std::clamp(u, kCopulaClamp, 1.0 - kCopulaClamp));
    const double t = (*qt_)(std::clamp(v, kCopulaClamp, 1.0 - kCopulaClamp));
    double num = 0.0, sm = 0.0, stt = 0.0;
    for (std::size_t j = 0; j < z_.size(); ++j) {
      const double gj = g_[j](m), hj = h_[j](t);
      num += z_[j] * gj * hj;
      sm += z_[j] * gj;
      stt += z_[j] * hj;
    }
    const double den = sm * stt;
    return den > 0.0 ? lambda_ * num / den : 0.0;
  }

  //! Values at the midpoints of a cells x cells grid; rows index u.
  Eigen::MatrixXd tabulate(std::size_t cells) const
  {
    Eigen::MatrixXd c(static_cast<Eigen::Index>(cells), static_cast<Eigen::Index>(cells));
    const double h = 1.0 / static_cast<double>(cells);
    for (std::size_t i = 0; i < cells; ++i)
      for (std::size_t j = 0; j < cells; ++j)
        c(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          (*this)((static_cast<double>(i) + 0.5) * h, (static_cast<double>(j) + 0.5) * h);
    return c;
  }

private:
  std::vector<double> z_;
  std::vector<GridDensity> g_, h_;
  double lambda_ = 1.0;
  std::optional<GridQuantile> qm_, qt_;
};

inline CowsCopula cows_copula_density(const MixtureModel& model, Side side) { return CowsCopula(model, side); }

} // namespace cowherd
