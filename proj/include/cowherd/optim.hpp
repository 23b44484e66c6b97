#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <vector>

namespace cowherd {

struct MinimizeResult
{
  Eigen::VectorXd x;
  double value = 0.0;
  int iterations = 0;
  bool converged = false;
};

//! Nelder-Mead simplex minimization.  `scale` sets the initial simplex edge
//! per coordinate.  Non-finite objective values are treated as +inf.
inline MinimizeResult nelder_mead(const std::function<double(const Eigen::VectorXd&)>& f,
                                  Eigen::VectorXd x0, Eigen::VectorXd scale, int max_iter = 500,
                                  double tol = 1e-10)
{
  const auto n = x0.size();
  auto eval = [&](const Eigen::VectorXd& x) {
    const double v = f(x);
    return std::isfinite(v) ? v : INFINITY;
  };
  std::vector<Eigen::VectorXd> pts(static_cast<std::size_t>(n + 1), x0);
  std::vector<double> val(static_cast<std::size_t>(n + 1));
  for (Eigen::Index i = 0; i < n; ++i)
    pts[static_cast<std::size_t>(i + 1)](i) += scale(i);
  for (std::size_t i = 0; i < pts.size(); ++i)
    val[i] = eval(pts[i]);

  std::vector<std::size_t> idx(pts.size());
  MinimizeResult r;
  for (r.iterations = 0; r.iterations < max_iter; ++r.iterations) {
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::sort(idx.begin(), idx.end(), [&](auto a, auto b) { return val[a] < val[b]; });
    const auto best = idx.front(), worst = idx.back(), second = idx[idx.size() - 2];
    if (std::abs(val[worst] - val[best]) <= tol * (std::abs(val[best]) + tol)) {
      r.converged = true;
      break;
    }
    Eigen::VectorXd centroid = Eigen::VectorXd::Zero(n);
    for (std::size_t k = 0; k + 1 < idx.size(); ++k)
      centroid += pts[idx[k]];
    centroid /= static_cast<double>(n);

    const Eigen::VectorXd xr = centroid + (centroid - pts[worst]);
    const double fr = eval(xr);
    if (fr < val[best]) {
      const Eigen::VectorXd xe = centroid + 2.0 * (centroid - pts[worst]);
      const double fe = eval(xe);
      if (fe < fr) {
        pts[worst] = xe;
        val[worst] = fe;
      } else {
        pts[worst] = xr;
        val[worst] = fr;
      }
      continue;
    }
    if (fr < val[second]) {
      pts[worst] = xr;
      val[worst] = fr;
      continue;
    }
    const bool outside = fr < val[worst];
    const Eigen::VectorXd xc = outside ? Eigen::VectorXd(centroid + 0.5 * (xr - centroid))
                                       : Eigen::VectorXd(centroid + 0.5 * (pts[worst] - centroid));
    const double fc = eval(xc);
    if (fc < std::min(fr, val[worst])) {
      pts[worst] = xc;
      val[worst] = fc;
      continue;
    }
    for (std::size_t k = 1; k < idx.size(); ++k) {
      auto& p = pts[idx[k]];
      p = pts[best] + 0.5 * (p - pts[best]);
      val[idx[k]] = eval(p);
    }
  }
  const auto it = std::min_element(val.begin(), val.end());
  r.x = pts[static_cast<std::size_t>(it - val.begin())];
  r.value = *it;
  return r;
}

//! Root of a monotone function on [lo, hi] by bisection; f(lo), f(hi) must
//! bracket zero.
inline double bisect(const std::function<double(double)>& f, double lo, double hi,
                     double tol = 1e-13, int max_iter = 200)
{
  double flo = f(lo);
  for (int it = 0; it < max_iter && hi - lo > tol * std::max(1.0, std::abs(lo)); ++it) {
    const double mid = 0.5 * (lo + hi);
    const double fm = f(mid);
    if ((fm < 0.0) == (flo < 0.0)) {
      lo = mid;
      flo = fm;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

} // namespace cowherd
