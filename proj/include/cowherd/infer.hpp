#pragma once

#include "cowherd/error.hpp"
#include "cowherd/grid.hpp"
#include "cowherd/rng.hpp"
#include "cowherd/smooth.hpp"
#include "cowherd/special.hpp"
#include "cowherd/sweights.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

namespace cowherd {

struct GofOptions
{
  std::size_t K = 20;
  std::optional<double> slice_bandwidth; // 1.5 x center spacing when unset
  std::size_t B = 99;
  std::optional<Support> support_t;      // sample range when unset
  std::size_t m_cells = 256;             // grid for the L2 comparison
  int em_steps = 50;
  double min_effective_size = 5.0;       // Kish size below which a slice is skipped
};

struct GofResult
{
  double statistic = 0.0;
  std::vector<double> null_draws;
  double p_value = 1.0;
  std::size_t K = 0;
  double slice_bandwidth = 0.0;
  std::vector<double> slice_centers;
  std::vector<double> contributions;           // per slice; 0 for skipped slices
  std::vector<std::vector<double>> proportions; // fitted mixture weights per slice
  std::vector<std::size_t> skipped;
  std::vector<std::string> log;
};

namespace detail {

struct SliceFit
{
  std::vector<double> contributions;
  std::vector<std::vector<double>> proportions;
  std::vector<std::size_t> skipped;
  double total = 0.0;
};

//! Per-slice L2 distance between the kernel-weighted mixture MLE over the
//! basis and the kernel-weighted kde of M.
inline SliceFit slice_statistic(std::span<const double> m, std::span<const double> t,
                                const std::vector<GridDensity>& basis_fine,
                                const std::vector<GridDensity>& basis_coarse, std::span<const double> centers,
                                double bw, const GofOptions& opt)
{
  const std::size_t n = m.size(), k = basis_fine.size();
  std::vector<double> gi(n * k);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < k; ++j)
      gi[i * k + j] = basis_fine[j](m[i]);
  const Support sm = basis_coarse.front().support();
  const double step = sm.width() / static_cast<double>(opt.m_cells);

  SliceFit out;
  std::vector<double> u, ms, gs, acc(k);
  for (std::size_t s = 0; s < centers.size(); ++s) {
    u.clear();
    ms.clear();
    gs.clear();
    double su = 0.0, su2 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double d = (t[i] - centers[s]) / bw;
      if (std::abs(d) > 8.0)
        continue;
      const double w = norm_pdf(d);
      u.push_back(w);
      gs.insert(gs.end(), gi.begin() + static_cast<std::ptrdiff_t>(i * k),
                gi.begin() + static_cast<std::ptrdiff_t>((i + 1) * k));
      ms.push_back(m[i]);
      su += w;
      su2 += w * w;
    }
    if (su2 == 0.0 || su * su / su2 < opt.min_effective_size) {
      out.skipped.push_back(s);
      out.contributions.push_back(0.0);
      out.proportions.emplace_back();
      continue;
    }
    std::vector<double> pi(k, 1.0 / static_cast<double>(k));
    for (int it = 0; it < opt.em_steps; ++it) {
      std::fill(acc.begin(), acc.end(), 0.0);
      for (std::size_t a = 0; a < u.size(); ++a) {
        const double* g = gs.data() + a * k;
        double tot = 0.0;
        for (std::size_t j = 0; j < k; ++j)
          tot += pi[j] * g[j];
        if (tot <= 0.0)
          continue;
        const double f = u[a] / tot;
        for (std::size_t j = 0; j < k; ++j)
          acc[j] += f * pi[j] * g[j];
      }
      double sa = 0.0;
      for (double v : acc)
        sa += v;
      if (!(sa > 0.0))
        break;
      for (std::size_t j = 0; j < k; ++j)
        pi[j] = acc[j] / sa;
    }
    KdeOptions ko;
    ko.grid_size = opt.m_cells;
    ko.normalize = true;
    ko.method = KdeMethod::binned;
    const auto dens = kde(ms, u, silverman_bandwidth(ms, u), sm, ko);
    double l2 = 0.0;
    for (std::size_t c = 0; c < opt.m_cells; ++c) {
      double fit = 0.0;
      for (std::size_t j = 0; j < k; ++j)
        fit += pi[j] * basis_coarse[j][c];
      l2 += (fit - dens[c]) * (fit - dens[c]);
    }
    l2 *= step;
    out.contributions.push_back(l2);
    out.proportions.push_back(std::move(pi));
    out.total += l2;
  }
  return out;
}

//! Mixture weights at t, linear between fitted slice centers and constant
//! beyond the outermost ones.
inline std::vector<double> interpolate_proportions(double t, std::span<const double> centers,
                                                   const std::vector<std::vector<double>>& props)
{
  std::size_t lo = centers.size(), hi = centers.size();
  for (std::size_t s = 0; s < centers.size(); ++s) {
    if (props[s].empty())
      continue;
    if (centers[s] <= t)
      lo = s;
    if (centers[s] >= t && hi == centers.size())
      hi = s;
  }
  if (lo == centers.size())
    return props[hi];
  if (hi == centers.size() || hi == lo)
    return props[lo];
  const double a = (t - centers[lo]) / (centers[hi] - centers[lo]);
  std::vector<double> out(props[lo].size());
  for (std::size_t j = 0; j < out.size(); ++j)
    out[j] = (1.0 - a) * props[lo][j] + a * props[hi][j];
  return out;
}

inline std::vector<GridDensity> coarsen(const std::vector<GridDensity>& g, std::size_t cells)
{
  std::vector<GridDensity> out;
  for (const auto& f : g)
    out.push_back(GridDensity::tabulate(f.support(), cells, [&](double x) { return f(x); }).clipped_normalized());
  return out;
}

} // namespace detail

//! (1 + #{null >= observed}) / (B + 1).
inline double bootstrap_p_value(double observed, std::span<const double> null_draws)
{
  std::size_t ge = 0;
  for (double v : null_draws)
    ge += v >= observed;
  return static_cast<double>(1 + ge) / static_cast<double>(null_draws.size() + 1);
}

//! Slice goodness-of-fit test of the basis.  Null draws come from the
//! semiparametric bootstrap: T resampled from the data, then M drawn from
//! the fitted slice mixture at that T, and the whole statistic recomputed.
inline GofResult gof_test(const Sample& s, const BasisSet& basis, std::uint64_t seed, const GofOptions& opt = {})
{
  s.validate();
  basis.validate();
  if (opt.K < 2)
    throw DomainError("goodness-of-fit needs at least 2 slices");
  if (opt.B < 99)
    throw DomainError("goodness-of-fit needs B >= 99");
  if (s.size() < 10)
    throw ValidationError("goodness-of-fit needs at least 10 events");
  const Support st = opt.support_t ? *opt.support_t : detail::sample_range(s.t);
  const double spacing = st.width() / static_cast<double>(opt.K);
  GofResult res;
  res.K = opt.K;
  res.slice_bandwidth = opt.slice_bandwidth ? *opt.slice_bandwidth : 1.5 * spacing;
  if (!(res.slice_bandwidth > 0.0))
    throw DomainError("slice bandwidth must be positive");
  for (std::size_t k = 0; k < opt.K; ++k)
    res.slice_centers.push_back(st.lo + (static_cast<double>(k) + 0.5) * spacing);
  const auto coarse = detail::coarsen(basis.g, opt.m_cells);

  auto obs = detail::slice_statistic(s.m, s.t, basis.g, coarse, res.slice_centers, res.slice_bandwidth, opt);
  if (obs.skipped.size() == opt.K)
    throw DegenerateError("every slice has negligible kernel weight");
  res.statistic = obs.total;
  res.contributions = obs.contributions;
  res.proportions = obs.proportions;
  res.skipped = obs.skipped;
  for (std::size_t k : obs.skipped)
    res.log.push_back("slice " + std::to_string(k + 1) + " at t = " + std::to_string(res.slice_centers[k]) +
                      " skipped: negligible kernel weight");

  std::vector<GridQuantile> draw;
  for (const auto& g : basis.g)
    draw.emplace_back(g);
  const std::size_t n = s.size();
  const RngStream root(seed);
  std::vector<double> mb(n), tb(n);
  for (std::size_t b = 0; b < opt.B; ++b) {
    RngStream rng = root.split(b);
    for (std::size_t i = 0; i < n; ++i) {
      tb[i] = s.t[rng.below(n)];
      const auto pi = detail::interpolate_proportions(tb[i], res.slice_centers, res.proportions);
      double u = rng.uniform(), acc = 0.0;
      std::size_t j = 0;
      for (; j + 1 < pi.size(); ++j) {
        acc += pi[j];
        if (u < acc)
          break;
      }
      mb[i] = draw[j](rng.uniform());
    }
    res.null_draws.push_back(
      detail::slice_statistic(mb, tb, basis.g, coarse, res.slice_centers, res.slice_bandwidth, opt).total);
  }
  res.p_value = bootstrap_p_value(res.statistic, res.null_draws);
  return res;
}

//! max |a - b| over cells whose midpoints lie in `range` (all when unset).
inline double sup_deviation(const GridDensity& a, const GridDensity& b, const std::optional<Support>& range)
{
  require_same_grid(a, b);
  double worst = 0.0;
  for (std::size_t c = 0; c < a.size(); ++c)
    if (!range || range->contains(a.midpoint(c)))
      worst = std::max(worst, std::abs(a[c] - b[c]));
  return worst;
}

struct BandOptions
{
  std::optional<Support> support_t; // sample range when unset
  std::size_t grid_size = 512;
  bool local_linear = true;          // edge-corrected kernel sum; truncated renormalized kde otherwise
  KdeMethod method = KdeMethod::binned; // for the renormalized kde
  std::optional<Support> eval_range; // sup taken over cells inside; whole grid when unset
};

struct BandResult
{
  GridDensity h1_hat; // signed
  double z_hat = 0.0;
  double c_alpha = 0.0;
  double alpha = 0.1;
  std::size_t B = 0;
  double nu = 0.0;
  std::vector<double> sup_draws;
  std::size_t redraws = 0;
  std::optional<Support> eval_range;

  GridDensity lower() const { return shifted(-c_alpha); }
  GridDensity upper() const { return shifted(c_alpha); }

  //! True when |h - h1_hat| <= c_alpha at every grid cell of the range.
  bool covers(const GridDensity& h) const { return sup_deviation(h, h1_hat, eval_range) <= c_alpha; }

private:
  GridDensity shifted(double d) const
  {
    auto v = h1_hat.values();
    for (double& x : v)
      x += d;
    return GridDensity(h1_hat.support(), std::move(v), false);
  }
};

namespace detail {

//! f = (1/n) sum w(M_i) K_nu(T_i - t); returns (f / int f, int f).
inline std::pair<GridDensity, double> weighted_signal_estimate(std::span<const double> t, std::span<const double> w,
                                                               double nu, const Support& st, const BandOptions& opt)
{
  GridDensity f;
  if (opt.local_linear) {
    f = local_linear_kde(t, w, nu, st, opt.grid_size);
  } else {
    KdeOptions ko;
    ko.grid_size = opt.grid_size;
    ko.method = opt.method;
    f = kde(t, w, nu, st, ko).as_signed();
  }
  const double z = f.integral();
  if (!(z > 0.0))
    return {f, z};
  return {f.scaled(1.0 / z), z};
}

} // namespace detail

//! Sup-norm bootstrap band for h1 from the signal weight of `ws`.
inline BandResult bootstrap_band(const Sample& s, const WeightSet& ws, double nu, std::size_t B, double alpha,
                                 std::uint64_t seed, const BandOptions& opt = {})
{
  s.validate();
  if (!(nu > 0.0))
    throw DomainError("band bandwidth must be positive");
  if (B < 199)
    throw DomainError("bootstrap band needs B >= 199");
  if (!(alpha > 0.0 && alpha < 1.0))
    throw DomainError("alpha must be in (0, 1)");
  if (s.size() == 0)
    throw ValidationError("empty sample");
  Support st = opt.support_t ? *opt.support_t : detail::sample_range(s.t);
  const std::size_t n = s.size();
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i)
    w[i] = ws.signal(s.m[i]);

  BandResult res;
  res.alpha = alpha;
  res.B = B;
  res.nu = nu;
  auto [h, z] = detail::weighted_signal_estimate(s.t, w, nu, st, opt);
  if (!(z > 0.0))
    throw DegenerateError("estimated signal fraction is not positive");
  res.h1_hat = h;
  res.z_hat = z;
  res.eval_range = opt.eval_range;

  const RngStream root(seed);
  std::vector<double> tb(n), wb(n);
  const std::size_t max_redraws = 100 * B;
  for (std::size_t b = 0; b < B; ++b) {
    RngStream rng = root.split(b);
    for (;;) {
      for (std::size_t i = 0; i < n; ++i) {
        const auto k = static_cast<std::size_t>(rng.below(n));
        tb[i] = s.t[k];
        wb[i] = w[k];
      }
      auto [hb, zb] = detail::weighted_signal_estimate(tb, wb, nu, st, opt);
      if (zb > 0.0) {
        res.sup_draws.push_back(sup_deviation(hb, res.h1_hat, opt.eval_range));
        break;
      }
      if (++res.redraws > max_redraws)
        throw DegenerateError("bootstrap replicates keep giving a nonpositive signal fraction");
    }
  }
  auto sorted = res.sup_draws;
  std::sort(sorted.begin(), sorted.end());
  const auto rank = static_cast<std::size_t>(std::ceil((1.0 - alpha) * static_cast<double>(B)));
  res.c_alpha = sorted[std::clamp<std::size_t>(rank, 1, B) - 1];
  return res;
}

} // namespace cowherd
