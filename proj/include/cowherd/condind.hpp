#pragma once

#include "cowherd/error.hpp"
#include "cowherd/grid.hpp"
#include "cowherd/smooth.hpp"
#include "cowherd/sweights.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

namespace cowherd {

inline constexpr double kBiorthogonalityTol = 1e-6;

//! p(x) = sum_j pi_j prod_r f[r][j](x_r).
struct CondIndModel
{
  std::size_t d = 0, k = 0;
  std::vector<std::vector<GridDensity>> f; // f[r][j]
  std::vector<double> pi;                  // empirical mode, normalized to sum 1
  std::vector<double> pi_raw;              // empirical mode before normalization
  std::vector<double> pi_literal;          // prod_r int w_r^(j)
  std::vector<double> biorthogonality;     // worst |int f_j w_l - delta_jl| per gamma call
  std::vector<double> change;              // max L1 change of any f per sweep
  std::vector<std::string> warnings;
  int sweeps_done = 0;
};

//! Weight functions w_j = sum_l A_jl f_l with A = F^-1, F_jl = int f_j f_l.
inline std::vector<GridDensity> gamma(std::span<const GridDensity> f)
{
  if (f.empty())
    throw ValidationError("gamma needs at least one density");
  const auto k = static_cast<Eigen::Index>(f.size());
  Eigen::MatrixXd F(k, k);
  for (Eigen::Index i = 0; i < k; ++i)
    for (Eigen::Index j = i; j < k; ++j)
      F(i, j) = F(j, i) = inner(f[static_cast<std::size_t>(i)], f[static_cast<std::size_t>(j)]);
  detail::require_invertible(F, "component overlap matrix F");
  const Eigen::MatrixXd A = F.inverse();
  std::vector<GridDensity> w;
  for (Eigen::Index j = 0; j < k; ++j) {
    std::vector<double> coef(static_cast<std::size_t>(k));
    for (Eigen::Index l = 0; l < k; ++l)
      coef[static_cast<std::size_t>(l)] = A(j, l);
    w.push_back(combine(f, coef).as_signed());
  }
  return w;
}

//! max_{j,l} |int f_j w_l - delta_jl|.
inline double biorthogonality_error(std::span<const GridDensity> f, std::span<const GridDensity> w)
{
  double worst = 0.0;
  for (std::size_t j = 0; j < f.size(); ++j)
    for (std::size_t l = 0; l < w.size(); ++l)
      worst = std::max(worst, std::abs(inner(f[j], w[l]) - (j == l ? 1.0 : 0.0)));
  return worst;
}

//! Ratio estimator sum_i w(X_from,i) K(X_to,i - x) / sum_i w(X_from,i),
//! clipped at 0 and renormalized.  Nullopt when the total weight is not
//! positive.
inline std::optional<GridDensity> weighted_update(std::span<const double> from, const GridDensity& w,
                                                  std::span<const double> to, double bandwidth,
                                                  const Support& support, std::size_t cells)
{
  std::vector<double> wi(from.size());
  double total = 0.0;
  for (std::size_t i = 0; i < from.size(); ++i) {
    wi[i] = w(from[i]);
    total += wi[i];
  }
  if (!(total > 0.0))
    return std::nullopt;
  KdeOptions opt;
  opt.grid_size = cells;
  auto raw = kde(to, wi, bandwidth, support, opt);
  auto v = raw.values();
  double mass = 0.0;
  for (double& x : v) {
    x = std::max(x, 0.0);
    mass += x;
  }
  if (!(mass > 0.0))
    return std::nullopt;
  return GridDensity(support, std::move(v)).clipped_normalized();
}

//! Empirical mean over rows of prod_r w[r][j](x_r).
inline std::vector<double> estimate_pi_empirical(const Eigen::MatrixXd& x,
                                                 const std::vector<std::vector<GridDensity>>& w)
{
  const std::size_t k = w.front().size();
  std::vector<double> pi(k, 0.0);
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    for (std::size_t j = 0; j < k; ++j) {
      double prod = 1.0;
      for (std::size_t r = 0; r < w.size(); ++r)
        prod *= w[r][j](x(i, static_cast<Eigen::Index>(r)));
      pi[j] += prod;
    }
  for (double& p : pi)
    p /= static_cast<double>(x.rows());
  return pi;
}

//! prod_r int w[r][j] over each coordinate's support.
inline std::vector<double> estimate_pi_literal(const std::vector<std::vector<GridDensity>>& w)
{
  std::vector<double> pi(w.front().size(), 1.0);
  for (const auto& wr : w)
    for (std::size_t j = 0; j < wr.size(); ++j)
      pi[j] *= wr[j].integral();
  return pi;
}

struct CondIndOptions
{
  int sweeps = 3;
  std::size_t grid_size = 512;
  std::vector<Support> supports;  // per coordinate; sample range when empty
  std::vector<double> bandwidths; // per coordinate; Silverman when empty
};

namespace detail {

inline std::vector<double> column(const Eigen::MatrixXd& x, std::size_t r)
{
  const auto c = x.col(static_cast<Eigen::Index>(r));
  return {c.data(), c.data() + c.size()};
}

//! 1-D k-means (Lloyd) started from evenly spaced order statistics.
inline std::vector<int> kmeans_1d(std::span<const double> x, std::size_t k, int iters = 100)
{
  std::vector<double> sorted(x.begin(), x.end());
  std::sort(sorted.begin(), sorted.end());
  std::vector<double> c(k);
  for (std::size_t j = 0; j < k; ++j)
    c[j] = sorted[(2 * j + 1) * sorted.size() / (2 * k)];
  std::vector<int> lab(x.size(), 0);
  for (int it = 0; it < iters; ++it) {
    bool moved = false;
    std::vector<double> sum(k, 0.0);
    std::vector<std::size_t> cnt(k, 0);
    for (std::size_t i = 0; i < x.size(); ++i) {
      std::size_t best = 0;
      for (std::size_t j = 1; j < k; ++j)
        if (std::abs(x[i] - c[j]) < std::abs(x[i] - c[best]))
          best = j;
      moved = moved || lab[i] != static_cast<int>(best);
      lab[i] = static_cast<int>(best);
      sum[best] += x[i];
      ++cnt[best];
    }
    for (std::size_t j = 0; j < k; ++j)
      if (cnt[j] > 0)
        c[j] = sum[j] / static_cast<double>(cnt[j]);
    if (!moved && it > 0)
      break;
  }
  return lab;
}

} // namespace detail

//! Per-cluster kde of coordinate 1 after 1-D k-means.
inline std::vector<GridDensity> kmeans_init(const Eigen::MatrixXd& x, std::size_t k, const Support& support,
                                            std::size_t cells, std::optional<double> bandwidth = std::nullopt)
{
  const auto x0 = detail::column(x, 0);
  const auto lab = detail::kmeans_1d(x0, k);
  std::vector<GridDensity> out;
  KdeOptions opt;
  opt.grid_size = cells;
  opt.normalize = true;
  for (std::size_t j = 0; j < k; ++j) {
    std::vector<double> pts;
    for (std::size_t i = 0; i < x0.size(); ++i)
      if (lab[i] == static_cast<int>(j))
        pts.push_back(x0[i]);
    if (pts.size() < 2)
      throw DegenerateError("k-means left a cluster with fewer than 2 points");
    out.push_back(kde(pts, bandwidth ? *bandwidth : silverman_bandwidth(pts), support, opt));
  }
  return out;
}

//! Cyclic fit.  For r = 1..d in turn, the weights of coordinate r (gamma of
//! its current densities) drive a weighted-kde update of every other
//! coordinate.  `init` holds the coordinate-1 densities; k-means when empty.
inline CondIndModel cycle_fit(const Eigen::MatrixXd& x, std::size_t k, std::vector<GridDensity> init = {},
                              const CondIndOptions& opt = {})
{
  const auto d = static_cast<std::size_t>(x.cols());
  if (d < 3)
    throw DomainError("conditional-independence fit needs d >= 3");
  if (k < 1)
    throw DomainError("need at least one component");
  if (static_cast<std::size_t>(x.rows()) < 2 * k)
    throw ValidationError("too few rows for the number of components");
  if (!x.allFinite())
    throw ValidationError("data contain non-finite values");
  if (opt.sweeps < 1)
    throw DomainError("need at least one sweep");
  if (!opt.supports.empty() && opt.supports.size() != d)
    throw ShapeError("one support per coordinate");
  if (!opt.bandwidths.empty() && opt.bandwidths.size() != d)
    throw ShapeError("one bandwidth per coordinate");

  std::vector<std::vector<double>> cols(d);
  std::vector<Support> sup(d);
  std::vector<double> bw(d);
  for (std::size_t r = 0; r < d; ++r) {
    cols[r] = detail::column(x, r);
    sup[r] = opt.supports.empty() ? detail::sample_range(cols[r]) : opt.supports[r];
    bw[r] = opt.bandwidths.empty() ? silverman_bandwidth(cols[r]) : opt.bandwidths[r];
    if (!(bw[r] > 0.0))
      throw DomainError("bandwidths must be positive");
  }

  CondIndModel model;
  model.d = d;
  model.k = k;
  model.f.assign(d, {});
  if (init.empty())
    init = kmeans_init(x, k, sup[0], opt.grid_size);
  if (init.size() != k)
    throw ShapeError("initial densities: need one per component");
  for (const auto& g : init)
    if (!g.is_density())
      throw DomainError("initial densities must be densities");
  model.f[0] = std::move(init);
  // coordinates not yet estimated are seeded by the first pass
  for (std::size_t r = 1; r < d; ++r)
    model.f[r].assign(k, GridDensity());

  bool first = true;
  for (int sweep = 0; sweep < opt.sweeps; ++sweep) {
    auto before = model.f;
    bool aborted = false;
    for (std::size_t r = 0; r < d && !aborted; ++r) {
      const auto w = gamma(model.f[r]);
      model.biorthogonality.push_back(biorthogonality_error(model.f[r], w));
      std::vector<std::vector<GridDensity>> next = model.f;
      for (std::size_t q = 0; q < d && !aborted; ++q) {
        if (q == r)
          continue;
        for (std::size_t j = 0; j < k; ++j) {
          auto upd = weighted_update(cols[r], w[j], cols[q], bw[q], sup[q], opt.grid_size);
          if (!upd) {
            model.warnings.push_back("sweep " + std::to_string(sweep + 1) + ": component " + std::to_string(j + 1) +
                                     " has nonpositive total weight on coordinate " + std::to_string(r + 1) +
                                     "; sweep aborted");
            aborted = true;
            break;
          }
          next[q][j] = std::move(*upd);
        }
      }
      if (!aborted)
        model.f = std::move(next);
      else if (first)
        throw DegenerateError(model.warnings.back());
    }
    first = false;
    if (aborted) {
      model.f = std::move(before);
      break;
    }
    double ch = 0.0;
    if (sweep > 0)
      for (std::size_t r = 0; r < d; ++r)
        for (std::size_t j = 0; j < k; ++j)
          ch = std::max(ch, l1_distance(model.f[r][j], before[r][j]));
    model.change.push_back(sweep > 0 ? ch : std::nan(""));
    ++model.sweeps_done;
  }

  std::vector<std::vector<GridDensity>> w(d);
  for (std::size_t r = 0; r < d; ++r) {
    w[r] = gamma(model.f[r]);
    model.biorthogonality.push_back(biorthogonality_error(model.f[r], w[r]));
  }
  model.pi_raw = estimate_pi_empirical(x, w);
  model.pi_literal = estimate_pi_literal(w);
  const double sum = std::accumulate(model.pi_raw.begin(), model.pi_raw.end(), 0.0);
  if (!(std::abs(sum) > 0.0))
    throw DegenerateError("estimated proportions sum to zero");
  model.pi = model.pi_raw;
  for (double& p : model.pi)
    p /= sum;
  return model;
}

} // namespace cowherd
