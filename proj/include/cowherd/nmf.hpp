#pragma once

#include "cowherd/error.hpp"
#include "cowherd/grid.hpp"
#include "cowherd/rng.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <vector>

namespace cowherd {

struct NmfOptions
{
  int max_iter = 2000;
  double tol = 1e-8; // relative residual change
  int restarts = 5;
};

//! P ~ G H with G (n_m x r) and H (r x n_t) nonnegative.
struct NMFResult
{
  Eigen::MatrixXd G;
  Eigen::MatrixXd H;
  std::size_t rank = 0;
  std::vector<double> residual; // Frobenius residual after each iteration
  bool converged = false;
  int restart = 0;              // index of the restart that won
};

namespace detail {

inline NMFResult nmf_once(const Eigen::MatrixXd& P, std::size_t r, RngStream rng, const NmfOptions& opt)
{
  const auto nm = P.rows(), nt = P.cols();
  const auto k = static_cast<Eigen::Index>(r);
  const double scale = std::sqrt(std::max(P.mean(), 1e-300) / static_cast<double>(r));
  NMFResult res;
  res.rank = r;
  res.G.resize(nm, k);
  res.H.resize(k, nt);
  for (Eigen::Index i = 0; i < nm; ++i)
    for (Eigen::Index j = 0; j < k; ++j)
      res.G(i, j) = scale * rng.uniform();
  for (Eigen::Index i = 0; i < k; ++i)
    for (Eigen::Index j = 0; j < nt; ++j)
      res.H(i, j) = scale * rng.uniform();

  constexpr double tiny = std::numeric_limits<double>::min();
  const double floor = 1e-14 * P.norm(); // exact factorization reached
  double prev = (P - res.G * res.H).norm();
  for (int it = 0; it < opt.max_iter; ++it) {
    const Eigen::MatrixXd num_h = res.G.transpose() * P;
    const Eigen::MatrixXd den_h = res.G.transpose() * res.G * res.H;
    res.H = res.H.cwiseProduct(num_h.cwiseQuotient(den_h.cwiseMax(tiny)));
    const Eigen::MatrixXd num_g = P * res.H.transpose();
    const Eigen::MatrixXd den_g = res.G * (res.H * res.H.transpose());
    res.G = res.G.cwiseProduct(num_g.cwiseQuotient(den_g.cwiseMax(tiny)));
    const double cur = (P - res.G * res.H).norm();
    res.residual.push_back(cur);
    if (cur <= floor || std::abs(prev - cur) <= opt.tol * std::max(prev, tiny)) {
      res.converged = true;
      break;
    }
    prev = cur;
  }
  return res;
}

} // namespace detail

//! Lee-Seung multiplicative updates for the Frobenius loss; the best of
//! `restarts` seeded random starts (by final residual) is returned.
inline NMFResult nmf(const Eigen::MatrixXd& P, std::size_t r, std::uint64_t seed, const NmfOptions& opt = {})
{
  if (r == 0)
    throw ValidationError("nmf rank must be at least 1");
  if (P.size() == 0)
    throw ValidationError("nmf of an empty matrix");
  if ((P.array() < 0.0).any())
    throw DomainError("nmf input has negative entries");
  if (!(P.sum() > 0.0))
    throw DegenerateError("nmf input is all zero");
  RngStream root(seed);
  NMFResult best;
  double best_res = INFINITY;
  for (int k = 0; k < std::max(opt.restarts, 1); ++k) {
    auto res = detail::nmf_once(P, r, root.split(static_cast<std::uint64_t>(k)), opt);
    const double last = res.residual.empty() ? INFINITY : res.residual.back();
    if (last < best_res) {
      best_res = last;
      best = std::move(res);
      best.restart = k;
    }
  }
  return best;
}

//! Two-component mixture read off a rank-2 factorization:
//! g_k = column k of G normalized, h_k = row k of H normalized,
//! z_k = share of total mass.  Component 1 is the one whose m factor has
//! the lower entropy.
struct MixtureDecomposition
{
  double z = 0.5;
  GridDensity g1, g2, h1, h2;
};

inline MixtureDecomposition normalize_to_mixture(const NMFResult& res, const Support& support_m,
                                                 const Support& support_t)
{
  if (res.rank != 2)
    throw ValidationError("normalize_to_mixture needs a rank-2 factorization");
  const auto nm = static_cast<std::size_t>(res.G.rows());
  const auto nt = static_cast<std::size_t>(res.H.cols());
  const double dm = support_m.width() / static_cast<double>(nm);
  const double dt = support_t.width() / static_cast<double>(nt);
  double mass[2];
  GridDensity g[2], h[2];
  for (Eigen::Index k = 0; k < 2; ++k) {
    const double eg = res.G.col(k).sum() * dm;
    const double fh = res.H.row(k).sum() * dt;
    if (!(eg > 0.0) || !(fh > 0.0))
      throw DegenerateError("nmf component " + std::to_string(k + 1) + " has zero mass");
    mass[k] = eg * fh;
    std::vector<double> gv(nm), hv(nt);
    for (std::size_t i = 0; i < nm; ++i)
      gv[i] = res.G(static_cast<Eigen::Index>(i), k) / eg;
    for (std::size_t j = 0; j < nt; ++j)
      hv[j] = res.H(k, static_cast<Eigen::Index>(j)) / fh;
    g[k] = GridDensity(support_m, std::move(gv));
    h[k] = GridDensity(support_t, std::move(hv));
  }
  MixtureDecomposition out;
  const bool swap = entropy(g[1]) < entropy(g[0]);
  const int a = swap ? 1 : 0, b = swap ? 0 : 1;
  out.z = mass[a] / (mass[0] + mass[1]);
  if (!(out.z > 0.0 && out.z < 1.0))
    throw DegenerateError("nmf mixture weight is not inside (0, 1)");
  out.g1 = g[a];
  out.g2 = g[b];
  out.h1 = h[a];
  out.h2 = h[b];
  return out;
}

} // namespace cowherd
