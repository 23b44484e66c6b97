#pragma once

#include "cowherd/error.hpp"
#include "cowherd/grid.hpp"
#include "cowherd/nmf.hpp"
#include "cowherd/smooth.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <vector>

namespace cowherd {

inline constexpr double kFeasibilityTol = 1e-9;

//! An initial two-component decomposition p = z g1 h1 + (1 - z) g2 h2.
struct BoundsInputs
{
  double z = 0.5;
  GridDensity g1, g2, h1, h2;

  void validate() const
  {
    if (!(z > 0.0 && z < 1.0))
      throw DomainError("initial z must be inside (0, 1)");
    require_same_grid(g1, g2);
    require_same_grid(h1, h2);
  }
  GridDensity p_m() const { return combine(std::vector<GridDensity>{g1, g2}, std::vector<double>{z, 1.0 - z}); }
  GridDensity p_t() const { return combine(std::vector<GridDensity>{h1, h2}, std::vector<double>{z, 1.0 - z}); }
  GridDensity w1() const
  {
    const double c = std::sqrt(z * (1.0 - z));
    return combine(std::vector<GridDensity>{g1, g2}, std::vector<double>{c, -c});
  }
  GridDensity w2() const
  {
    const double c = std::sqrt(z * (1.0 - z));
    return combine(std::vector<GridDensity>{h1, h2}, std::vector<double>{c, -c});
  }
};

struct Decomposition
{
  double z = 0.5;
  GridDensity g1, g2, h1, h2; // signed until checked feasible
  double alpha1 = 0.0, beta1 = 0.0;
};

//! Member (alpha1, beta1) of the two-parameter family:
//! g1~ = p + a1 w1, g2~ = p + b1 w1, h1~ = p + a2 w2, h2~ = p + b2 w2 with
//! a2 = -1/b1, b2 = -1/a1 and z~ = |b1| / (|b1| + |a1|).
inline Decomposition family_member(const BoundsInputs& in, double alpha1, double beta1)
{
  in.validate();
  if (!(alpha1 != 0.0 && beta1 != 0.0) || std::signbit(alpha1) == std::signbit(beta1))
    throw DomainError("family member needs alpha1 and beta1 nonzero with opposite signs");
  const double alpha2 = -1.0 / beta1, beta2 = -1.0 / alpha1;
  const auto pm = in.p_m(), pt = in.p_t(), w1 = in.w1(), w2 = in.w2();
  auto lin = [](const GridDensity& p, const GridDensity& w, double c) {
    return combine(std::vector<GridDensity>{p, w}, std::vector<double>{1.0, c}).as_signed();
  };
  Decomposition d;
  d.alpha1 = alpha1;
  d.beta1 = beta1;
  d.z = std::abs(beta1) / (std::abs(beta1) + std::abs(alpha1));
  d.g1 = lin(pm, w1, alpha1);
  d.g2 = lin(pm, w1, beta1);
  d.h1 = lin(pt, w2, alpha2);
  d.h2 = lin(pt, w2, beta2);
  return d;
}

inline double min_value(const GridDensity& f)
{
  double v = INFINITY;
  for (double x : f.values())
    v = std::min(v, x);
  return v;
}

inline bool is_feasible(const Decomposition& d, double tol = kFeasibilityTol)
{
  return min_value(d.g1) >= -tol && min_value(d.g2) >= -tol && min_value(d.h1) >= -tol &&
         min_value(d.h2) >= -tol;
}

//! Max-norm residual of z g1 h1 + (1 - z) g2 h2 against the initial joint.
inline double reconstruction_residual(const BoundsInputs& in, const Decomposition& d)
{
  double worst = 0.0;
  for (std::size_t i = 0; i < in.g1.size(); ++i)
    for (std::size_t j = 0; j < in.h1.size(); ++j) {
      const double p = in.z * in.g1[i] * in.h1[j] + (1.0 - in.z) * in.g2[i] * in.h2[j];
      const double q = d.z * d.g1[i] * d.h1[j] + (1.0 - d.z) * d.g2[i] * d.h2[j];
      worst = std::max(worst, std::abs(p - q));
    }
  return worst;
}

//! `count` log-spaced magnitudes in [lo, hi], returned with both signs
//! (negatives first, ascending).
inline std::vector<double> theta_grid(std::size_t count = 121, double lo = 1e-3, double hi = 1e3)
{
  if (count < 1 || !(lo > 0.0) || !(hi >= lo))
    throw DomainError("theta grid needs count >= 1 and 0 < lo <= hi");
  std::vector<double> mag(count);
  for (std::size_t k = 0; k < count; ++k) {
    const double f = count == 1 ? 0.0 : static_cast<double>(k) / static_cast<double>(count - 1);
    mag[k] = lo * std::pow(hi / lo, f);
  }
  std::vector<double> out;
  for (auto it = mag.rbegin(); it != mag.rend(); ++it)
    out.push_back(-*it);
  out.insert(out.end(), mag.begin(), mag.end());
  return out;
}

namespace detail {

// min over cells of p + c w
inline double min_combo(const GridDensity& p, const GridDensity& w, double c)
{
  double v = INFINITY;
  for (std::size_t i = 0; i < p.size(); ++i)
    v = std::min(v, p[i] + c * w[i]);
  return v;
}

inline double entropy_combo(const GridDensity& p, const GridDensity& w, double c)
{
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double v = p[i] + c * w[i];
    if (v > 0.0)
      acc -= v * std::log(v);
  }
  return acc * p.step();
}

} // namespace detail

//! Membership of the (alpha, beta) grid: 0 outside Theta, 1 in Theta,
//! 2 in Theta and passing the entropy rule psi(g1~) <= psi(g2~).
//! Pairs with equal signs are 0.
struct ThetaScan
{
  std::vector<double> alphas, betas;
  Eigen::MatrixXi mask; // rows alphas, cols betas
  std::size_t n_feasible = 0;
  std::size_t n_admissible = 0;
};

inline ThetaScan feasible_region(const BoundsInputs& in, std::span<const double> alphas,
                                 std::span<const double> betas, double tol = kFeasibilityTol)
{
  in.validate();
  for (double a : alphas)
    if (a == 0.0)
      throw DomainError("theta grid must exclude 0");
  for (double b : betas)
    if (b == 0.0)
      throw DomainError("theta grid must exclude 0");
  const auto pm = in.p_m(), pt = in.p_t(), w1 = in.w1(), w2 = in.w2();
  // feasibility and entropy of each side depend on one coefficient only
  auto m_ok = [&](double c) { return detail::min_combo(pm, w1, c) >= -tol; };
  auto t_ok = [&](double c) { return detail::min_combo(pt, w2, c) >= -tol; };
  std::vector<char> a_ok(alphas.size()), b_ok(betas.size());
  std::vector<double> a_ent(alphas.size()), b_ent(betas.size());
  for (std::size_t i = 0; i < alphas.size(); ++i) {
    a_ok[i] = m_ok(alphas[i]) && t_ok(-1.0 / alphas[i]);
    a_ent[i] = detail::entropy_combo(pm, w1, alphas[i]);
  }
  for (std::size_t j = 0; j < betas.size(); ++j) {
    b_ok[j] = m_ok(betas[j]) && t_ok(-1.0 / betas[j]);
    b_ent[j] = detail::entropy_combo(pm, w1, betas[j]);
  }
  ThetaScan scan;
  scan.alphas.assign(alphas.begin(), alphas.end());
  scan.betas.assign(betas.begin(), betas.end());
  scan.mask = Eigen::MatrixXi::Zero(static_cast<Eigen::Index>(alphas.size()), static_cast<Eigen::Index>(betas.size()));
  for (std::size_t i = 0; i < alphas.size(); ++i)
    for (std::size_t j = 0; j < betas.size(); ++j) {
      if (std::signbit(alphas[i]) == std::signbit(betas[j]) || !a_ok[i] || !b_ok[j])
        continue;
      ++scan.n_feasible;
      int v = 1;
      if (a_ent[i] <= b_ent[j] + 1e-12) {
        v = 2;
        ++scan.n_admissible;
      }
      scan.mask(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = v;
    }
  return scan;
}

struct Envelope
{
  GridDensity lower, upper;
  ThetaScan scan;
  double max_width() const
  {
    double w = 0.0;
    for (std::size_t i = 0; i < lower.size(); ++i)
      w = std::max(w, upper[i] - lower[i]);
    return w;
  }
  //! Fraction of grid cells where lower <= f <= upper (with slack tol).
  double coverage(const GridDensity& f, double tol = 1e-9) const
  {
    require_same_grid(lower, f);
    std::size_t in = 0;
    for (std::size_t i = 0; i < f.size(); ++i)
      in += f[i] >= lower[i] - tol && f[i] <= upper[i] + tol;
    return static_cast<double>(in) / static_cast<double>(f.size());
  }
};

//! l(t), u(t): pointwise range of h1~ over the entropy-admissible members.
inline Envelope envelope(const BoundsInputs& in, std::span<const double> alphas, std::span<const double> betas)
{
  Envelope env;
  env.scan = feasible_region(in, alphas, betas);
  if (env.scan.n_admissible == 0)
    throw DegenerateError(env.scan.n_feasible == 0
                            ? "no feasible decomposition on the theta grid; use a finer grid"
                            : "no feasible decomposition satisfies the entropy rule; the orientation is not "
                              "identifiable on this grid");
  const auto pt = in.p_t(), w2 = in.w2();
  std::vector<double> lo(pt.size(), INFINITY), hi(pt.size(), -INFINITY);
  for (Eigen::Index j = 0; j < env.scan.mask.cols(); ++j) {
    if ((env.scan.mask.col(j).array() != 2).all())
      continue;
    const double a2 = -1.0 / env.scan.betas[static_cast<std::size_t>(j)];
    for (std::size_t c = 0; c < pt.size(); ++c) {
      const double v = pt[c] + a2 * w2[c];
      lo[c] = std::min(lo[c], v);
      hi[c] = std::max(hi[c], v);
    }
  }
  for (auto* v : {&lo, &hi})
    for (double& x : *v)
      x = std::max(x, 0.0);
  env.lower = GridDensity(pt.support(), std::move(lo));
  env.upper = GridDensity(pt.support(), std::move(hi));
  return env;
}

inline Envelope envelope(const BoundsInputs& in)
{
  const auto g = theta_grid();
  return envelope(in, g, g);
}

struct BoundsDataOptions
{
  std::size_t grid_m = 64;
  std::size_t grid_t = 64;
  std::optional<double> bandwidth_m, bandwidth_t; // Silverman when unset
  std::optional<Support> support_m, support_t;    // sample ranges when unset
  std::vector<double> alphas = theta_grid();
  std::vector<double> betas = theta_grid();
  NmfOptions nmf;
  double min_rank_gap = 2.0; // required sigma2 / sigma3 of the gridded joint
};

struct BoundsFromData
{
  MixtureDecomposition initial;
  Envelope env;
};

//! 2-D kde on a grid -> rank-2 nmf -> normalized initial decomposition -> envelope.
inline BoundsFromData bounds_from_data(const Sample& s, std::uint64_t seed, const BoundsDataOptions& opt = {})
{
  s.validate();
  if (s.size() < 200)
    throw ValidationError("bounds from data need at least 200 events");
  const Support sm = opt.support_m ? *opt.support_m : detail::sample_range(s.m);
  const Support st = opt.support_t ? *opt.support_t : detail::sample_range(s.t);
  const double hm = opt.bandwidth_m ? *opt.bandwidth_m : silverman_bandwidth(s.m);
  const double ht = opt.bandwidth_t ? *opt.bandwidth_t : silverman_bandwidth(s.t);
  ProductKde2D p_hat(s, hm, ht, sm, st);
  const auto ms = GridDensity(sm, std::vector<double>(opt.grid_m, 0.0), false).midpoints();
  const auto ts = GridDensity(st, std::vector<double>(opt.grid_t, 0.0), false).midpoints();
  const Eigen::MatrixXd P = p_hat.evaluate(ms, ts);
  const Eigen::VectorXd sv = Eigen::JacobiSVD<Eigen::MatrixXd>(P).singularValues();
  if (sv.size() >= 3 && !(sv(1) >= opt.min_rank_gap * sv(2)))
    throw DegenerateError("second mixture component is not separated from noise (sigma2 / sigma3 = " +
                          std::to_string(sv(1) / sv(2)) + "); the joint looks like a single product");
  BoundsFromData out;
  out.initial = normalize_to_mixture(nmf(P, 2, seed, opt.nmf), sm, st);
  BoundsInputs in{out.initial.z, out.initial.g1, out.initial.g2, out.initial.h1, out.initial.h2};
  out.env = envelope(in, opt.alphas, opt.betas);
  return out;
}

} // namespace cowherd
