#pragma once

#include "cowherd/error.hpp"
#include "cowherd/grid.hpp"
#include "cowherd/model.hpp"
#include "cowherd/smooth.hpp"
#include "cowherd/special.hpp"
#include "cowherd/sweights.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <vector>

namespace cowherd {

using TargetFn = std::function<double(double)>;

//! Estimation of psi = int f h1 by the ratio sum f(T_i) w(M_i) / sum w(M_i)
//! in a one-signal, one-background model.  Fields on the m grid of g1.
struct OptWeightProblem
{
  TargetFn f;
  double z = 0.5; // signal fraction
  double psi = 0.0;
  GridDensity g1, g2, p_m;
  GridDensity ell1, ell2;  // E[f(T) | m], E[f(T)^2 | m]
  Eigen::Vector2d v;       // (1/z, -psi/z)
  GridDensity vlv;         // v' Lambda(m) v with Lambda = p(m) E[(f, 1)(f, 1)' | m]

  Eigen::Matrix2d lambda(std::size_t cell) const
  {
    Eigen::Matrix2d L;
    L << ell2[cell], ell1[cell], ell1[cell], 1.0;
    return p_m[cell] * L;
  }
};

namespace detail {

//! int f^power h / int h.
inline double integrate_fn(const GridDensity& h, const TargetFn& f, int power, double shift = 0.0)
{
  double acc = 0.0, mass = 0.0;
  for (std::size_t c = 0; c < h.size(); ++c) {
    acc += std::pow(f(h.midpoint(c)) - shift, power) * h[c];
    mass += h[c];
  }
  if (!(mass > 0.0))
    throw DegenerateError("component density has no mass");
  return acc / mass;
}

} // namespace detail

//! Builds the problem from a model estimate; psi defaults to int f h1.
inline OptWeightProblem make_problem(const MixtureModel& model, TargetFn f, std::optional<double> psi = std::nullopt)
{
  model.validate();
  if (model.components() != 2 || model.s != 1)
    throw ShapeError("optimal weights need one signal and one background component");
  const double z = model.z[0];
  if (!(z > 0.0 && z < 1.0))
    throw DomainError("signal fraction must be inside (0, 1)");
  OptWeightProblem pr;
  pr.f = std::move(f);
  pr.z = z;
  pr.g1 = model.g[0];
  pr.g2 = model.g[1];
  pr.p_m = model.marginal_m();
  const double m1 = detail::integrate_fn(model.h[0], pr.f, 1), m2 = detail::integrate_fn(model.h[1], pr.f, 1);
  const double s1 = detail::integrate_fn(model.h[0], pr.f, 2), s2 = detail::integrate_fn(model.h[1], pr.f, 2);
  pr.psi = psi ? *psi : m1;
  pr.v << 1.0 / z, -pr.psi / z;
  const double c1 = detail::integrate_fn(model.h[0], pr.f, 2, pr.psi);
  const double c2 = detail::integrate_fn(model.h[1], pr.f, 2, pr.psi);
  const std::size_t cells = pr.g1.size();
  std::vector<double> e1(cells, 0.0), e2(cells, 0.0), q(cells, 0.0);
  for (std::size_t c = 0; c < cells; ++c) {
    const double a = z * pr.g1[c], b = (1.0 - z) * pr.g2[c], p = a + b;
    if (p > 0.0) {
      e1[c] = (a * m1 + b * m2) / p;
      e2[c] = (a * s1 + b * s2) / p;
    }
    // p (ell2 - 2 psi ell1 + psi^2) / z^2 from centered per-component moments
    q[c] = (a * c1 + b * c2) / (z * z);
  }
  const Support sm = pr.g1.support();
  pr.ell1 = GridDensity(sm, std::move(e1), false);
  pr.ell2 = GridDensity(sm, std::move(e2), false);
  pr.vlv = GridDensity(sm, std::move(q), false);
  return pr;
}

//! sigma^2(w) = v' Sigma v for the ratio estimator under the model, with
//! the limits of sum w and sum f w taken from w itself; equals
//! int w^2 p E[(f - psi_w)^2 | m] / (int w p)^2.
inline double asymptotic_variance(const GridDensity& w, const OptWeightProblem& pr)
{
  require_same_grid(w, pr.p_m);
  if (!(pr.z > 0.0 && pr.z < 1.0))
    throw DomainError("signal fraction must be inside (0, 1)");
  double W = 0.0, A = 0.0;
  for (std::size_t c = 0; c < w.size(); ++c) {
    W += w[c] * pr.p_m[c];
    A += w[c] * pr.p_m[c] * pr.ell1[c];
  }
  W *= w.step();
  A *= w.step();
  if (W == 0.0)
    throw DegenerateError("weight function has zero mean under the model");
  const double psi_w = A / W;
  double acc = 0.0;
  for (std::size_t c = 0; c < w.size(); ++c)
    acc += w[c] * w[c] * pr.p_m[c] * (pr.ell2[c] - 2.0 * psi_w * pr.ell1[c] + psi_w * psi_w);
  return std::max(acc * w.step(), 0.0) / (W * W);
}

struct OptimalWeight
{
  GridDensity w;
  Eigen::Matrix2d Q;
  Eigen::Vector2d alpha;
  double stationarity = 0.0; // max |w vlv - alpha1 g1 - alpha2 g2|
};

//! w = (alpha1 g1 + alpha2 g2) / v'Lambda v, alpha = Q^-1 e1,
//! Q_ij = int g_i g_j / v'Lambda v.  Cells where v'Lambda v vanishes carry
//! no data and get w = 0.
inline OptimalWeight optimal_weight(const OptWeightProblem& pr)
{
  const double top = *std::max_element(pr.vlv.values().begin(), pr.vlv.values().end());
  double scale = 0.0;
  for (std::size_t c = 0; c < pr.p_m.size(); ++c)
    scale = std::max(scale, pr.p_m[c] * (pr.ell2[c] + pr.psi * pr.psi) / (pr.z * pr.z));
  if (!(top > 1e-12 * scale))
    throw DegenerateError("v'Lambda v vanishes: f is constant given M");
  const double floor = top * 1e-14;
  const std::size_t cells = pr.vlv.size();
  Eigen::Matrix2d Q = Eigen::Matrix2d::Zero();
  for (std::size_t c = 0; c < cells; ++c) {
    if (pr.vlv[c] <= floor)
      continue;
    const double a = pr.g1[c], b = pr.g2[c];
    Q(0, 0) += a * a / pr.vlv[c];
    Q(0, 1) += a * b / pr.vlv[c];
    Q(1, 1) += b * b / pr.vlv[c];
  }
  Q(1, 0) = Q(0, 1);
  Q *= pr.vlv.step();
  detail::require_invertible(Q, "optimal-weight matrix Q");
  OptimalWeight out;
  out.Q = Q;
  out.alpha = Q.inverse() * Eigen::Vector2d(1.0, 0.0);
  std::vector<double> w(cells, 0.0);
  for (std::size_t c = 0; c < cells; ++c)
    if (pr.vlv[c] > floor)
      w[c] = (out.alpha(0) * pr.g1[c] + out.alpha(1) * pr.g2[c]) / pr.vlv[c];
  out.w = GridDensity(pr.vlv.support(), std::move(w), false);
  const double norm = inner(out.w, pr.g1);
  out.w = out.w.scaled(1.0 / norm);
  out.alpha /= norm;
  for (std::size_t c = 0; c < cells; ++c)
    if (pr.vlv[c] > floor)
      out.stationarity = std::max(out.stationarity, std::abs(out.w[c] * pr.vlv[c] - out.alpha(0) * pr.g1[c] -
                                                             out.alpha(1) * pr.g2[c]));
  return out;
}

//! sum f(T_i) w(M_i) / sum w(M_i).
inline double ratio_estimate(const Sample& s, const GridDensity& w, const TargetFn& f)
{
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const double wi = w(s.m[i]);
    num += f(s.t[i]) * wi;
    den += wi;
  }
  if (den == 0.0)
    throw DegenerateError("weights sum to zero");
  return num / den;
}

struct PointwiseOptions
{
  int iters = 3;
  double damping = 0.5;
  Support support_t{0.0, 1.0};
  std::size_t grid_t = 512;
};

struct PointwiseEstimate
{
  double h1 = 0.0;
  std::vector<double> trace; // estimate after each iteration, iteration 0 first
  GridDensity w;             // final weight function
  bool reverted = false;
};

//! Gaussian kernel K_nu(t - t0).
inline TargetFn kernel_target(double t0, double nu)
{
  if (!(nu > 0.0))
    throw DomainError("kernel bandwidth must be positive");
  return [t0, nu](double t) { return norm_pdf((t - t0) / nu) / nu; };
}

//! h1(t0) by the kernel ratio estimator, alternating with the optimal weight
//! for f = K_nu(. - t0).  The model estimate (z, h1, h2) comes from the sPlot
//! weights of `basis`; each step blends the new optimum into the current
//! weight with the given damping.
inline PointwiseEstimate iterate_h1_pointwise(const Sample& s, const BasisSet& basis, double t0, double nu,
                                              const PointwiseOptions& opt = {})
{
  s.validate();
  if (basis.size() != 2 || basis.s != 1)
    throw ShapeError("pointwise iteration needs one signal and one background density");
  const auto K = kernel_target(t0, nu);
  const auto ws = make_weights(basis);
  PointwiseEstimate out;
  out.w = ws.w[0];
  out.h1 = ratio_estimate(s, out.w, K);
  out.trace.push_back(out.h1);
  if (opt.iters <= 0)
    return out;

  const auto z = estimate_z(ws, s);
  const double zs = std::clamp(z[0], 1e-3, 1.0 - 1e-3);
  MixtureModel est;
  est.z = {zs, 1.0 - zs};
  est.g = basis.g;
  KdeOptions ko;
  ko.grid_size = opt.grid_t;
  ko.normalize = true;
  const double bw = silverman_bandwidth(s.t);
  for (std::size_t j = 0; j < 2; ++j) {
    std::vector<double> wi(s.size());
    for (std::size_t i = 0; i < s.size(); ++i)
      wi[i] = ws.w[j](s.m[i]);
    est.h.push_back(kde(s.t, wi, bw, opt.support_t, ko));
  }
  double range = 0.0;
  for (double v : est.h[0].values())
    range = std::max(range, std::abs(v));

  for (int it = 0; it < opt.iters; ++it) {
    OptimalWeight ow;
    try {
      ow = optimal_weight(make_problem(est, K, out.h1));
    } catch (const NumericalError&) {
      break;
    }
    std::vector<double> blend(out.w.size());
    for (std::size_t c = 0; c < blend.size(); ++c)
      blend[c] = (1.0 - opt.damping) * out.w[c] + opt.damping * ow.w[c];
    GridDensity next(out.w.support(), std::move(blend), false);
    const double h = ratio_estimate(s, next, K);
    if (!std::isfinite(h) || std::abs(h) > 10.0 * range) {
      out.reverted = true;
      out.w = ws.w[0];
      out.h1 = out.trace.front();
      break;
    }
    out.w = std::move(next);
    out.h1 = h;
    out.trace.push_back(h);
  }
  return out;
}

} // namespace cowherd
