#pragma once

#include "cowherd/dists.hpp"
#include "cowherd/error.hpp"
#include "cowherd/model.hpp"
#include "cowherd/optim.hpp"
#include "cowherd/rng.hpp"
#include "cowherd/smooth.hpp"
#include "cowherd/special.hpp"

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <vector>

namespace cowherd {

inline const Support kSyntheticSupportM{0.0, 1.0};
inline const Support kSyntheticSupportT{0.0, 1.5};

//! Component shapes of the synthetic signal/background model.
struct SyntheticShapes
{
  ParamDensity g1 = ParamDensity::truncated_normal(0.5, 0.1, kSyntheticSupportM);
  ParamDensity g2 = ParamDensity::truncated_exponential(0.5, kSyntheticSupportM);
  ParamDensity h1 = ParamDensity::truncated_exponential(0.2, kSyntheticSupportT);
  ParamDensity h2 = ParamDensity::truncated_normal(0.1, 1.0, kSyntheticSupportT);
};

//! The synthetic model tabulated on grids, signal fraction z.
inline MixtureModel synthetic_model(double z = 0.5, std::size_t cells = kDefaultGridSize)
{
  SyntheticShapes sh;
  MixtureModel m;
  m.z = {z, 1.0 - z};
  m.g = {sh.g1.tabulate(cells), sh.g2.tabulate(cells)};
  m.h = {sh.h1.tabulate(cells), sh.h2.tabulate(cells)};
  m.s = 1;
  m.b = 1;
  return m;
}

//! Signal (label 1) then background (label 2) draws, M independent of T
//! within each class.
inline Sample gen_synthetic(std::size_t n_signal, std::size_t n_background, std::uint64_t seed)
{
  SyntheticShapes sh;
  RngStream root(seed);
  RngStream rs = root.split(1), rb = root.split(2);
  Sample s;
  const std::size_t n = n_signal + n_background;
  s.m.reserve(n);
  s.t.reserve(n);
  s.label.reserve(n);
  for (std::size_t i = 0; i < n_signal; ++i) {
    s.m.push_back(sh.g1.draw(rs));
    s.t.push_back(sh.h1.draw(rs));
    s.label.push_back(1);
  }
  for (std::size_t i = 0; i < n_background; ++i) {
    s.m.push_back(sh.g2.draw(rb));
    s.t.push_back(sh.h2.draw(rb));
    s.label.push_back(2);
  }
  return s;
}

//! Draws n events from a two-component synthetic model with signal
//! fraction z (random class counts).
inline Sample gen_synthetic_mixture(std::size_t n, double z, std::uint64_t seed,
                                    const SyntheticShapes& sh = {})
{
  if (!(z >= 0.0 && z <= 1.0))
    throw DomainError("signal fraction must be in [0, 1]");
  RngStream rng(seed);
  Sample s;
  s.m.resize(n);
  s.t.resize(n);
  s.label.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const bool sig = rng.uniform() < z;
    s.m[i] = sig ? sh.g1.draw(rng) : sh.g2.draw(rng);
    s.t[i] = sig ? sh.h1.draw(rng) : sh.h2.draw(rng);
    s.label[i] = sig ? 1 : 2;
  }
  return s;
}

//! Cdf and quantile of a finite mixture of ParamDensity components.
class MixtureCdf
{
public:
  MixtureCdf(std::vector<ParamDensity> parts, std::vector<double> weights)
    : parts_(std::move(parts)), w_(std::move(weights))
  {
    if (parts_.empty() || parts_.size() != w_.size())
      throw ShapeError("mixture cdf: one weight per component");
    lo_ = parts_.front().support().lo;
    hi_ = parts_.front().support().hi;
    for (const auto& p : parts_) {
      lo_ = std::min(lo_, p.support().lo);
      hi_ = std::max(hi_, p.support().hi);
    }
  }

  double pdf(double x) const
  {
    double acc = 0.0;
    for (std::size_t k = 0; k < parts_.size(); ++k)
      acc += w_[k] * parts_[k].pdf(x);
    return acc;
  }

  double cdf(double x) const
  {
    double acc = 0.0;
    for (std::size_t k = 0; k < parts_.size(); ++k)
      acc += w_[k] * parts_[k].cdf(x);
    return acc;
  }

  double quantile(double u) const
  {
    return bisect([&](double x) { return cdf(x) - u; }, lo_, hi_, 1e-14);
  }

private:
  std::vector<ParamDensity> parts_;
  std::vector<double> w_;
  double lo_, hi_;
};

//! Pair (u, v) from the bivariate Gaussian copula with correlation rho.
inline std::array<double, 2> draw_gaussian_copula(double rho, RngStream& rng)
{
  const double x = norm_quantile(rng.uniform());
  const double e = norm_quantile(rng.uniform());
  const double y = rho * x + std::sqrt(1.0 - rho * rho) * e;
  return {norm_cdf(x), norm_cdf(y)};
}

//! Synthetic marginals of M and T (at z = 0.5) joined by a Gaussian copula;
//! each event is then labelled signal with probability z g1(m) / p(m), so
//! the label depends on m only.
inline Sample gen_copula_toy(std::size_t n, double rho, std::uint64_t seed, double z = 0.5)
{
  if (!(std::abs(rho) < 1.0))
    throw DomainError("copula correlation requires |rho| < 1");
  SyntheticShapes sh;
  MixtureCdf fm({sh.g1, sh.g2}, {z, 1.0 - z});
  MixtureCdf ft({sh.h1, sh.h2}, {z, 1.0 - z});
  RngStream rng(seed);
  Sample s;
  s.m.resize(n);
  s.t.resize(n);
  s.label.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto [u, v] = draw_gaussian_copula(rho, rng);
    s.m[i] = fm.quantile(u);
    s.t[i] = ft.quantile(v);
    const double p1 = z * sh.g1.pdf(s.m[i]) / fm.pdf(s.m[i]);
    s.label[i] = rng.uniform() < p1 ? 1 : 2;
  }
  return s;
}

//! Localized-signal model: background (label 2, fraction 1/2) with
//! M ~ Unif(0,1), T | m ~ Beta(1+4m, 5-4m); signal (label 1) with
//! M ~ Beta(3,3) on [.4,.6], T ~ Beta(3,3).
inline Sample gen_ot_example(std::size_t n, std::uint64_t seed, double background_fraction = 0.5)
{
  RngStream rng(seed);
  const auto sm = ParamDensity::rescaled_beta(3, 3, {0.4, 0.6});
  const auto st = ParamDensity::beta(3, 3);
  Sample s;
  s.m.resize(n);
  s.t.resize(n);
  s.label.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (rng.uniform() < background_fraction) {
      const double m = rng.uniform();
      s.m[i] = m;
      s.t[i] = ParamDensity::beta(1.0 + 4.0 * m, 5.0 - 4.0 * m).draw(rng);
      s.label[i] = 2;
    } else {
      s.m[i] = sm.draw(rng);
      s.t[i] = st.draw(rng);
      s.label[i] = 1;
    }
  }
  return s;
}

//! The two shape configurations used for identifiability bounds; both on
//! the unit square with z = 0.5.
inline std::array<ParamDensity, 4> bounds_example_shapes(int which)
{
  if (which == 1)
    return {ParamDensity::truncated_normal(0.5, 0.1), ParamDensity::uniform(),
            ParamDensity::truncated_normal(0.5, 0.1), ParamDensity::uniform()};
  if (which == 2)
    return {ParamDensity::truncated_normal(0.7, 1.0), ParamDensity::beta(3, 2),
            ParamDensity::truncated_normal(0.3, 0.1), ParamDensity::uniform()};
  throw ValidationError("bounds example must be 1 or 2");
}

inline MixtureModel bounds_example_model(int which, std::size_t cells = kDefaultGridSize)
{
  auto sh = bounds_example_shapes(which);
  MixtureModel m;
  m.z = {0.5, 0.5};
  m.g = {sh[0].tabulate(cells), sh[1].tabulate(cells)};
  m.h = {sh[2].tabulate(cells), sh[3].tabulate(cells)};
  return m;
}

inline Sample gen_bounds_examples(int which, std::size_t n, std::uint64_t seed)
{
  auto sh = bounds_example_shapes(which);
  RngStream rng(seed);
  Sample s;
  s.m.resize(n);
  s.t.resize(n);
  s.label.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const bool sig = rng.uniform() < 0.5;
    s.m[i] = (sig ? sh[0] : sh[1]).draw(rng);
    s.t[i] = (sig ? sh[2] : sh[3]).draw(rng);
    s.label[i] = sig ? 1 : 2;
  }
  return s;
}

//! Rows of a conditionally independent mixture with their component labels.
struct LabeledMatrix
{
  Eigen::MatrixXd x; // n x d
  std::vector<int> label;
};

//! Two components, each coordinate independent given the component:
//! Beta(8,2) in component 1 and Beta(2,8) in component 2, proportions pi.
inline LabeledMatrix gen_condind(std::size_t n, std::uint64_t seed, std::size_t d = 3,
                                 std::array<double, 2> pi = {0.4, 0.6})
{
  const auto c1 = ParamDensity::beta(8, 2);
  const auto c2 = ParamDensity::beta(2, 8);
  RngStream rng(seed);
  LabeledMatrix out;
  out.x.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  out.label.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const bool first = rng.uniform() < pi[0] / (pi[0] + pi[1]);
    out.label[i] = first ? 1 : 2;
    for (std::size_t r = 0; r < d; ++r)
      out.x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(r)) = (first ? c1 : c2).draw(rng);
  }
  return out;
}

//! Synthetic marginals per component, with M and T inside component k
//! joined by a Gaussian copula of correlation rho_k.
inline Sample gen_copula_mixture(std::size_t n, double z, double rho1, double rho2, std::uint64_t seed)
{
  if (!(std::abs(rho1) < 1.0) || !(std::abs(rho2) < 1.0))
    throw DomainError("copula correlation requires |rho| < 1");
  if (!(z >= 0.0 && z <= 1.0))
    throw DomainError("signal fraction must be in [0, 1]");
  SyntheticShapes sh;
  RngStream rng(seed);
  Sample s;
  s.m.resize(n);
  s.t.resize(n);
  s.label.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const bool sig = rng.uniform() < z;
    auto [u, v] = draw_gaussian_copula(sig ? rho1 : rho2, rng);
    s.m[i] = (sig ? sh.g1 : sh.g2).quantile(u);
    s.t[i] = (sig ? sh.h1 : sh.h2).quantile(v);
    s.label[i] = sig ? 1 : 2;
  }
  return s;
}

} // namespace cowherd
