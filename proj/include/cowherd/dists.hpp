#pragma once

#include "cowherd/error.hpp"
#include "cowherd/grid.hpp"
#include "cowherd/rng.hpp"
#include "cowherd/special.hpp"

#include <boost/math/distributions/beta.hpp>

#include <cmath>
#include <string>
#include <vector>

namespace cowherd {

enum class Family
{
  truncated_normal,      // a = mu, b = sigma
  truncated_exponential, // a = mean (origin at 0, truncated to the support)
  beta,                  // a = alpha, b = beta; standard beta truncated to support in [0, 1]
  uniform,
  rescaled_beta          // a = alpha, b = beta; beta mapped linearly onto the support
};

inline std::string family_name(Family f)
{
  switch (f) {
    case Family::truncated_normal: return "truncnormal";
    case Family::truncated_exponential: return "truncexp";
    case Family::beta: return "beta";
    case Family::uniform: return "uniform";
    case Family::rescaled_beta: return "rescaledbeta";
  }
  return "unknown";
}

inline Family family_from_name(const std::string& s)
{
  if (s == "truncnormal" || s == "normal")
    return Family::truncated_normal;
  if (s == "truncexp" || s == "exponential")
    return Family::truncated_exponential;
  if (s == "beta")
    return Family::beta;
  if (s == "uniform")
    return Family::uniform;
  if (s == "rescaledbeta")
    return Family::rescaled_beta;
  throw ValidationError("unknown distribution family '" + s + "'");
}

//! One of the five parametric families, truncated (and renormalized) to a
//! finite support.  Immutable after construction.
class ParamDensity
{
public:
  static ParamDensity truncated_normal(double mu, double sigma, Support s = {})
  {
    return ParamDensity(Family::truncated_normal, mu, sigma, s);
  }
  static ParamDensity truncated_exponential(double mean, Support s = {})
  {
    return ParamDensity(Family::truncated_exponential, mean, 0.0, s);
  }
  static ParamDensity beta(double alpha, double beta, Support s = {})
  {
    return ParamDensity(Family::beta, alpha, beta, s);
  }
  static ParamDensity uniform(Support s = {}) { return ParamDensity(Family::uniform, 0.0, 0.0, s); }
  static ParamDensity rescaled_beta(double alpha, double beta, Support s)
  {
    return ParamDensity(Family::rescaled_beta, alpha, beta, s);
  }

  ParamDensity(Family family, double a, double b, Support support)
    : family_(family), a_(a), b_(b), support_(support)
  {
    switch (family_) {
      case Family::truncated_normal:
        if (!(b_ > 0.0) || !std::isfinite(a_))
          throw DomainError("truncated normal requires sigma > 0");
        lo_std_ = (support_.lo - a_) / b_;
        hi_std_ = (support_.hi - a_) / b_;
        // work in whichever tail keeps the mass difference well conditioned
        upper_tail_ = (lo_std_ + hi_std_) > 0.0;
        mass_ = upper_tail_ ? norm_sf(lo_std_) - norm_sf(hi_std_)
                            : norm_cdf(hi_std_) - norm_cdf(lo_std_);
        break;
      case Family::truncated_exponential:
        if (!(a_ > 0.0))
          throw DomainError("truncated exponential requires mean > 0");
        rate_ = 1.0 / a_;
        mass_ = -std::expm1(-rate_ * support_.width());
        break;
      case Family::beta:
        if (!(a_ > 0.0) || !(b_ > 0.0))
          throw DomainError("beta requires alpha, beta > 0");
        if (support_.lo < 0.0 || support_.hi > 1.0)
          throw DomainError("beta support must lie within [0, 1]");
        beta_ = boost::math::beta_distribution<>(a_, b_);
        beta_lo_ = boost::math::cdf(beta_, support_.lo);
        mass_ = boost::math::cdf(beta_, support_.hi) - beta_lo_;
        break;
      case Family::rescaled_beta:
        if (!(a_ > 0.0) || !(b_ > 0.0))
          throw DomainError("beta requires alpha, beta > 0");
        beta_ = boost::math::beta_distribution<>(a_, b_);
        mass_ = 1.0;
        break;
      case Family::uniform:
        mass_ = 1.0;
        break;
    }
    if (!(mass_ > 0.0))
      throw DomainError("distribution has no mass on its support");
  }

  Family family() const { return family_; }
  double param_a() const { return a_; }
  double param_b() const { return b_; }
  const Support& support() const { return support_; }

  double pdf(double x) const
  {
    if (!(x >= support_.lo && x <= support_.hi))
      return 0.0;
    switch (family_) {
      case Family::truncated_normal:
        return norm_pdf((x - a_) / b_) / (b_ * mass_);
      case Family::truncated_exponential:
        return rate_ * std::exp(-rate_ * (x - support_.lo)) / mass_;
      case Family::beta:
        return beta_pdf(x) / mass_;
      case Family::rescaled_beta:
        return beta_pdf((x - support_.lo) / support_.width()) / support_.width();
      case Family::uniform:
        return 1.0 / support_.width();
    }
    return 0.0;
  }

  double cdf(double x) const
  {
    if (x <= support_.lo)
      return 0.0;
    if (x >= support_.hi)
      return 1.0;
    switch (family_) {
      case Family::truncated_normal: {
        const double z = (x - a_) / b_;
        return upper_tail_ ? (norm_sf(lo_std_) - norm_sf(z)) / mass_
                           : (norm_cdf(z) - norm_cdf(lo_std_)) / mass_;
      }
      case Family::truncated_exponential:
        return std::expm1(-rate_ * (x - support_.lo)) / -mass_;
      case Family::beta:
        return (boost::math::cdf(beta_, x) - beta_lo_) / mass_;
      case Family::rescaled_beta:
        return boost::math::cdf(beta_, (x - support_.lo) / support_.width());
      case Family::uniform:
        return (x - support_.lo) / support_.width();
    }
    return 0.0;
  }

  double quantile(double u) const
  {
    if (!(u >= 0.0 && u <= 1.0))
      throw DomainError("quantile requires u in [0, 1]");
    if (u == 0.0)
      return support_.lo;
    if (u == 1.0)
      return support_.hi;
    double x = 0.0;
    switch (family_) {
      case Family::truncated_normal:
        if (upper_tail_) {
          const double sf = norm_sf(lo_std_) - u * mass_;
          x = a_ - b_ * norm_quantile(sf);
        } else {
          x = a_ + b_ * norm_quantile(norm_cdf(lo_std_) + u * mass_);
        }
        break;
      case Family::truncated_exponential:
        x = support_.lo - std::log1p(-u * mass_) / rate_;
        break;
      case Family::beta:
        x = boost::math::quantile(beta_, beta_lo_ + u * mass_);
        break;
      case Family::rescaled_beta:
        x = support_.lo + support_.width() * boost::math::quantile(beta_, u);
        break;
      case Family::uniform:
        return support_.lo + u * support_.width();
    }
    return polish(std::clamp(x, support_.lo, support_.hi), u);
  }

  std::vector<double> sample(std::size_t n, RngStream& rng) const
  {
    std::vector<double> out(n);
    for (auto& x : out)
      x = quantile(rng.uniform());
    return out;
  }

  double draw(RngStream& rng) const { return quantile(rng.uniform()); }

  //! pdf tabulated at the midpoints of a G-cell grid over the support.
  GridDensity tabulate(std::size_t cells = kDefaultGridSize) const
  {
    return tabulate_on(support_, cells);
  }

  //! pdf tabulated on an arbitrary grid (zero where outside the support).
  GridDensity tabulate_on(Support grid, std::size_t cells = kDefaultGridSize) const
  {
    return GridDensity::tabulate(grid, cells, [this](double x) { return pdf(x); });
  }

private:
  double beta_pdf(double y) const
  {
    if (y <= 0.0 || y >= 1.0) {
      // boost returns inf/throws at the ends for shape < 1; clamp inward
      y = std::clamp(y, 1e-300, 1.0 - 1e-16);
    }
    return boost::math::pdf(beta_, y);
  }

  // Safeguarded Newton steps on cdf(x) = u after the closed-form start.
  double polish(double x, double u) const
  {
    double err = cdf(x) - u;
    for (int it = 0; it < 4 && std::abs(err) > 1e-15; ++it) {
      const double d = pdf(x);
      if (!(d > 0.0))
        break;
      const double cand = std::clamp(x - err / d, support_.lo, support_.hi);
      const double cerr = cdf(cand) - u;
      if (std::abs(cerr) >= std::abs(err))
        break;
      x = cand;
      err = cerr;
    }
    return x;
  }

  Family family_;
  double a_;
  double b_;
  Support support_;
  double mass_ = 1.0;
  double rate_ = 0.0;
  double lo_std_ = 0.0, hi_std_ = 0.0;
  bool upper_tail_ = false;
  double beta_lo_ = 0.0;
  boost::math::beta_distribution<> beta_{1.0, 1.0};
};

} // namespace cowherd
