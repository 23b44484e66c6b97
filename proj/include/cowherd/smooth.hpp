#pragma once

#include "cowherd/error.hpp"
#include "cowherd/grid.hpp"
#include "cowherd/special.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace cowherd {

//! Paired observations (m_i, t_i); labels (1 = signal, 2 = background, or a
//! component index) and per-point weights are optional and may be empty.
struct Sample
{
  std::vector<double> m;
  std::vector<double> t;
  std::vector<int> label;
  std::vector<double> weight;

  std::size_t size() const { return m.size(); }
  bool has_labels() const { return !label.empty(); }

  void validate() const
  {
    if (m.size() != t.size())
      throw ShapeError("sample columns m and t differ in length");
    if (!label.empty() && label.size() != m.size())
      throw ShapeError("sample labels differ in length from m");
    if (!weight.empty() && weight.size() != m.size())
      throw ShapeError("sample weights differ in length from m");
    for (double w : weight)
      if (!std::isfinite(w))
        throw DomainError("sample weight is not finite");
  }

  Sample subset(std::span<const std::size_t> idx) const
  {
    Sample s;
    s.m.reserve(idx.size());
    s.t.reserve(idx.size());
    for (auto i : idx) {
      s.m.push_back(m[i]);
      s.t.push_back(t[i]);
      if (has_labels())
        s.label.push_back(label[i]);
      if (!weight.empty())
        s.weight.push_back(weight[i]);
    }
    return s;
  }
};

namespace detail {

inline double weighted_sd(std::span<const double> x, std::span<const double> w)
{
  double sw = 0.0, mean = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double wi = w.empty() ? 1.0 : std::abs(w[i]);
    sw += wi;
    mean += wi * x[i];
  }
  if (!(sw > 0.0))
    return 0.0;
  mean /= sw;
  double var = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double wi = w.empty() ? 1.0 : std::abs(w[i]);
    var += wi * (x[i] - mean) * (x[i] - mean);
  }
  return std::sqrt(var / sw);
}

inline double effective_size(std::span<const double> w, std::size_t n)
{
  if (w.empty())
    return static_cast<double>(n);
  double s = 0.0, s2 = 0.0;
  for (double v : w) {
    s += std::abs(v);
    s2 += v * v;
  }
  return s2 > 0.0 ? s * s / s2 : 0.0;
}

//! Mass of N(center, bw) inside the support.
inline double kernel_mass(double center, double bw, const Support& s)
{
  const double a = (s.lo - center) / bw;
  const double b = (s.hi - center) / bw;
  return a > 0.0 ? norm_sf(a) - norm_sf(b) : norm_cdf(b) - norm_cdf(a);
}

// Adds weight * K(x - center) for the Gaussian kernel truncated to the
// support (and to 8 bandwidths), renormalized so its grid quadrature is
// exactly `weight`.
inline void add_kernel(std::vector<double>& out, const Support& s, double step, double center,
                       double bw, double weight)
{
  const double reach = 8.0 * bw;
  const auto cells = static_cast<std::ptrdiff_t>(out.size());
  auto first = static_cast<std::ptrdiff_t>(std::floor((center - reach - s.lo) / step - 0.5));
  auto last = static_cast<std::ptrdiff_t>(std::ceil((center + reach - s.lo) / step - 0.5));
  first = std::max<std::ptrdiff_t>(first, 0);
  last = std::min<std::ptrdiff_t>(last, cells - 1);
  auto nearest = [&] {
    auto i = static_cast<std::ptrdiff_t>((center - s.lo) / step);
    out[static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(i, 0, cells - 1))] += weight / step;
  };
  if (first > last)
    return nearest();
  thread_local std::vector<double> buf;
  buf.resize(static_cast<std::size_t>(last - first + 1));
  double mass = 0.0;
  for (auto i = first; i <= last; ++i) {
    const double x = s.lo + (static_cast<double>(i) + 0.5) * step;
    const double k = norm_pdf((x - center) / bw);
    buf[static_cast<std::size_t>(i - first)] = k;
    mass += k;
  }
  if (!(mass > 0.0))
    return nearest();
  const double scale = weight / (mass * step);
  for (auto i = first; i <= last; ++i)
    out[static_cast<std::size_t>(i)] += scale * buf[static_cast<std::size_t>(i - first)];
}

} // namespace detail

//! Silverman's rule 1.06 * sd * n^(-1/5); weights enter through a weighted
//! sd and the Kish effective sample size.
inline double silverman_bandwidth(std::span<const double> x, std::span<const double> w = {})
{
  if (x.empty())
    throw ValidationError("bandwidth of an empty sample");
  const double sd = detail::weighted_sd(x, w);
  const double n = detail::effective_size(w, x.size());
  if (!(sd > 0.0) || !(n > 0.0))
    return 1e-3;
  return 1.06 * sd * std::pow(n, -0.2);
}

namespace detail {

//! Linear binning of weighted points onto cell midpoints; points outside the
//! support are dropped.
inline std::vector<double> linear_bins(std::span<const double> points, std::span<const double> weights,
                                       const Support& support, std::size_t cells)
{
  const double step = support.width() / static_cast<double>(cells);
  std::vector<double> bins(cells, 0.0);
  for (std::size_t i = 0; i < points.size(); ++i) {
    const double w = weights.empty() ? 1.0 : weights[i];
    if (!support.contains(points[i]))
      continue;
    const double pos = (points[i] - support.lo) / step - 0.5;
    if (pos <= 0.0) {
      bins.front() += w;
    } else if (pos >= static_cast<double>(cells - 1)) {
      bins.back() += w;
    } else {
      const auto k = static_cast<std::size_t>(pos);
      const double frac = pos - static_cast<double>(k);
      bins[k] += (1.0 - frac) * w;
      bins[k + 1] += frac * w;
    }
  }
  return bins;
}

} // namespace detail

enum class KdeMethod
{
  exact,  // every point carries its own kernel
  binned  // linear binning onto the output grid, then one kernel per cell
};

struct KdeOptions
{
  std::size_t grid_size = kDefaultGridSize;
  bool normalize = false; // rescale the result to unit integral
  KdeMethod method = KdeMethod::exact;
};

//! Gaussian kernel density estimate on a grid over `support`.
//!
//! Each kernel is truncated to the support and renormalized, so the output
//! integrates to sum(weights) / n (1 when unweighted).  Weights may be
//! negative; the result is then a signed function.
inline GridDensity kde(std::span<const double> points, std::span<const double> weights,
                       double bandwidth, const Support& support, const KdeOptions& opt = {})
{
  if (!(bandwidth > 0.0))
    throw DomainError("kde bandwidth must be positive");
  if (points.empty())
    throw ValidationError("kde needs at least one point");
  if (!weights.empty() && weights.size() != points.size())
    throw ShapeError("kde weights differ in length from points");
  const std::size_t n = points.size();
  double total = static_cast<double>(n);
  bool nonneg = true;
  if (!weights.empty()) {
    total = 0.0;
    for (double w : weights) {
      total += w;
      nonneg = nonneg && w >= 0.0;
    }
    bool any = false;
    for (double w : weights)
      any = any || w != 0.0;
    if (!any)
      throw DegenerateError("kde weights are all zero");
  }

  const std::size_t cells = opt.grid_size;
  const double step = support.width() / static_cast<double>(cells);
  std::vector<double> out(cells, 0.0);
  if (opt.method == KdeMethod::exact) {
    for (std::size_t i = 0; i < n; ++i) {
      const double w = weights.empty() ? 1.0 : weights[i];
      if (w != 0.0 && support.contains(points[i]))
        detail::add_kernel(out, support, step, points[i], bandwidth, w);
    }
  } else {
    const auto bins = detail::linear_bins(points, weights, support, cells);
    for (std::size_t k = 0; k < cells; ++k)
      if (bins[k] != 0.0)
        detail::add_kernel(out, support, step, support.lo + (static_cast<double>(k) + 0.5) * step,
                           bandwidth, bins[k]);
  }
  const double inv_n = 1.0 / static_cast<double>(n);
  for (double& v : out) {
    v *= inv_n;
    if (nonneg)
      v = std::max(v, 0.0);
  }
  GridDensity g(support, std::move(out), nonneg);
  if (opt.normalize) {
    if (!(total > 0.0))
      throw DegenerateError("kde total weight is not positive; cannot normalize");
    return g.clipped_normalized();
  }
  return g;
}

inline GridDensity kde(std::span<const double> points, double bandwidth, const Support& support,
                       const KdeOptions& opt = {})
{
  return kde(points, {}, bandwidth, support, opt);
}

//! Binned local-linear Gaussian estimate (1/n) sum w_i L_t(T_i) on a grid.
//!
//! L_t(x) = K(x - t) (a2 - a1 (x - t)) / (a0 a2 - a1^2) with a_k the k-th
//! moment of K(. - t) over the support, so away from the edges this is the
//! plain kernel sum and at the edges the bias stays second order.  The result
//! is signed and need not integrate to sum(w) / n.
inline GridDensity local_linear_kde(std::span<const double> points, std::span<const double> weights,
                                    double bandwidth, const Support& support,
                                    std::size_t grid_size = kDefaultGridSize)
{
  if (!(bandwidth > 0.0))
    throw DomainError("kde bandwidth must be positive");
  if (points.empty())
    throw ValidationError("kde needs at least one point");
  if (!weights.empty() && weights.size() != points.size())
    throw ShapeError("kde weights differ in length from points");
  const std::size_t cells = grid_size;
  const double step = support.width() / static_cast<double>(cells);
  const auto bins = detail::linear_bins(points, weights, support, cells);
  const auto reach = static_cast<std::ptrdiff_t>(std::ceil(8.0 * bandwidth / step));
  const auto last = static_cast<std::ptrdiff_t>(cells) - 1;
  std::vector<double> kern(static_cast<std::size_t>(reach + 1));
  for (std::ptrdiff_t j = 0; j <= reach; ++j)
    kern[static_cast<std::size_t>(j)] = norm_pdf(static_cast<double>(j) * step / bandwidth) / bandwidth;
  std::vector<double> out(cells, 0.0);
  const double inv_n = 1.0 / static_cast<double>(points.size());
  for (std::ptrdiff_t c = 0; c <= last; ++c) {
    double a0 = 0.0, a1 = 0.0, a2 = 0.0, s0 = 0.0, s1 = 0.0;
    for (auto j = std::max<std::ptrdiff_t>(c - reach, 0); j <= std::min(c + reach, last); ++j) {
      const double k = kern[static_cast<std::size_t>(std::abs(j - c))];
      const double u = static_cast<double>(j - c) * step;
      a0 += k;
      a1 += k * u;
      a2 += k * u * u;
      const double b = bins[static_cast<std::size_t>(j)];
      s0 += k * b;
      s1 += k * u * b;
    }
    a0 *= step;
    a1 *= step;
    a2 *= step;
    const double det = a0 * a2 - a1 * a1;
    out[static_cast<std::size_t>(c)] = det > 0.0 ? (a2 * s0 - a1 * s1) / det * inv_n : 0.0;
  }
  return GridDensity(support, std::move(out), false);
}

//! Empirical cdf with the n+1 denominator.
//!
//! Unweighted: #{X_i <= x} / (n+1).  Weighted: the weighted fraction scaled
//! by n/(n+1), so equal weights reproduce the unweighted values exactly.
//! Both are clamped to [1/(n+1), n/(n+1)] so a probit transform stays finite.
class Ecdf
{
public:
  explicit Ecdf(std::span<const double> points, std::span<const double> weights = {})
  {
    const std::size_t n = points.size();
    if (n == 0)
      throw ValidationError("ecdf of an empty sample");
    if (!weights.empty() && weights.size() != n)
      throw ShapeError("ecdf weights differ in length from points");
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return points[a] < points[b]; });
    init_sorted(points, weights, order);
  }

  //! Reuses a precomputed ascending order of `points`.
  Ecdf(std::span<const double> points, std::span<const double> weights,
       std::span<const std::size_t> order)
  {
    if (points.empty())
      throw ValidationError("ecdf of an empty sample");
    init_sorted(points, weights, order);
  }

  double operator()(double x) const
  {
    const auto k = static_cast<std::size_t>(
      std::upper_bound(sorted_.begin(), sorted_.end(), x) - sorted_.begin());
    return clamp(k == 0 ? 0.0 : cum_[k - 1]);
  }

  std::size_t size() const { return sorted_.size(); }
  double lower() const { return 1.0 / (static_cast<double>(size()) + 1.0); }
  double upper() const { return static_cast<double>(size()) / (static_cast<double>(size()) + 1.0); }

private:
  void init_sorted(std::span<const double> points, std::span<const double> weights,
                   std::span<const std::size_t> order)
  {
    const std::size_t n = points.size();
    sorted_.resize(n);
    cum_.resize(n);
    double total = 0.0;
    if (!weights.empty()) {
      for (double w : weights) {
        if (w < 0.0)
          throw DomainError("ecdf weights must be nonnegative");
        total += w;
      }
      if (!(total > 0.0))
        throw DegenerateError("ecdf weights sum to zero");
    }
    const double scale = static_cast<double>(n) / (static_cast<double>(n) + 1.0);
    double acc = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
      const auto i = order[r];
      sorted_[r] = points[i];
      if (weights.empty())
        cum_[r] = static_cast<double>(r + 1) / (static_cast<double>(n) + 1.0);
      else {
        acc += weights[i];
        cum_[r] = scale * acc / total;
      }
    }
    // ties: the cdf at a tied value includes every copy
    for (std::size_t r = n - 1; r-- > 0;)
      if (sorted_[r] == sorted_[r + 1])
        cum_[r] = cum_[r + 1];
  }

  double clamp(double v) const { return std::clamp(v, lower(), upper()); }

  std::vector<double> sorted_;
  std::vector<double> cum_;
};

//! 2-D histogram; rows index m bins, columns t bins.
struct Hist2D
{
  Eigen::MatrixXd counts;
  std::vector<double> edges_m;
  std::vector<double> edges_t;

  Support support_m() const { return {edges_m.front(), edges_m.back()}; }
  Support support_t() const { return {edges_t.front(), edges_t.back()}; }
  double width_m() const { return (edges_m.back() - edges_m.front()) / static_cast<double>(counts.rows()); }
  double width_t() const { return (edges_t.back() - edges_t.front()) / static_cast<double>(counts.cols()); }
};

namespace detail {

inline std::vector<double> uniform_edges(const Support& s, std::size_t bins)
{
  std::vector<double> e(bins + 1);
  for (std::size_t i = 0; i <= bins; ++i)
    e[i] = s.lo + s.width() * static_cast<double>(i) / static_cast<double>(bins);
  e.back() = s.hi;
  return e;
}

inline std::ptrdiff_t bin_index(double x, const Support& s, std::size_t bins)
{
  if (!(x >= s.lo && x <= s.hi))
    return -1;
  auto k = static_cast<std::ptrdiff_t>((x - s.lo) / s.width() * static_cast<double>(bins));
  return std::min<std::ptrdiff_t>(k, static_cast<std::ptrdiff_t>(bins) - 1);
}

inline Support sample_range(std::span<const double> x)
{
  auto [lo, hi] = std::minmax_element(x.begin(), x.end());
  double a = *lo, b = *hi;
  if (!(b > a))
    b = a + 1.0;
  return {a, b};
}

} // namespace detail

//! Equal-width 2-D histogram.  Without declared supports the bins span the
//! sample range; points outside declared supports are not counted.  Sample
//! weights, when present, are summed instead of counts.
inline Hist2D hist2d(const Sample& s, std::size_t n_m, std::size_t n_t,
                     std::optional<Support> support_m = std::nullopt,
                     std::optional<Support> support_t = std::nullopt)
{
  s.validate();
  if (n_m < 2 || n_t < 2)
    throw ValidationError("hist2d needs at least 2 bins per axis");
  if (s.size() == 0 && (!support_m || !support_t))
    throw ValidationError("hist2d of an empty sample needs declared supports");
  const Support sm = support_m ? *support_m : detail::sample_range(s.m);
  const Support st = support_t ? *support_t : detail::sample_range(s.t);
  Hist2D h;
  h.counts = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n_m), static_cast<Eigen::Index>(n_t));
  h.edges_m = detail::uniform_edges(sm, n_m);
  h.edges_t = detail::uniform_edges(st, n_t);
  for (std::size_t i = 0; i < s.size(); ++i) {
    const auto a = detail::bin_index(s.m[i], sm, n_m);
    const auto b = detail::bin_index(s.t[i], st, n_t);
    if (a < 0 || b < 0)
      continue;
    h.counts(a, b) += s.weight.empty() ? 1.0 : s.weight[i];
  }
  return h;
}

//! Conditional density field b(t | m) for a set of m values.
struct CondDensityField
{
  std::vector<double> grid_m;
  std::vector<GridDensity> slices;   // one density in t per m value
  std::vector<double> bandwidth_m;   // m bandwidth actually used per slice
  std::vector<bool> widened;         // true where the window had to be widened
};

//! Local-linear conditional density estimate.
//!
//! For each t on the grid, K_h(T_i - t) is regressed locally-linearly on M_i
//! with a Gaussian kernel in m; the fitted intercept at m is b(t | m).  The
//! local-linear fit is linear in the responses, so each slice is a kde in t
//! with the signed equivalent-kernel weights of the m fit.  Slices are
//! clipped at zero and renormalized.  When the m window holds fewer than 3
//! effective points it is widened by 1.5x until it does.
inline CondDensityField cond_density(const Sample& s, double bandwidth_t, const Support& support_t,
                                     std::size_t grid_t, std::span<const double> grid_m,
                                     std::optional<double> bandwidth_m = std::nullopt)
{
  s.validate();
  if (!(bandwidth_t > 0.0))
    throw DomainError("cond_density bandwidth_t must be positive");
  if (s.size() < 3)
    throw ValidationError("cond_density needs at least 3 points");
  const double hm0 = bandwidth_m ? *bandwidth_m : silverman_bandwidth(s.m);
  if (!(hm0 > 0.0))
    throw DomainError("cond_density bandwidth_m must be positive");

  CondDensityField out;
  out.grid_m.assign(grid_m.begin(), grid_m.end());
  const std::size_t n = s.size();
  std::vector<double> kw(n), lw(n);
  for (double m0 : grid_m) {
    double hm = hm0;
    bool widened = false;
    for (int attempt = 0;; ++attempt) {
      double s0 = 0.0, s1 = 0.0, s2 = 0.0, sq = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double d = s.m[i] - m0;
        kw[i] = norm_pdf(d / hm);
        s0 += kw[i];
        s1 += kw[i] * d;
        s2 += kw[i] * d * d;
        sq += kw[i] * kw[i];
      }
      const double neff = sq > 0.0 ? s0 * s0 / sq : 0.0;
      const double det = s0 * s2 - s1 * s1;
      if ((neff >= 3.0 && det > 1e-300 * std::max(1.0, s0 * s2)) || attempt >= 40) {
        for (std::size_t i = 0; i < n; ++i)
          lw[i] = det > 0.0 ? kw[i] * (s2 - (s.m[i] - m0) * s1) / det : kw[i] / s0;
        break;
      }
      hm *= 1.5;
      widened = true;
    }
    // drop negligible weights to keep the kde cheap
    std::vector<double> pts, wts;
    double wmax = 0.0;
    for (double v : lw)
      wmax = std::max(wmax, std::abs(v));
    for (std::size_t i = 0; i < n; ++i)
      if (std::abs(lw[i]) > 1e-14 * wmax) {
        pts.push_back(s.t[i]);
        wts.push_back(lw[i]);
      }
    // kde divides by the number of points; undo it so the slice is sum_i l_i K_i
    KdeOptions opt;
    opt.grid_size = grid_t;
    GridDensity raw = kde(pts, wts, bandwidth_t, support_t, opt)
                        .scaled(static_cast<double>(pts.size()));
    out.slices.push_back(raw.clipped_normalized());
    out.bandwidth_m.push_back(hm);
    out.widened.push_back(widened);
  }
  return out;
}

//! Product-Gaussian-kernel joint density estimate of (M, T), each kernel
//! truncated and renormalized to its support.
class ProductKde2D
{
public:
  ProductKde2D(const Sample& s, double bandwidth_m, double bandwidth_t, Support support_m,
               Support support_t)
    : m_(s.m), t_(s.t), w_(s.weight), hm_(bandwidth_m), ht_(bandwidth_t), sm_(support_m),
      st_(support_t)
  {
    s.validate();
    if (s.size() == 0)
      throw ValidationError("2-D kde of an empty sample");
    if (!(hm_ > 0.0) || !(ht_ > 0.0))
      throw DomainError("2-D kde bandwidths must be positive");
    mass_m_.resize(m_.size());
    mass_t_.resize(t_.size());
    for (std::size_t i = 0; i < m_.size(); ++i) {
      mass_m_[i] = detail::kernel_mass(m_[i], hm_, sm_);
      mass_t_[i] = detail::kernel_mass(t_[i], ht_, st_);
    }
  }

  double operator()(double m, double t) const
  {
    if (!sm_.contains(m) || !st_.contains(t))
      return 0.0;
    double acc = 0.0;
    for (std::size_t i = 0; i < m_.size(); ++i)
      acc += weight(i) * kernel_m(i, m) * kernel_t(i, t);
    return acc / static_cast<double>(m_.size());
  }

  //! n x G matrix of the m kernels (with point weights) at the given m values.
  Eigen::MatrixXd kernel_matrix_m(std::span<const double> at) const
  {
    Eigen::MatrixXd k(static_cast<Eigen::Index>(m_.size()), static_cast<Eigen::Index>(at.size()));
    for (std::size_t i = 0; i < m_.size(); ++i)
      for (std::size_t j = 0; j < at.size(); ++j)
        k(i, j) = sm_.contains(at[j]) ? weight(i) * kernel_m(i, at[j]) : 0.0;
    return k;
  }

  Eigen::MatrixXd kernel_matrix_t(std::span<const double> at) const
  {
    Eigen::MatrixXd k(static_cast<Eigen::Index>(t_.size()), static_cast<Eigen::Index>(at.size()));
    for (std::size_t i = 0; i < t_.size(); ++i)
      for (std::size_t j = 0; j < at.size(); ++j)
        k(i, j) = st_.contains(at[j]) ? kernel_t(i, at[j]) : 0.0;
    return k;
  }

  //! Density on the product of two point sets: rows follow `ms`, columns `ts`.
  Eigen::MatrixXd evaluate(std::span<const double> ms, std::span<const double> ts) const
  {
    return kernel_matrix_m(ms).transpose() * kernel_matrix_t(ts) / static_cast<double>(m_.size());
  }

  //! Point weight times the m kernel of point i at m.
  double weighted_kernel_m(std::size_t i, double m) const
  {
    return sm_.contains(m) ? weight(i) * kernel_m(i, m) : 0.0;
  }

  double bandwidth_m() const { return hm_; }
  double bandwidth_t() const { return ht_; }
  const Support& support_m() const { return sm_; }
  const Support& support_t() const { return st_; }
  std::size_t size() const { return m_.size(); }

private:
  double weight(std::size_t i) const { return w_.empty() ? 1.0 : w_[i]; }
  double kernel_m(std::size_t i, double m) const
  {
    return mass_m_[i] > 0.0 ? norm_pdf((m - m_[i]) / hm_) / (hm_ * mass_m_[i]) : 0.0;
  }
  double kernel_t(std::size_t i, double t) const
  {
    return mass_t_[i] > 0.0 ? norm_pdf((t - t_[i]) / ht_) / (ht_ * mass_t_[i]) : 0.0;
  }

  std::vector<double> m_, t_, w_;
  double hm_, ht_;
  Support sm_, st_;
  std::vector<double> mass_m_, mass_t_;
};

} // namespace cowherd
