#pragma once

#include "cowherd/copula.hpp"
#include "cowherd/error.hpp"
#include "cowherd/grid.hpp"
#include "cowherd/smooth.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace cowherd {

inline constexpr double kMaxGramCondition = 1e10;

namespace detail {

//! Index pair (j < k) of the most collinear columns of a Gram matrix.
inline std::pair<Eigen::Index, Eigen::Index> most_collinear_pair(const Eigen::MatrixXd& gram)
{
  std::pair<Eigen::Index, Eigen::Index> best{0, gram.rows() > 1 ? 1 : 0};
  double score = -1.0;
  for (Eigen::Index j = 0; j < gram.rows(); ++j)
    for (Eigen::Index k = j + 1; k < gram.cols(); ++k) {
      const double denom = std::sqrt(std::abs(gram(j, j) * gram(k, k)));
      const double c = denom > 0.0 ? std::abs(gram(j, k)) / denom : 1.0;
      if (c > score) {
        score = c;
        best = {j, k};
      }
    }
  return best;
}

inline double condition_number(const Eigen::MatrixXd& a)
{
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a);
  const auto& sv = svd.singularValues();
  if (sv.size() == 0 || !(sv(sv.size() - 1) > 0.0))
    return INFINITY;
  return sv(0) / sv(sv.size() - 1);
}

inline void require_invertible(const Eigen::MatrixXd& gram, const std::string& what)
{
  const double cond = condition_number(gram);
  if (!(cond < kMaxGramCondition)) {
    auto [j, k] = most_collinear_pair(gram);
    throw RankDeficientError(what + " is singular (condition " + std::to_string(cond) +
                             "): components " + std::to_string(j + 1) + " and " +
                             std::to_string(k + 1) + " are linearly dependent");
  }
}

} // namespace detail

//! Ordered basis densities g_1..g_{s+b} on a shared m grid; the first s are signal.
struct BasisSet
{
  std::vector<GridDensity> g;
  std::size_t s = 1;
  std::size_t b = 1;

  BasisSet() = default;
  BasisSet(std::vector<GridDensity> g_, std::size_t s_, std::size_t b_)
    : g(std::move(g_)), s(s_), b(b_)
  {
    validate();
  }

  std::size_t size() const { return g.size(); }
  const Support& support() const { return g.front().support(); }

  Eigen::MatrixXd gram() const
  {
    const auto k = static_cast<Eigen::Index>(g.size());
    Eigen::MatrixXd c(k, k);
    for (Eigen::Index i = 0; i < k; ++i)
      for (Eigen::Index j = i; j < k; ++j)
        c(i, j) = c(j, i) = inner(g[static_cast<std::size_t>(i)], g[static_cast<std::size_t>(j)]);
    return c;
  }

  void validate() const
  {
    if (g.empty())
      throw ValidationError("basis is empty");
    if (s + b != g.size())
      throw ShapeError("basis: s + b must equal the number of densities");
    for (const auto& gk : g) {
      require_same_grid(g.front(), gk);
      if (!gk.is_density())
        throw DomainError("basis functions must be densities");
      if (std::abs(gk.integral() - 1.0) > 1e-6)
        throw DomainError("basis density does not integrate to 1");
    }
    detail::require_invertible(gram(), "basis Gram matrix");
  }
};

//! Weight functions w_j with the matrices that produced them.
struct WeightSet
{
  std::vector<GridDensity> w; // signed functions on the basis grid
  Eigen::MatrixXd C;
  Eigen::MatrixXd A;
  GridDensity normalizer;
  std::size_t s = 1;

  double operator()(std::size_t j, double m) const { return w[j](m); }

  //! w_s = sum of the signal weight functions.
  GridDensity signal_weight() const
  {
    std::vector<double> ones(s, 1.0);
    return combine(std::span(w).first(s), ones);
  }

  double signal(double m) const
  {
    double acc = 0.0;
    for (std::size_t j = 0; j < s; ++j)
      acc += w[j](m);
    return acc;
  }
};

//! Unit normalizer I(m) = 1 on the basis grid.
inline GridDensity unit_normalizer(const BasisSet& basis)
{
  return GridDensity(basis.support(), std::vector<double>(basis.g.front().size(), 1.0), false);
}

//! I(m) = marginal of M estimated by a Silverman-bandwidth kde and floored
//! at kWeightFloor.
inline GridDensity marginal_normalizer(std::span<const double> m, const BasisSet& basis)
{
  KdeOptions opt;
  opt.grid_size = basis.g.front().size();
  GridDensity p = kde(m, silverman_bandwidth(m), basis.support(), opt);
  auto v = p.values();
  for (double& x : v)
    x = std::max(x, kWeightFloor);
  return GridDensity(basis.support(), std::move(v), false);
}

//! Biorthogonal weights w_j(m) = sum_k A_jk g_k(m) / I(m), A = C^{-1},
//! C_jk = int g_j g_k / I.  Cells where I < kWeightFloor are excluded from
//! C and get zero weight.
inline WeightSet make_weights(const BasisSet& basis, std::optional<GridDensity> normalizer = std::nullopt)
{
  GridDensity I = normalizer ? *normalizer : unit_normalizer(basis);
  require_same_grid(basis.g.front(), I);
  const auto k = static_cast<Eigen::Index>(basis.size());
  Eigen::MatrixXd C(k, k);
  for (Eigen::Index i = 0; i < k; ++i)
    for (Eigen::Index j = i; j < k; ++j)
      C(i, j) = C(j, i) = inner(basis.g[static_cast<std::size_t>(i)],
                                basis.g[static_cast<std::size_t>(j)], I);
  detail::require_invertible(C, "weighted Gram matrix C");
  Eigen::MatrixXd A = C.inverse();

  WeightSet ws;
  ws.C = C;
  ws.A = A;
  ws.s = basis.s;
  const std::size_t cells = I.size();
  for (Eigen::Index j = 0; j < k; ++j) {
    std::vector<double> v(cells, 0.0);
    for (std::size_t c = 0; c < cells; ++c) {
      if (I[c] < kWeightFloor)
        continue;
      double acc = 0.0;
      for (Eigen::Index l = 0; l < k; ++l)
        acc += A(j, l) * basis.g[static_cast<std::size_t>(l)][c];
      v[c] = acc / I[c];
    }
    ws.w.emplace_back(I.support(), std::move(v), false);
  }
  ws.normalizer = std::move(I);
  return ws;
}

//! z_k estimates: the sample mean of w_k(M_i).
inline std::vector<double> estimate_z(const WeightSet& ws, const Sample& s)
{
  std::vector<double> z(ws.w.size(), 0.0);
  if (s.size() == 0)
    return z;
  for (std::size_t j = 0; j < ws.w.size(); ++j) {
    double acc = 0.0;
    for (double m : s.m)
      acc += ws.w[j](m);
    z[j] = acc / static_cast<double>(s.size());
  }
  return z;
}

//! Per-bin signal yield sum_{t_i in bin} w_s(m_i), with sqrt(sum w^2) errors.
struct BinnedYield
{
  std::vector<double> edges;
  std::vector<double> yield;
  std::vector<double> error;
};

inline BinnedYield extract_signal_binned(std::span<const double> per_event_weight, const Sample& s,
                                         const Support& support_t, std::size_t bins)
{
  s.validate();
  if (per_event_weight.size() != s.size())
    throw ShapeError("one weight per event required");
  if (bins == 0)
    throw ValidationError("need at least one bin");
  BinnedYield out;
  out.edges = detail::uniform_edges(support_t, bins);
  out.yield.assign(bins, 0.0);
  std::vector<double> sq(bins, 0.0);
  for (std::size_t i = 0; i < s.size(); ++i) {
    const auto b = detail::bin_index(s.t[i], support_t, bins);
    if (b < 0)
      continue;
    out.yield[static_cast<std::size_t>(b)] += per_event_weight[i];
    sq[static_cast<std::size_t>(b)] += per_event_weight[i] * per_event_weight[i];
  }
  out.error.resize(bins);
  for (std::size_t b = 0; b < bins; ++b)
    out.error[b] = std::sqrt(sq[b]);
  return out;
}

inline std::vector<double> signal_weights_of(const WeightSet& ws, const Sample& s)
{
  std::vector<double> w(s.size());
  for (std::size_t i = 0; i < s.size(); ++i)
    w[i] = ws.signal(s.m[i]);
  return w;
}

inline BinnedYield extract_signal_binned(const WeightSet& ws, const Sample& s,
                                         const Support& support_t, std::size_t bins)
{
  return extract_signal_binned(signal_weights_of(ws, s), s, support_t, bins);
}

//! Expected bin contents of the curve `scale * h(t)` on the given edges.
inline std::vector<double> expected_yield(std::span<const double> edges, double scale,
                                          const GridDensity& h)
{
  std::vector<double> out(edges.size() - 1);
  GridQuantile q(h);
  const double mass = h.integral();
  for (std::size_t b = 0; b + 1 < edges.size(); ++b)
    out[b] = scale * mass * (q.cdf(edges[b + 1]) - q.cdf(edges[b]));
  return out;
}

//! Smooth extraction: n times the w_s-weighted kde of T (estimates n z h_1).
inline GridDensity extract_signal_smooth(const WeightSet& ws, const Sample& s, double bandwidth,
                                         const Support& support_t,
                                         std::size_t grid = kDefaultGridSize)
{
  auto w = signal_weights_of(ws, s);
  KdeOptions opt;
  opt.grid_size = grid;
  return kde(s.t, w, bandwidth, support_t, opt).scaled(static_cast<double>(s.size())).as_signed();
}

//! Posterior component probabilities given m only:
//! w'_k(m) = z_k g_k(m) / sum_j z_j g_j(m).  Where every g vanishes the
//! prior z is returned.
inline std::vector<GridDensity> mixture_weights(std::span<const double> z, const BasisSet& basis)
{
  if (z.size() != basis.size())
    throw ShapeError("mixture_weights: one z per basis density required");
  double sum = 0.0;
  for (double v : z) {
    if (v < 0.0)
      throw DomainError("mixture_weights: z must be nonnegative");
    sum += v;
  }
  if (std::abs(sum - 1.0) > 1e-9)
    throw DomainError("mixture_weights: z must sum to 1");
  const std::size_t cells = basis.g.front().size();
  std::vector<std::vector<double>> v(z.size(), std::vector<double>(cells));
  for (std::size_t c = 0; c < cells; ++c) {
    double denom = 0.0;
    for (std::size_t k = 0; k < z.size(); ++k)
      denom += z[k] * basis.g[k][c];
    for (std::size_t k = 0; k < z.size(); ++k)
      v[k][c] = denom > 0.0 ? z[k] * basis.g[k][c] / denom : z[k];
  }
  std::vector<GridDensity> out;
  for (auto& vk : v)
    out.emplace_back(basis.support(), std::move(vk), false);
  return out;
}

//! p(t | S = 1) = p(t) int c(F(m), F(t)) p(m | S = 1) dm for data whose
//! joint is a Gaussian copula (correlation rho) of the marginals p_m, p_t
//! and whose labels depend on m only.
inline GridDensity copula_toy_signal_oracle(double rho, const GridDensity& p_m,
                                            const GridDensity& p_t, const GridDensity& signal_m)
{
  if (!(std::abs(rho) < 1.0))
    throw DomainError("copula oracle requires |rho| < 1");
  require_same_grid(p_m, signal_m);
  if (rho == 0.0)
    return p_t;
  GridQuantile fm(p_m);
  GridQuantile ft(p_t);
  const std::size_t gm = p_m.size();
  std::vector<double> xm(gm), wm(gm);
  for (std::size_t i = 0; i < gm; ++i) {
    const double u = std::clamp(fm.cdf(p_m.midpoint(i)), kCopulaClamp, 1.0 - kCopulaClamp);
    xm[i] = norm_quantile(u);
    wm[i] = signal_m[i] * p_m.step();
  }
  std::vector<double> out(p_t.size());
  for (std::size_t j = 0; j < p_t.size(); ++j) {
    const double v = std::clamp(ft.cdf(p_t.midpoint(j)), kCopulaClamp, 1.0 - kCopulaClamp);
    const double y = norm_quantile(v);
    double acc = 0.0;
    for (std::size_t i = 0; i < gm; ++i)
      if (wm[i] != 0.0)
        acc += gaussian_copula_density_probit(xm[i], y, rho) * wm[i];
    out[j] = p_t[j] * acc;
  }
  // the identity integrates to 1 exactly; drop the quadrature residue
  return GridDensity(p_t.support(), std::move(out), true).clipped_normalized();
}

} // namespace cowherd
