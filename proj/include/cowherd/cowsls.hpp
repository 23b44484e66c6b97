#pragma once

#include "cowherd/error.hpp"
#include "cowherd/grid.hpp"
#include "cowherd/model.hpp"
#include "cowherd/smooth.hpp"
#include "cowherd/sweights.hpp"

#include <Eigen/Dense>

#include <functional>
#include <vector>

namespace cowherd {

//! Least-squares COWs fit of a binned joint P ~ G H^T.
struct LSCowsFit
{
  Eigen::MatrixXd G;     // n_m x N, mass of g_k in each m bin
  Eigen::MatrixXd H;     // n_t x N, columns carry the yields z_k h_k
  Eigen::MatrixXd W;     // n_m x N weight matrix G (G^T G)^-1
  Eigen::VectorXd e;     // 1 on the signal columns
  Eigen::VectorXd s_hat; // n_t signal yields, H e
  std::vector<double> edges_m;
  std::vector<double> edges_t;

  //! Signal yield per t bin as a (signed) density over the t range.
  GridDensity signal_density() const
  {
    const Support st{edges_t.front(), edges_t.back()};
    const double width = st.width() / static_cast<double>(s_hat.size());
    std::vector<double> v(static_cast<std::size_t>(s_hat.size()));
    for (Eigen::Index b = 0; b < s_hat.size(); ++b)
      v[static_cast<std::size_t>(b)] = s_hat(b) / width;
    return GridDensity(st, std::move(v), false);
  }
};

namespace detail {

inline Eigen::VectorXd signal_selector(std::size_t n, std::size_t s)
{
  Eigen::VectorXd e = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
  e.head(static_cast<Eigen::Index>(s)).setOnes();
  return e;
}

} // namespace detail

//! Binned least squares: H^T = (G^T G)^-1 G^T P, solved by QR.
inline LSCowsFit ls_cows_binned(const Hist2D& P, const BasisSet& basis)
{
  const auto nm = P.counts.rows();
  const auto N = static_cast<Eigen::Index>(basis.size());
  if (nm < N)
    throw ShapeError("cows-ls: fewer m bins than basis functions");
  LSCowsFit fit;
  fit.edges_m = P.edges_m;
  fit.edges_t = P.edges_t;
  fit.G.resize(nm, N);
  for (Eigen::Index i = 0; i < nm; ++i) {
    const double a = P.edges_m[static_cast<std::size_t>(i)];
    const double b = P.edges_m[static_cast<std::size_t>(i + 1)];
    for (Eigen::Index k = 0; k < N; ++k) {
      const auto& g = basis.g[static_cast<std::size_t>(k)];
      fit.G(i, k) = g.cdf(b) - g.cdf(a);
    }
  }
  const Eigen::MatrixXd gtg = fit.G.transpose() * fit.G;
  detail::require_invertible(gtg, "design matrix G^T G");
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(fit.G);
  fit.H = qr.solve(P.counts).transpose();
  fit.W = fit.G * gtg.inverse();
  fit.e = detail::signal_selector(basis.size(), basis.s);
  fit.s_hat = fit.H * fit.e;
  return fit;
}

//! Per-t regression coefficients r_j(t) of an unbinned least-squares fit.
struct LSCowsUnbinned
{
  std::vector<GridDensity> r; // r_j(t), signed; estimate z_j h_j(t)
  GridDensity s_raw;          // sum over signal j of r_j (signed)
  GridDensity s_hat;          // s_raw clipped at 0 and renormalized
};

namespace detail {

// Regression of the columns of GtY (= G^T Y(t) for each grid t) on G.
inline LSCowsUnbinned ls_cows_from_gty(const Eigen::MatrixXd& G, const Eigen::MatrixXd& GtY,
                                       std::size_t s, const Support& support_t)
{
  const Eigen::MatrixXd gtg = G.transpose() * G;
  require_invertible(gtg, "design matrix G^T G");
  const Eigen::MatrixXd R = gtg.ldlt().solve(GtY); // N x grid
  LSCowsUnbinned out;
  const auto cells = static_cast<std::size_t>(R.cols());
  std::vector<double> sig(cells, 0.0);
  for (Eigen::Index j = 0; j < R.rows(); ++j) {
    std::vector<double> v(cells);
    for (std::size_t c = 0; c < cells; ++c) {
      v[c] = R(j, static_cast<Eigen::Index>(c));
      if (static_cast<std::size_t>(j) < s)
        sig[c] += v[c];
    }
    out.r.emplace_back(support_t, std::move(v), false);
  }
  out.s_raw = GridDensity(support_t, std::move(sig), false);
  out.s_hat = out.s_raw.clipped_normalized();
  return out;
}

inline Eigen::MatrixXd design_matrix(std::span<const double> m, const BasisSet& basis)
{
  Eigen::MatrixXd G(static_cast<Eigen::Index>(m.size()), static_cast<Eigen::Index>(basis.size()));
  for (std::size_t i = 0; i < m.size(); ++i)
    for (std::size_t k = 0; k < basis.size(); ++k)
      G(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = basis.g[k](m[i]);
  return G;
}

} // namespace detail

//! Unbinned least squares: for each t on the grid, regress
//! Y(t) = (p(M_1, t), ..., p(M_n, t)) on G_ij = g_j(M_i).  `p` is any joint
//! density (estimated or exact).
inline LSCowsUnbinned ls_cows_unbinned(const std::function<double(double, double)>& p, const Sample& s,
                                       const BasisSet& basis, const Support& support_t,
                                       std::size_t grid_t = 512)
{
  s.validate();
  if (s.size() < basis.size())
    throw ValidationError("cows-ls: fewer events than basis functions");
  const Eigen::MatrixXd G = detail::design_matrix(s.m, basis);
  Eigen::MatrixXd Y(static_cast<Eigen::Index>(s.size()), static_cast<Eigen::Index>(grid_t));
  const double h = support_t.width() / static_cast<double>(grid_t);
  for (std::size_t c = 0; c < grid_t; ++c) {
    const double t = support_t.lo + (static_cast<double>(c) + 0.5) * h;
    for (std::size_t i = 0; i < s.size(); ++i)
      Y(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = p(s.m[i], t);
  }
  return detail::ls_cows_from_gty(G, G.transpose() * Y, basis.s, support_t);
}

//! Same fit with p estimated by the 2-D product kde; the m kernels are
//! contracted against G first so the cost stays O(n^2 N).
inline LSCowsUnbinned ls_cows_unbinned(const ProductKde2D& p_hat, const Sample& s,
                                       const BasisSet& basis, std::size_t grid_t = 512)
{
  s.validate();
  if (s.size() < basis.size())
    throw ValidationError("cows-ls: fewer events than basis functions");
  const Eigen::MatrixXd G = detail::design_matrix(s.m, basis);
  const Support& st = p_hat.support_t();
  std::vector<double> ts(grid_t);
  for (std::size_t c = 0; c < grid_t; ++c)
    ts[c] = st.lo + (static_cast<double>(c) + 0.5) * st.width() / static_cast<double>(grid_t);
  // G^T Y = (G^T Km^T) Kt / n, Km(l, i) the m kernel of kde point l at M_i
  const auto N = G.cols();
  Eigen::MatrixXd GtKm = Eigen::MatrixXd::Zero(N, static_cast<Eigen::Index>(p_hat.size()));
  for (std::size_t l = 0; l < p_hat.size(); ++l)
    for (std::size_t i = 0; i < s.size(); ++i) {
      const double k = p_hat.weighted_kernel_m(l, s.m[i]);
      if (k != 0.0)
        GtKm.col(static_cast<Eigen::Index>(l)) += k * G.row(static_cast<Eigen::Index>(i)).transpose();
    }
  const Eigen::MatrixXd Kt = p_hat.kernel_matrix_t(ts);
  const Eigen::MatrixXd GtY = GtKm * Kt / static_cast<double>(p_hat.size());
  return detail::ls_cows_from_gty(G, GtY, basis.s, st);
}

//! beta_k(t) = z_k h_k(t) / p(t): the component probabilities given t.
inline std::vector<GridDensity> varying_coefficients(const MixtureModel& model)
{
  model.validate();
  const GridDensity pt = model.marginal_t();
  for (double v : pt.values())
    if (!(v > 0.0))
      throw DomainError("varying coefficients: marginal p(t) vanishes on the grid");
  std::vector<GridDensity> out;
  for (std::size_t k = 0; k < model.components(); ++k) {
    std::vector<double> v(pt.size());
    for (std::size_t c = 0; c < pt.size(); ++c)
      v[c] = model.z[k] * model.h[k][c] / pt[c];
    out.emplace_back(pt.support(), std::move(v), true);
  }
  return out;
}

//! p(m | t) = sum_k beta_k(t) g_k(m) at a single t.
inline GridDensity conditional_m_given_t(const MixtureModel& model, double t)
{
  model.validate();
  std::vector<double> beta(model.components());
  double pt = 0.0;
  for (std::size_t k = 0; k < beta.size(); ++k) {
    beta[k] = model.z[k] * model.h[k](t);
    pt += beta[k];
  }
  if (!(pt > 0.0))
    throw DomainError("conditional density: p(t) is zero at t = " + std::to_string(t));
  for (double& b : beta)
    b /= pt;
  return combine(model.g, beta);
}

} // namespace cowherd
