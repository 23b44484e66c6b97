#include "cowherd/condind.hpp"
#include "cowherd/generators.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace cowherd;

namespace {

// sd of prod_r w_r^(j)(X_r) / sqrt(3000) under the exact d=3 model with
// pi = (0.4, 0.6), from quadrature of the exact weights.
constexpr double kPiSd1 = 0.0121;
constexpr double kPiSd2 = 0.0134;

const Support kUnit{0.0, 1.0};

struct Truth
{
  GridDensity f1 = ParamDensity::beta(8, 2).tabulate(512);
  GridDensity f2 = ParamDensity::beta(2, 8).tabulate(512);

  double worst_l1(const CondIndModel& m) const
  {
    double w = 0.0;
    for (const auto& fr : m.f)
      w = std::max({w, l1_distance(fr[0], f1), l1_distance(fr[1], f2)});
    return w;
  }
};

CondIndOptions unit_options(int sweeps)
{
  CondIndOptions o;
  o.sweeps = sweeps;
  o.supports.assign(3, kUnit);
  return o;
}

} // namespace

TEST(Gamma, UniformAndLinear)
{
  auto f1 = ParamDensity::uniform().tabulate();
  auto f2 = GridDensity::tabulate(kUnit, kDefaultGridSize, [](double x) { return 2.0 * x; });
  std::vector<GridDensity> f{f1, f2};
  auto w = gamma(f);
  for (std::size_t c = 0; c < f1.size(); c += 97) {
    const double x = f1.midpoint(c);
    EXPECT_NEAR(w[0][c], 4.0 - 6.0 * x, 1e-6);
    EXPECT_NEAR(w[1][c], 6.0 * x - 3.0, 1e-6);
  }
}

TEST(Gamma, OrthonormalInputsAreTheirOwnWeights)
{
  auto f1 = ParamDensity::uniform().tabulate();
  auto f2 = GridDensity::tabulate(kUnit, kDefaultGridSize, [](double x) { return x < 0.5 ? 1.0 : -1.0; }, false);
  std::vector<GridDensity> f{f1, f2};
  auto w = gamma(f);
  EXPECT_LT(sup_distance(w[0], f1.as_signed()), 1e-12);
  EXPECT_LT(sup_distance(w[1], f2), 1e-12);
}

TEST(Gamma, Biorthogonal)
{
  std::vector<GridDensity> f{ParamDensity::beta(8, 2).tabulate(), ParamDensity::beta(2, 8).tabulate(),
                             ParamDensity::beta(4, 4).tabulate()};
  auto w = gamma(f);
  EXPECT_LT(biorthogonality_error(f, w), 1e-9);
}

TEST(Gamma, DuplicatedDensitiesAreSingular)
{
  auto g = ParamDensity::beta(3, 5).tabulate();
  std::vector<GridDensity> f{g, g};
  EXPECT_THROW(gamma(f), RankDeficientError);
}

TEST(CycleFit, RecoversSeparableComponents)
{
  Truth tr;
  int good = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto m = cycle_fit(gen_condind(3000, seed).x, 2, {tr.f1, tr.f2}, unit_options(3));
    EXPECT_EQ(m.sweeps_done, 3);
    for (double b : m.biorthogonality)
      EXPECT_LT(b, kBiorthogonalityTol);
    good += tr.worst_l1(m) < 0.15;
  }
  EXPECT_GE(good, 16);
}

TEST(CycleFit, OneSweepSuffices)
{
  Truth tr;
  for (std::uint64_t seed = 100; seed < 105; ++seed)
    EXPECT_LT(tr.worst_l1(cycle_fit(gen_condind(3000, seed).x, 2, {tr.f1, tr.f2}, unit_options(1))), 0.2);
}

TEST(CycleFit, OutputsAreDensities)
{
  Truth tr;
  auto m = cycle_fit(gen_condind(1000, 7).x, 2, {tr.f1, tr.f2}, unit_options(2));
  for (const auto& fr : m.f)
    for (const auto& g : fr) {
      EXPECT_NEAR(g.integral(), 1.0, 1e-6);
      for (double v : g.values())
        EXPECT_GE(v, 0.0);
    }
  EXPECT_NEAR(m.pi[0] + m.pi[1], 1.0, 1e-6);
  EXPECT_NEAR(m.pi[0], 0.4, 0.05);
  ASSERT_EQ(m.change.size(), 2u);
  EXPECT_TRUE(std::isnan(m.change[0]));
  EXPECT_GE(m.change[1], 0.0);
}

TEST(CycleFit, PermutationEquivariant)
{
  Truth tr;
  auto x = gen_condind(800, 8).x;
  auto a = cycle_fit(x, 2, {tr.f1, tr.f2}, unit_options(2));
  auto b = cycle_fit(x, 2, {tr.f2, tr.f1}, unit_options(2));
  for (std::size_t r = 0; r < 3; ++r) {
    EXPECT_LT(sup_distance(a.f[r][0], b.f[r][1]), 1e-9);
    EXPECT_LT(sup_distance(a.f[r][1], b.f[r][0]), 1e-9);
  }
  EXPECT_NEAR(a.pi[0], b.pi[1], 1e-9);
}

TEST(CycleFit, KmeansInit)
{
  Truth tr;
  auto m = cycle_fit(gen_condind(3000, 9).x, 2, {}, unit_options(3));
  // k-means orders clusters by position: component 1 is the low one
  double w = 0.0;
  for (const auto& fr : m.f)
    w = std::max({w, l1_distance(fr[0], tr.f2), l1_distance(fr[1], tr.f1)});
  EXPECT_LT(w, 0.15);
}

TEST(CycleFit, SingleComponent)
{
  auto x = gen_condind(500, 10).x;
  auto m = cycle_fit(x, 1, {ParamDensity::uniform().tabulate(512)}, unit_options(2));
  EXPECT_DOUBLE_EQ(m.pi[0], 1.0);
  // uniform weights reduce the update to a plain kde
  auto w = gamma(std::vector<GridDensity>{ParamDensity::uniform().tabulate(512)});
  const auto c0 = detail::column(x, 0), c1 = detail::column(x, 1);
  const double bw = silverman_bandwidth(c1);
  auto upd = weighted_update(c0, w[0], c1, bw, kUnit, 512);
  ASSERT_TRUE(upd.has_value());
  KdeOptions opt;
  opt.grid_size = 512;
  opt.normalize = true;
  EXPECT_LT(sup_distance(*upd, kde(c1, bw, kUnit, opt)), 1e-10);
}

TEST(EstimatePi, ExactWeightsAreUnbiased)
{
  std::vector<GridDensity> f{ParamDensity::beta(8, 2).tabulate(), ParamDensity::beta(2, 8).tabulate()};
  std::vector<std::vector<GridDensity>> w(3, gamma(f));
  int within = 0;
  double mean1 = 0.0, mean2 = 0.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto pi = estimate_pi_empirical(gen_condind(3000, 200 + seed).x, w);
    within += std::abs(pi[0] - 0.4) <= 0.03 && std::abs(pi[1] - 0.6) <= 0.03;
    mean1 += pi[0] / 20.0;
    mean2 += pi[1] / 20.0;
  }
  EXPECT_GE(within, 18);
  EXPECT_NEAR(mean1, 0.4, 3.0 * kPiSd1 / std::sqrt(20.0));
  EXPECT_NEAR(mean2, 0.6, 3.0 * kPiSd2 / std::sqrt(20.0));
  // the product-of-integrals reading is not an estimate of pi here
  auto lit = estimate_pi_literal(w);
  EXPECT_GT(std::abs(lit[0] - 0.4), 0.1);
}

TEST(CycleFit, Errors)
{
  Truth tr;
  auto x = gen_condind(300, 11).x;
  EXPECT_THROW(cycle_fit(x.leftCols(2), 2, {tr.f1, tr.f2}), DomainError);
  EXPECT_THROW(cycle_fit(x, 0), DomainError);
  EXPECT_THROW(cycle_fit(x, 2, {tr.f1}, unit_options(1)), ShapeError);
  // component 2 placed where coordinate 1 has no data: its weights sum negative
  Eigen::MatrixXd low = x * 0.1;
  auto high = GridDensity::tabulate(kUnit, 512, [](double v) { return v > 0.9 ? 10.0 : 0.0; });
  auto spread = ParamDensity::beta(2, 2).tabulate(512);
  EXPECT_THROW(cycle_fit(low, 2, {spread, high}, unit_options(1)), DegenerateError);
}
