#include "cowherd/generators.hpp"
#include "cowherd/sweights.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace cowherd;

namespace {

BasisSet synthetic_basis(std::size_t cells = kDefaultGridSize)
{
  auto model = synthetic_model(0.5, cells);
  return BasisSet(model.g, 1, 1);
}

GridDensity true_marginal(double z = 0.5)
{
  return synthetic_model(z).marginal_m().as_signed();
}

// 99% quantile of chi-square with 30 degrees of freedom
constexpr double kChi2_30_99 = 50.892181311517092;

double chi2(const BinnedYield& y, const std::vector<double>& expect)
{
  double acc = 0.0;
  for (std::size_t b = 0; b < expect.size(); ++b)
    if (y.error[b] > 0.0)
      acc += std::pow((y.yield[b] - expect[b]) / y.error[b], 2);
  return acc;
}

} // namespace

TEST(MakeWeights, SymbolicTwoDensityExample)
{
  auto g1 = ParamDensity::uniform().tabulate();
  auto g2 = GridDensity::tabulate({0, 1}, kDefaultGridSize, [](double m) { return 2.0 * m; });
  auto ws = make_weights(BasisSet({g1, g2}, 1, 1));
  EXPECT_NEAR(ws.C(0, 0), 1.0, 1e-6);
  EXPECT_NEAR(ws.C(0, 1), 1.0, 1e-6);
  EXPECT_NEAR(ws.C(1, 1), 4.0 / 3.0, 1e-6);
  EXPECT_NEAR(ws.A(0, 0), 4.0, 1e-5);
  EXPECT_NEAR(ws.A(0, 1), -3.0, 1e-5);
  EXPECT_NEAR(ws.A(1, 1), 3.0, 1e-5);
  for (double m : {0.1, 0.5, 0.9}) {
    EXPECT_NEAR(ws(0, m), 4.0 - 6.0 * m, 1e-4);
    EXPECT_NEAR(ws(1, m), 6.0 * m - 3.0, 1e-4);
  }
  EXPECT_NEAR(inner(ws.w[0], g1), 1.0, 1e-6);
  EXPECT_NEAR(inner(ws.w[0], g2), 0.0, 1e-6);
}

TEST(MakeWeights, OrthonormalBasisGivesIdentity)
{
  Support s{0, 2};
  auto g1 = GridDensity::tabulate(s, 256, [](double m) { return m < 1.0 ? 1.0 : 0.0; });
  auto g2 = GridDensity::tabulate(s, 256, [](double m) { return m >= 1.0 ? 1.0 : 0.0; });
  auto ws = make_weights(BasisSet({g1, g2}, 1, 1));
  EXPECT_TRUE(ws.C.isApprox(Eigen::Matrix2d::Identity(), 1e-12));
  EXPECT_LT(sup_distance(ws.w[0], g1), 1e-12);
  EXPECT_LT(sup_distance(ws.w[1], g2), 1e-12);
}

TEST(MakeWeights, SyntheticSignalWeightPeaksInCentre)
{
  auto basis = synthetic_basis();
  auto ws = make_weights(basis, true_marginal());
  const auto& w1 = ws.w[0];
  const auto peak = std::max_element(w1.values().begin(), w1.values().end()) - w1.values().begin();
  EXPECT_NEAR(w1.midpoint(static_cast<std::size_t>(peak)), 0.5, 0.02);
  const auto& w2 = ws.w[1];
  EXPECT_GT(w2(0.0), w2(0.5));
  EXPECT_GT(w2(1.0), w2(0.5));
}

TEST(MakeWeights, Biorthogonal)
{
  auto basis = synthetic_basis();
  for (const auto& I : {unit_normalizer(basis), true_marginal(0.3)}) {
    auto ws = make_weights(basis, I);
    for (std::size_t j = 0; j < 2; ++j)
      for (std::size_t k = 0; k < 2; ++k)
        EXPECT_NEAR(inner(ws.w[j], basis.g[k]), j == k ? 1.0 : 0.0, 1e-6);
  }
}

TEST(MakeWeights, InvariantToScalingNormalizer)
{
  auto basis = synthetic_basis();
  auto I = true_marginal();
  auto a = make_weights(basis, I);
  auto b = make_weights(basis, I.scaled(7.5));
  for (std::size_t j = 0; j < 2; ++j)
    EXPECT_LT(sup_distance(a.w[j], b.w[j]), 1e-10);
}

TEST(MakeWeights, PermutationEquivariant)
{
  auto basis = synthetic_basis();
  auto a = make_weights(basis);
  auto b = make_weights(BasisSet({basis.g[1], basis.g[0]}, 1, 1));
  EXPECT_LT(sup_distance(a.w[0], b.w[1]), 1e-9);
  EXPECT_LT(sup_distance(a.w[1], b.w[0]), 1e-9);
}

TEST(MakeWeights, SingularBasisNamesPair)
{
  auto g = ParamDensity::uniform().tabulate();
  auto h = ParamDensity::beta(2, 2).tabulate();
  try {
    BasisSet({h, g, g}, 1, 2);
    FAIL() << "expected rank deficiency";
  } catch (const RankDeficientError& e) {
    EXPECT_NE(std::string(e.what()).find("components 2 and 3"), std::string::npos) << e.what();
  }
}

TEST(EstimateZ, SyntheticSampleWithTrueMarginal)
{
  auto ws = make_weights(synthetic_basis(), true_marginal());
  auto s = gen_synthetic(2000, 2000, 17);
  auto z = estimate_z(ws, s);
  EXPECT_NEAR(z[0], 0.5, 0.03);
  // with I equal to the fitted mixture the estimates sum to one
  EXPECT_NEAR(z[0] + z[1], 1.0, 1e-6);
}

TEST(EstimateZ, PureSignalSample)
{
  auto ws = make_weights(synthetic_basis(), true_marginal());
  auto s = gen_synthetic(4000, 0, 5);
  auto z = estimate_z(ws, s);
  double var = 0.0;
  for (double m : s.m)
    var += std::pow(ws(0, m) - z[0], 2);
  const double se = std::sqrt(var / s.size() / s.size());
  EXPECT_LT(std::abs(z[0] - 1.0), 3.0 * se);
}

TEST(ExtractSignal, BinnedTracksTruth)
{
  auto ws = make_weights(synthetic_basis(), true_marginal());
  auto s = gen_synthetic(2000, 2000, 23);
  auto y = extract_signal_binned(ws, s, kSyntheticSupportT, 30);
  auto h1 = SyntheticShapes{}.h1.tabulate();
  auto expect = expected_yield(y.edges, 4000.0 * 0.5, h1);
  EXPECT_LT(chi2(y, expect), kChi2_30_99);
}

TEST(ExtractSignal, UnitWeightsGivePlainHistogram)
{
  auto g = SyntheticShapes{}.g1.tabulate();
  auto ws = make_weights(BasisSet({g}, 1, 0), g.as_signed());
  EXPECT_NEAR(ws(0, 0.37), 1.0, 1e-9);
  auto s = gen_synthetic(500, 0, 1);
  auto y = extract_signal_binned(ws, s, kSyntheticSupportT, 10);
  auto plain = hist2d(s, 2, 10, Support{0, 1}, kSyntheticSupportT);
  for (std::size_t b = 0; b < 10; ++b)
    EXPECT_NEAR(y.yield[b], plain.counts.col(static_cast<Eigen::Index>(b)).sum(), 1e-6);
}

TEST(ExtractSignal, PureBackgroundAveragesToZero)
{
  auto ws = make_weights(synthetic_basis(), true_marginal());
  auto s = gen_synthetic(0, 4000, 31);
  auto y = extract_signal_binned(ws, s, kSyntheticSupportT, 30);
  double acc = 0.0;
  for (std::size_t b = 0; b < 30; ++b)
    acc += std::abs(y.yield[b]) / y.error[b];
  EXPECT_LT(acc / 30.0, 3.0);
}

TEST(MixtureWeights, PartitionOfUnity)
{
  auto basis = synthetic_basis();
  std::vector<double> z{0.3, 0.7};
  auto w = mixture_weights(z, basis);
  for (std::size_t c = 0; c < basis.g[0].size(); ++c) {
    EXPECT_GE(w[0][c], 0.0);
    EXPECT_LE(w[0][c], 1.0);
    EXPECT_NEAR(w[0][c] + w[1][c], 1.0, 1e-12);
  }
  std::vector<double> one{1.0, 0.0};
  auto w1 = mixture_weights(one, basis);
  for (double v : w1[0].values())
    EXPECT_DOUBLE_EQ(v, 1.0);
}

TEST(MixtureWeights, BiasedUnderConditionalIndependence)
{
  auto basis = synthetic_basis();
  auto s = gen_synthetic(2000, 2000, 41);
  std::vector<double> z{0.5, 0.5};
  auto mw = mixture_weights(z, basis);
  std::vector<double> wprime(s.size());
  for (std::size_t i = 0; i < s.size(); ++i)
    wprime[i] = mw[0](s.m[i]);
  auto ws = make_weights(basis, true_marginal());
  auto h1 = SyntheticShapes{}.h1.tabulate();

  // L1 distance between the binned yield fractions and z h1 over 5 bins;
  // at finer binning the sWeights side is dominated by sampling noise
  auto l1 = [&](const BinnedYield& y) {
    auto expect = expected_yield(y.edges, 0.5, h1);
    double acc = 0.0;
    for (std::size_t b = 0; b < y.yield.size(); ++b)
      acc += std::abs(y.yield[b] / s.size() - expect[b]);
    return acc;
  };
  const double biased = l1(extract_signal_binned(wprime, s, kSyntheticSupportT, 5));
  const double unbiased = l1(extract_signal_binned(ws, s, kSyntheticSupportT, 5));
  EXPECT_NEAR(biased, 0.1423, 0.03); // quadrature value of the limiting bias
  EXPECT_GT(biased, 5.0 * unbiased);
}

TEST(MixtureWeights, CopulaToyMatchesOracle)
{
  auto basis = synthetic_basis();
  std::vector<double> z{0.5, 0.5};
  auto mw = mixture_weights(z, basis);
  auto s = gen_copula_toy(4000, 0.7, 9);
  std::vector<double> wprime(s.size());
  for (std::size_t i = 0; i < s.size(); ++i)
    wprime[i] = mw[0](s.m[i]);
  auto y = extract_signal_binned(wprime, s, kSyntheticSupportT, 30);

  auto model = synthetic_model();
  auto oracle = copula_toy_signal_oracle(0.7, model.marginal_m(), model.marginal_t(), model.g[0]);
  EXPECT_NEAR(oracle.integral(), 1.0, 1e-6);
  auto expect = expected_yield(y.edges, 4000.0 * 0.5, oracle);
  EXPECT_LT(chi2(y, expect), kChi2_30_99);
}

TEST(CopulaOracle, IndependenceReturnsMarginal)
{
  auto model = synthetic_model();
  auto pt = model.marginal_t();
  auto oracle = copula_toy_signal_oracle(0.0, model.marginal_m(), pt, model.g[0]);
  EXPECT_LT(sup_distance(oracle, pt), 1e-9);
  EXPECT_THROW(copula_toy_signal_oracle(1.0, model.marginal_m(), pt, model.g[0]), DomainError);
}
