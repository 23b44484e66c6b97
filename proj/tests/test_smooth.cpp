#include "cowherd/dists.hpp"
#include "cowherd/smooth.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace cowherd;

TEST(Kde, SinglePointIsTruncatedNormal)
{
  std::vector<double> p{0.5};
  auto f = kde(p, 0.1, {0, 1});
  auto truth = ParamDensity::truncated_normal(0.5, 0.1).tabulate();
  EXPECT_LT(sup_distance(f, truth), 1e-6);
}

TEST(Kde, EqualWeightsScaleOutput)
{
  std::vector<double> p{0.1, 0.3, 0.35, 0.9};
  std::vector<double> w(p.size(), 2.5);
  auto a = kde(p, 0.05, {0, 1});
  auto b = kde(p, w, 0.05, {0, 1});
  EXPECT_LT(sup_distance(b, a.scaled(2.5)), 1e-12);
  EXPECT_NEAR(b.integral(), 2.5, 1e-6);
}

TEST(Kde, RecoversBetaDensity)
{
  RngStream rng(11);
  auto beta = ParamDensity::beta(3, 3);
  auto x = beta.sample(10000, rng);
  auto f = kde(x, 0.05, {0, 1});
  EXPECT_LT(l1_distance(f, beta.tabulate()), 0.05);
  KdeOptions binned;
  binned.method = KdeMethod::binned;
  auto fb = kde(x, 0.05, {0, 1}, binned);
  EXPECT_LT(l1_distance(fb, f), 1e-3);
}

TEST(Kde, IntegratesToDeclaredMassAndIsNonnegative)
{
  RngStream rng(2);
  auto x = ParamDensity::truncated_exponential(0.2, {0, 1.5}).sample(500, rng);
  std::vector<double> w(x.size());
  for (std::size_t i = 0; i < w.size(); ++i)
    w[i] = 0.5 + rng.uniform();
  double total = 0.0;
  for (double v : w)
    total += v;
  auto f = kde(x, w, 0.03, {0, 1.5});
  EXPECT_NEAR(f.integral(), total / static_cast<double>(x.size()), 1e-6);
  for (double v : f.values())
    EXPECT_GE(v, 0.0);
  KdeOptions norm;
  norm.normalize = true;
  EXPECT_NEAR(kde(x, w, 0.03, {0, 1.5}, norm).integral(), 1.0, 1e-12);
}

TEST(Kde, Errors)
{
  std::vector<double> p{0.5, 0.6};
  std::vector<double> zero{0.0, 0.0};
  EXPECT_THROW(kde(p, zero, 0.1, {0, 1}), DegenerateError);
  EXPECT_THROW(kde(p, 0.0, {0, 1}), DomainError);
  EXPECT_THROW(kde(std::vector<double>{}, 0.1, {0, 1}), ValidationError);
}

TEST(LocalLinearKde, ReproducesLinearFunctionsAtTheEdges)
{
  const Support sup{0.0, 2.0};
  const std::size_t cells = 200;
  const double step = sup.width() / cells;
  std::vector<double> p(cells), w(cells);
  for (std::size_t j = 0; j < cells; ++j) {
    p[j] = sup.lo + (j + 0.5) * step;
    w[j] = cells * step * (0.3 + 1.7 * p[j]);
  }
  auto f = local_linear_kde(p, w, 0.15, sup, cells);
  for (std::size_t c = 0; c < cells; ++c)
    EXPECT_NEAR(f[c], 0.3 + 1.7 * f.midpoint(c), 1e-10);
}

TEST(LocalLinearKde, InteriorIsPlainKernelSum)
{
  std::vector<double> p{1.0025, 1.1025}, w{2.0, -0.5};
  auto f = local_linear_kde(p, w, 0.05, {0.0, 2.0}, 400);
  for (std::size_t c = 100; c < 300; c += 7) {
    const double t = f.midpoint(c);
    const double plain = (2.0 * norm_pdf((1.0025 - t) / 0.05) - 0.5 * norm_pdf((1.1025 - t) / 0.05)) / 0.05 / 2.0;
    EXPECT_NEAR(f[c], plain, 1e-9);
  }
}

TEST(LocalLinearKde, SmallerEdgeBiasThanRenormalized)
{
  RngStream rng(5);
  auto d = ParamDensity::truncated_exponential(0.2, Support{0.0, 1.5});
  std::vector<double> t(200000);
  for (double& x : t)
    x = d.draw(rng);
  const Support sup{0.0, 1.5};
  auto ll = local_linear_kde(t, {}, 0.05, sup, 512);
  KdeOptions o;
  o.grid_size = 512;
  auto rn = kde(t, 0.05, sup, o);
  const double truth = d.pdf(ll.midpoint(0));
  EXPECT_LT(std::abs(ll[0] - truth), 0.2);
  EXPECT_GT(std::abs(rn[0] - truth), 1.0);
}

TEST(Ecdf, NPlusOneConvention)
{
  std::vector<double> p{1, 2, 3};
  Ecdf f(p);
  EXPECT_DOUBLE_EQ(f(2.0), 0.5);
  EXPECT_DOUBLE_EQ(f(0.0), 0.25);
  EXPECT_DOUBLE_EQ(f(10.0), 0.75);
}

TEST(Ecdf, AllWeightOnOnePoint)
{
  std::vector<double> p{1, 2, 3, 4};
  std::vector<double> w{0, 0, 1, 0};
  Ecdf f(p, w);
  EXPECT_DOUBLE_EQ(f(2.9), 0.2);
  EXPECT_DOUBLE_EQ(f(3.0), 0.8);
  EXPECT_DOUBLE_EQ(f(5.0), 0.8);
}

TEST(Ecdf, EqualWeightsMatchUnweighted)
{
  RngStream rng(3);
  auto x = ParamDensity::uniform().sample(257, rng);
  std::vector<double> w(x.size(), 0.37);
  Ecdf a(x), b(x, w);
  for (int k = 0; k <= 100; ++k)
    EXPECT_NEAR(a(k / 100.0), b(k / 100.0), 1e-12);
}

TEST(Ecdf, MonotoneInsideUnitInterval)
{
  RngStream rng(4);
  auto x = ParamDensity::beta(2, 5).sample(100, rng);
  std::vector<double> w(x.size());
  for (auto& v : w)
    v = rng.uniform();
  Ecdf f(x, w);
  double prev = 0.0;
  for (int k = -10; k <= 110; ++k) {
    const double v = f(k / 100.0);
    EXPECT_GT(v, 0.0);
    EXPECT_LT(v, 1.0);
    EXPECT_GE(v, prev);
    prev = v;
  }
}

TEST(Ecdf, Errors)
{
  EXPECT_THROW(Ecdf(std::vector<double>{}), ValidationError);
  std::vector<double> p{1, 2};
  std::vector<double> neg{1, -1};
  EXPECT_THROW(Ecdf(p, neg), DomainError);
}

TEST(Hist2D, CountsPointsPerBin)
{
  Sample s;
  s.m = {0.1, 0.9, 0.1, 0.9};
  s.t = {0.1, 0.1, 0.9, 0.9};
  auto h = hist2d(s, 2, 2, Support{0, 1}, Support{0, 1});
  EXPECT_EQ(h.counts, Eigen::MatrixXd::Ones(2, 2));
}

TEST(Hist2D, ConservesCountOverSampleRange)
{
  RngStream rng(5);
  Sample s;
  s.m = ParamDensity::beta(2, 2).sample(4000, rng);
  s.t = ParamDensity::uniform().sample(4000, rng);
  auto h = hist2d(s, 15, 15);
  EXPECT_DOUBLE_EQ(h.counts.sum(), 4000.0);
  EXPECT_EQ(h.edges_m.size(), 16u);
  EXPECT_THROW(hist2d(s, 1, 15), ValidationError);
}

TEST(CondDensity, IndependentDataMatchesMarginal)
{
  RngStream rng(6);
  Sample s;
  s.m = ParamDensity::uniform().sample(2000, rng);
  s.t = ParamDensity::beta(2, 4).sample(2000, rng);
  const double ht = 0.05;
  auto marginal = kde(s.t, ht, {0, 1}, {}).clipped_normalized();
  std::vector<double> gm{0.2, 0.5, 0.8};
  auto field = cond_density(s, ht, {0, 1}, kDefaultGridSize, gm);
  ASSERT_EQ(field.slices.size(), 3u);
  for (const auto& slice : field.slices) {
    EXPECT_NEAR(slice.integral(), 1.0, 1e-6);
    EXPECT_LT(l1_distance(slice, marginal), 0.1);
  }
}

TEST(CondDensity, UniformTruthGivesFlatField)
{
  RngStream rng(7);
  Sample s;
  s.m = ParamDensity::uniform().sample(20000, rng);
  s.t = ParamDensity::uniform().sample(20000, rng);
  std::vector<double> gm{0.25, 0.5, 0.75};
  auto field = cond_density(s, 0.05, {0, 1}, 256, gm);
  auto flat = ParamDensity::uniform().tabulate(256);
  for (const auto& slice : field.slices)
    EXPECT_LT(l1_distance(slice, flat), 0.1);
}

TEST(CondDensity, TracksDependence)
{
  // t | m ~ Beta(1 + 4m, 5 - 4m)
  RngStream rng(8);
  Sample s;
  s.m = ParamDensity::uniform().sample(1000, rng);
  for (double m : s.m)
    s.t.push_back(ParamDensity::beta(1.0 + 4.0 * m, 5.0 - 4.0 * m).draw(rng));
  std::vector<double> gm{0.1};
  auto field = cond_density(s, 0.05, {0, 1}, kDefaultGridSize, gm);
  auto truth = ParamDensity::beta(1.4, 4.6).tabulate();
  EXPECT_LT(l1_distance(field.slices[0], truth), 0.25);
}

TEST(CondDensity, SparseWindowIsWidened)
{
  Sample s;
  s.m = {0.0, 0.01, 0.02, 0.9, 0.95, 1.0};
  s.t = {0.2, 0.3, 0.4, 0.6, 0.7, 0.8};
  std::vector<double> gm{0.5};
  auto field = cond_density(s, 0.1, {0, 1}, 128, gm, 0.01);
  EXPECT_TRUE(field.widened[0]);
  EXPECT_GT(field.bandwidth_m[0], 0.01);
  EXPECT_NEAR(field.slices[0].integral(), 1.0, 1e-9);
}
