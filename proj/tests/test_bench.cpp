#include "cowherd/bench.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace cowherd;

namespace {

std::string slurp(const std::filesystem::path& p)
{
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

std::filesystem::path scratch(const std::string& name)
{
  auto p = std::filesystem::temp_directory_path() / ("cowherd_test_bench_" + name);
  std::filesystem::remove_all(p);
  return p;
}

} // namespace

TEST(FitShapes, RecoversSyntheticParameters)
{
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto s = gen_synthetic(2000, 2000, seed);
    auto f = fit_synthetic_shapes(s.m, seed);
    EXPECT_TRUE(f.converged);
    EXPECT_NEAR(f.z, 0.5, 0.04);
    EXPECT_NEAR(f.mu, 0.5, 0.01);
    EXPECT_NEAR(f.sigma, 0.1, 0.01);
    EXPECT_NEAR(f.mean, 0.5, 0.15);
  }
}

TEST(FitShapes, LikelihoodNondecreasing)
{
  auto s = gen_synthetic(1500, 2500, 21);
  ShapeFitOptions o;
  o.restarts = 1;
  auto f = fit_synthetic_shapes(s.m, 3, o);
  ASSERT_GT(f.trace.size(), 2u);
  for (std::size_t i = 1; i < f.trace.size(); ++i)
    EXPECT_GE(f.trace[i], f.trace[i - 1] - 1e-9 * std::abs(f.trace[i - 1]));
  EXPECT_DOUBLE_EQ(f.trace.back(), f.loglik);
}

TEST(FitShapes, PureSignalGivesFullFraction)
{
  auto s = gen_synthetic(4000, 0, 5);
  auto f = fit_synthetic_shapes(s.m, 1);
  EXPECT_GT(f.z, 0.98);
  EXPECT_NEAR(f.mu, 0.5, 0.01);
}

TEST(FitShapes, BestRestartWins)
{
  auto s = gen_synthetic(2000, 2000, 8);
  ShapeFitOptions one;
  one.restarts = 1;
  auto a = fit_synthetic_shapes(s.m, 4, one);
  auto b = fit_synthetic_shapes(s.m, 4);
  EXPECT_GE(b.loglik, a.loglik);
}

TEST(FitShapes, NonConvergenceIsFlagged)
{
  auto s = gen_synthetic(2000, 2000, 9);
  ShapeFitOptions o;
  o.max_iter = 2;
  auto f = fit_synthetic_shapes(s.m, 1, o);
  EXPECT_FALSE(f.converged);
  EXPECT_FALSE(f.warnings.empty());
  EXPECT_TRUE(std::isfinite(f.loglik));
}

TEST(FitShapes, Errors)
{
  std::vector<double> few(50, 0.5);
  EXPECT_THROW(fit_synthetic_shapes(few), ValidationError);
  std::vector<double> out(200, 0.5);
  out[3] = 1.5;
  EXPECT_THROW(fit_synthetic_shapes(out), DomainError);
}

TEST(Experiment, MissingSeedIsValidationError)
{
  json j{{"generator", "synthetic"}, {"method", "sweights"}, {"n", 1000}};
  EXPECT_THROW(ExperimentConfig::from_json(j), ValidationError);
  j["seed"] = 3;
  EXPECT_NO_THROW(ExperimentConfig::from_json(j));
}

TEST(Experiment, SchemaViolations)
{
  json base{{"generator", "synthetic"}, {"method", "sweights"}, {"n", 1000}, {"seed", 1}};
  auto bad = base;
  bad["generator"] = "nope";
  EXPECT_THROW(ExperimentConfig::from_json(bad), ValidationError);
  bad = base;
  bad["method"] = "nope";
  EXPECT_THROW(ExperimentConfig::from_json(bad), ValidationError);
  bad = base;
  bad["extra"] = 1;
  EXPECT_THROW(ExperimentConfig::from_json(bad), ValidationError);
  bad = base;
  bad["n"] = "many";
  EXPECT_THROW(ExperimentConfig::from_json(bad), ValidationError);
  bad = base;
  bad["params"] = json{{"bandwidth", "wide"}};
  EXPECT_THROW(run_experiment(ExperimentConfig::from_json(bad)), ValidationError);
}

TEST(Experiment, HashIgnoresOutputButNotContent)
{
  json j{{"generator", "synthetic"}, {"method", "sweights"}, {"n", {1000, 2000}}, {"seed", 1}};
  auto a = ExperimentConfig::from_json(j);
  j["out"] = "/tmp/x";
  auto b = ExperimentConfig::from_json(j);
  EXPECT_EQ(a.hash(), b.hash());
  j["seed"] = 2;
  EXPECT_NE(ExperimentConfig::from_json(j).hash(), a.hash());
  EXPECT_EQ(a.hash().size(), 16u);
}

TEST(Experiment, ByteIdenticalReruns)
{
  json j{{"generator", "synthetic"}, {"method", "mixture_weights"}, {"n", {500, 1000}}, {"seed", 11}, {"reps", 2}};
  auto c = ExperimentConfig::from_json(j);
  c.out = scratch("a");
  auto r1 = run_experiment(c);
  const auto m1 = slurp(r1.metrics_path), c1 = slurp(r1.curves_path);
  c.out = scratch("b");
  auto r2 = run_experiment(c);
  EXPECT_EQ(m1, slurp(r2.metrics_path));
  EXPECT_EQ(c1, slurp(r2.curves_path));
  EXPECT_NE(m1.find(c.hash()), std::string::npos);
  EXPECT_NE(m1.find(kVersion), std::string::npos);
  EXPECT_EQ(c1.find('\r'), std::string::npos);
  auto back = read_json(r1.metrics_path);
  EXPECT_EQ(back.at("config_hash").get<std::string>(), c.hash());
  EXPECT_EQ(back.at("runs").size(), 4u);
}

TEST(Experiment, MedianL1DecreasesWithN)
{
  json j{{"generator", "synthetic"}, {"method", "sweights"}, {"n", {1000, 2000, 4000}}, {"seed", 5}, {"reps", 15}};
  auto med = run_experiment(ExperimentConfig::from_json(j)).median_l1();
  ASSERT_EQ(med.size(), 3u);
  EXPECT_GT(med[0], med[1]);
  EXPECT_GT(med[1], med[2]);
}

TEST(Experiment, FitShapesMethod)
{
  json j{{"generator", "synthetic"}, {"method", "fit_shapes"}, {"n", 2000}, {"seed", 2}};
  auto r = run_experiment(ExperimentConfig::from_json(j));
  const auto& row = r.metrics.at("runs").at(0);
  EXPECT_NEAR(row.at("mu").get<double>(), 0.5, 0.02);
  EXPECT_LT(row.at("l1").get<double>(), 0.2);
}
