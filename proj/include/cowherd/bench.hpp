#pragma once

#include "cowherd/error.hpp"
#include "cowherd/generators.hpp"
#include "cowherd/io.hpp"
#include "cowherd/optim.hpp"
#include "cowherd/rng.hpp"
#include "cowherd/special.hpp"
#include "cowherd/sweights.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <limits>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#ifndef COWHERD_VERSION
#define COWHERD_VERSION "0.1.0"
#endif

namespace cowherd {

inline constexpr const char* kVersion = COWHERD_VERSION;

//! z TN(mu, sigma) + (1 - z) TruncExp(mean) on one support.
struct ShapeFit
{
  double z = 0.5, mu = 0.5, sigma = 0.1, mean = 0.5;
  double loglik = -std::numeric_limits<double>::infinity();
  std::vector<double> trace; // log-likelihood per iteration of the chosen restart
  int iterations = 0;
  bool converged = false;
  int restart = 0; // index of the chosen restart
  std::vector<std::string> warnings;

  double rate() const { return 1.0 / mean; }
};

struct ShapeFitOptions
{
  int restarts = 5;
  int max_iter = 500;
  double tol = 1e-10; // relative change of the log-likelihood
  Support support{0.0, 1.0};
};

namespace detail {

struct ShapeParams
{
  double z, mu, sigma, rate;
};

inline double log_tn_mass(double mu, double sigma, const Support& s)
{
  const double a = (s.lo - mu) / sigma, b = (s.hi - mu) / sigma;
  const double mass = a + b > 0.0 ? norm_sf(a) - norm_sf(b) : norm_cdf(b) - norm_cdf(a);
  return std::log(mass);
}

//! log of 1 - exp(-rate w), the truncated-exponential normalizer.
inline double log_exp_mass(double rate, double width) { return std::log(-std::expm1(-rate * width)); }

//! Mean of the exponential with this rate truncated to [0, w].
inline double truncated_exp_mean(double rate, double width)
{
  const double x = rate * width;
  if (x < 1e-6)
    return width * (0.5 - x / 12.0);
  return 1.0 / rate - width / std::expm1(x);
}

inline double shape_loglik(std::span<const double> m, const ShapeParams& p, const Support& s)
{
  const double ln = log_tn_mass(p.mu, p.sigma, s), le = log_exp_mass(p.rate, s.width());
  double ll = 0.0;
  for (double x : m) {
    const double u = (x - p.mu) / p.sigma;
    const double f1 = std::exp(-0.5 * u * u - ln) / (p.sigma * std::sqrt(2.0 * M_PI));
    const double f2 = p.rate * std::exp(-p.rate * (x - s.lo) - le);
    ll += std::log(p.z * f1 + (1.0 - p.z) * f2);
  }
  return ll;
}

//! Expected complete-data log-likelihood of the normal part from weighted
//! sufficient statistics (sum r, sum r x, sum r x^2).
inline double tn_q(double mu, double sigma, double s0, double s1, double s2, const Support& s)
{
  return -s0 * (std::log(sigma) + log_tn_mass(mu, sigma, s)) -
         (s2 - 2.0 * mu * s1 + mu * mu * s0) / (2.0 * sigma * sigma);
}

inline ShapeFit run_shape_em(std::span<const double> m, ShapeParams p, const ShapeFitOptions& opt)
{
  const Support& sup = opt.support;
  const double width = sup.width();
  const double rate_lo = 1e-6 / width, rate_hi = 1e4 / width;
  ShapeFit fit;
  double ll = shape_loglik(m, p, sup);
  fit.trace.push_back(ll);
  std::vector<double> r(m.size());
  for (fit.iterations = 1; fit.iterations <= opt.max_iter; ++fit.iterations) {
    const double ln = log_tn_mass(p.mu, p.sigma, sup), le = log_exp_mass(p.rate, width);
    double s0 = 0.0, s1 = 0.0, s2 = 0.0, b0 = 0.0, b1 = 0.0;
    for (std::size_t i = 0; i < m.size(); ++i) {
      const double x = m[i];
      const double u = (x - p.mu) / p.sigma;
      const double a = p.z * std::exp(-0.5 * u * u - ln) / (p.sigma * std::sqrt(2.0 * M_PI));
      const double b = (1.0 - p.z) * p.rate * std::exp(-p.rate * (x - sup.lo) - le);
      r[i] = a + b > 0.0 ? a / (a + b) : 0.5;
      s0 += r[i];
      s1 += r[i] * x;
      s2 += r[i] * x * x;
      b0 += 1.0 - r[i];
      b1 += (1.0 - r[i]) * (x - sup.lo);
    }
    ShapeParams next = p;
    next.z = s0 / static_cast<double>(m.size());
    if (s0 > 1e-12) {
      Eigen::VectorXd x0(2), scale(2);
      x0 << p.mu, std::log(p.sigma);
      scale << 0.1 * p.sigma, 0.1;
      auto neg = [&](const Eigen::VectorXd& v) { return -tn_q(v(0), std::exp(v(1)), s0, s1, s2, sup); };
      const auto res = nelder_mead(neg, x0, scale, 400, 1e-14);
      // generalized EM: keep the old values unless the step improves Q
      if (res.value < neg(x0)) {
        next.mu = res.x(0);
        next.sigma = std::exp(res.x(1));
      }
    }
    if (b0 > 1e-12) {
      const double target = b1 / b0;
      if (target >= truncated_exp_mean(rate_lo, width))
        next.rate = rate_lo;
      else if (target <= truncated_exp_mean(rate_hi, width))
        next.rate = rate_hi;
      else
        next.rate = std::exp(bisect([&](double lr) { return truncated_exp_mean(std::exp(lr), width) - target; },
                                    std::log(rate_lo), std::log(rate_hi)));
    }
    const double ll_next = shape_loglik(m, next, sup);
    if (!(ll_next >= ll - 1e-9 * std::abs(ll))) {
      // numerical M-step went the wrong way; stop at the last good point
      fit.converged = true;
      break;
    }
    p = next;
    fit.trace.push_back(ll_next);
    const bool small = std::abs(ll_next - ll) <= opt.tol * (1.0 + std::abs(ll));
    ll = ll_next;
    if (small) {
      fit.converged = true;
      break;
    }
  }
  fit.iterations = std::min(fit.iterations, opt.max_iter);
  fit.z = p.z;
  fit.mu = p.mu;
  fit.sigma = p.sigma;
  fit.mean = 1.0 / p.rate;
  fit.loglik = ll;
  return fit;
}

} // namespace detail

//! Maximum-likelihood fit of the synthetic M model (truncated normal signal
//! plus truncated exponential background) by EM from seeded random starts;
//! the restart with the largest likelihood wins.
inline ShapeFit fit_synthetic_shapes(std::span<const double> m, std::uint64_t seed = 0, const ShapeFitOptions& opt = {})
{
  if (m.size() < 100)
    throw ValidationError("shape fit needs at least 100 observations");
  if (opt.restarts < 1 || opt.max_iter < 1)
    throw DomainError("need at least one restart and one iteration");
  for (double x : m)
    if (!opt.support.contains(x))
      throw DomainError("observation outside the fit support");
  const RngStream root(seed);
  const Support& s = opt.support;
  ShapeFit best;
  for (int k = 0; k < opt.restarts; ++k) {
    RngStream rng = root.split(static_cast<std::uint64_t>(k));
    detail::ShapeParams p;
    p.z = 0.2 + 0.6 * rng.uniform();
    p.mu = s.lo + s.width() * (0.2 + 0.6 * rng.uniform());
    p.sigma = s.width() * (0.05 + 0.25 * rng.uniform());
    p.rate = 1.0 / (s.width() * (0.2 + 0.8 * rng.uniform()));
    auto fit = detail::run_shape_em(m, p, opt);
    fit.restart = k;
    if (!fit.converged)
      fit.warnings.push_back("restart " + std::to_string(k) + " did not converge in " +
                             std::to_string(opt.max_iter) + " iterations");
    if (fit.loglik > best.loglik)
      best = std::move(fit);
  }
  return best;
}

//! generator -> method -> metrics pipeline over a list of sample sizes.
//!
//! generators: synthetic (param z), copula_toy (params rho, z)
//! methods: sweights (param normalizer unit|marginal), mixture_weights,
//!          fit_shapes; common params bandwidth, grid
struct ExperimentConfig
{
  std::string generator;
  std::vector<std::size_t> n;
  std::optional<std::uint64_t> seed;
  std::size_t reps = 1;
  std::string method;
  json params = json::object();
  std::filesystem::path out;

  static ExperimentConfig from_json(const json& j)
  {
    if (!j.is_object())
      throw ValidationError("experiment config must be a JSON object");
    static const std::set<std::string> known{"generator", "n", "seed", "reps", "method", "params", "out"};
    for (const auto& [k, v] : j.items())
      if (!known.contains(k))
        throw ValidationError("experiment config: unknown key '" + k + "'");
    ExperimentConfig c;
    try {
      if (!j.contains("generator") || !j.contains("method") || !j.contains("n"))
        throw ValidationError("experiment config needs generator, method and n");
      c.generator = j.at("generator").get<std::string>();
      c.method = j.at("method").get<std::string>();
      if (j.at("n").is_array())
        c.n = j.at("n").get<std::vector<std::size_t>>();
      else
        c.n = {j.at("n").get<std::size_t>()};
      if (j.contains("seed") && !j.at("seed").is_null())
        c.seed = j.at("seed").get<std::uint64_t>();
      c.reps = j.value("reps", std::size_t{1});
      if (j.contains("params"))
        c.params = j.at("params");
      if (j.contains("out"))
        c.out = j.at("out").get<std::string>();
    } catch (const json::exception& e) {
      throw ValidationError(std::string("experiment config: ") + e.what());
    }
    c.validate();
    return c;
  }

  void validate() const
  {
    if (!seed)
      throw ValidationError("experiment config: seed is mandatory");
    if (generator != "synthetic" && generator != "copula_toy")
      throw ValidationError("experiment config: unknown generator '" + generator + "'");
    if (method != "sweights" && method != "mixture_weights" && method != "fit_shapes")
      throw ValidationError("experiment config: unknown method '" + method + "'");
    if (n.empty() || reps < 1)
      throw ValidationError("experiment config: need at least one n and one rep");
    for (auto v : n)
      if (v < 100)
        throw ValidationError("experiment config: n must be at least 100");
    if (!params.is_object())
      throw ValidationError("experiment config: params must be an object");
  }

  //! Canonical form; the output location is not part of the experiment.
  json to_json() const
  {
    return json{{"generator", generator}, {"n", n}, {"seed", seed ? json(*seed) : json(nullptr)},
                {"reps", reps}, {"method", method}, {"params", params}};
  }

  //! FNV-1a 64 of the canonical JSON, as 16 hex digits.
  std::string hash() const
  {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : to_json().dump()) {
      h ^= ch;
      h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
  }
};

struct ExperimentResult
{
  json metrics;
  std::filesystem::path metrics_path, curves_path;

  //! Median L1 per entry of cfg.n, in order.
  std::vector<double> median_l1() const
  {
    std::vector<double> out;
    for (const auto& row : metrics.at("summary"))
      out.push_back(row.at("median_l1").get<double>());
    return out;
  }
};

namespace detail {

inline double param_or(const json& p, const char* key, double fallback)
{
  if (!p.contains(key))
    return fallback;
  if (!p.at(key).is_number())
    throw ValidationError(std::string("experiment param '") + key + "' must be a number");
  return p.at(key).get<double>();
}

inline double median_of(std::vector<double> v)
{
  std::sort(v.begin(), v.end());
  const std::size_t k = v.size();
  return k % 2 ? v[k / 2] : 0.5 * (v[k / 2 - 1] + v[k / 2]);
}

struct RunOutput
{
  json row;
  GridDensity estimate, truth;
};

inline RunOutput run_one(const ExperimentConfig& cfg, std::size_t n, std::uint64_t data_seed)
{
  const auto& p = cfg.params;
  const double z = param_or(p, "z", 0.5);
  const auto cells = static_cast<std::size_t>(param_or(p, "grid", 512));
  if (cells < 16)
    throw ValidationError("experiment param 'grid' must be at least 16");
  Sample s = cfg.generator == "synthetic" ? gen_synthetic_mixture(n, z, data_seed)
                                          : gen_copula_toy(n, param_or(p, "rho", 0.7), data_seed, z);
  SyntheticShapes sh;
  RunOutput out;
  out.row = json{{"n", n}, {"seed", data_seed}};
  if (cfg.method == "fit_shapes") {
    const auto f = fit_synthetic_shapes(s.m, data_seed);
    out.truth = sh.g1.tabulate(cells);
    out.estimate = ParamDensity::truncated_normal(f.mu, f.sigma, kSyntheticSupportM).tabulate(cells);
    out.row["z"] = f.z;
    out.row["mu"] = f.mu;
    out.row["sigma"] = f.sigma;
    out.row["mean"] = f.mean;
    out.row["converged"] = f.converged;
  } else {
    BasisSet basis({sh.g1.tabulate(cells), sh.g2.tabulate(cells)}, 1, 1);
    const std::string norm = p.value("normalizer", std::string("unit"));
    if (norm != "unit" && norm != "marginal")
      throw ValidationError("experiment param 'normalizer' must be unit or marginal");
    const auto ws = make_weights(basis, norm == "marginal" ? std::optional(marginal_normalizer(s.m, basis))
                                                           : std::nullopt);
    const double zhat = estimate_z(ws, s)[0];
    std::vector<double> w(s.size());
    if (cfg.method == "sweights") {
      w = signal_weights_of(ws, s);
    } else {
      const double zc = std::clamp(zhat, 1e-6, 1.0 - 1e-6);
      const std::vector<double> zz{zc, 1.0 - zc};
      const auto wp = mixture_weights(zz, basis);
      for (std::size_t i = 0; i < s.size(); ++i)
        w[i] = wp[0](s.m[i]);
    }
    const double bw = param_or(p, "bandwidth", 0.05);
    KdeOptions ko;
    ko.grid_size = cells;
    auto est = kde(s.t, w, bw, kSyntheticSupportT, ko).as_signed();
    const double mass = est.integral();
    if (!(mass > 0.0))
      throw DegenerateError("extracted signal has no positive mass");
    out.estimate = est.scaled(1.0 / mass);
    out.truth = sh.h1.tabulate(cells);
    out.row["z_hat"] = zhat;
  }
  out.row["l1"] = l1_distance(out.estimate, out.truth);
  return out;
}

} // namespace detail

//! Runs every (n, rep) pair, then writes metrics.json and curves.csv under
//! cfg.out when it is set.  Outputs carry the config hash and the library
//! version and nothing run-dependent, so reruns are byte-identical.
inline ExperimentResult run_experiment(const ExperimentConfig& cfg)
{
  cfg.validate();
  const RngStream root(*cfg.seed);
  json rows = json::array(), summary = json::array();
  std::ostringstream curves;
  curves << "n,rep,x,estimate,truth\n";
  for (std::size_t a = 0; a < cfg.n.size(); ++a) {
    std::vector<double> l1;
    for (std::size_t r = 0; r < cfg.reps; ++r) {
      RngStream child = root.split(a * cfg.reps + r);
      const std::uint64_t data_seed = child.next_u64();
      auto res = detail::run_one(cfg, cfg.n[a], data_seed);
      res.row["rep"] = r;
      l1.push_back(res.row.at("l1").get<double>());
      rows.push_back(res.row);
      for (std::size_t c = 0; c < res.estimate.size(); ++c)
        curves << cfg.n[a] << ',' << r << ',' << format_double(res.estimate.midpoint(c)) << ','
               << format_double(res.estimate[c]) << ',' << format_double(res.truth[c]) << '\n';
    }
    summary.push_back(json{{"n", cfg.n[a]}, {"median_l1", detail::median_of(l1)}, {"reps", cfg.reps}});
  }
  ExperimentResult out;
  out.metrics = json{{"version", kVersion}, {"config_hash", cfg.hash()}, {"config", cfg.to_json()},
                     {"runs", rows}, {"summary", summary}};
  if (!cfg.out.empty()) {
    out.metrics_path = cfg.out / "metrics.json";
    out.curves_path = cfg.out / "curves.csv";
    write_json(out.metrics_path, out.metrics);
    auto f = detail::open_out(out.curves_path);
    f << "# config_hash " << cfg.hash() << " version " << kVersion << '\n' << curves.str();
  }
  return out;
}

} // namespace cowherd
