#include "cowherd/cowherd.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

using namespace cowherd;
namespace fs = std::filesystem;

namespace {

// 99% quantile of the 30-bin chi-square of the sWeights extraction, from
// 1000 simulated samples (seeds 10000..10999) of the same model.
constexpr double kChi2Envelope99 = 52.226;

struct Outcome
{
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args)
{
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double median(std::vector<double> v)
{
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2), v.end());
  return v[v.size() / 2];
}

BasisSet synthetic_basis()
{
  return BasisSet(synthetic_model(0.5).g, 1, 1);
}

GridDensity binned_truth(const ParamDensity& d, std::size_t bins)
{
  const auto& s = d.support();
  std::vector<double> v(bins);
  const double w = s.width() / bins;
  for (std::size_t i = 0; i < bins; ++i)
    v[i] = (d.cdf(s.lo + (i + 1) * w) - d.cdf(s.lo + i * w)) / w;
  return GridDensity(s, std::move(v));
}

std::vector<double> weights_at(const GridDensity& w, const Sample& s)
{
  std::vector<double> out(s.size());
  for (std::size_t i = 0; i < s.size(); ++i)
    out[i] = w(s.m[i]);
  return out;
}

// L1 between a binned yield scaled by 1/norm and the bin masses of h.
double yield_l1(const BinnedYield& y, double norm, const GridDensity& h)
{
  auto expect = expected_yield(y.edges, 1.0, h);
  double acc = 0.0;
  for (std::size_t b = 0; b < expect.size(); ++b)
    acc += std::abs(y.yield[b] / norm - expect[b]);
  return acc;
}

Outcome orthogonality()
{
  auto basis = synthetic_basis();
  auto s = gen_synthetic(2000, 2000, 1);
  std::vector<double> ones(s.size(), 1.0);
  auto p_hat = kde(s.m, ones, silverman_bandwidth(s.m), kSyntheticSupportM);
  double worst = 0.0;
  for (const auto& ws : {make_weights(basis), make_weights(basis, p_hat.as_signed())})
    for (std::size_t j = 0; j < 2; ++j)
      for (std::size_t k = 0; k < 2; ++k)
        worst = std::max(worst, std::abs(inner(ws.w[j], basis.g[k]) - (j == k ? 1.0 : 0.0)));
  return {worst < 1e-6, fmt("max |int w_j g_k - delta_jk| = %.2e", worst)};
}

Outcome ls_identity()
{
  auto P = hist2d(gen_synthetic(2000, 2000, 3), 15, 15, kSyntheticSupportM, kSyntheticSupportT);
  auto fit = ls_cows_binned(P, synthetic_basis());
  const Eigen::MatrixXd W = fit.G * (fit.G.transpose() * fit.G).inverse();
  const Eigen::MatrixXd H = (W.transpose() * P.counts).transpose();
  const double dw = (fit.W - W).cwiseAbs().maxCoeff();
  const double dh = (fit.H - H).cwiseAbs().maxCoeff();
  return {dw < 1e-10 && dh < 1e-10, fmt("max |W - G(G'G)^-1| = %.2e, max |H - W'P| = %.2e", dw, dh)};
}

Outcome sweights_extraction()
{
  auto ws = make_weights(synthetic_basis(), synthetic_model(0.5).marginal_m().as_signed());
  auto h1 = SyntheticShapes{}.h1.tabulate();
  int inside = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    auto y = extract_signal_binned(ws, gen_synthetic(2000, 2000, seed), kSyntheticSupportT, 30);
    auto expect = expected_yield(y.edges, 2000.0, h1);
    double chi2 = 0.0;
    for (std::size_t b = 0; b < 30; ++b)
      if (y.error[b] > 0.0)
        chi2 += std::pow((y.yield[b] - expect[b]) / y.error[b], 2);
    inside += chi2 <= kChi2Envelope99;
  }
  return {inside >= 95, fmt("%d/100 seeds inside the chi2 envelope %.3f", inside, kChi2Envelope99)};
}

Outcome mixture_weight_bias()
{
  auto basis = synthetic_basis();
  auto ws = make_weights(basis, synthetic_model(0.5).marginal_m().as_signed());
  auto mw = mixture_weights(std::vector<double>{0.5, 0.5}, basis);
  auto h1 = SyntheticShapes{}.h1.tabulate();
  std::vector<double> biased, unbiased;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto s = gen_synthetic(2000, 2000, seed);
    const double n = static_cast<double>(s.size());
    biased.push_back(yield_l1(extract_signal_binned(weights_at(mw[0], s), s, kSyntheticSupportT, 5), n, h1.scaled(0.5)));
    unbiased.push_back(yield_l1(extract_signal_binned(ws, s, kSyntheticSupportT, 5), n, h1.scaled(0.5)));
  }
  const double b = median(biased), u = median(unbiased);
  return {b >= 5.0 * u, fmt("median L1 w' %.4f, sWeights %.4f, ratio %.2f (5 bins)", b, u, b / u)};
}

Outcome copula_contrast()
{
  auto model = synthetic_model(0.5);
  auto basis = synthetic_basis();
  auto ws = make_weights(basis, model.marginal_m().as_signed());
  auto mw = mixture_weights(std::vector<double>{0.5, 0.5}, basis);
  auto oracle = copula_toy_signal_oracle(0.7, model.marginal_m(), model.marginal_t(), model.g[0]);
  auto h1 = SyntheticShapes{}.h1.tabulate();
  std::vector<double> lw, lc;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto s = gen_copula_toy(4000, 0.7, seed);
    const double nz = 0.5 * static_cast<double>(s.size());
    lw.push_back(yield_l1(extract_signal_binned(weights_at(mw[0], s), s, kSyntheticSupportT, 30), nz, oracle));
    lc.push_back(yield_l1(extract_signal_binned(ws, s, kSyntheticSupportT, 30), nz, h1));
  }
  const double w = median(lw), c = median(lc);
  return {w < 0.1 && c > 0.1, fmt("median L1 w' vs oracle %.4f, COWs vs h1 %.4f", w, c)};
}

Outcome nmf_recovery()
{
  SyntheticShapes sh;
  auto g1 = binned_truth(sh.g1, 15), g2 = binned_truth(sh.g2, 15);
  auto h1 = binned_truth(sh.h1, 15), h2 = binned_truth(sh.h2, 15);
  int good = 0, monotone = 0;
  for (std::uint64_t seed = 0; seed < 25; ++seed) {
    auto P = hist2d(gen_synthetic(2000, 2000, seed), 15, 15, kSyntheticSupportM, kSyntheticSupportT);
    auto res = nmf(P.counts, 2, seed);
    bool mono = true;
    for (std::size_t i = 1; i < res.residual.size(); ++i)
      mono = mono && res.residual[i] <= res.residual[i - 1] + 1e-13 * P.counts.norm();
    monotone += mono;
    auto mix = normalize_to_mixture(res, kSyntheticSupportM, kSyntheticSupportT);
    const double worst = std::max({l1_distance(mix.g1, g1), l1_distance(mix.g2, g2), l1_distance(mix.h1, h1),
                                   l1_distance(mix.h2, h2)});
    good += worst < 0.25;
  }
  return {good >= 20 && monotone == 25, fmt("%d/25 seeds recover all factors, %d/25 monotone traces", good, monotone)};
}

Outcome copula_em()
{
  SyntheticShapes sh;
  auto g1 = sh.g1.tabulate(), g2 = sh.g2.tabulate();
  CopulaFitOptions opt;
  opt.support_t = kSyntheticSupportT;
  int good = 0;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    auto fit = fit_copula_mixture(gen_copula_mixture(4000, 0.5, 0.6, -0.3, seed), g1, g2, opt);
    good += std::abs(fit.z - 0.5) <= 0.05 && std::abs(fit.rho1() - 0.6) <= 0.07 && std::abs(fit.rho2() + 0.3) <= 0.07;
  }
  return {good >= 45, fmt("%d/50 seeds within tolerance", good)};
}

Outcome geodesic()
{
  QuantileFn f = norm_quantile;
  QuantileFn g = [](double u) { return 2.0 + norm_quantile(u); };
  auto mid = wasserstein_geodesic_quantile(f, g, 0.5);
  auto q0 = wasserstein_geodesic_quantile(f, g, 0.0);
  auto q1 = wasserstein_geodesic_quantile(f, g, 1.0);
  double worst = 0.0;
  bool ends = true;
  for (double u : u_grid()) {
    worst = std::max(worst, std::abs(mid(u) - (1.0 + norm_quantile(u))));
    ends = ends && q0(u) == f(u) && q1(u) == g(u);
  }
  return {worst < 1e-10 && ends, fmt("midpoint error %.2e, endpoints %s", worst, ends ? "exact" : "inexact")};
}

Outcome ot_extraction()
{
  auto truth = ParamDensity::beta(3, 3).tabulate(512);
  auto bm = ParamDensity::uniform().tabulate();
  OTOptions opt;
  opt.bandwidth_t = 0.05;
  int good = 0;
  for (std::uint64_t seed = 0; seed < 50; ++seed)
    good += l1_distance(extract_localized(gen_ot_example(1000, seed), 0.4, 0.6, bm, 0.5, opt).signal.s_t, truth) < 0.25;
  return {good >= 40, fmt("%d/50 seeds with L1 < 0.25", good)};
}

Outcome bounds_family()
{
  double worst = 0.0, identity = 0.0;
  std::size_t feasible = 0;
  const auto grid = theta_grid();
  for (int which : {1, 2}) {
    auto m = bounds_example_model(which);
    BoundsInputs in{m.z[0], m.g[0], m.g[1], m.h[0], m.h[1]};
    auto scan = feasible_region(in, grid, grid);
    for (Eigen::Index i = 0; i < scan.mask.rows(); ++i)
      for (Eigen::Index j = 0; j < scan.mask.cols(); ++j)
        if (scan.mask(i, j) != 0) {
          auto d = family_member(in, scan.alphas[static_cast<std::size_t>(i)], scan.betas[static_cast<std::size_t>(j)]);
          worst = std::max(worst, reconstruction_residual(in, d));
          ++feasible;
        }
    auto d = family_member(in, std::sqrt((1 - in.z) / in.z), -std::sqrt(in.z / (1 - in.z)));
    identity = std::max({identity, std::abs(d.z - in.z), sup_distance(d.g1, in.g1.as_signed()),
                         sup_distance(d.g2, in.g2.as_signed()), sup_distance(d.h1, in.h1.as_signed()),
                         sup_distance(d.h2, in.h2.as_signed())});
  }
  auto m1 = bounds_example_model(1), m2 = bounds_example_model(2);
  const double w1 = envelope({m1.z[0], m1.g[0], m1.g[1], m1.h[0], m1.h[1]}).max_width();
  const double w2 = envelope({m2.z[0], m2.g[0], m2.g[1], m2.h[0], m2.h[1]}).max_width();
  return {feasible > 0 && worst < 1e-6 && identity < 1e-10 && w1 < w2,
          fmt("%zu feasible pairs, max residual %.2e, identity error %.2e, max width %.3f vs %.3f", feasible, worst,
              identity, w1, w2)};
}

Outcome condind_cycle()
{
  auto f1 = ParamDensity::beta(8, 2).tabulate(512), f2 = ParamDensity::beta(2, 8).tabulate(512);
  CondIndOptions opt;
  opt.sweeps = 3;
  opt.supports.assign(3, Support{0.0, 1.0});
  int good = 0;
  double bio = 0.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto m = cycle_fit(gen_condind(3000, seed).x, 2, {}, opt);
    for (double b : m.biorthogonality)
      bio = std::max(bio, b);
    double as_is = 0.0, swapped = 0.0;
    for (const auto& fr : m.f) {
      as_is = std::max({as_is, l1_distance(fr[0], f1), l1_distance(fr[1], f2)});
      swapped = std::max({swapped, l1_distance(fr[0], f2), l1_distance(fr[1], f1)});
    }
    good += std::min(as_is, swapped) < 0.15;
  }
  return {good >= 16 && bio < 1e-6, fmt("%d/20 seeds with L1 < 0.15, max biorthogonality error %.2e", good, bio)};
}

Outcome optimal_weight_check()
{
  auto model = synthetic_model(0.5);
  TargetFn f = [](double t) { return t; };
  auto pr = make_problem(model, f);
  auto ow = optimal_weight(pr);
  auto splot = make_weights(synthetic_basis(), GridDensity(model.g[0].support(), pr.p_m.values(), false));
  const double opt = asymptotic_variance(ow.w, pr);
  const double sp = asymptotic_variance(splot.w[0], pr);
  const std::size_t n = 100000;
  const int reps = 1000;
  double s1 = 0.0, s2 = 0.0;
  for (int r = 0; r < reps; ++r) {
    const double e = ratio_estimate(gen_synthetic_mixture(n, 0.5, 50000 + static_cast<std::uint64_t>(r)), ow.w, f);
    s1 += e;
    s2 += e * e;
  }
  const double mean = s1 / reps;
  const double mc = static_cast<double>(n) * (s2 - reps * mean * mean) / (reps - 1);
  return {ow.stationarity < 1e-8 && opt <= sp && std::abs(mc / opt - 1.0) <= 0.1,
          fmt("stationarity %.2e, sigma2 opt %.4f vs sPlot %.4f, MC/asymptotic %.3f", ow.stationarity, opt, sp, mc / opt)};
}

Outcome gof()
{
  auto basis = synthetic_basis();
  GofOptions opt;
  opt.support_t = kSyntheticSupportT;
  opt.B = 99;
  SyntheticShapes alt;
  alt.g1 = ParamDensity::beta(2, 2);
  int null_rej = 0, alt_rej = 0;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    null_rej += gof_test(gen_synthetic_mixture(4000, 0.5, seed), basis, 500 + seed, opt).p_value <= 0.05;
    alt_rej += gof_test(gen_synthetic_mixture(4000, 0.5, seed, alt), basis, 500 + seed, opt).p_value <= 0.05;
  }
  return {null_rej <= 7 && alt_rej >= 40, fmt("null rejections %d/50, power %d/50", null_rej, alt_rej)};
}

Outcome band()
{
  auto ws = make_weights(synthetic_basis());
  auto h1 = SyntheticShapes{}.h1.tabulate(512);
  BandOptions opt;
  opt.support_t = kSyntheticSupportT;
  int covered = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed)
    covered += bootstrap_band(gen_synthetic_mixture(4000, 0.5, seed), ws, 0.05, 299, 0.1, 1000 + seed, opt).covers(h1);
  return {covered >= 85, fmt("%d/100 seeds covered", covered)};
}

std::string slurp(const fs::path& p)
{
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

bool run_script(const fs::path& dir, const std::vector<std::string>& lines, std::string& failed)
{
  fs::remove_all(dir);
  fs::create_directories(dir);
  std::ofstream(dir / "g1.json") << R"({"family":"truncnormal","a":0.5,"b":0.1})";
  std::ofstream(dir / "g2.json") << R"({"family":"truncexp","a":0.5})";
  std::ofstream(dir / "cfg.json") << R"({"generator":"synthetic","method":"sweights","n":[1000,2000],"seed":3,"reps":2})";
  for (const auto& l : lines) {
    const std::string cmd = "cd '" + dir.string() + "' && '" COWHERD_CLI "' " + l + " > /dev/null 2>&1";
    if (std::system(cmd.c_str()) != 0) {
      failed = l;
      return false;
    }
  }
  return true;
}

Outcome cli_determinism()
{
  const std::vector<std::string> lines = {
    "generate --model synthetic --seed 1 --out g",
    "generate --model copula-toy --n 2000 --seed 4 --out ct",
    "generate --model ot --n 1000 --seed 4 --out ot",
    "generate --model bounds1 --n 2000 --seed 3 --out b1",
    "generate --model condind --n 1500 --seed 2 --out ci",
    "sweights --basis synthetic --data g/sample.csv --I marginal --support-t 0,1.5 --out sw",
    "cows-ls --mode binned --data g/sample.csv --support-m 0,1 --support-t 0,1.5 --out cl",
    "cows-ls --mode unbinned --data g/sample.csv --support-t 0,1.5 --grid-t 64 --out clu",
    "nmf --data b1/sample.csv --seed 5 --out nm",
    "copula-fit --g1 g1.json --g2 g2.json --data ct/sample.csv --support-t 0,1.5 --out cf",
    "ot-extract --data ot/sample.csv --window 0.4,0.6 --z 0.5 --h 0.05 --out ox",
    "bounds --data b1/sample.csv --seed 6 --out bd",
    "condind --data ci/matrix.csv --k 2 --sweeps 3 --support 0,1 --out cd",
    "optw --model synthetic --target t --data g/sample.csv --out ow",
    "gof --data g/sample.csv --support-t 0,1.5 --seed 7 --out gf",
    "band --data g/sample.csv --support-t 0,1.5 --seed 8 --out bn",
    "run --config cfg.json --out rn",
  };
  const fs::path root = fs::path(COWHERD_SCRATCH);
  std::string failed;
  if (!run_script(root / "a", lines, failed) || !run_script(root / "b", lines, failed))
    return {false, "verb failed: " + failed};
  std::size_t files = 0;
  std::vector<std::string> differ;
  for (const auto& e : fs::recursive_directory_iterator(root / "a")) {
    if (!e.is_regular_file())
      continue;
    const auto rel = fs::relative(e.path(), root / "a");
    ++files;
    if (!fs::exists(root / "b" / rel) || slurp(e.path()) != slurp(root / "b" / rel))
      differ.push_back(rel.string());
  }
  std::string detail = fmt("%zu verbs, %zu files, %zu differ", lines.size(), files, differ.size());
  for (const auto& d : differ)
    detail += " " + d;
  return {differ.empty() && files > lines.size(), detail};
}

} // namespace

int main(int argc, char** argv)
{
  struct Criterion
  {
    const char* name;
    double limit_s;
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> all = {
    {"orthogonality", 1, orthogonality},
    {"least-squares weight-matrix identity", 1, ls_identity},
    {"sWeights extraction", 120, sweights_extraction},
    {"mixture-weighting bias", 60, mixture_weight_bias},
    {"copula-toy contrast", 120, copula_contrast},
    {"NMF recovery", 60, nmf_recovery},
    {"copula-mixture EM", 300, copula_em},
    {"OT geodesic exactness", 1, geodesic},
    {"OT localized extraction", 180, ot_extraction},
    {"bounds family", 120, bounds_family},
    {"conditional-independence cycle", 120, condind_cycle},
    {"optimal weight", 180, optimal_weight_check},
    {"goodness-of-fit calibration and power", 600, gof},
    {"bootstrap band", 600, band},
    {"CLI determinism", 60, cli_determinism},
  };
  std::vector<std::size_t> chosen;
  for (int a = 1; a < argc; ++a)
    chosen.push_back(static_cast<std::size_t>(std::atoi(argv[a])));
  int failures = 0, ran = 0;
  for (std::size_t i = 0; i < all.size(); ++i) {
    if (!chosen.empty() && std::find(chosen.begin(), chosen.end(), i + 1) == chosen.end())
      continue;
    ++ran;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = all[i].run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool pass = o.pass && secs < all[i].limit_s;
    failures += !pass;
    std::printf("%s %2zu %s: %s (%.1f s, limit %.0f s)\n", pass ? "PASS" : "FAIL", i + 1, all[i].name, o.detail.c_str(),
                secs, all[i].limit_s);
    std::fflush(stdout);
  }
  std::printf("%d of %d criteria failed\n", failures, ran);
  return failures == 0 ? 0 : 1;
}
