#include "cowherd/cowherd.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

using namespace cowherd;
namespace fs = std::filesystem;

namespace {

constexpr int kExitValidation = 2;
constexpr int kExitNumerical = 3;

struct Pair
{
  double a = 0.0, b = 0.0;
};

Pair parse_pair(const std::string& s, const std::string& what)
{
  const auto comma = s.find(',');
  if (comma == std::string::npos)
    throw ValidationError(what + " must be two numbers separated by a comma");
  return {parse_double(std::string_view(s).substr(0, comma), what),
          parse_double(std::string_view(s).substr(comma + 1), what)};
}

std::optional<Support> parse_support(const std::string& s, const std::string& what)
{
  if (s.empty())
    return std::nullopt;
  const auto p = parse_pair(s, what);
  return Support(p.a, p.b);
}

json support_json(const Support& s) { return json{s.lo, s.hi}; }

BasisSet synthetic_basis(std::size_t cells)
{
  SyntheticShapes sh;
  return BasisSet({sh.g1.tabulate(cells).clipped_normalized(), sh.g2.tabulate(cells).clipped_normalized()}, 1, 1);
}

BasisSet load_basis(const std::string& path, std::size_t cells)
{
  if (path.empty() || path == "synthetic")
    return synthetic_basis(cells);
  return basis_from_json(read_json(path));
}

GridDensity load_density(const std::string& path, const Support& grid, std::size_t cells)
{
  return density_from_json(read_json(path), grid, cells);
}

void write_text(const fs::path& p, const std::string& text)
{
  auto f = detail::open_out(p);
  f << text;
}

void write_rows_csv(const fs::path& p, const std::string& header, const std::vector<std::vector<double>>& cols)
{
  std::ostringstream os;
  os << header << '\n';
  for (std::size_t i = 0; i < cols.front().size(); ++i) {
    for (std::size_t c = 0; c < cols.size(); ++c)
      os << (c ? "," : "") << format_double(cols[c][i]);
    os << '\n';
  }
  write_text(p, os.str());
}

json weightset_json(const WeightSet& ws)
{
  json w = json::array();
  for (const auto& f : ws.w)
    w.push_back(grid_to_json(f));
  return json{{"s", ws.s}, {"C", matrix_to_json(ws.C)}, {"A", matrix_to_json(ws.A)},
              {"normalizer", grid_to_json(ws.normalizer)}, {"weights", w}};
}

// ---- verbs

struct GenerateArgs
{
  std::string model = "synthetic";
  std::size_t n = 4000, n_signal = 2000, n_background = 2000;
  double z = 0.5, rho = 0.7, rho1 = 0.6, rho2 = -0.3;
  std::uint64_t seed = 0;
  std::string out;
};

void run_generate(const GenerateArgs& a)
{
  const fs::path out(a.out);
  if (a.model == "condind") {
    auto lm = gen_condind(a.n, a.seed);
    write_matrix_csv(out / "matrix.csv", lm.x);
    std::ostringstream os;
    os << "label\n";
    for (int l : lm.label)
      os << l << '\n';
    write_text(out / "labels.csv", os.str());
    return;
  }
  Sample s;
  if (a.model == "synthetic")
    s = gen_synthetic(a.n_signal, a.n_background, a.seed);
  else if (a.model == "synthetic-mixture")
    s = gen_synthetic_mixture(a.n, a.z, a.seed);
  else if (a.model == "copula-toy")
    s = gen_copula_toy(a.n, a.rho, a.seed, a.z);
  else if (a.model == "ot")
    s = gen_ot_example(a.n, a.seed, a.z);
  else if (a.model == "bounds1")
    s = gen_bounds_examples(1, a.n, a.seed);
  else if (a.model == "bounds2")
    s = gen_bounds_examples(2, a.n, a.seed);
  else if (a.model == "copula-mixture")
    s = gen_copula_mixture(a.n, a.z, a.rho1, a.rho2, a.seed);
  else
    throw ValidationError("unknown model '" + a.model + "'");
  write_sample_csv(out / "sample.csv", s);
}

struct SweightsArgs
{
  std::string basis, data, I = "unit", out, support_t;
  std::size_t cells = 512, bins = 30;
};

void run_sweights(const SweightsArgs& a)
{
  const auto basis = load_basis(a.basis, a.cells);
  const auto s = read_sample_csv(fs::path(a.data));
  if (a.I != "unit" && a.I != "marginal")
    throw ValidationError("--I must be unit or marginal");
  const auto ws = make_weights(basis, a.I == "marginal" ? std::optional(marginal_normalizer(s.m, basis)) : std::nullopt);
  auto j = weightset_json(ws);
  j["I"] = a.I;
  j["z_hat"] = estimate_z(ws, s);
  j["orthogonality_error"] = [&] {
    double e = 0.0;
    for (std::size_t r = 0; r < ws.w.size(); ++r)
      for (std::size_t k = 0; k < basis.size(); ++k)
        e = std::max(e, std::abs(inner(ws.w[r], basis.g[k]) - (r == k ? 1.0 : 0.0)));
    return e;
  }();
  write_json(fs::path(a.out) / "weights.json", j);
  const Support st = a.support_t.empty() ? detail::sample_range(s.t) : *parse_support(a.support_t, "--support-t");
  const auto y = extract_signal_binned(ws, s, st, a.bins);
  std::vector<double> lo(y.edges.begin(), y.edges.end() - 1), hi(y.edges.begin() + 1, y.edges.end());
  write_rows_csv(fs::path(a.out) / "yield.csv", "t_lo,t_hi,yield,error", {lo, hi, y.yield, y.error});
}

struct CowsArgs
{
  std::string mode = "binned", basis, data, hist, out, support_m, support_t;
  std::size_t cells = 512, bins_m = 15, bins_t = 15, grid_t = 128;
  double bw_m = 0.0, bw_t = 0.0;
};

void run_cows(const CowsArgs& a)
{
  const auto basis = load_basis(a.basis, a.cells);
  const fs::path out(a.out);
  if (a.mode == "binned") {
    Hist2D P;
    if (!a.hist.empty()) {
      P = read_hist_csv(fs::path(a.hist));
    } else {
      const auto s = read_sample_csv(fs::path(a.data));
      P = hist2d(s, a.bins_m, a.bins_t, parse_support(a.support_m, "--support-m"),
                 parse_support(a.support_t, "--support-t"));
    }
    const auto fit = ls_cows_binned(P, basis);
    write_grid(out / "signal", fit.signal_density());
    write_json(out / "fit.json", json{{"mode", "binned"}, {"H", matrix_to_json(fit.H)}, {"W", matrix_to_json(fit.W)},
                                      {"edges_m", fit.edges_m}, {"edges_t", fit.edges_t},
                                      {"s_hat", std::vector<double>(fit.s_hat.data(), fit.s_hat.data() + fit.s_hat.size())}});
    return;
  }
  if (a.mode != "unbinned")
    throw ValidationError("--mode must be binned or unbinned");
  const auto s = read_sample_csv(fs::path(a.data));
  const Support sm = basis.support();
  const Support st = a.support_t.empty() ? detail::sample_range(s.t) : *parse_support(a.support_t, "--support-t");
  ProductKde2D p_hat(s, a.bw_m > 0.0 ? a.bw_m : silverman_bandwidth(s.m), a.bw_t > 0.0 ? a.bw_t : silverman_bandwidth(s.t),
                     sm, st);
  const auto fit = ls_cows_unbinned(p_hat, s, basis, a.grid_t);
  write_grid(out / "signal", fit.s_hat);
  write_grid(out / "signal_raw", fit.s_raw);
}

struct NmfArgs
{
  std::string hist, data, out, support_m, support_t;
  std::size_t rank = 2, bins_m = 15, bins_t = 15;
  int iters = 2000;
  std::uint64_t seed = 0;
};

void run_nmf(const NmfArgs& a)
{
  Hist2D P;
  if (!a.hist.empty()) {
    P = read_hist_csv(fs::path(a.hist));
  } else {
    if (a.data.empty())
      throw ValidationError("nmf needs --hist or --data");
    P = hist2d(read_sample_csv(fs::path(a.data)), a.bins_m, a.bins_t, parse_support(a.support_m, "--support-m"),
               parse_support(a.support_t, "--support-t"));
  }
  NmfOptions o;
  o.max_iter = a.iters;
  const auto res = nmf(P.counts, a.rank, a.seed, o);
  const fs::path out(a.out);
  write_json(out / "factors.json", json{{"rank", res.rank}, {"G", matrix_to_json(res.G)}, {"H", matrix_to_json(res.H)},
                                        {"residual", res.residual.empty() ? 0.0 : res.residual.back()},
                                        {"iterations", res.residual.size()}, {"converged", res.converged},
                                        {"restart", res.restart}});
  if (a.rank == 2) {
    const auto d = normalize_to_mixture(res, P.support_m(), P.support_t());
    write_json(out / "mixture.json", json{{"z", d.z}, {"g1", grid_to_json(d.g1)}, {"g2", grid_to_json(d.g2)},
                                          {"h1", grid_to_json(d.h1)}, {"h2", grid_to_json(d.h2)}});
  }
}

struct CopulaArgs
{
  std::string g1, g2, data, out, support_m = "0,1", support_t, recovery = "smooth";
  std::size_t cells = 512;
};

void run_copula(const CopulaArgs& a)
{
  const Support sm = *parse_support(a.support_m, "--support-m");
  const auto g1 = load_density(a.g1, sm, a.cells), g2 = load_density(a.g2, sm, a.cells);
  const auto s = read_sample_csv(fs::path(a.data));
  CopulaFitOptions o;
  o.support_t = parse_support(a.support_t, "--support-t");
  const auto fit = fit_copula_mixture(s, g1, g2, o);
  if (a.recovery != "smooth" && a.recovery != "kde")
    throw ValidationError("--recovery must be smooth or kde");
  const auto rec = recover_signal_density(fit, a.recovery == "smooth" ? RecoveryMode::smooth_map : RecoveryMode::kde);
  const fs::path out(a.out);
  write_json(out / "fit.json", json{{"z", fit.z}, {"rho1", fit.rho1()}, {"rho2", fit.rho2()},
                                    {"iterations", fit.iterations}, {"converged", fit.converged},
                                    {"message", fit.message}, {"trace", fit.trace}, {"recovery_fell_back", rec.fell_back}});
  write_grid(out / "h1", rec.h1);
}

struct OtArgs
{
  std::string data, window = "0.4,0.6", background, support_m = "0,1", support_t = "0,1", out;
  double z = 0.5, h = 0.05;
  std::size_t cells = 512;
};

void run_ot(const OtArgs& a)
{
  const auto w = parse_pair(a.window, "--window");
  OTOptions o;
  o.bandwidth_t = a.h;
  o.support_m = *parse_support(a.support_m, "--support-m");
  o.support_t = *parse_support(a.support_t, "--support-t");
  const auto bm = a.background.empty() ? ParamDensity::uniform(o.support_m).tabulate(a.cells)
                                       : load_density(a.background, o.support_m, a.cells);
  const auto r = extract_localized(read_sample_csv(fs::path(a.data)), w.a, w.b, bm, a.z, o);
  const fs::path out(a.out);
  write_grid(out / "signal", r.signal.s_t);
  write_json(out / "diagnostics.json", json{{"window", {r.c1, r.c2}}, {"z", r.z_hat}, {"grid_m", r.grid_m},
                                            {"b_left", grid_to_json(r.b_left)}, {"b_right", grid_to_json(r.b_right)},
                                            {"signal_raw_min", r.signal.s_raw.minCoeff()}});
}

struct BoundsArgs
{
  std::string data, out, support_m, support_t;
  std::size_t grid = 64;
  std::uint64_t seed = 0;
};

void run_bounds(const BoundsArgs& a)
{
  BoundsDataOptions o;
  o.grid_m = o.grid_t = a.grid;
  o.support_m = parse_support(a.support_m, "--support-m");
  o.support_t = parse_support(a.support_t, "--support-t");
  const auto r = bounds_from_data(read_sample_csv(fs::path(a.data)), a.seed, o);
  json mask = json::array();
  for (Eigen::Index i = 0; i < r.env.scan.mask.rows(); ++i) {
    std::vector<int> row(static_cast<std::size_t>(r.env.scan.mask.cols()));
    for (Eigen::Index j = 0; j < r.env.scan.mask.cols(); ++j)
      row[static_cast<std::size_t>(j)] = r.env.scan.mask(i, j);
    mask.push_back(row);
  }
  write_json(fs::path(a.out) / "envelope.json",
             json{{"lower", grid_to_json(r.env.lower)}, {"upper", grid_to_json(r.env.upper)},
                  {"max_width", r.env.max_width()},
                  {"theta", json{{"alphas", r.env.scan.alphas}, {"betas", r.env.scan.betas}, {"mask", mask},
                                 {"n_feasible", r.env.scan.n_feasible}, {"n_admissible", r.env.scan.n_admissible}}},
                  {"initial", json{{"z", r.initial.z}, {"g1", grid_to_json(r.initial.g1)}, {"g2", grid_to_json(r.initial.g2)},
                                   {"h1", grid_to_json(r.initial.h1)}, {"h2", grid_to_json(r.initial.h2)}}}});
}

struct CondindArgs
{
  std::string data, out, support;
  std::size_t k = 2, grid = 512;
  int sweeps = 3;
};

void run_condind(const CondindArgs& a)
{
  const auto x = read_matrix_csv(fs::path(a.data));
  CondIndOptions o;
  o.sweeps = a.sweeps;
  o.grid_size = a.grid;
  if (auto s = parse_support(a.support, "--support"))
    o.supports.assign(static_cast<std::size_t>(x.cols()), *s);
  const auto m = cycle_fit(x, a.k, {}, o);
  json f = json::array();
  for (const auto& fr : m.f) {
    json row = json::array();
    for (const auto& g : fr)
      row.push_back(grid_to_json(g));
    f.push_back(row);
  }
  json change = json::array();
  for (double c : m.change)
    change.push_back(std::isnan(c) ? json(nullptr) : json(c));
  write_json(fs::path(a.out) / "model.json",
             json{{"d", m.d}, {"k", m.k}, {"pi", m.pi}, {"pi_raw", m.pi_raw}, {"pi_literal", m.pi_literal},
                  {"f", f}, {"biorthogonality", m.biorthogonality}, {"change", change},
                  {"sweeps_done", m.sweeps_done}, {"warnings", m.warnings}});
}

struct OptwArgs
{
  std::string model, target = "t", data, basis, out;
  double t0 = 0.2, nu = 0.05;
  int iters = 3;
  std::size_t cells = 512;
};

MixtureModel load_model(const std::string& path, std::size_t cells)
{
  if (path.empty() || path == "synthetic")
    return synthetic_model(0.5, cells);
  const json j = read_json(path);
  try {
    const double z = j.at("z").get<double>();
    const std::size_t c = j.value("cells", cells);
    const Support sm(j.at("support_m").at(0).get<double>(), j.at("support_m").at(1).get<double>());
    const Support st(j.at("support_t").at(0).get<double>(), j.at("support_t").at(1).get<double>());
    MixtureModel m;
    m.z = {z, 1.0 - z};
    m.g = {density_from_json(j.at("g1"), sm, c), density_from_json(j.at("g2"), sm, c)};
    m.h = {density_from_json(j.at("h1"), st, c), density_from_json(j.at("h2"), st, c)};
    m.validate();
    return m;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("model JSON: ") + e.what());
  }
}

void run_optw(const OptwArgs& a)
{
  const auto model = load_model(a.model, a.cells);
  TargetFn f;
  if (a.target == "t")
    f = [](double t) { return t; };
  else if (a.target == "kernel")
    f = kernel_target(a.t0, a.nu);
  else
    throw ValidationError("--target must be t or kernel");
  const auto pr = make_problem(model, f);
  const auto ow = optimal_weight(pr);
  const BasisSet basis({model.g[0], model.g[1]}, 1, 1);
  const auto unit = make_weights(basis);
  const auto splot = make_weights(basis, GridDensity(pr.p_m.support(), pr.p_m.values(), false));
  json j{{"psi", pr.psi}, {"w", grid_to_json(ow.w)}, {"alpha", {ow.alpha(0), ow.alpha(1)}},
         {"Q", matrix_to_json(ow.Q)}, {"stationarity", ow.stationarity},
         {"sigma2", json{{"optimal", asymptotic_variance(ow.w, pr)},
                         {"sweights_unit", asymptotic_variance(unit.w[0], pr)},
                         {"sweights_marginal", asymptotic_variance(splot.w[0], pr)}}}};
  if (!a.data.empty()) {
    PointwiseOptions po;
    po.iters = a.iters;
    po.support_t = model.h[0].support();
    const auto r = iterate_h1_pointwise(read_sample_csv(fs::path(a.data)), basis, a.t0, a.nu, po);
    j["pointwise"] = json{{"t0", a.t0}, {"nu", a.nu}, {"h1", r.h1}, {"trace", r.trace}, {"reverted", r.reverted}};
  }
  write_json(fs::path(a.out) / "optw.json", j);
}

struct GofArgs
{
  std::string basis, data, out, support_t;
  std::size_t K = 20, B = 99, cells = 512;
  double slice_bw = 0.0;
  std::uint64_t seed = 0;
};

void run_gof(const GofArgs& a)
{
  GofOptions o;
  o.K = a.K;
  o.B = a.B;
  o.support_t = parse_support(a.support_t, "--support-t");
  if (a.slice_bw > 0.0)
    o.slice_bandwidth = a.slice_bw;
  const auto r = gof_test(read_sample_csv(fs::path(a.data)), load_basis(a.basis, a.cells), a.seed, o);
  write_json(fs::path(a.out) / "gof.json",
             json{{"statistic", r.statistic}, {"p_value", r.p_value}, {"B", r.null_draws.size()}, {"K", r.K},
                  {"slice_bandwidth", r.slice_bandwidth}, {"slice_centers", r.slice_centers},
                  {"contributions", r.contributions}, {"proportions", r.proportions}, {"skipped", r.skipped},
                  {"null_draws", r.null_draws}, {"log", r.log}});
}

struct BandArgs
{
  std::string basis, data, out, support_t, I = "unit";
  double nu = 0.05, alpha = 0.1;
  std::size_t B = 299, cells = 512, grid = 512;
  std::uint64_t seed = 0;
};

void run_band(const BandArgs& a)
{
  const auto basis = load_basis(a.basis, a.cells);
  const auto s = read_sample_csv(fs::path(a.data));
  if (a.I != "unit" && a.I != "marginal")
    throw ValidationError("--I must be unit or marginal");
  const auto ws = make_weights(basis, a.I == "marginal" ? std::optional(marginal_normalizer(s.m, basis)) : std::nullopt);
  BandOptions o;
  o.support_t = parse_support(a.support_t, "--support-t");
  o.grid_size = a.grid;
  const auto r = bootstrap_band(s, ws, a.nu, a.B, a.alpha, a.seed, o);
  const fs::path out(a.out);
  write_json(out / "band.json", json{{"h1_hat", grid_to_json(r.h1_hat)}, {"z_hat", r.z_hat}, {"c_alpha", r.c_alpha},
                                     {"alpha", r.alpha}, {"B", r.B}, {"nu", r.nu}, {"redraws", r.redraws},
                                     {"sup_draws", r.sup_draws}});
  const auto lo = r.lower(), hi = r.upper();
  write_rows_csv(out / "band.csv", "t,h1_hat,lower,upper", {r.h1_hat.midpoints(), r.h1_hat.values(), lo.values(), hi.values()});
}

struct RunArgs
{
  std::string config, out;
};

void run_run(const RunArgs& a)
{
  auto cfg = ExperimentConfig::from_json(read_json(a.config));
  if (!a.out.empty())
    cfg.out = a.out;
  if (cfg.out.empty())
    throw ValidationError("run needs --out or an out entry in the config");
  run_experiment(cfg);
}

} // namespace

int main(int argc, char** argv)
{
  CLI::App app{"Signal extraction with custom orthogonal weights and related mixture tools"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);
  std::function<void()> action;

  GenerateArgs ga;
  auto* gen = app.add_subcommand("generate", "draw a labeled sample from a built-in model");
  gen->add_option("--model", ga.model, "synthetic|synthetic-mixture|copula-toy|ot|bounds1|bounds2|condind|copula-mixture")
    ->capture_default_str();
  gen->add_option("--n", ga.n, "sample size (all models but synthetic)")->capture_default_str();
  gen->add_option("--n-signal", ga.n_signal, "synthetic signal count")->capture_default_str();
  gen->add_option("--n-background", ga.n_background, "synthetic background count")->capture_default_str();
  gen->add_option("--z", ga.z, "signal fraction (background fraction for ot)")->capture_default_str();
  gen->add_option("--rho", ga.rho, "copula-toy correlation")->capture_default_str();
  gen->add_option("--rho1", ga.rho1, "copula-mixture signal correlation")->capture_default_str();
  gen->add_option("--rho2", ga.rho2, "copula-mixture background correlation")->capture_default_str();
  gen->add_option("--seed", ga.seed)->required();
  gen->add_option("--out", ga.out)->required();
  gen->callback([&] { action = [&] { run_generate(ga); }; });

  SweightsArgs sa;
  auto* sw = app.add_subcommand("sweights", "orthogonal weight functions and binned signal yield");
  sw->add_option("--basis", sa.basis, "basis JSON, or 'synthetic'");
  sw->add_option("--data", sa.data)->required();
  sw->add_option("--I", sa.I, "unit|marginal")->capture_default_str();
  sw->add_option("--cells", sa.cells)->capture_default_str();
  sw->add_option("--bins", sa.bins)->capture_default_str();
  sw->add_option("--support-t", sa.support_t, "lo,hi");
  sw->add_option("--out", sa.out)->required();
  sw->callback([&] { action = [&] { run_sweights(sa); }; });

  CowsArgs ca;
  auto* cw = app.add_subcommand("cows-ls", "least-squares weights without explicit weight functions");
  cw->add_option("--mode", ca.mode, "binned|unbinned")->capture_default_str();
  cw->add_option("--basis", ca.basis, "basis JSON, or 'synthetic'");
  cw->add_option("--data", ca.data);
  cw->add_option("--hist", ca.hist, "Hist2D CSV (binned mode)");
  cw->add_option("--bins-m", ca.bins_m)->capture_default_str();
  cw->add_option("--bins-t", ca.bins_t)->capture_default_str();
  cw->add_option("--grid-t", ca.grid_t)->capture_default_str();
  cw->add_option("--bandwidth-m", ca.bw_m);
  cw->add_option("--bandwidth-t", ca.bw_t);
  cw->add_option("--cells", ca.cells)->capture_default_str();
  cw->add_option("--support-m", ca.support_m, "lo,hi");
  cw->add_option("--support-t", ca.support_t, "lo,hi");
  cw->add_option("--out", ca.out)->required();
  cw->callback([&] { action = [&] { run_cows(ca); }; });

  NmfArgs na;
  auto* nm = app.add_subcommand("nmf", "nonnegative factorization of a 2-D histogram");
  nm->add_option("--hist", na.hist, "Hist2D CSV");
  nm->add_option("--data", na.data, "sample CSV, binned with --bins-m/--bins-t");
  nm->add_option("--rank", na.rank)->capture_default_str();
  nm->add_option("--iters", na.iters)->capture_default_str();
  nm->add_option("--bins-m", na.bins_m)->capture_default_str();
  nm->add_option("--bins-t", na.bins_t)->capture_default_str();
  nm->add_option("--support-m", na.support_m, "lo,hi");
  nm->add_option("--support-t", na.support_t, "lo,hi");
  nm->add_option("--seed", na.seed)->required();
  nm->add_option("--out", na.out)->required();
  nm->callback([&] { action = [&] { run_nmf(na); }; });

  CopulaArgs cpa;
  auto* cp = app.add_subcommand("copula-fit", "two-component Gaussian-copula mixture with known m densities");
  cp->add_option("--g1", cpa.g1, "signal m density JSON")->required();
  cp->add_option("--g2", cpa.g2, "background m density JSON")->required();
  cp->add_option("--data", cpa.data)->required();
  cp->add_option("--support-m", cpa.support_m, "lo,hi")->capture_default_str();
  cp->add_option("--support-t", cpa.support_t, "lo,hi");
  cp->add_option("--cells", cpa.cells)->capture_default_str();
  cp->add_option("--recovery", cpa.recovery, "smooth|kde")->capture_default_str();
  cp->add_option("--out", cpa.out)->required();
  cp->callback([&] { action = [&] { run_copula(cpa); }; });

  OtArgs oa;
  auto* ot = app.add_subcommand("ot-extract", "localized signal via optimal-transport interpolation");
  ot->set_help_flag("--help", "Print this help message and exit");
  ot->add_option("--data", oa.data)->required();
  ot->add_option("--window", oa.window, "c1,c2")->capture_default_str();
  ot->add_option("--z", oa.z, "background fraction")->capture_default_str();
  ot->add_option("--h", oa.h, "t bandwidth")->capture_default_str();
  ot->add_option("--background", oa.background, "background m density JSON (uniform when unset)");
  ot->add_option("--support-m", oa.support_m, "lo,hi")->capture_default_str();
  ot->add_option("--support-t", oa.support_t, "lo,hi")->capture_default_str();
  ot->add_option("--cells", oa.cells)->capture_default_str();
  ot->add_option("--out", oa.out)->required();
  ot->callback([&] { action = [&] { run_ot(oa); }; });

  BoundsArgs ba;
  auto* bd = app.add_subcommand("bounds", "envelope of signal densities consistent with the data");
  bd->add_option("--data", ba.data)->required();
  bd->add_option("--grid", ba.grid)->capture_default_str();
  bd->add_option("--support-m", ba.support_m, "lo,hi");
  bd->add_option("--support-t", ba.support_t, "lo,hi");
  bd->add_option("--seed", ba.seed)->required();
  bd->add_option("--out", ba.out)->required();
  bd->callback([&] { action = [&] { run_bounds(ba); }; });

  CondindArgs cia;
  auto* ci = app.add_subcommand("condind", "conditionally independent mixture by cyclic weighting");
  ci->add_option("--data", cia.data, "matrix CSV")->required();
  ci->add_option("--k", cia.k)->capture_default_str();
  ci->add_option("--sweeps", cia.sweeps)->capture_default_str();
  ci->add_option("--grid", cia.grid)->capture_default_str();
  ci->add_option("--support", cia.support, "lo,hi for every coordinate");
  ci->add_option("--out", cia.out)->required();
  ci->callback([&] { action = [&] { run_condind(cia); }; });

  OptwArgs owa;
  auto* ow = app.add_subcommand("optw", "variance-optimal weight function");
  ow->add_option("--model", owa.model, "model JSON, or 'synthetic'");
  ow->add_option("--target", owa.target, "t|kernel")->capture_default_str();
  ow->add_option("--t0", owa.t0)->capture_default_str();
  ow->add_option("--nu", owa.nu)->capture_default_str();
  ow->add_option("--iters", owa.iters)->capture_default_str();
  ow->add_option("--data", owa.data, "sample CSV for the pointwise h1 iteration");
  ow->add_option("--cells", owa.cells)->capture_default_str();
  ow->add_option("--out", owa.out)->required();
  ow->callback([&] { action = [&] { run_optw(owa); }; });

  GofArgs gfa;
  auto* gf = app.add_subcommand("gof", "slice goodness-of-fit test with semiparametric bootstrap");
  gf->add_option("--basis", gfa.basis, "basis JSON, or 'synthetic'");
  gf->add_option("--data", gfa.data)->required();
  gf->add_option("--K", gfa.K)->capture_default_str();
  gf->add_option("--B", gfa.B)->capture_default_str();
  gf->add_option("--slice-bandwidth", gfa.slice_bw);
  gf->add_option("--support-t", gfa.support_t, "lo,hi");
  gf->add_option("--cells", gfa.cells)->capture_default_str();
  gf->add_option("--seed", gfa.seed)->required();
  gf->add_option("--out", gfa.out)->required();
  gf->callback([&] { action = [&] { run_gof(gfa); }; });

  BandArgs bna;
  auto* bn = app.add_subcommand("band", "bootstrap sup-norm confidence band for h1");
  bn->add_option("--basis", bna.basis, "basis JSON, or 'synthetic'");
  bn->add_option("--data", bna.data)->required();
  bn->add_option("--I", bna.I, "unit|marginal")->capture_default_str();
  bn->add_option("--nu", bna.nu)->capture_default_str();
  bn->add_option("--B", bna.B)->capture_default_str();
  bn->add_option("--alpha", bna.alpha)->capture_default_str();
  bn->add_option("--grid", bna.grid)->capture_default_str();
  bn->add_option("--cells", bna.cells)->capture_default_str();
  bn->add_option("--support-t", bna.support_t, "lo,hi");
  bn->add_option("--seed", bna.seed)->required();
  bn->add_option("--out", bna.out)->required();
  bn->callback([&] { action = [&] { run_band(bna); }; });

  RunArgs ra;
  auto* rn = app.add_subcommand("run", "experiment pipeline from a JSON config");
  rn->add_option("--config", ra.config)->required();
  rn->add_option("--out", ra.out, "overrides the config's out entry");
  rn->callback([&] { action = [&] { run_run(ra); }; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitValidation;
  }
  try {
    action();
  } catch (const ValidationError& e) {
    std::cerr << "cowherd: invalid input: " << e.what() << '\n';
    return kExitValidation;
  } catch (const NumericalError& e) {
    std::cerr << "cowherd: numerical failure: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "cowherd: " << e.what() << '\n';
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "cowherd: numerical failure: " << e.what() << '\n';
    return kExitNumerical;
  }
  return 0;
}
