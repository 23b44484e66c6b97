// Pulls the control-variable signal shape out of a synthetic sample with
// sWeights and with per-event posterior weights, and prints both next to
// the true yield.  Pass an output directory to also write the tables.

#include "cowherd/cowherd.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>

using namespace cowherd;

int main(int argc, char** argv)
{
  const std::uint64_t seed = argc > 2 ? std::stoull(argv[2]) : 1;
  auto model = synthetic_model(0.5);
  BasisSet basis(model.g, 1, 1);
  auto s = gen_synthetic(2000, 2000, seed);

  auto ws = make_weights(basis, model.marginal_m().as_signed());
  auto z = estimate_z(ws, s);
  auto sw = extract_signal_binned(ws, s, kSyntheticSupportT, 15);

  const double zs = std::clamp(z[0], 0.0, 1.0);
  auto post = mixture_weights(std::vector<double>{zs, 1.0 - zs}, basis);
  std::vector<double> wp(s.size());
  for (std::size_t i = 0; i < s.size(); ++i)
    wp[i] = post[0](s.m[i]);
  auto mw = extract_signal_binned(wp, s, kSyntheticSupportT, 15);

  auto truth = expected_yield(sw.edges, 2000.0, SyntheticShapes{}.h1.tabulate());
  std::printf("z_hat = %.4f\n", z[0]);
  std::printf("%8s %10s %10s %10s %10s\n", "t", "truth", "sweights", "error", "posterior");
  for (std::size_t b = 0; b < truth.size(); ++b)
    std::printf("%8.3f %10.1f %10.1f %10.1f %10.1f\n", 0.5 * (sw.edges[b] + sw.edges[b + 1]), truth[b], sw.yield[b],
                sw.error[b], mw.yield[b]);

  if (argc > 1) {
    const std::filesystem::path out(argv[1]);
    write_sample_csv(out / "sample.csv", s);
    write_grid(out / "signal_weight", ws.w[0]);
    write_grid(out / "posterior_weight", post[0]);
  }
}
