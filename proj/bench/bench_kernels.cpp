// Serial reference vs OpenMP kernels, median wall time over repetitions.
//   bench_kernels [repetitions]

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <random>
#include <vector>

#include <omp.h>

#include "spectral_codec/cmt.hpp"
#include "spectral_codec/kernels.hpp"
#include "spectral_codec/spectra.hpp"

namespace sc = spectral_codec;
namespace kn = spectral_codec::kernels;

namespace {

template <class F>
double median_ms(int reps, F&& f) {
  std::vector<double> t;
  for (int r = 0; r < reps; ++r) {
    const auto a = std::chrono::steady_clock::now();
    f();
    t.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - a).count());
  }
  std::nth_element(t.begin(), t.begin() + t.size() / 2, t.end());
  return t[t.size() / 2];
}

void row(const char* name, int threads, double ref_ms, double par_ms, double max_diff) {
  std::printf("%-22s %2d thread(s)  serial %9.3f ms  parallel %9.3f ms  speedup %5.2fx  max|diff| %.2e\n",
              name, threads, ref_ms, par_ms, ref_ms / par_ms, max_diff);
}

}  // namespace

int main(int argc, char** argv) {
  const int reps = argc > 1 ? std::max(1, std::atoi(argv[1])) : 9;
  const int max_threads = omp_get_max_threads();
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.0, 1.0);

  // Encoder shape: 9 curves x 31 bands over a 512 x 512 image.
  const auto grid = sc::SpectralGrid::uniform(400.0, 700.0, 10.0);
  Eigen::MatrixXd A = Eigen::MatrixXd::Random(9, static_cast<Eigen::Index>(grid.size()));
  const std::size_t px = 512 * 512;
  std::vector<double> in(grid.size() * px), out_ref(9 * px), out_par(9 * px);
  for (auto& v : in) v = u(rng);

  // Fine sweep of an 8-mode resonator.
  const auto fine = sc::SpectralGrid::uniform(400.0, 700.0, 0.01);
  Eigen::VectorXd w(8);
  Eigen::MatrixXd K(8, 2);
  for (int i = 0; i < 8; ++i) {
    w(i) = fine.omega_min() + (fine.omega_max() - fine.omega_min()) * u(rng);
    K(i, 0) = 0.05 + 0.45 * u(rng);
    K(i, 1) = 0.05 + 0.45 * u(rng);
  }
  const sc::CmtModel model(w, K);

  std::printf("project_columns: 9 x %zu over %zu pixels; transmission_sweep: 8 modes x %zu frequencies\n",
              grid.size(), px, fine.size());
  for (int t = 1; t <= max_threads; t = t < max_threads ? std::min(2 * t, max_threads) : t + 1) {
    kn::set_threads(t);
    const double r1 = median_ms(reps, [&] { kn::project_columns_reference(A, in, out_ref); });
    const double p1 = median_ms(reps, [&] { kn::project_columns(A, in, out_par); });
    double d1 = 0.0;
    for (std::size_t i = 0; i < out_ref.size(); ++i) d1 = std::max(d1, std::abs(out_ref[i] - out_par[i]));
    row("project_columns", t, r1, p1, d1);

    Eigen::VectorXd tr, tp;
    const double r2 = median_ms(reps, [&] { tr = kn::transmission_sweep_reference(model, fine.omegas()); });
    const double p2 = median_ms(reps, [&] { tp = kn::transmission_sweep(model, fine.omegas()); });
    row("transmission_sweep", t, r2, p2, (tr - tp).cwiseAbs().maxCoeff());
  }
  return 0;
}
