// Microbenchmarks comparing the serial reference paths against the
// OpenMP-parallel kernels (and the naive DFT against the radix-2 FFT).
// Wall-clock best-of-3 timings; run on an otherwise idle machine.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <complex>
#include <cstdio>
#include <functional>
#include <vector>

#include "bilin/energy.hpp"
#include "bilin/fft.hpp"
#include "bilin/freewave.hpp"
#include "bilin/geometry.hpp"
#include "bilin/parallel.hpp"

using namespace bilin;

namespace {

double checksum_acc = 0.0;  // defeats dead-code elimination

double ms_best_of(int reps, const std::function<void()>& f) {
  double best = 1e300;
  for (int i = 0; i < reps; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    f();
    const auto t1 = std::chrono::steady_clock::now();
    best = std::min(
        best, std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  return best;
}

void row(const char* name, double serial_ms, double parallel_ms) {
  std::printf("%-38s %11.3f %11.3f %7.2fx\n", name, serial_ms, parallel_ms,
              serial_ms / parallel_ms);
}

SurfaceSpec parab(double cx, double rad) {
  Vec c(2);
  c << cx, 0.0;
  return make_surface("elliptic-paraboloid", json::object(),
                      Domain::make_ball(c, rad), 0.15);
}

Density packet(double cx, double sigma, double x0) {
  return [cx, sigma, x0](const Vec& xi) -> cplx {
    Vec c(2);
    c << cx, 0.0;
    const double r2 = (xi - c).squaredNorm();
    if (r2 >= 0.01) return cplx(0, 0);
    return std::polar(std::exp(-r2 / (4.0 * sigma * sigma)), -xi(0) * x0);
  };
}

std::vector<double> linspace(double a, double b, int k) {
  std::vector<double> v;
  for (int i = 0; i < k; ++i)
    v.push_back(a + (b - a) * (double)i / (double)(k - 1));
  return v;
}

}  // namespace

int main() {
  std::printf("kernel benchmarks (%d thread(s) available)\n\n", max_threads());
  std::printf("%-38s %11s %11s %8s\n", "kernel", "serial-ms", "parallel-ms",
              "speedup");

  // 2-d FFT, 256 x 256.
  {
    const std::size_t res = 256;
    std::vector<cplx> seed(res * res);
    for (std::size_t k = 0; k < seed.size(); ++k)
      seed[k] = std::polar(1.0, 0.37 * (double)(k % 1013));
    std::vector<cplx> work;
    const auto bench = [&](Exec exec) {
      work = seed;
      fft_nd(work, 2, res, -1, exec);
      checksum_acc += work[1].real();
    };
    const double s = ms_best_of(3, [&] { bench(Exec::serial); });
    const double p = ms_best_of(3, [&] { bench(Exec::parallel); });
    row("fft-2d 256x256", s, p);
  }

  // Free-wave field synthesis on a 256^2 grid.
  const auto S1 = parab(-0.35, 0.07);
  const auto S2 = parab(0.35, 0.125);
  {
    const auto g = make_grid_spacing(S2, 256, Vec::Constant(2, 1.0 / 80.0));
    WaveState w = init_wave(S2, packet(0.35, 0.0125, 63.0), g);
    normalize_mass(w);
    const auto bench = [&](Exec exec) {
      const auto field = physical_field(w, 17.0, exec);
      checksum_acc += field[1].real();
    };
    const double s = ms_best_of(3, [&] { bench(Exec::serial); });
    const double p = ms_best_of(3, [&] { bench(Exec::parallel); });
    row("free-wave field 256x256", s, p);
  }

  // Bilinear L^p norms over a cube, 17 time slices at 128^2.
  {
    const auto [g1, g2] = make_common_grids(S1, S2, 128, 4);
    WaveState w1 = init_wave(S1, packet(-0.35, 0.0125, 0.0), g1);
    WaveState w2 = init_wave(S2, packet(0.35, 0.0125, 0.0), g2);
    normalize_mass(w1);
    normalize_mass(w2);
    CubeRegion Q;
    Q.center = Vec::Zero(3);
    Q.side = 16.0;
    const auto bench = [&](Exec exec) {
      checksum_acc += bilinear_lp_norm(w1, w2, Q, 2.0, 17, exec);
    };
    const double s = ms_best_of(3, [&] { bench(Exec::serial); });
    const double p = ms_best_of(3, [&] { bench(Exec::parallel); });
    row("bilinear L^p norm 128x128 (17 t)", s, p);
  }

  // Thickened-cone energy of a packet family, 17 time slices.
  {
    const auto g = make_grid_spacing(S2, 128, Vec::Constant(2, 1.0 / 40.0));
    WaveState w = init_wave(S2, packet(0.35, 0.0125, 63.0), g);
    normalize_mass(w);
    Vec h(3);
    h << 0.0, 0.0, 0.245;
    const auto cloud = normal_cone_samples(S1, S2, h, linspace(30, 120, 13));
    const auto thick = thicken(cloud, 8.0 * g.dx(0));
    const auto bench = [&](Exec exec) {
      checksum_acc += energy_in_neighborhood(w, thick, 17, exec);
    };
    const double s = ms_best_of(3, [&] { bench(Exec::serial); });
    const double p = ms_best_of(3, [&] { bench(Exec::parallel); });
    row("thickened-cone energy (17 t)", s, p);
  }

  // Transversality scan C2 over 5 translates.
  {
    ConditionOptions opt;
    opt.surface_res = 16;
    opt.curve_scan = 64;
    opt.h_count = 5;
    const auto hs = default_h_samples(S1, S2, opt.h_count, opt.seed);
    const auto bench = [&](Exec exec) {
      opt.exec = exec;
      const auto c2 = check_C2(S1, S2, hs, opt);
      checksum_acc += c2.first.infimum;
    };
    const double s = ms_best_of(3, [&] { bench(Exec::serial); });
    const double p = ms_best_of(3, [&] { bench(Exec::parallel); });
    row("curve scan C2 (5 translates)", s, p);
  }

  // Reference DFT vs radix-2 FFT (both serial): the algorithmic gap the
  // unit tests lean on when cross-checking transforms.
  {
    const std::size_t len = 4096;
    std::vector<cplx> in(len), out(len);
    for (std::size_t k = 0; k < len; ++k)
      in[k] = std::polar(1.0, 0.11 * (double)k);
    const double s = ms_best_of(3, [&] {
      dft_reference(in.data(), out.data(), len, -1);
      checksum_acc += out[1].real();
    });
    const double p = ms_best_of(3, [&] {
      std::copy(in.begin(), in.end(), out.begin());
      fft_1d(out.data(), len, -1);
      checksum_acc += out[1].real();
    });
    row("dft-reference vs fft-1d, 4096", s, p);
  }

  std::printf("\n(checksum %.6g)\n", checksum_acc);
  return 0;
}
