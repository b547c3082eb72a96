#include "bilin/fft.hpp"

#include <cmath>
#include <mutex>
#include <numbers>
#include <unordered_map>

#include "bilin/errors.hpp"

namespace bilin {

bool is_pow2(std::size_t n) { return n > 0 && (n & (n - 1)) == 0; }

namespace {

struct Plan {
  std::vector<std::size_t> bitrev;      // permutation for size n
  std::vector<cplx> twiddle_fwd;        // exp(+2*pi*i*j/n), j < n/2
};

// Twiddle/bit-reversal tables are built once per size and shared; reads after
// construction are lock-free via the mutex-guarded cache accessor.
const Plan& plan_for(std::size_t n) {
  static std::unordered_map<std::size_t, Plan> cache;
  static std::mutex mu;
  std::lock_guard<std::mutex> lock(mu);
  auto it = cache.find(n);
  if (it != cache.end()) return it->second;
  Plan p;
  p.bitrev.resize(n);
  std::size_t bits = 0;
  while (((std::size_t)1 << bits) < n) ++bits;
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t r = 0;
    for (std::size_t b = 0; b < bits; ++b)
      if (i & ((std::size_t)1 << b)) r |= (std::size_t)1 << (bits - 1 - b);
    p.bitrev[i] = r;
  }
  p.twiddle_fwd.resize(n / 2);
  for (std::size_t j = 0; j < n / 2; ++j) {
    const double a = 2.0 * std::numbers::pi * (double)j / (double)n;
    p.twiddle_fwd[j] = {std::cos(a), std::sin(a)};
  }
  return cache.emplace(n, std::move(p)).first->second;
}

}  // namespace

void fft_1d(cplx* data, std::size_t n, int sign) {
  require(is_pow2(n), ErrorKind::numeric, "fft_1d: size must be a power of two");
  if (n == 1) return;
  const Plan& p = plan_for(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t r = p.bitrev[i];
    if (r > i) std::swap(data[i], data[r]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const std::size_t half = len >> 1;
    const std::size_t step = n / len;
    for (std::size_t base = 0; base < n; base += len) {
      for (std::size_t k = 0; k < half; ++k) {
        cplx w = p.twiddle_fwd[k * step];
        if (sign < 0) w = std::conj(w);
        const cplx t = w * data[base + k + half];
        const cplx u = data[base + k];
        data[base + k] = u + t;
        data[base + k + half] = u - t;
      }
    }
  }
}

void fft_1d_strided(cplx* data, std::size_t n, std::size_t stride, int sign,
                    cplx* scratch) {
  if (stride == 1) {
    fft_1d(data, n, sign);
    return;
  }
  for (std::size_t j = 0; j < n; ++j) scratch[j] = data[j * stride];
  fft_1d(scratch, n, sign);
  for (std::size_t j = 0; j < n; ++j) data[j * stride] = scratch[j];
}

void dft_reference(const cplx* in, cplx* out, std::size_t n, int sign) {
  for (std::size_t k = 0; k < n; ++k) {
    cplx acc = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double a =
          (double)sign * 2.0 * std::numbers::pi * (double)(j * k % n) / (double)n;
      acc += in[j] * cplx{std::cos(a), std::sin(a)};
    }
    out[k] = acc;
  }
}

void fft_nd(std::vector<cplx>& data, int dims, std::size_t res, int sign,
            Exec exec) {
  require(dims >= 1, ErrorKind::validation, "fft_nd: dims >= 1");
  require(is_pow2(res), ErrorKind::numeric,
          "fft_nd: resolution must be a power of two");
  std::size_t total = 1;
  for (int d = 0; d < dims; ++d) total *= res;
  require(data.size() == total, ErrorKind::validation, "fft_nd: size mismatch");

  // Axis d has stride res^(dims-1-d); there are total/res lines per axis.
  for (int d = 0; d < dims; ++d) {
    std::size_t stride = 1;
    for (int k = d + 1; k < dims; ++k) stride *= res;
    const std::size_t lines = total / res;
    const std::size_t block = stride * res;  // span of one slab along axis d
    for_each_index(lines, exec, [&](std::size_t line) {
      // Decompose the line index into (slab, offset-within-slab).
      const std::size_t slab = line / stride;
      const std::size_t off = line % stride;
      cplx* base = data.data() + slab * block + off;
      std::vector<cplx> scratch(stride == 1 ? 0 : res);
      fft_1d_strided(base, res, stride, sign, scratch.data());
    });
  }
}

}  // namespace bilin
