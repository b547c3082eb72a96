#pragma once
// In-place complex FFT engine for power-of-two sizes.
//
// Convention: transform(data, n, sign) computes the unnormalized sum
//   X_k = sum_j x_j exp(sign * 2*pi*i * j*k / n),
// so a sign=+1 transform followed by sign=-1 returns n * identity.
// The n-dimensional variant applies the 1-D transform along every axis of a
// row-major hypercube of side `res`; lines are independent, which is where the
// OpenMP kernel parallelizes. A naive O(n^2) DFT is kept as the serial
// reference implementation for tests and benchmarks.

#include <complex>
#include <cstddef>
#include <vector>

#include "bilin/parallel.hpp"

namespace bilin {

using cplx = std::complex<double>;

bool is_pow2(std::size_t n);

// Radix-2 iterative transform, n a power of two.
void fft_1d(cplx* data, std::size_t n, int sign);

// Strided view transform: element j lives at data[j * stride].
void fft_1d_strided(cplx* data, std::size_t n, std::size_t stride, int sign,
                    cplx* scratch);

// Naive reference DFT (O(n^2)); any n >= 1.
void dft_reference(const cplx* in, cplx* out, std::size_t n, int sign);

// n-dimensional transform on a row-major res^dims hypercube.
void fft_nd(std::vector<cplx>& data, int dims, std::size_t res, int sign,
            Exec exec = Exec::parallel);

}  // namespace bilin
