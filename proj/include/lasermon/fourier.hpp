#pragma once

#include <complex>
#include <span>
#include <vector>

namespace lasermon::fourier {

using Complex = std::complex<double>;

// Forward DFT, X_k = sum_t x_t exp(-2*pi*i*k*t/N), for any N >= 1.
// Power-of-two lengths use an iterative radix-2 transform; other lengths go
// through Bluestein's chirp-z reduction onto a power-of-two transform.
std::vector<Complex> transform(std::span<const Complex> input);
std::vector<Complex> transform(std::span<const double> input);

// Non-negative-frequency half of a real input's spectrum: bins 0..floor(N/2).
std::vector<Complex> real_transform(std::span<const double> input);

}  // namespace lasermon::fourier
