#include "lasermon/fourier.hpp"

#include <bit>
#include <cmath>
#include <numbers>

namespace lasermon::fourier {

namespace {

void radix2_inplace(std::vector<Complex>& a, bool inverse) {
  const std::size_t n = a.size();
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang = 2.0 * std::numbers::pi / static_cast<double>(len) * (inverse ? 1.0 : -1.0);
    const std::size_t half = len / 2;
    for (std::size_t i = 0; i < n; i += len) {
      for (std::size_t k = 0; k < half; ++k) {
        // Twiddles computed directly rather than by recurrence to keep error O(eps).
        const Complex w(std::cos(ang * static_cast<double>(k)), std::sin(ang * static_cast<double>(k)));
        const Complex u = a[i + k];
        const Complex v = a[i + k + half] * w;
        a[i + k] = u + v;
        a[i + k + half] = u - v;
      }
    }
  }
  if (inverse) {
    for (auto& v : a) v /= static_cast<double>(n);
  }
}

std::vector<Complex> bluestein(std::span<const Complex> x) {
  const std::size_t n = x.size();
  const std::size_t m = std::bit_ceil(2 * n - 1);
  std::vector<Complex> chirp(n);
  for (std::size_t k = 0; k < n; ++k) {
    // k^2 mod 2n keeps the angle argument small for large k.
    const std::size_t k2 = (k * k) % (2 * n);
    const double ang = std::numbers::pi * static_cast<double>(k2) / static_cast<double>(n);
    chirp[k] = Complex(std::cos(ang), -std::sin(ang));
  }
  std::vector<Complex> a(m), b(m);
  for (std::size_t k = 0; k < n; ++k) a[k] = x[k] * chirp[k];
  b[0] = std::conj(chirp[0]);
  for (std::size_t k = 1; k < n; ++k) b[k] = b[m - k] = std::conj(chirp[k]);
  radix2_inplace(a, false);
  radix2_inplace(b, false);
  for (std::size_t i = 0; i < m; ++i) a[i] *= b[i];
  radix2_inplace(a, true);
  std::vector<Complex> out(n);
  for (std::size_t k = 0; k < n; ++k) out[k] = a[k] * chirp[k];
  return out;
}

}  // namespace

std::vector<Complex> transform(std::span<const Complex> input) {
  const std::size_t n = input.size();
  if (n == 0) return {};
  if (std::has_single_bit(n)) {
    std::vector<Complex> a(input.begin(), input.end());
    radix2_inplace(a, false);
    return a;
  }
  return bluestein(input);
}

std::vector<Complex> transform(std::span<const double> input) {
  std::vector<Complex> c(input.begin(), input.end());
  return transform(std::span<const Complex>(c));
}

std::vector<Complex> real_transform(std::span<const double> input) {
  auto full = transform(input);
  full.resize(input.size() / 2 + 1);
  return full;
}

}  // namespace lasermon::fourier
