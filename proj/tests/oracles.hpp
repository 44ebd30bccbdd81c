#pragma once

// Reference implementations used only by tests. They follow the textbook
// definitions directly and share no code with the library.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <functional>
#include <numbers>
#include <stdexcept>
#include <vector>

namespace oracle {

inline std::vector<std::complex<double>> naive_dft(const std::vector<double>& x) {
  const std::size_t n = x.size();
  std::vector<std::complex<double>> out(n);
  for (std::size_t k = 0; k < n; ++k) {
    std::complex<double> acc = 0.0;
    for (std::size_t t = 0; t < n; ++t) {
      const double ang = -2.0 * std::numbers::pi * static_cast<double>((k * t) % n) / static_cast<double>(n);
      acc += x[t] * std::complex<double>(std::cos(ang), std::sin(ang));
    }
    out[k] = acc;
  }
  return out;
}

// Least squares by the normal equations and Gauss-Jordan elimination with
// partial pivoting. Rows of `x` are observations; no intercept is added.
inline std::vector<double> least_squares(const std::vector<std::vector<double>>& x, const std::vector<double>& y) {
  const std::size_t p = x.front().size();
  std::vector<std::vector<double>> a(p, std::vector<double>(p + 1, 0.0));
  for (std::size_t r = 0; r < x.size(); ++r) {
    for (std::size_t i = 0; i < p; ++i) {
      for (std::size_t j = 0; j < p; ++j) a[i][j] += x[r][i] * x[r][j];
      a[i][p] += x[r][i] * y[r];
    }
  }
  for (std::size_t c = 0; c < p; ++c) {
    std::size_t piv = c;
    for (std::size_t r = c + 1; r < p; ++r) {
      if (std::abs(a[r][c]) > std::abs(a[piv][c])) piv = r;
    }
    std::swap(a[c], a[piv]);
    if (std::abs(a[c][c]) < 1e-300) throw std::runtime_error("singular normal equations");
    for (std::size_t r = 0; r < p; ++r) {
      if (r == c) continue;
      const double f = a[r][c] / a[c][c];
      for (std::size_t j = c; j <= p; ++j) a[r][j] -= f * a[c][j];
    }
  }
  std::vector<double> beta(p);
  for (std::size_t i = 0; i < p; ++i) beta[i] = a[i][p] / a[i][i];
  return beta;
}

inline std::vector<double> residuals(const std::vector<std::vector<double>>& x, const std::vector<double>& y,
                                     const std::vector<double>& beta) {
  std::vector<double> out(y.size());
  for (std::size_t r = 0; r < y.size(); ++r) {
    double fit = 0.0;
    for (std::size_t i = 0; i < beta.size(); ++i) fit += beta[i] * x[r][i];
    out[r] = y[r] - fit;
  }
  return out;
}

inline double variance(const std::vector<double>& v) {
  double m = 0.0;
  for (double e : v) m += e;
  m /= static_cast<double>(v.size());
  double s = 0.0;
  for (double e : v) s += (e - m) * (e - m);
  return s / static_cast<double>(v.size());
}

inline double factorial(std::size_t n) {
  double f = 1.0;
  for (std::size_t i = 2; i <= n; ++i) f *= static_cast<double>(i);
  return f;
}

// Shapley values straight from the definition: v(S) averages f over
// background rows with the coordinates in S taken from x.
inline std::vector<double> brute_force_shapley(const std::function<double(const std::vector<double>&)>& f,
                                               const std::vector<double>& x,
                                               const std::vector<std::vector<double>>& background) {
  const std::size_t d = x.size();
  auto value = [&](std::size_t mask) {
    double acc = 0.0;
    for (const auto& b : background) {
      std::vector<double> z = b;
      for (std::size_t i = 0; i < d; ++i) {
        if (mask & (std::size_t{1} << i)) z[i] = x[i];
      }
      acc += f(z);
    }
    return acc / static_cast<double>(background.size());
  };
  std::vector<double> v(std::size_t{1} << d);
  for (std::size_t m = 0; m < v.size(); ++m) v[m] = value(m);
  std::vector<double> phi(d, 0.0);
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t m = 0; m < v.size(); ++m) {
      if (m & (std::size_t{1} << i)) continue;
      std::size_t s = 0;
      for (std::size_t j = 0; j < d; ++j) s += (m >> j) & 1U;
      const double w = factorial(s) * factorial(d - s - 1) / factorial(d);
      phi[i] += w * (v[m | (std::size_t{1} << i)] - v[m]);
    }
  }
  return phi;
}

inline double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace oracle
