#include "kno/fft.hpp"

#include <cmath>

#include "kno/errors.hpp"

namespace kno {

void fft_inplace(std::vector<std::complex<double>>& a, bool inverse) {
  const std::size_t n = a.size();
  if (n == 0 || (n & (n - 1)) != 0) throw ContractViolation("fft: size must be a power of two");
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang = (inverse ? 2.0 : -2.0) * M_PI / static_cast<double>(len);
    const std::complex<double> wl(std::cos(ang), std::sin(ang));
    for (std::size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (std::size_t k = 0; k < len / 2; ++k) {
        const std::complex<double> u = a[i + k];
        const std::complex<double> v = a[i + k + len / 2] * w;
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
        w *= wl;
      }
    }
  }
  if (inverse) {
    const double inv = 1.0 / static_cast<double>(n);
    for (auto& z : a) z *= inv;
  }
}

std::vector<std::complex<double>> fft_real(const std::vector<double>& x) {
  std::vector<std::complex<double>> a(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) a[i] = std::complex<double>(x[i], 0.0);
  fft_inplace(a, false);
  return a;
}

std::vector<double> ifft_real(const std::vector<std::complex<double>>& X) {
  std::vector<std::complex<double>> a(X);
  fft_inplace(a, true);
  std::vector<double> x(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) x[i] = a[i].real();
  return x;
}

}  // namespace kno
