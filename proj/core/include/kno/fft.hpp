#pragma once

#include <complex>
#include <vector>

namespace kno {

/// In-place iterative radix-2 FFT; n must be a power of two.
void fft_inplace(std::vector<std::complex<double>>& a, bool inverse);

/// Forward DFT of a real signal; returns n complex coefficients,
/// X[k] = sum_j x[j] exp(-2 pi i j k / n) (no normalization).
std::vector<std::complex<double>> fft_real(const std::vector<double>& x);

/// Inverse of fft_real, keeping the real part; includes the 1/n factor.
std::vector<double> ifft_real(const std::vector<std::complex<double>>& X);

}  // namespace kno
