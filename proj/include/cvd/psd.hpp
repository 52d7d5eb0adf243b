#pragma once

#include <vector>

namespace cvd {

// Bin centers f_lo, f_lo + bin_width, ... up to and including f_hi.
std::vector<double> band_frequencies(double f_lo, double f_hi, double bin_width);

// Power of the DFT correlation at each frequency: with w = 2*pi*f/fs,
//   C(f) = sum_t s[t] cos(w t),  S(f) = sum_t s[t] sin(w t),  P(f) = C^2 + S^2.
// This single kernel is the spectral truth for the whole project: the
// differentiable graph op and every analysis routine call it.
// cos_out / sin_out (optional, nfreq each) receive C and S.
void dft_power(const double* s, int len, double fs, const double* freqs, int nfreq,
               double* power, double* cos_out = nullptr, double* sin_out = nullptr);

std::vector<double> dft_power(const std::vector<double>& s, double fs,
                              const std::vector<double>& freqs);

}  // namespace cvd
