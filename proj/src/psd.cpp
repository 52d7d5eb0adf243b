#include "cvd/psd.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace cvd {

std::vector<double> band_frequencies(double f_lo, double f_hi, double bin_width) {
  if (!(f_lo > 0.0) || !(f_hi > f_lo))
    throw std::invalid_argument("band_frequencies: invalid band [" + std::to_string(f_lo) + ", " +
                                std::to_string(f_hi) + "]");
  if (!(bin_width > 0.0)) throw std::invalid_argument("band_frequencies: bin width must be > 0");
  // Small slack so f_hi lands in the grid despite rounding.
  const int count = static_cast<int>(std::floor((f_hi - f_lo) / bin_width + 1e-9)) + 1;
  if (count < 1) throw std::invalid_argument("band_frequencies: empty band");
  std::vector<double> freqs(count);
  for (int i = 0; i < count; ++i) freqs[i] = f_lo + i * bin_width;
  return freqs;
}

void dft_power(const double* s, int len, double fs, const double* freqs, int nfreq,
               double* power, double* cos_out, double* sin_out) {
  if (len < 1) throw std::invalid_argument("dft_power: empty signal");
  if (!(fs > 0.0)) throw std::invalid_argument("dft_power: sampling rate must be > 0");
  for (int k = 0; k < nfreq; ++k) {
    const double w = 2.0 * M_PI * freqs[k] / fs;
    double c = 0.0, sn = 0.0;
    for (int t = 0; t < len; ++t) {
      const double a = w * t;
      c += s[t] * std::cos(a);
      sn += s[t] * std::sin(a);
    }
    power[k] = c * c + sn * sn;
    if (cos_out) cos_out[k] = c;
    if (sin_out) sin_out[k] = sn;
  }
}

std::vector<double> dft_power(const std::vector<double>& s, double fs,
                              const std::vector<double>& freqs) {
  std::vector<double> p(freqs.size());
  dft_power(s.data(), static_cast<int>(s.size()), fs, freqs.data(),
            static_cast<int>(freqs.size()), p.data());
  return p;
}

}  // namespace cvd
