#include "cvd/physio.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <stdexcept>
#include <string>

#include "cvd/psd.hpp"

namespace cvd::physio {

namespace {

// Quadratic vertex refinement around a sampled peak; offset clamped to half a
// bin in either direction.
double quadratic_offset(double left, double mid, double right) {
  const double denom = left - 2.0 * mid + right;
  if (denom >= 0.0) return 0.0;  // not a strict local max in the fitted parabola
  double off = 0.5 * (left - right) / denom;
  return std::clamp(off, -0.5, 0.5);
}

}  // namespace

std::vector<double> psd(const Signal& signal, const std::vector<double>& freqs_hz) {
  return dft_power(signal.samples, signal.fs, freqs_hz);
}

double estimate_hr(const Signal& signal, double band_lo_bpm, double band_hi_bpm) {
  if (!(signal.fs > 0.0)) throw std::invalid_argument("estimate_hr: sampling rate must be > 0");
  if (signal.duration() < 5.0)
    throw std::invalid_argument("estimate_hr: signal covers " +
                                std::to_string(signal.duration()) + " s, need at least 5 s");
  if (!(band_lo_bpm > 0.0) || !(band_hi_bpm > band_lo_bpm))
    throw std::invalid_argument("estimate_hr: invalid band [" + std::to_string(band_lo_bpm) +
                                ", " + std::to_string(band_hi_bpm) + "] bpm");
  // Mean removal keeps DC leakage out of the band and makes the result exactly
  // invariant to constant offsets.
  std::vector<double> x = signal.samples;
  const auto [mn, mx] = std::minmax_element(x.begin(), x.end());
  if (*mn == *mx) throw std::invalid_argument("estimate_hr: flat spectrum, no peak in band");
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= x.size();
  for (double& v : x) v -= mean;

  // Search on the signal's natural spectral grid (bin width fs/N). A tone with
  // an integer number of cycles contributes nothing to the neighbouring bins of
  // that grid, so the vertex fit lands on the true frequency; a finer ad-hoc
  // grid would trade that for leakage-driven bias near the peak.
  const int n = static_cast<int>(x.size());
  const double bin_bpm = 60.0 * signal.fs / static_cast<double>(n);
  const double hi_bpm = std::min(band_hi_bpm, 30.0 * signal.fs);  // cap at Nyquist
  long k_lo = static_cast<long>(std::ceil(band_lo_bpm / bin_bpm - 1e-9));
  long k_hi = static_cast<long>(std::floor(hi_bpm / bin_bpm + 1e-9));
  if (k_lo < 1) k_lo = 1;  // DC is never a heart rate
  if (k_hi < k_lo)
    throw std::invalid_argument("estimate_hr: band [" + std::to_string(band_lo_bpm) + ", " +
                                std::to_string(band_hi_bpm) +
                                "] bpm holds no spectral bin at resolution " +
                                std::to_string(bin_bpm) + " bpm");
  // One extra bin each side (when it exists on the grid) so a peak at the band
  // edge still gets a symmetric vertex fit.
  const long k_first = std::max(1L, k_lo - 1);
  const long k_last = k_hi + 1;
  std::vector<double> freqs(static_cast<std::size_t>(k_last - k_first + 1));
  for (long k = k_first; k <= k_last; ++k)
    freqs[static_cast<std::size_t>(k - k_first)] = static_cast<double>(k) * signal.fs / n;
  std::vector<double> power(freqs.size()), c(freqs.size()), s(freqs.size());
  dft_power(x.data(), n, signal.fs, freqs.data(), static_cast<int>(freqs.size()), power.data(),
            c.data(), s.data());
  std::size_t peak = static_cast<std::size_t>(k_lo - k_first);
  const std::size_t in_band_end = static_cast<std::size_t>(k_hi - k_first);
  for (std::size_t k = peak + 1; k <= in_band_end; ++k)
    if (power[k] > power[peak]) peak = k;
  if (power[peak] == 0.0)
    throw std::invalid_argument("estimate_hr: flat spectrum, no peak in band");
  // Vertex refinement from the complex spectrum (Jacobsen's estimator with
  // Candan's small-N correction). Unlike a parabola through the power values,
  // this stays within a small fraction of a bin on off-grid tones, and for an
  // exact-bin tone both neighbours vanish so the offset is identically zero.
  double offset = 0.0;
  if (peak > 0 && peak + 1 < power.size()) {
    const std::complex<double> xl(c[peak - 1], -s[peak - 1]);
    const std::complex<double> xm(c[peak], -s[peak]);
    const std::complex<double> xr(c[peak + 1], -s[peak + 1]);
    const std::complex<double> den = 2.0 * xm - xl - xr;
    if (std::norm(den) > 0.0) {
      const double theta = M_PI / static_cast<double>(n);
      offset = std::clamp((std::tan(theta) / theta) * ((xl - xr) / den).real(), -0.5, 0.5);
    }
  }
  return (static_cast<double>(k_first) + static_cast<double>(peak) + offset) * bin_bpm;
}

IbiSeries detect_peaks(const Signal& signal, const PeakDetectorConfig& cfg) {
  if (!(signal.fs > 0.0)) throw std::invalid_argument("detect_peaks: sampling rate must be > 0");
  if (signal.duration() < 5.0)
    throw std::invalid_argument("detect_peaks: signal covers " +
                                std::to_string(signal.duration()) + " s, need at least 5 s");
  const auto& s = signal.samples;
  const int n = static_cast<int>(s.size());
  // Prefix sums for O(1) sliding mean/std.
  std::vector<double> ps(n + 1, 0.0), ps2(n + 1, 0.0);
  for (int i = 0; i < n; ++i) {
    ps[i + 1] = ps[i] + s[i];
    ps2[i + 1] = ps2[i] + s[i] * s[i];
  }
  const int half = std::max(1, static_cast<int>(std::lround(cfg.window_s * signal.fs / 2.0)));
  auto threshold_at = [&](int i) {
    const int lo = std::max(0, i - half);
    const int hi = std::min(n - 1, i + half);
    const double m = static_cast<double>(hi - lo + 1);
    const double mean = (ps[hi + 1] - ps[lo]) / m;
    const double var = std::max(0.0, (ps2[hi + 1] - ps2[lo]) / m - mean * mean);
    return mean + cfg.threshold_sigma * std::sqrt(var);
  };

  const int refractory = std::max(1, static_cast<int>(std::lround(cfg.refractory_s * signal.fs)));
  std::vector<int> kept;
  for (int i = 1; i + 1 < n; ++i) {
    if (!(s[i] > s[i - 1] && s[i] >= s[i + 1])) continue;  // local max (plateau keeps first)
    if (s[i] < threshold_at(i)) continue;
    if (!kept.empty() && i - kept.back() < refractory) {
      if (s[i] > s[kept.back()]) kept.back() = i;  // later, taller peak wins the window
      continue;
    }
    kept.push_back(i);
  }

  std::vector<double> times;
  times.reserve(kept.size());
  for (int i : kept) {
    const double off = quadratic_offset(s[i - 1], s[i], s[i + 1]);
    times.push_back((static_cast<double>(i) + off) / signal.fs);
  }

  // Keep the longest stretch whose successive gaps are all physiological so
  // the interval list stays consistent with the beat list.
  std::size_t best_lo = 0, best_len = times.empty() ? 0 : 1;
  std::size_t run_lo = 0;
  for (std::size_t i = 1; i < times.size(); ++i) {
    const double gap = times[i] - times[i - 1];
    if (gap < cfg.min_ibi_s || gap > cfg.max_ibi_s) run_lo = i;
    if (i - run_lo + 1 > best_len) {
      best_len = i - run_lo + 1;
      best_lo = run_lo;
    }
  }
  IbiSeries out;
  for (std::size_t i = best_lo; i < best_lo + best_len; ++i) out.beat_times.push_back(times[i]);
  if (out.beat_times.size() < 3)
    throw std::invalid_argument("detect_peaks: found " + std::to_string(out.beat_times.size()) +
                                " usable beats, need at least 3");
  for (std::size_t i = 1; i < out.beat_times.size(); ++i)
    out.intervals.push_back(out.beat_times[i] - out.beat_times[i - 1]);
  return out;
}

HrvFeatures hrv_features(const IbiSeries& ibis) {
  if (ibis.beat_times.size() < 3 || ibis.intervals.size() + 1 != ibis.beat_times.size())
    throw std::invalid_argument("hrv_features: need a consistent series with at least 3 beats");
  const double span = ibis.beat_times.back() - ibis.beat_times.front();
  if (span < 30.0)
    throw std::invalid_argument("hrv_features: beats cover " + std::to_string(span) +
                                " s, need at least 30 s");
  // Each interval is known at the time of its closing beat; resample that
  // node series (time bt[j+1], value iv[j]) uniformly at 4 Hz.
  const auto& bt = ibis.beat_times;
  const auto& iv = ibis.intervals;
  const std::size_t K = iv.size();
  const double fs = 4.0;
  const double t0 = bt[1];
  const double t1 = bt.back();
  const int nsamp = static_cast<int>(std::floor((t1 - t0) * fs)) + 1;
  std::vector<double> series(nsamp);
  std::size_t j = 0;
  for (int i = 0; i < nsamp; ++i) {
    const double t = t0 + i / fs;
    while (j + 1 < K && bt[j + 2] < t) ++j;
    if (j + 1 >= K) {
      series[i] = iv[K - 1];
      continue;
    }
    const double ta = bt[j + 1], tb = bt[j + 2];
    const double va = iv[j], vb = iv[j + 1];
    series[i] = tb > ta ? va + (vb - va) * std::clamp((t - ta) / (tb - ta), 0.0, 1.0) : va;
  }
  double mean = 0.0;
  for (double v : series) mean += v;
  mean /= series.size();
  for (double& v : series) v -= mean;

  const double f_lo = 0.04, f_split = 0.15, f_hi = 0.40, bw = 0.005;
  const std::vector<double> freqs = band_frequencies(f_lo, f_hi, bw);
  std::vector<double> power(freqs.size());
  dft_power(series.data(), nsamp, fs, freqs.data(), static_cast<int>(freqs.size()), power.data());

  double lf = 0.0, hf = 0.0;
  std::size_t hf_peak = 0;
  bool has_peak = false;
  for (std::size_t k = 0; k < freqs.size(); ++k) {
    if (freqs[k] < f_split) {
      lf += power[k];
    } else {
      hf += power[k];
      if (!has_peak || power[k] > power[hf_peak]) {
        hf_peak = k;
        has_peak = true;
      }
    }
  }
  const double total = lf + hf;
  if (total == 0.0)
    throw std::invalid_argument("hrv_features: no spectral power in [0.04, 0.4] Hz");
  HrvFeatures out;
  out.lf_nu = lf / total;
  out.hf_nu = 1.0 - out.lf_nu;  // exact complement by construction
  out.lf_hf = hf > 0.0 ? lf / hf : std::numeric_limits<double>::infinity();
  double offset = 0.0;
  if (hf_peak > 0 && hf_peak + 1 < freqs.size())
    offset = quadratic_offset(power[hf_peak - 1], power[hf_peak], power[hf_peak + 1]);
  out.rf_hz = freqs[hf_peak] + offset * bw;
  return out;
}

MetricsReport metrics(const std::vector<double>& pred_bpm, const std::vector<double>& gt_bpm) {
  if (pred_bpm.size() != gt_bpm.size())
    throw std::invalid_argument("metrics: " + std::to_string(pred_bpm.size()) +
                                " predictions vs " + std::to_string(gt_bpm.size()) + " labels");
  if (pred_bpm.size() < 2)
    throw std::invalid_argument("metrics: need at least 2 samples, got " +
                                std::to_string(pred_bpm.size()));
  const std::size_t n = pred_bpm.size();
  double mae = 0.0, mse = 0.0, mean_err = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double e = pred_bpm[i] - gt_bpm[i];
    mae += std::abs(e);
    mse += e * e;
    mean_err += e;
  }
  mae /= n;
  mse /= n;
  mean_err /= n;
  double var = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double e = pred_bpm[i] - gt_bpm[i] - mean_err;
    var += e * e;
  }
  MetricsReport out;
  out.mae_bpm = mae;
  out.rmse_bpm = std::sqrt(mse);
  out.std_bpm = std::sqrt(var / n);
  out.pearson_r = pearson_r(pred_bpm, gt_bpm);
  return out;
}

double sliding_window_hr(const std::vector<double>& clip_hrs) {
  if (clip_hrs.empty()) throw std::invalid_argument("sliding_window_hr: no clip predictions");
  double s = 0.0;
  for (double v : clip_hrs) s += v;
  return s / clip_hrs.size();
}

Signal resample_linear(const Signal& signal, int new_len) {
  if (new_len < 2) throw std::invalid_argument("resample_linear: target length must be >= 2");
  if (signal.samples.size() < 2)
    throw std::invalid_argument("resample_linear: source needs at least 2 samples");
  const int n = static_cast<int>(signal.samples.size());
  Signal out;
  out.samples.resize(new_len);
  const double scale = static_cast<double>(n - 1) / (new_len - 1);
  for (int i = 0; i < new_len; ++i) {
    const double pos = i * scale;
    const int i0 = std::min(static_cast<int>(pos), n - 2);
    const double f = pos - i0;
    out.samples[i] = signal.samples[i0] * (1.0 - f) + signal.samples[i0 + 1] * f;
  }
  out.fs = signal.fs * static_cast<double>(new_len - 1) / (n - 1);
  return out;
}

std::optional<double> pearson_r(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size() || a.size() < 2) return std::nullopt;
  const std::size_t n = a.size();
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) return std::nullopt;  // undefined for constant input
  return sab / std::sqrt(saa * sbb);
}

}  // namespace cvd::physio
