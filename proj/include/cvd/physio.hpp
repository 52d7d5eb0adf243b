#pragma once

#include <optional>
#include <vector>

namespace cvd::physio {

struct Signal {
  std::vector<double> samples;
  double fs = 0.0;
  double duration() const { return fs > 0.0 ? samples.size() / fs : 0.0; }
};

// Beat times in seconds (strictly increasing) and the interbeat intervals
// between consecutive kept beats. After filtering every interval lies in
// [0.25, 2.0] s.
struct IbiSeries {
  std::vector<double> beat_times;
  std::vector<double> intervals;
};

struct HrvFeatures {
  double rf_hz = 0.0;   // respiratory frequency: HF-band spectral peak
  double lf_nu = 0.0;   // LF power, normalized so lf_nu + hf_nu == 1
  double hf_nu = 0.0;
  double lf_hf = 0.0;   // LF/HF ratio
};

struct MetricsReport {
  double std_bpm = 0.0;   // population std of the error
  double mae_bpm = 0.0;
  double rmse_bpm = 0.0;
  std::optional<double> pearson_r;  // empty when either side is constant
};

// Spectral HR: argmax of the PSD on the signal's natural grid (bin = fs/N)
// over the band, refined from the complex spectrum around the peak. A tone on
// an exact bin comes back exactly; signal mean is removed first, so HR is
// invariant to affine rescaling. Needs >= 5 s of signal; a flat spectrum is
// an error.
double estimate_hr(const Signal& signal, double band_lo_bpm = 40.0, double band_hi_bpm = 180.0);

// PSD sampled on this module's grid; thin wrapper over the shared DFT kernel.
std::vector<double> psd(const Signal& signal, const std::vector<double>& freqs_hz);

struct PeakDetectorConfig {
  double window_s = 2.0;        // sliding stats window
  double threshold_sigma = 0.3; // threshold = window mean + sigma * window std
  double refractory_s = 0.4;
  double min_ibi_s = 0.25;
  double max_ibi_s = 2.0;
};

// Adaptive-threshold peak picking with sub-sample quadratic refinement.
// Keeps the longest run of beats whose intervals are all plausible; fewer
// than 3 beats is an error.
IbiSeries detect_peaks(const Signal& signal, const PeakDetectorConfig& cfg = {});

// LF [0.04,0.15) Hz and HF [0.15,0.4] Hz powers from the 4 Hz-resampled,
// mean-removed IBI series. Needs >= 30 s between first and last beat.
HrvFeatures hrv_features(const IbiSeries& ibis);

MetricsReport metrics(const std::vector<double>& pred_bpm, const std::vector<double>& gt_bpm);

// Video-level HR: mean of the per-clip predictions.
double sliding_window_hr(const std::vector<double>& clip_hrs);

Signal resample_linear(const Signal& signal, int new_len);

std::optional<double> pearson_r(const std::vector<double>& a, const std::vector<double>& b);

}  // namespace cvd::physio
