#include <cmath>
#include <numbers>
#include <vector>

#include "cvd/physio.hpp"
#include "cvd/psd.hpp"
#include "cvd/rng.hpp"
#include "cvd/tensor.hpp"
#include "doctest.h"
#include "support.hpp"

using namespace cvd;
using physio::Signal;

namespace {

Signal tone(double hr_bpm, double fs, int n, double phase = 0.0, double amp = 1.0) {
  Signal s;
  s.fs = fs;
  s.samples.resize(n);
  const double f = hr_bpm / 60.0;
  for (int t = 0; t < n; ++t)
    s.samples[t] = amp * std::sin(2.0 * std::numbers::pi * f * t / fs + phase);
  return s;
}

Signal affine(const Signal& s, double a, double b) {
  Signal out = s;
  for (double& v : out.samples) v = a * v + b;
  return out;
}

}  // namespace

TEST_CASE("spectral HR is exact on natural-grid tones") {
  // fs=30, N=300: 0.1 Hz resolution, so multiples of 6 bpm sit on exact bins.
  const Signal s = tone(72.0, 30.0, 300);
  CHECK(std::abs(physio::estimate_hr(s) - 72.0) <= 1e-9);
  for (int k = 8; k <= 29; ++k) {
    const double hr = 6.0 * k;
    const Signal sk = tone(hr, 30.0, 300, 0.7);
    CHECK(std::abs(physio::estimate_hr(sk) - hr) <= 1e-9);
  }
}

TEST_CASE("spectral HR stays within 1 bpm at 0 dB SNR") {
  int within = 0;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    Rng rng(Rng::mix(0xAB5EED, seed));
    const double hr = 45.0 + 130.0 * rng.uniform();
    Signal s = tone(hr, 30.0, 300, rng.uniform());
    // Tone power is 1/2; matching noise variance gives 0 dB.
    for (double& v : s.samples) v += std::sqrt(0.5) * rng.normal();
    if (std::abs(physio::estimate_hr(s) - hr) <= 1.0) ++within;
  }
  CHECK(within >= 18);
}

TEST_CASE("spectral HR picks the dominant of two tones") {
  Signal s = tone(72.0, 30.0, 300, 0.0, 2.0);
  const Signal weak = tone(100.0, 30.0, 300, 0.0, 1.0);
  for (int t = 0; t < 300; ++t) s.samples[t] += weak.samples[t];
  CHECK(physio::estimate_hr(s) == doctest::Approx(72.0).epsilon(0.002));
}

TEST_CASE("spectral HR is invariant to positive affine transforms") {
  // Power-of-two scaling maps every intermediate bitwise; the offset shifts
  // cancel below the vertex formula's resolution. Both must reproduce the
  // estimate exactly.
  const Signal centered = tone(72.0, 30.0, 300, 0.3);
  CHECK(physio::estimate_hr(affine(centered, 2.0, 3.0)) == physio::estimate_hr(centered));

  Rng rng(7);
  Signal noisy = tone(85.8, 30.0, 300, 0.3);
  for (double& v : noisy.samples) v += 0.2 * rng.normal();
  const double base = physio::estimate_hr(noisy);
  CHECK(physio::estimate_hr(affine(noisy, 0.5, 0.0)) == base);
  CHECK(physio::estimate_hr(affine(noisy, 1.7, 3.1)) == doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("spectral HR rejects unusable input") {
  CHECK_THROWS_WITH_AS(physio::estimate_hr(tone(72.0, 30.0, 60)), doctest::Contains("5 s"),
                       std::invalid_argument);
  Signal flat;
  flat.fs = 30.0;
  flat.samples.assign(300, 4.2);
  CHECK_THROWS_WITH_AS(physio::estimate_hr(flat), doctest::Contains("flat spectrum"),
                       std::invalid_argument);
  Signal bad_fs = tone(72.0, 30.0, 300);
  bad_fs.fs = 0.0;
  CHECK_THROWS_AS(physio::estimate_hr(bad_fs), std::invalid_argument);
  const Signal s = tone(72.0, 30.0, 300);
  CHECK_THROWS_AS(physio::estimate_hr(s, 180.0, 40.0), std::invalid_argument);
  // [43,47] bpm straddles no 6 bpm bin at this length.
  CHECK_THROWS_WITH_AS(physio::estimate_hr(s, 43.0, 47.0), doctest::Contains("no spectral bin"),
                       std::invalid_argument);
}

TEST_CASE("analysis PSD equals the differentiable graph PSD") {
  Rng rng(0xD5F);
  Signal s;
  s.fs = 6.4;
  s.samples.resize(64);
  for (double& v : s.samples) v = rng.normal();

  const double lo = 40.0 / 60.0, hi = 180.0 / 60.0, bw = 1.0 / 60.0;
  const std::vector<double> freqs = band_frequencies(lo, hi, bw);
  const std::vector<double> direct = physio::psd(s, freqs);

  Graph g;
  Tensor sig = Tensor::from_data({1, 64}, s.samples);
  Tensor p = g.psd(sig, s.fs, lo, hi, bw);
  REQUIRE(p.size() == direct.size());
  for (std::size_t k = 0; k < direct.size(); ++k)
    CHECK(std::abs(p.data()[k] - direct[k]) <= 1e-10);
}

TEST_CASE("peak detection recovers analytic beat spacing") {
  const Signal one_hz = tone(60.0, 30.0, 300);
  const physio::IbiSeries beats = physio::detect_peaks(one_hz);
  CHECK(beats.beat_times.size() >= 9);
  CHECK(beats.beat_times.size() <= 10);
  REQUIRE(beats.intervals.size() == beats.beat_times.size() - 1);
  for (double ibi : beats.intervals) CHECK(ibi == doctest::Approx(1.0).epsilon(0.01));

  const physio::IbiSeries faster = physio::detect_peaks(tone(72.0, 30.0, 300));
  double mean_ibi = 0.0;
  for (double ibi : faster.intervals) mean_ibi += ibi;
  mean_ibi /= faster.intervals.size();
  CHECK(mean_ibi == doctest::Approx(0.8333).epsilon(0.012));
}

TEST_CASE("peak detection beat times are affine invariant") {
  Rng rng(21);
  Signal s = tone(66.0, 30.0, 300);
  for (double& v : s.samples) v += 0.1 * rng.normal();
  const physio::IbiSeries base = physio::detect_peaks(s);
  const physio::IbiSeries scaled = physio::detect_peaks(affine(s, 4.0, 0.0));
  REQUIRE(scaled.beat_times.size() == base.beat_times.size());
  for (std::size_t i = 0; i < base.beat_times.size(); ++i)
    CHECK(scaled.beat_times[i] == base.beat_times[i]);  // power-of-two scale: bitwise

  const physio::IbiSeries shifted = physio::detect_peaks(affine(s, 1.7, 0.4));
  REQUIRE(shifted.beat_times.size() == base.beat_times.size());
  for (std::size_t i = 0; i < base.beat_times.size(); ++i)
    CHECK(shifted.beat_times[i] == doctest::Approx(base.beat_times[i]).epsilon(1e-12));
}

TEST_CASE("peak detection rejects flat and short input") {
  Signal flat;
  flat.fs = 30.0;
  flat.samples.assign(300, 1.0);
  CHECK_THROWS_WITH_AS(physio::detect_peaks(flat), doctest::Contains("beats"),
                       std::invalid_argument);
  CHECK_THROWS_WITH_AS(physio::detect_peaks(tone(60.0, 30.0, 90)), doctest::Contains("5 s"),
                       std::invalid_argument);
}

namespace {

// Beats whose interval breathes sinusoidally at mod_hz around 1 s.
physio::IbiSeries modulated_ibis(double mod_hz, double total_s, double depth = 0.05) {
  physio::IbiSeries out;
  double t = 0.0;
  out.beat_times.push_back(t);
  while (t < total_s) {
    const double iv = 1.0 + depth * std::sin(2.0 * std::numbers::pi * mod_hz * t);
    t += iv;
    out.beat_times.push_back(t);
    out.intervals.push_back(iv);
  }
  return out;
}

}  // namespace

TEST_CASE("HRV features localize single-band IBI modulation") {
  const physio::HrvFeatures lf_case = physio::hrv_features(modulated_ibis(0.1, 120.0));
  CHECK(lf_case.lf_nu >= 0.95);
  CHECK(lf_case.lf_hf >= 19.0);
  CHECK(lf_case.lf_nu + lf_case.hf_nu == 1.0);

  const physio::HrvFeatures hf_case = physio::hrv_features(modulated_ibis(0.3, 120.0));
  CHECK(hf_case.hf_nu >= 0.95);
  CHECK(std::abs(hf_case.rf_hz - 0.30) <= 0.02);
  CHECK(hf_case.lf_nu + hf_case.hf_nu == 1.0);
}

TEST_CASE("HRV features reject short or inconsistent series") {
  CHECK_THROWS_WITH_AS(physio::hrv_features(modulated_ibis(0.1, 20.0)),
                       doctest::Contains("30 s"), std::invalid_argument);
  physio::IbiSeries broken = modulated_ibis(0.1, 60.0);
  broken.intervals.pop_back();
  CHECK_THROWS_AS(physio::hrv_features(broken), std::invalid_argument);
}

TEST_CASE("metrics match hand-computed values") {
  const physio::MetricsReport perfect = physio::metrics({60, 70, 80}, {60, 70, 80});
  CHECK(perfect.std_bpm == 0.0);
  CHECK(perfect.mae_bpm == 0.0);
  CHECK(perfect.rmse_bpm == 0.0);
  REQUIRE(perfect.pearson_r.has_value());
  CHECK(*perfect.pearson_r == doctest::Approx(1.0).epsilon(1e-12));

  // Errors +2 and -2: MAE 2, RMSE 2, population std 2, and the prediction is
  // a positive affine map of the truth so r is exactly 1.
  const physio::MetricsReport half = physio::metrics({62, 68}, {60, 70});
  CHECK(half.mae_bpm == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(half.rmse_bpm == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(half.std_bpm == doctest::Approx(2.0).epsilon(1e-12));
  REQUIRE(half.pearson_r.has_value());
  CHECK(*half.pearson_r == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("metrics invariants: RMSE dominates MAE, permutations are neutral") {
  Rng rng(0x3E7);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> pred(8), gt(8);
    for (int i = 0; i < 8; ++i) {
      gt[i] = 60.0 + 60.0 * rng.uniform();
      pred[i] = gt[i] + 5.0 * rng.normal();
    }
    const physio::MetricsReport r = physio::metrics(pred, gt);
    CHECK(r.rmse_bpm >= r.mae_bpm);
    CHECK(r.mae_bpm >= 0.0);

    std::vector<double> pred_p, gt_p;
    for (int i = 7; i >= 0; --i) {
      pred_p.push_back(pred[i]);
      gt_p.push_back(gt[i]);
    }
    const physio::MetricsReport rp = physio::metrics(pred_p, gt_p);
    CHECK(rp.mae_bpm == doctest::Approx(r.mae_bpm).epsilon(1e-12));
    CHECK(rp.rmse_bpm == doctest::Approx(r.rmse_bpm).epsilon(1e-12));
    CHECK(rp.std_bpm == doctest::Approx(r.std_bpm).epsilon(1e-12));
    CHECK(*rp.pearson_r == doctest::Approx(*r.pearson_r).epsilon(1e-12));
  }
  // Small integers sum exactly in either order: the permuted report is
  // bitwise identical.
  const physio::MetricsReport a = physio::metrics({62, 68, 75, 90}, {60, 70, 80, 88});
  const physio::MetricsReport b = physio::metrics({75, 62, 90, 68}, {80, 60, 88, 70});
  CHECK(a.mae_bpm == b.mae_bpm);
  CHECK(a.rmse_bpm == b.rmse_bpm);
  CHECK(a.std_bpm == b.std_bpm);
}

TEST_CASE("metrics flag undefined correlation and bad shapes") {
  const physio::MetricsReport flat = physio::metrics({70, 70, 70}, {60, 65, 72});
  CHECK_FALSE(flat.pearson_r.has_value());
  CHECK(flat.mae_bpm > 0.0);
  CHECK_THROWS_AS(physio::metrics({60, 70}, {60}), std::invalid_argument);
  CHECK_THROWS_AS(physio::metrics({60}, {60}), std::invalid_argument);
}

TEST_CASE("video-level HR averages clip predictions") {
  CHECK(physio::sliding_window_hr({70.0, 74.0}) == doctest::Approx(72.0).epsilon(1e-15));
  CHECK(physio::sliding_window_hr({66.0}) == 66.0);
  CHECK_THROWS_AS(physio::sliding_window_hr({}), std::invalid_argument);
}

TEST_CASE("linear resampling keeps endpoints and interpolates midpoints") {
  Signal s;
  s.fs = 3.0;
  s.samples = {0.0, 1.0, 2.0, 3.0};
  const Signal up = physio::resample_linear(s, 7);
  REQUIRE(up.samples.size() == 7);
  CHECK(up.samples.front() == 0.0);
  CHECK(up.samples.back() == 3.0);
  CHECK(up.samples[1] == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(up.samples[3] == doctest::Approx(1.5).epsilon(1e-15));
  CHECK(up.fs == doctest::Approx(6.0).epsilon(1e-15));

  const Signal same = physio::resample_linear(s, 4);
  for (int i = 0; i < 4; ++i) CHECK(same.samples[i] == s.samples[i]);

  CHECK_THROWS_AS(physio::resample_linear(s, 1), std::invalid_argument);
  Signal tiny;
  tiny.fs = 1.0;
  tiny.samples = {1.0};
  CHECK_THROWS_AS(physio::resample_linear(tiny, 5), std::invalid_argument);
}

TEST_CASE("pearson helper handles degenerate inputs") {
  CHECK(*physio::pearson_r({1, 2, 3}, {2, 4, 6}) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(*physio::pearson_r({1, 2, 3}, {6, 4, 2}) == doctest::Approx(-1.0).epsilon(1e-12));
  CHECK_FALSE(physio::pearson_r({1, 1, 1}, {1, 2, 3}).has_value());
  CHECK_FALSE(physio::pearson_r({1, 2}, {1, 2, 3}).has_value());
}
