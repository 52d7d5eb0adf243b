#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cvd/mstmap.hpp"
#include "cvd/physio.hpp"
#include "cvd/rng.hpp"

namespace cvd::synth {

// Blood volume pulse: sum of sinusoidal harmonics of hr/60 Hz with seeded
// random phases plus optional white noise.
struct BvpSpec {
  double hr_bpm = 72.0;
  double fs = 30.0;
  double duration_s = 10.0;
  std::vector<double> harmonics = {1.0, 0.4, 0.2};
  double noise_std = 0.0;
  std::uint64_t seed = 0;
};

// Non-physiological corruption added before row normalization:
// a slow illumination drift, Poisson-timed motion bumps shared across rows,
// and a static per-row gain jitter.
struct NoiseSpec {
  std::string preset = "none";
  double drift_amp = 0.0;
  double drift_freq_hz = 0.05;  // must stay below 0.1 Hz
  double spike_rate_hz = 0.0;
  double spike_amp = 0.0;
  double row_gain_jitter = 0.0;
  std::uint64_t seed = 0;
};

NoiseSpec noise_preset(const std::string& name);  // none | low | moderate | high
std::vector<std::string> noise_preset_names();

struct PhysioLabels {
  double hr_bpm = 0.0;
  physio::Signal bvp;
};

struct LabeledSample {
  mstmap::MstMapData map;
  PhysioLabels labels;
  std::string noise_preset;
  int index = 0;
  std::string split;  // "train" or "val"
};

physio::Signal gen_bvp(const BvpSpec& spec);

// Relative pulsatility per channel (R,G,B,Y,U,V); green and luma carry the
// strongest plethysmographic signal, chroma the weakest.
inline constexpr std::array<double, mstmap::kChannels> kDefaultChannelWeights = {
    0.30, 1.00, 0.20, 0.80, 0.15, 0.25};

// rows must be 2^n - 1. Every row carries the same BVP scaled by a random
// row gain and the channel pulsatility weights, plus the configured
// corruption; rows are then min-max normalized exactly like the camera
// pipeline.
mstmap::MstMapData gen_mstmap(const physio::Signal& bvp, int rows, const NoiseSpec& noise,
                              const std::array<double, mstmap::kChannels>& channel_weights =
                                  kDefaultChannelWeights);

struct VideoSpec {
  int width = 64;
  int height = 48;
  int n_regions = 3;
  double amplitude = 12.0;  // peak intensity modulation in 8-bit units
  std::uint64_t seed = 0;
};

// Tiny synthetic clip: skin-toned rectangles whose brightness follows the
// BVP with per-region gains over a static background, plus matching ROIs.
mstmap::VideoClip gen_video(const physio::Signal& bvp, const VideoSpec& spec);

struct DatasetSpec {
  int count = 100;
  double hr_lo_bpm = 50.0;
  double hr_hi_bpm = 120.0;
  NoiseSpec noise;
  std::uint64_t seed = 1;
  int rows = 63;
  double fs = 30.0;
  double duration_s = 10.0;
  double bvp_noise_std = 0.02;
};

// HR uniform in [hr_lo, hr_hi]; per-sample streams derived from the master
// seed; 80/20 train/val split decided by a hash of the sample index alone.
std::vector<LabeledSample> gen_dataset(const DatasetSpec& spec);

std::string split_of_index(int index);  // "val" for ~20% of indices

// Resample with replacement so each occupied HR bin is equally likely;
// output size equals input size. Never invents samples for empty bins.
std::vector<LabeledSample> balance_resample(const std::vector<LabeledSample>& samples,
                                            double bin_width_bpm, Rng& rng);

// On-disk layout: maps/sample_NNNNN.mst (+ .json sidecar),
// bvp/sample_NNNNN.mst, manifest.json.
void write_dataset(const std::string& dir, const DatasetSpec& spec,
                   const std::vector<LabeledSample>& samples);
std::vector<LabeledSample> load_dataset(const std::string& dir);
std::string manifest_json(const DatasetSpec& spec, const std::vector<LabeledSample>& samples);

}  // namespace cvd::synth
