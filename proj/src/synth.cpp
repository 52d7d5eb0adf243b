#include "cvd/synth.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "cvd/serialize.hpp"

namespace cvd::synth {

namespace {

constexpr double kBaseline[mstmap::kChannels] = {120.0, 110.0, 100.0, 110.0, 128.0, 128.0};

bool is_pow2_minus_1(int rows) {
  const unsigned v = static_cast<unsigned>(rows) + 1u;
  return rows >= 1 && (v & (v - 1u)) == 0u;
}

}  // namespace

NoiseSpec noise_preset(const std::string& name) {
  NoiseSpec s;
  s.preset = name;
  if (name == "none") {
    // all zero
  } else if (name == "low") {
    s.drift_amp = 0.3;
    s.drift_freq_hz = 0.05;
    s.spike_rate_hz = 0.1;
    s.spike_amp = 0.5;
    s.row_gain_jitter = 0.1;
  } else if (name == "moderate") {
    s.drift_amp = 0.8;
    s.drift_freq_hz = 0.06;
    s.spike_rate_hz = 0.25;
    s.spike_amp = 1.5;
    s.row_gain_jitter = 0.2;
  } else if (name == "high") {
    s.drift_amp = 1.6;
    s.drift_freq_hz = 0.07;
    s.spike_rate_hz = 0.5;
    s.spike_amp = 3.0;
    s.row_gain_jitter = 0.35;
  } else {
    throw std::invalid_argument("noise_preset: unknown preset '" + name +
                                "' (expected none|low|moderate|high)");
  }
  return s;
}

std::vector<std::string> noise_preset_names() { return {"none", "low", "moderate", "high"}; }

physio::Signal gen_bvp(const BvpSpec& spec) {
  if (spec.hr_bpm < 40.0 || spec.hr_bpm > 180.0)
    throw std::invalid_argument("gen_bvp: hr " + std::to_string(spec.hr_bpm) +
                                " bpm outside [40, 180]");
  if (!(spec.duration_s > 0.0)) throw std::invalid_argument("gen_bvp: duration must be > 0");
  const double f0 = spec.hr_bpm / 60.0;
  const double top = f0 * static_cast<double>(spec.harmonics.size());
  if (!spec.harmonics.empty() && spec.fs < 2.0 * top)
    throw std::invalid_argument("gen_bvp: fs " + std::to_string(spec.fs) +
                                " Hz under-samples the " + std::to_string(top) +
                                " Hz top harmonic");
  Rng rng(spec.seed);
  std::vector<double> phase(spec.harmonics.size());
  for (auto& p : phase) p = rng.uniform(0.0, 2.0 * M_PI);
  const int n = static_cast<int>(std::lround(spec.duration_s * spec.fs));
  physio::Signal out;
  out.fs = spec.fs;
  out.samples.resize(n);
  for (int t = 0; t < n; ++t) {
    const double tt = t / spec.fs;
    double v = 0.0;
    for (std::size_t k = 0; k < spec.harmonics.size(); ++k)
      v += spec.harmonics[k] * std::sin(2.0 * M_PI * (k + 1) * f0 * tt + phase[k]);
    if (spec.noise_std > 0.0) v += spec.noise_std * rng.normal();
    out.samples[t] = v;
  }
  return out;
}

mstmap::MstMapData gen_mstmap(const physio::Signal& bvp, int rows, const NoiseSpec& noise,
                              const std::array<double, mstmap::kChannels>& channel_weights) {
  if (!is_pow2_minus_1(rows))
    throw std::invalid_argument("gen_mstmap: rows " + std::to_string(rows) +
                                " is not 2^n - 1 for any region count n");
  if (bvp.samples.size() < 2) throw std::invalid_argument("gen_mstmap: BVP too short");
  if (!(noise.drift_freq_hz < 0.1))
    throw std::invalid_argument("gen_mstmap: drift frequency " +
                                std::to_string(noise.drift_freq_hz) +
                                " Hz must stay below 0.1 Hz");
  const int T = static_cast<int>(bvp.samples.size());
  const double duration = T / bvp.fs;
  int n_regions = 0;
  for (int v = rows + 1; v > 1; v >>= 1) ++n_regions;

  Rng rng(noise.seed);
  // Shared corruption first so the per-row stream layout is fixed.
  const double drift_phase = rng.uniform(0.0, 2.0 * M_PI);
  std::vector<double> shared(T, 0.0);
  if (noise.drift_amp > 0.0) {
    for (int t = 0; t < T; ++t)
      shared[t] += noise.drift_amp *
                   std::sin(2.0 * M_PI * noise.drift_freq_hz * t / bvp.fs + drift_phase);
  }
  const int n_spikes = noise.spike_rate_hz > 0.0 ? rng.poisson(noise.spike_rate_hz * duration) : 0;
  for (int e = 0; e < n_spikes; ++e) {
    const double center = rng.uniform(0.0, duration);
    const double width = rng.uniform(0.1, 0.4);
    const double amp = noise.spike_amp * std::abs(rng.normal()) * (rng.bernoulli(0.5) ? 1.0 : -1.0);
    for (int t = 0; t < T; ++t) {
      const double d = (t / bvp.fs - center) / width;
      shared[t] += amp * std::exp(-0.5 * d * d);
    }
  }

  mstmap::MstMapData map = mstmap::MstMapData::make(rows, T, bvp.fs, n_regions);
  for (int r = 0; r < rows; ++r) {
    double gain = rng.uniform(0.5, 1.5);
    if (noise.row_gain_jitter > 0.0)
      gain = std::max(0.05, gain * (1.0 + noise.row_gain_jitter * rng.normal()));
    const double coupling = rng.uniform(0.5, 1.5);
    for (int t = 0; t < T; ++t) {
      const double corrupt = coupling * shared[t];
      for (int c = 0; c < mstmap::kChannels; ++c)
        map.at(r, t, c) = kBaseline[c] + gain * channel_weights[c] * bvp.samples[t] + corrupt;
    }
  }
  minmax_normalize_rows(map);
  return map;
}

mstmap::VideoClip gen_video(const physio::Signal& bvp, const VideoSpec& spec) {
  if (spec.n_regions < 1 || spec.n_regions > 6)
    throw std::invalid_argument("gen_video: region count " + std::to_string(spec.n_regions) +
                                " outside [1,6]");
  if (bvp.samples.size() < 2) throw std::invalid_argument("gen_video: BVP too short");
  const int T = static_cast<int>(bvp.samples.size());
  const int margin = 2;
  const int strip_w = (spec.width - margin * (spec.n_regions + 1)) / spec.n_regions;
  const int strip_h = spec.height - 2 * margin;
  if (strip_w < 2 || strip_h < 2)
    throw std::invalid_argument("gen_video: frame " + std::to_string(spec.width) + "x" +
                                std::to_string(spec.height) + " too small for " +
                                std::to_string(spec.n_regions) + " regions");
  Rng rng(spec.seed);
  std::vector<double> gain(spec.n_regions);
  for (auto& g : gain) g = rng.uniform(0.5, 1.5);

  // Modulation direction in RGB: green strongest, like skin.
  const double dir[3] = {0.35, 1.0, 0.25};
  const std::uint8_t bg[3] = {40, 45, 60};
  const double base[3] = {205.0, 150.0, 125.0};

  mstmap::VideoClip clip;
  clip.fps = bvp.fs;
  clip.frames.reserve(T);
  clip.rois.reserve(T);
  std::vector<mstmap::Region> regions;
  for (int i = 0; i < spec.n_regions; ++i)
    regions.push_back(mstmap::Region::from_box(margin + i * (strip_w + margin), margin, strip_w,
                                               strip_h));
  for (int t = 0; t < T; ++t) {
    ImageU8 frame;
    frame.width = spec.width;
    frame.height = spec.height;
    frame.channels = 3;
    frame.pixels.resize(static_cast<std::size_t>(spec.width) * spec.height * 3);
    for (int y = 0; y < spec.height; ++y)
      for (int x = 0; x < spec.width; ++x)
        for (int c = 0; c < 3; ++c) frame.at(x, y, c) = bg[c];
    for (int i = 0; i < spec.n_regions; ++i) {
      const auto& b = regions[i].box;
      double rgb[3];
      for (int c = 0; c < 3; ++c) {
        const double v = base[c] + spec.amplitude * dir[c] * gain[i] * bvp.samples[t];
        rgb[c] = std::min(255.0, std::max(0.0, v));
      }
      for (int y = b.y; y < b.y + b.h; ++y)
        for (int x = b.x; x < b.x + b.w; ++x)
          for (int c = 0; c < 3; ++c)
            frame.at(x, y, c) = static_cast<std::uint8_t>(std::lround(rgb[c]));
    }
    clip.frames.push_back(std::move(frame));
    mstmap::RoiFrame rf;
    rf.frame_index = t;
    rf.regions = regions;
    clip.rois.push_back(std::move(rf));
  }
  return clip;
}

std::string split_of_index(int index) {
  return Rng::mix(0x5eedf00dULL, static_cast<std::uint64_t>(index)) % 5 == 0 ? "val" : "train";
}

std::vector<LabeledSample> gen_dataset(const DatasetSpec& spec) {
  if (spec.count < 1) throw std::invalid_argument("gen_dataset: count must be >= 1");
  if (!(spec.hr_lo_bpm < spec.hr_hi_bpm))
    throw std::invalid_argument("gen_dataset: empty HR range [" +
                                std::to_string(spec.hr_lo_bpm) + ", " +
                                std::to_string(spec.hr_hi_bpm) + "]");
  std::vector<LabeledSample> out;
  out.reserve(spec.count);
  for (int i = 0; i < spec.count; ++i) {
    const std::uint64_t seed_i = Rng::mix(spec.seed, static_cast<std::uint64_t>(i));
    Rng hr_rng(Rng::mix(seed_i, 1));
    const double hr = hr_rng.uniform(spec.hr_lo_bpm, spec.hr_hi_bpm);
    BvpSpec bspec;
    bspec.hr_bpm = hr;
    bspec.fs = spec.fs;
    bspec.duration_s = spec.duration_s;
    bspec.noise_std = spec.bvp_noise_std;
    bspec.seed = Rng::mix(seed_i, 2);
    NoiseSpec nspec = spec.noise;
    nspec.seed = Rng::mix(seed_i, 3);
    LabeledSample sample;
    sample.labels.bvp = gen_bvp(bspec);
    sample.labels.hr_bpm = hr;
    sample.map = gen_mstmap(sample.labels.bvp, spec.rows, nspec);
    sample.noise_preset = spec.noise.preset;
    sample.index = i;
    sample.split = split_of_index(i);
    out.push_back(std::move(sample));
  }
  return out;
}

std::vector<LabeledSample> balance_resample(const std::vector<LabeledSample>& samples,
                                            double bin_width_bpm, Rng& rng) {
  if (samples.empty()) throw std::invalid_argument("balance_resample: empty input");
  if (!(bin_width_bpm > 0.0))
    throw std::invalid_argument("balance_resample: bin width must be > 0");
  std::vector<long> keys(samples.size());
  std::vector<std::vector<std::size_t>> bins;
  std::vector<long> bin_key;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const long key = static_cast<long>(std::floor(samples[i].labels.hr_bpm / bin_width_bpm));
    keys[i] = key;
    std::size_t b = 0;
    for (; b < bin_key.size(); ++b)
      if (bin_key[b] == key) break;
    if (b == bin_key.size()) {
      bin_key.push_back(key);
      bins.emplace_back();
    }
    bins[b].push_back(i);
  }
  std::vector<LabeledSample> out;
  out.reserve(samples.size());
  for (std::size_t k = 0; k < samples.size(); ++k) {
    const auto& bin = bins[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(bins.size()) - 1))];
    out.push_back(samples[bin[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(bin.size()) - 1))]]);
  }
  return out;
}

namespace {

std::string sample_stem(int index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "sample_%05d", index);
  return buf;
}

nlohmann::json manifest_of(const DatasetSpec& spec, const std::vector<LabeledSample>& samples) {
  nlohmann::json m;
  m["seed"] = spec.seed;
  m["count"] = spec.count;
  m["hr_lo_bpm"] = spec.hr_lo_bpm;
  m["hr_hi_bpm"] = spec.hr_hi_bpm;
  m["noise"] = spec.noise.preset;
  m["rows"] = spec.rows;
  m["fps"] = spec.fs;
  m["duration_s"] = spec.duration_s;
  m["bvp_noise_std"] = spec.bvp_noise_std;
  nlohmann::json list = nlohmann::json::array();
  for (const auto& s : samples) {
    nlohmann::json e;
    e["index"] = s.index;
    e["hr_gt"] = s.labels.hr_bpm;
    e["split"] = s.split;
    e["noise"] = s.noise_preset;
    e["map_file"] = "maps/" + sample_stem(s.index) + ".mst";
    e["bvp_file"] = "bvp/" + sample_stem(s.index) + ".mst";
    list.push_back(std::move(e));
  }
  m["samples"] = std::move(list);
  return m;
}

}  // namespace

std::string manifest_json(const DatasetSpec& spec, const std::vector<LabeledSample>& samples) {
  return manifest_of(spec, samples).dump(2);
}

void write_dataset(const std::string& dir, const DatasetSpec& spec,
                   const std::vector<LabeledSample>& samples) {
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(dir) / "maps");
  fs::create_directories(fs::path(dir) / "bvp");
  for (const auto& s : samples) {
    mstmap::write_map_file((fs::path(dir) / "maps" / (sample_stem(s.index) + ".mst")).string(),
                           s.map, /*f32=*/true);
    Tensor bvp = Tensor::from_data({static_cast<int>(s.labels.bvp.samples.size())},
                                   s.labels.bvp.samples);
    write_tensor_file((fs::path(dir) / "bvp" / (sample_stem(s.index) + ".mst")).string(), bvp);
  }
  std::ofstream os(fs::path(dir) / "manifest.json");
  if (!os) throw std::runtime_error("write_dataset: cannot open manifest in " + dir);
  os << manifest_json(spec, samples) << "\n";
}

std::vector<LabeledSample> load_dataset(const std::string& dir) {
  namespace fs = std::filesystem;
  std::ifstream is(fs::path(dir) / "manifest.json");
  if (!is) throw std::runtime_error("load_dataset: cannot open " + dir + "/manifest.json");
  nlohmann::json m = nlohmann::json::parse(is);
  const double fps = m.value("fps", 30.0);
  std::vector<LabeledSample> out;
  for (const auto& e : m.at("samples")) {
    LabeledSample s;
    s.index = e.at("index").get<int>();
    s.labels.hr_bpm = e.at("hr_gt").get<double>();
    s.split = e.at("split").get<std::string>();
    s.noise_preset = e.value("noise", "none");
    s.map = mstmap::read_map_file((fs::path(dir) / e.at("map_file").get<std::string>()).string());
    const Tensor bvp =
        read_tensor_file((fs::path(dir) / e.at("bvp_file").get<std::string>()).string());
    s.labels.bvp.fs = fps;
    s.labels.bvp.samples.assign(bvp.data(), bvp.data() + bvp.size());
    out.push_back(std::move(s));
  }
  if (out.empty()) throw std::runtime_error("load_dataset: manifest lists no samples");
  return out;
}

}  // namespace cvd::synth
