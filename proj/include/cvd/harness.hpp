#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "cvd/model.hpp"
#include "cvd/mstmap.hpp"
#include "cvd/physio.hpp"
#include "cvd/rng.hpp"
#include "cvd/synth.hpp"

namespace cvd::harness {

// Flat key = value config; every key doubles as a --set override on the CLI.
// Model keys carry a "model." prefix.
struct TrainConfig {
  model::ModelConfig model;
  std::string data_dir;
  std::string out_dir = "run";
  int epochs = 40;
  int batch_pairs = 4;
  int steps_per_epoch = 0;  // 0: cover the train split once per epoch
  double lr = 0.001;
  std::uint64_t seed = 1;
  bool cvd_enabled = true;
  bool rppg_head = true;
  bool augment = true;
  bool pair_cross_noise = false;
  bool balance = false;
  double balance_bin_bpm = 10.0;
  int checkpoint_every = 1;  // epochs
  int clip_len = 300;        // frames kept from each map before resizing

  void validate() const;
  void set_key(const std::string& key, const std::string& value);
  std::string to_text() const;
  static TrainConfig from_file(const std::string& path);
};

// One network-ready sample: resized, scaled map plus labels.
struct Item {
  Tensor x;                  // [C, S, S], values in [0,1]
  std::vector<double> s_gt;  // reference pulse, signal_len samples
  double hr_gt = 0.0;
  int id = 0;
  std::string noise;
};

struct Dataset {
  std::vector<Item> train, val;
  static Dataset prepare(const std::vector<synth::LabeledSample>& samples,
                         const model::ModelConfig& cfg, int clip_len);
  static Dataset load_dir(const std::string& dir, const model::ModelConfig& cfg, int clip_len);
};

// Uniform random distinct pairs; with cross_noise the two halves must carry
// different corruption presets.
class PairSampler {
 public:
  PairSampler(const std::vector<Item>& items, bool cross_noise, std::uint64_t seed);
  std::pair<int, int> next();

 private:
  const std::vector<Item>* items_;
  bool cross_noise_;
  Rng rng_;
};

// Stacks pairs into a training batch. Augmentation flips each half
// independently: a time flip also reverses its reference pulse, a row flip
// leaves it alone.
model::Batch make_batch(const std::vector<Item>& items,
                        const std::vector<std::pair<int, int>>& pairs,
                        const model::ModelConfig& cfg, bool augment, Rng& rng);

struct TrainResult {
  int steps = 0;
  double first_loss = 0.0;
  double last_loss = 0.0;
  double final_val_mae = std::numeric_limits<double>::quiet_NaN();
  std::string halt;             // empty when training completed
  std::string checkpoint_path;  // stem of the last checkpoint written
};

TrainResult train(const TrainConfig& cfg);
// Same loop on an in-memory dataset and externally owned model; train()
// delegates here after loading from disk. A default-constructed model is
// seeded from the config; an initialized one warm-starts.
TrainResult train_on(const TrainConfig& cfg, const Dataset& data, model::CvdModel& m);

struct EvalRow {
  int id = 0;
  double hr_gt = 0.0, hr_pred = 0.0, abs_err = 0.0;
};
struct EvalResult {
  physio::MetricsReport metrics;
  std::vector<EvalRow> rows;
};

EvalResult evaluate(model::CvdModel& m, const std::vector<Item>& items);
// Metric plumbing with an arbitrary predictor; lets tests feed a
// ground-truth oracle through the exact reporting path.
EvalResult evaluate_with(const std::vector<Item>& items,
                         const std::function<double(const Item&)>& predictor);
void write_eval_csv(const std::string& path, const EvalResult& r);

struct InferReport {
  double hr_bpm = 0.0;  // scalar head (windows averaged)
  double hr_spectral_bpm = std::numeric_limits<double>::quiet_NaN();
  std::vector<double> rppg;
  double rppg_fs = 0.0;
  std::optional<physio::HrvFeatures> hrv;
  std::string hrv_note;  // why hrv is absent, when it is
  std::string to_json() const;
};

// Long maps are cut into clip_seconds windows; HRs are averaged and the
// per-window waveforms concatenated before spectral/HRV analysis.
InferReport infer(model::CvdModel& m, const mstmap::MstMapData& map);

// stem.ckpt (named tensors) + stem.json (model config)
void save_checkpoint(const std::string& stem, const model::CvdModel& m);
model::CvdModel load_checkpoint(const std::string& stem);

// Mean elementwise |f_p(x1) - f_p(pseudo(x1, x2))| over consecutive item
// pairs, eval-mode statistics. The yardstick for disentangling progress.
double disentangling_gap(model::CvdModel& m, const std::vector<Item>& items, int max_pairs = 32);

// Copies plot-ready CSVs into run_dir/plots by slicing the logged text, so
// exported numbers stay bit-identical to the logs.
void export_plots(const std::string& run_dir);

}  // namespace cvd::harness
