#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cvd/serialize.hpp"
#include "cvd/tensor.hpp"

namespace cvd::model {

// Desk-scale configuration. The map tensor enters as [N, in_channels,
// map_size, map_size] with rows on the height axis and time on the width
// axis; the predicted pulse has signal_len samples spanning clip_seconds.
struct ModelConfig {
  int in_channels = 6;
  int map_size = 64;
  std::vector<int> enc_channels = {16, 32, 64, 64};  // stride-2 blocks
  int est_channels = 64;
  int signal_len = 64;
  double clip_seconds = 10.0;
  double hr_lo_bpm = 40.0;
  double hr_hi_bpm = 180.0;
  double lambda_rec = 50.0;
  double lambda_cvd = 10.0;
  double lambda_rppg = 2.0;

  double signal_fs() const { return signal_len / clip_seconds; }
  int feature_size() const { return map_size >> static_cast<int>(enc_channels.size()); }
  void validate() const;

  std::string to_json() const;
  static ModelConfig from_json(const std::string& text);
};

// conv + batch norm + relu
struct ConvBnBlock {
  Tensor w, b, gamma, beta;
  BatchNormStats stats;
};

struct Encoder {
  std::vector<ConvBnBlock> blocks;
};

// Transposed-conv stack; inner blocks use instance norm + relu, the last
// block is a plain linear reconstruction layer.
struct Decoder {
  struct Block {
    Tensor w, b, gamma, beta;
    bool normed = true;
  };
  std::vector<Block> blocks;
};

// Shared trunk on the physiological feature with two heads: scalar heart
// rate and a pulse waveform of signal_len samples.
struct Estimator {
  ConvBnBlock c1, c2;
  Tensor hr_w, hr_b;
  Tensor sig_w, sig_b;
};

struct EstimateOut {
  Tensor hr;    // [N, 1] in bpm
  Tensor rppg;  // [N, signal_len]; undefined when the head is skipped
};

struct ForwardOptions {
  bool cross_verify = true;  // build pseudo maps and their losses
  bool rppg_head = true;     // waveform supervision on top of scalar HR
  NormMode mode = NormMode::kTrain;
};

// Ground truth rides along as plain vectors; s1/s2 hold the reference pulse
// already resampled to signal_len columns.
struct Batch {
  Tensor x1, x2;  // [N, C, H, W], values already scaled to [0,1]
  std::vector<double> hr1, hr2;
  Tensor s1, s2;  // [N, signal_len]
};

struct CvdOutputs {
  Tensor total;  // scalar loss
  double rec = 0.0;
  double cvd = 0.0;
  double pre = 0.0;
  std::vector<double> hr_pred1, hr_pred2;
  int degenerate_rows = 0;
};

struct Prediction {
  std::vector<double> hr_bpm;
  std::vector<std::vector<double>> rppg;
};

// Nearest 1 bpm spectral bin for the cross-entropy target; centers run
// hr_lo..hr_hi inclusive.
int hr_target_bin(double hr_bpm, double hr_lo_bpm, double hr_hi_bpm);

class CvdModel {
 public:
  ModelConfig cfg;
  Encoder enc_p;  // physiological
  Encoder enc_n;  // non-physiological
  Decoder dec;
  Estimator est;

  void init(const ModelConfig& config, std::uint64_t seed);

  std::vector<Tensor> trainable_parameters() const;
  NamedTensors state_tensors() const;  // parameters plus running stats
  void load_state(const NamedTensors& state);

  // Non-const: train mode refreshes the running batch-norm statistics.
  Tensor encode(Graph& g, Encoder& enc, const Tensor& x, NormMode mode);
  Tensor decode(Graph& g, const Tensor& f_p, const Tensor& f_n);
  EstimateOut estimate(Graph& g, const Tensor& feature, NormMode mode, bool rppg_head);

  // Full training objective over a pair batch. Reconstruction, the
  // cross-verified feature/HR agreement terms, and physiological supervision
  // on the real features and (when cross-verifying) the pseudo features.
  CvdOutputs forward_cvd(Graph& g, const Batch& batch, const ForwardOptions& opt);

  Prediction predict(const Tensor& x, bool rppg_head = true);
};

// Loss pieces, exposed so tests can pin their algebra independently of the
// training loop. All reduce to scalars with batch-mean semantics.
Tensor hr_abs_loss(Graph& g, const Tensor& hr_pred, const std::vector<double>& hr_gt);
Tensor rppg_wave_loss(Graph& g, const Tensor& sig, const Tensor& gt, int* degenerate_rows);
Tensor rppg_hr_loss(Graph& g, const Tensor& sig, const std::vector<double>& hr_gt,
                    const ModelConfig& cfg);

}  // namespace cvd::model
