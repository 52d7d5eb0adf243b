#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numbers>
#include <set>
#include <vector>

#include "cvd/adam.hpp"
#include "cvd/model.hpp"
#include "cvd/rng.hpp"
#include "cvd/serialize.hpp"
#include "cvd/tensor.hpp"
#include "doctest.h"
#include "support.hpp"

using namespace cvd;
using model::CvdModel;
using model::ModelConfig;

namespace {

// Small enough to keep forward passes cheap, large enough for every layer to
// do real work: 32x32 maps, three stride-2 blocks, 16-sample pulse at 6.4 Hz.
ModelConfig small_config() {
  ModelConfig cfg;
  cfg.map_size = 32;
  cfg.enc_channels = {8, 8, 8};
  cfg.est_channels = 8;
  cfg.signal_len = 16;
  cfg.clip_seconds = 2.5;
  return cfg;
}

model::Batch random_batch(const ModelConfig& cfg, int n, std::uint64_t seed) {
  Rng rng(seed);
  auto rand_maps = [&] {
    Tensor t = Tensor::zeros({n, cfg.in_channels, cfg.map_size, cfg.map_size});
    for (std::size_t i = 0; i < t.size(); ++i) t.data()[i] = rng.uniform();
    return t;
  };
  model::Batch b;
  b.x1 = rand_maps();
  b.x2 = rand_maps();
  b.s1 = Tensor::zeros({n, cfg.signal_len});
  b.s2 = Tensor::zeros({n, cfg.signal_len});
  for (int i = 0; i < n; ++i) {
    b.hr1.push_back(rng.uniform(60.0, 100.0));
    b.hr2.push_back(rng.uniform(60.0, 100.0));
    for (int t = 0; t < cfg.signal_len; ++t) {
      const double ph = 2.0 * std::numbers::pi * t / cfg.signal_fs();
      b.s1.data()[i * cfg.signal_len + t] = std::sin(ph * b.hr1[i] / 60.0);
      b.s2.data()[i * cfg.signal_len + t] = std::sin(ph * b.hr2[i] / 60.0);
    }
  }
  return b;
}

}  // namespace

TEST_CASE("model config: validation and json round trip") {
  ModelConfig cfg = small_config();
  CHECK_NOTHROW(cfg.validate());
  CHECK(cfg.feature_size() == 4);
  CHECK(cfg.signal_fs() == doctest::Approx(6.4).epsilon(1e-15));

  ModelConfig bad = cfg;
  bad.map_size = 30;  // not divisible by 2^3
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = cfg;
  bad.clip_seconds = 10.0;  // signal fs 1.6 Hz cannot carry a 3 Hz band top
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = cfg;
  bad.enc_channels.clear();
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = cfg;
  bad.hr_lo_bpm = 200.0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);

  const std::string text = cfg.to_json();
  const ModelConfig back = ModelConfig::from_json(text);
  CHECK(back.map_size == cfg.map_size);
  CHECK(back.enc_channels == cfg.enc_channels);
  CHECK(back.est_channels == cfg.est_channels);
  CHECK(back.signal_len == cfg.signal_len);
  CHECK(back.clip_seconds == cfg.clip_seconds);
  CHECK(back.lambda_rec == cfg.lambda_rec);
  CHECK(back.lambda_cvd == cfg.lambda_cvd);
  CHECK(back.lambda_rppg == cfg.lambda_rppg);
}

TEST_CASE("HR cross-entropy target lands on the nearest 1 bpm bin") {
  CHECK(model::hr_target_bin(40.0, 40.0, 180.0) == 0);
  CHECK(model::hr_target_bin(180.0, 40.0, 180.0) == 140);
  CHECK(model::hr_target_bin(110.0, 40.0, 180.0) == 70);
  CHECK(model::hr_target_bin(110.4, 40.0, 180.0) == 70);
  CHECK(model::hr_target_bin(110.6, 40.0, 180.0) == 71);
  CHECK(model::hr_target_bin(20.0, 40.0, 180.0) == 0);     // clamped
  CHECK(model::hr_target_bin(500.0, 40.0, 180.0) == 140);  // clamped
}

TEST_CASE("model init is seeded and keeps the two encoders apart") {
  CvdModel m1, m2, m3;
  m1.init(small_config(), 3);
  m2.init(small_config(), 3);
  m3.init(small_config(), 4);

  const NamedTensors s1 = m1.state_tensors();
  const NamedTensors s2 = m2.state_tensors();
  REQUIRE(s1.size() == s2.size());
  for (std::size_t i = 0; i < s1.size(); ++i) {
    CHECK(s1[i].first == s2[i].first);
    REQUIRE(s1[i].second.size() == s2[i].second.size());
    for (std::size_t k = 0; k < s1[i].second.size(); ++k)
      CHECK(s1[i].second.data()[k] == s2[i].second.data()[k]);
  }
  const NamedTensors s3 = m3.state_tensors();
  double diff = 0.0;
  for (std::size_t i = 0; i < s1.size(); ++i)
    for (std::size_t k = 0; k < s1[i].second.size(); ++k)
      diff += std::abs(s1[i].second.data()[k] - s3[i].second.data()[k]);
  CHECK(diff > 0.1);

  // Every trainable parameter is a distinct allocation: nothing is silently
  // shared between the physiological and corruption encoders.
  const std::vector<Tensor> params = m1.trainable_parameters();
  std::set<const void*> ids;
  for (const Tensor& p : params) ids.insert(p.id());
  CHECK(ids.size() == params.size());
  // 2 encoders of 3 conv-bn blocks, 3 decoder blocks (last unnormed),
  // estimator trunk of 2 conv-bn blocks plus 2 linear heads.
  CHECK(params.size() == 2 * 3 * 4 + (2 * 4 + 2) + (2 * 4 + 4));

  double w_gap = 0.0;
  for (std::size_t k = 0; k < m1.enc_p.blocks[0].w.size(); ++k)
    w_gap += std::abs(m1.enc_p.blocks[0].w.data()[k] - m1.enc_n.blocks[0].w.data()[k]);
  CHECK(w_gap > 0.01);
}

TEST_CASE("encode, decode, estimate and predict produce contract shapes") {
  const ModelConfig cfg = small_config();
  CvdModel m;
  m.init(cfg, 5);
  const model::Batch batch = random_batch(cfg, 2, 8);

  Graph g;
  Tensor f_p = m.encode(g, m.enc_p, batch.x1, NormMode::kTrain);
  CHECK(f_p.shape() == std::vector<int>{2, 8, 4, 4});
  Tensor f_n = m.encode(g, m.enc_n, batch.x1, NormMode::kTrain);
  Tensor rec = m.decode(g, f_p, f_n);
  CHECK(rec.shape() == std::vector<int>{2, 6, 32, 32});
  model::EstimateOut e = m.estimate(g, f_p, NormMode::kTrain, true);
  CHECK(e.hr.shape() == std::vector<int>{2, 1});
  CHECK(e.rppg.shape() == std::vector<int>{2, 16});

  const model::Prediction pred = m.predict(batch.x1);
  REQUIRE(pred.hr_bpm.size() == 2);
  REQUIRE(pred.rppg.size() == 2);
  CHECK(pred.rppg[0].size() == 16);
  for (double hr : pred.hr_bpm) CHECK(std::isfinite(hr));

  const model::Prediction hr_only = m.predict(batch.x1, false);
  CHECK(hr_only.rppg.empty());

  CHECK_THROWS_AS(m.predict(Tensor::zeros({2, 6, 32})), std::invalid_argument);
}

TEST_CASE("loss identities: zero at perfect agreement, two at inversion") {
  const ModelConfig cfg = small_config();
  Graph g;
  Rng rng(0x10E);

  Tensor s = Tensor::zeros({3, 16});
  for (std::size_t i = 0; i < s.size(); ++i) s.data()[i] = rng.normal();
  int degen = 0;
  CHECK(std::abs(model::rppg_wave_loss(g, s, s, &degen).value()) <= 1e-8);
  CHECK(degen == 0);
  Tensor neg = g.scale(s, -1.0);
  CHECK(std::abs(model::rppg_wave_loss(g, neg, s, &degen).value() - 2.0) <= 1e-8);

  // Reconstruction term at perfect reconstruction.
  Tensor x = Tensor::zeros({2, 6, 8, 8});
  for (std::size_t i = 0; i < x.size(); ++i) x.data()[i] = rng.uniform();
  Tensor rec = g.scale(g.add(g.l1_mean(x, x), g.l1_mean(x, x)), cfg.lambda_rec);
  CHECK(std::abs(rec.value()) <= 1e-8);

  // Cross-verified term when pseudo features and HRs match the originals.
  Tensor f = Tensor::zeros({2, 8, 4, 4});
  for (std::size_t i = 0; i < f.size(); ++i) f.data()[i] = rng.normal();
  Tensor hr = Tensor::from_data({2, 1}, {72.0, 90.0});
  Tensor feat = g.add(g.add(g.l1_mean(f, f), g.l1_mean(f, f)),
                      g.add(g.l1_mean(f, f), g.l1_mean(f, f)));
  Tensor cvd = g.add(g.scale(feat, cfg.lambda_cvd), g.add(g.l1_mean(hr, hr), g.l1_mean(hr, hr)));
  CHECK(std::abs(cvd.value()) <= 1e-8);

  // Scalar HR supervision has plain mean-absolute-error semantics.
  Tensor hr_pred = Tensor::from_data({2, 1}, {100.0, 90.0});
  CHECK(model::hr_abs_loss(g, hr_pred, {95.0, 95.0}).value() == doctest::Approx(5.0).epsilon(1e-12));

  // Spectral HR supervision prefers a pulse at the labeled rate.
  Tensor on_rate = Tensor::zeros({1, 16});
  Tensor off_rate = Tensor::zeros({1, 16});
  for (int t = 0; t < 16; ++t) {
    const double ph = 2.0 * std::numbers::pi * t / cfg.signal_fs();
    on_rate.data()[t] = std::sin(ph * 72.0 / 60.0);
    off_rate.data()[t] = std::sin(ph * 150.0 / 60.0);
  }
  const double ce_on = model::rppg_hr_loss(g, on_rate, {72.0}, cfg).value();
  const double ce_off = model::rppg_hr_loss(g, off_rate, {72.0}, cfg).value();
  CHECK(ce_on > 0.0);
  CHECK(ce_on < ce_off);
}

TEST_CASE("training objective is symmetric in the pair order") {
  const ModelConfig cfg = small_config();
  CvdModel m;
  m.init(cfg, 11);
  model::Batch b = random_batch(cfg, 2, 21);

  model::ForwardOptions opt;
  opt.mode = NormMode::kEval;  // keep running stats frozen across the two calls

  Graph g1;
  const model::CvdOutputs fwd = m.forward_cvd(g1, b, opt);

  model::Batch swapped;
  swapped.x1 = b.x2;
  swapped.x2 = b.x1;
  swapped.hr1 = b.hr2;
  swapped.hr2 = b.hr1;
  swapped.s1 = b.s2;
  swapped.s2 = b.s1;
  Graph g2;
  const model::CvdOutputs rev = m.forward_cvd(g2, swapped, opt);

  CHECK(std::abs(fwd.total.value() - rev.total.value()) <= 1e-10);
  CHECK(std::abs(fwd.rec - rev.rec) <= 1e-10);
  CHECK(std::abs(fwd.cvd - rev.cvd) <= 1e-10);
  CHECK(std::abs(fwd.pre - rev.pre) <= 1e-10);
}

TEST_CASE("training objective composes additively and respects switches") {
  const ModelConfig cfg = small_config();
  CvdModel m;
  m.init(cfg, 13);
  model::Batch b = random_batch(cfg, 2, 34);

  model::ForwardOptions opt;
  opt.mode = NormMode::kEval;
  Graph g;
  const model::CvdOutputs full = m.forward_cvd(g, b, opt);
  CHECK(full.total.value() ==
        doctest::Approx(full.rec + full.cvd + full.pre).epsilon(1e-12));
  CHECK(full.rec > 0.0);
  CHECK(full.cvd > 0.0);
  CHECK(full.hr_pred1.size() == 2);
  CHECK(full.hr_pred2.size() == 2);

  model::ForwardOptions ablated = opt;
  ablated.cross_verify = false;
  Graph g2;
  const model::CvdOutputs plain = m.forward_cvd(g2, b, ablated);
  CHECK(plain.cvd == 0.0);
  CHECK(plain.total.value() == doctest::Approx(plain.rec + plain.pre).epsilon(1e-12));

  model::ForwardOptions hr_only = opt;
  hr_only.rppg_head = false;
  Graph g3;
  const model::CvdOutputs scalar = m.forward_cvd(g3, b, hr_only);
  CHECK(scalar.degenerate_rows == 0);
  CHECK(scalar.total.value() > 0.0);

  // Constant reference pulses are counted, not fatal.
  model::Batch flat = b;
  flat.s1 = Tensor::zeros({2, cfg.signal_len});
  flat.s2 = Tensor::zeros({2, cfg.signal_len});
  model::ForwardOptions no_cross = opt;
  no_cross.cross_verify = false;
  Graph g4;
  const model::CvdOutputs degen = m.forward_cvd(g4, flat, no_cross);
  CHECK(degen.degenerate_rows == 4);
  CHECK(std::isfinite(degen.total.value()));

  model::Batch bad = b;
  bad.x2 = Tensor::zeros({1, cfg.in_channels, cfg.map_size, cfg.map_size});
  Graph g5;
  CHECK_THROWS_AS(m.forward_cvd(g5, bad, opt), std::invalid_argument);
  model::Batch bad_sig = b;
  bad_sig.s1 = Tensor::zeros({2, cfg.signal_len + 1});
  Graph g6;
  CHECK_THROWS_AS(m.forward_cvd(g6, bad_sig, opt), std::invalid_argument);
}

TEST_CASE("model state round-trips through the checkpoint container") {
  namespace fs = std::filesystem;
  const ModelConfig cfg = small_config();
  CvdModel m;
  m.init(cfg, 17);
  // Refresh running stats once so the saved state is not all-default.
  model::Batch b = random_batch(cfg, 2, 55);
  Graph g;
  model::ForwardOptions opt;
  (void)m.forward_cvd(g, b, opt);

  const fs::path path = fs::temp_directory_path() / "cvd_model_state.bin";
  write_named_tensors(path.string(), m.state_tensors());

  CvdModel fresh;
  fresh.init(cfg, 999);
  fresh.load_state(read_named_tensors(path.string()));

  const model::Prediction a = m.predict(b.x1);
  const model::Prediction c = fresh.predict(b.x1);
  REQUIRE(a.hr_bpm.size() == c.hr_bpm.size());
  for (std::size_t i = 0; i < a.hr_bpm.size(); ++i) CHECK(a.hr_bpm[i] == c.hr_bpm[i]);
  for (std::size_t i = 0; i < a.rppg.size(); ++i)
    for (std::size_t k = 0; k < a.rppg[i].size(); ++k) CHECK(a.rppg[i][k] == c.rppg[i][k]);

  NamedTensors missing = m.state_tensors();
  missing.pop_back();
  CvdModel incomplete;
  incomplete.init(cfg, 1);
  CHECK_THROWS_AS(incomplete.load_state(missing), std::invalid_argument);
  fs::remove(path);
}

TEST_CASE("a few optimizer steps reduce the training objective") {
  ModelConfig cfg = small_config();
  cfg.map_size = 16;
  cfg.enc_channels = {4, 4};
  cfg.est_channels = 4;
  CvdModel m;
  m.init(cfg, 23);
  const model::Batch b = random_batch(cfg, 2, 89);

  Adam adam(m.trainable_parameters(), {.lr = 1e-3});
  double first = 0.0, last = 0.0;
  for (int step = 0; step < 30; ++step) {
    Graph g;
    model::ForwardOptions opt;
    const model::CvdOutputs out = m.forward_cvd(g, b, opt);
    if (step == 0) first = out.total.value();
    last = out.total.value();
    adam.zero_grad();
    g.backward(out.total);
    adam.step();
  }
  CHECK(std::isfinite(last));
  CHECK(last < first);
}
