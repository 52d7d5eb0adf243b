#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <vector>

#include "cvd/harness.hpp"
#include "cvd/model.hpp"
#include "cvd/rng.hpp"
#include "cvd/synth.hpp"
#include "doctest.h"
#include "support.hpp"

using namespace cvd;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Small training setup: 16x16 maps, two encoder blocks, short clips.
harness::TrainConfig tiny_config() {
  harness::TrainConfig cfg;
  cfg.model.map_size = 16;
  cfg.model.enc_channels = {4, 4};
  cfg.model.est_channels = 4;
  cfg.model.signal_len = 16;
  cfg.model.clip_seconds = 2.5;
  cfg.epochs = 2;
  cfg.batch_pairs = 2;
  cfg.clip_len = 75;
  return cfg;
}

std::vector<synth::LabeledSample> tiny_samples(int count, std::uint64_t seed,
                                               const std::string& preset = "low") {
  synth::DatasetSpec spec;
  spec.count = count;
  spec.seed = seed;
  spec.rows = 15;
  spec.duration_s = 2.5;
  spec.noise = synth::noise_preset(preset);
  return synth::gen_dataset(spec);
}

}  // namespace

TEST_CASE("train config: text round trip, overrides, rejects unknown keys") {
  harness::TrainConfig cfg = tiny_config();
  cfg.data_dir = "somewhere";
  cfg.seed = 42;
  cfg.pair_cross_noise = true;

  const fs::path path = fs::temp_directory_path() / "cvd_cfg_rt.cfg";
  {
    std::ofstream out(path);
    out << cfg.to_text();
  }
  const harness::TrainConfig back = harness::TrainConfig::from_file(path.string());
  CHECK(back.data_dir == cfg.data_dir);
  CHECK(back.seed == cfg.seed);
  CHECK(back.epochs == cfg.epochs);
  CHECK(back.batch_pairs == cfg.batch_pairs);
  CHECK(back.pair_cross_noise == cfg.pair_cross_noise);
  CHECK(back.model.map_size == cfg.model.map_size);
  CHECK(back.model.enc_channels == cfg.model.enc_channels);
  CHECK(back.model.clip_seconds == cfg.model.clip_seconds);
  CHECK(back.to_text() == cfg.to_text());

  harness::TrainConfig t = tiny_config();
  t.set_key("epochs", "7");
  CHECK(t.epochs == 7);
  t.set_key("model.map_size", "32");
  CHECK(t.model.map_size == 32);
  t.set_key("model.enc_channels", "8,8,8");
  CHECK(t.model.enc_channels == std::vector<int>{8, 8, 8});
  t.set_key("augment", "false");
  CHECK_FALSE(t.augment);
  CHECK_THROWS_WITH_AS(t.set_key("epocs", "7"), doctest::Contains("unknown"),
                       std::invalid_argument);
  CHECK_THROWS_AS(t.set_key("epochs", "banana"), std::invalid_argument);

  harness::TrainConfig bad = tiny_config();
  bad.batch_pairs = 0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  fs::remove(path);
}

TEST_CASE("dataset preparation scales, resizes and splits") {
  const harness::TrainConfig cfg = tiny_config();
  const std::vector<synth::LabeledSample> raw = tiny_samples(20, 3);
  const harness::Dataset ds = harness::Dataset::prepare(raw, cfg.model, cfg.clip_len);

  CHECK(ds.train.size() + ds.val.size() == raw.size());
  CHECK(!ds.train.empty());
  CHECK(!ds.val.empty());
  for (const harness::Item& it : ds.train) {
    CHECK(it.x.shape() == std::vector<int>{6, 16, 16});
    CHECK(it.s_gt.size() == 16);
    double lo = 1e300, hi = -1e300;
    for (std::size_t i = 0; i < it.x.size(); ++i) {
      lo = std::min(lo, it.x.data()[i]);
      hi = std::max(hi, it.x.data()[i]);
    }
    CHECK(lo >= 0.0);
    CHECK(hi <= 1.0);
    CHECK(hi > 0.5);  // normalized rows reach 255 somewhere
    CHECK(it.noise == "low");
  }
}

TEST_CASE("pair sampler yields distinct covering pairs; cross-noise needs two presets") {
  const harness::TrainConfig cfg = tiny_config();
  const harness::Dataset ds =
      harness::Dataset::prepare(tiny_samples(12, 5), cfg.model, cfg.clip_len);

  harness::PairSampler sampler(ds.train, false, 99);
  std::set<int> seen;
  for (int k = 0; k < 200; ++k) {
    const auto [a, b] = sampler.next();
    CHECK(a != b);
    CHECK(a >= 0);
    CHECK(b >= 0);
    CHECK(a < static_cast<int>(ds.train.size()));
    CHECK(b < static_cast<int>(ds.train.size()));
    seen.insert(a);
    seen.insert(b);
  }
  CHECK(seen.size() == ds.train.size());  // uniform sampling touches everyone

  // Mixed-preset pool: cross-noise pairs always straddle presets.
  std::vector<harness::Item> mixed = ds.train;
  for (std::size_t i = 0; i + 1 < mixed.size(); i += 2) mixed[i].noise = "high";
  harness::PairSampler cross(mixed, true, 7);
  for (int k = 0; k < 50; ++k) {
    const auto [a, b] = cross.next();
    CHECK(mixed[a].noise != mixed[b].noise);
  }

  CHECK_THROWS_WITH_AS(harness::PairSampler(ds.train, true, 1),
                       doctest::Contains("preset"), std::invalid_argument);
  const std::vector<harness::Item> empty;
  CHECK_THROWS_AS(harness::PairSampler(empty, false, 1), std::invalid_argument);
}

TEST_CASE("batch assembly: shapes, labels, and flip augmentation") {
  const harness::TrainConfig cfg = tiny_config();
  const harness::Dataset ds =
      harness::Dataset::prepare(tiny_samples(8, 9), cfg.model, cfg.clip_len);
  const std::vector<std::pair<int, int>> pairs = {{0, 1}, {2, 3}};

  Rng rng(1);
  const model::Batch plain = harness::make_batch(ds.train, pairs, cfg.model, false, rng);
  CHECK(plain.x1.shape() == std::vector<int>{2, 6, 16, 16});
  CHECK(plain.x2.shape() == std::vector<int>{2, 6, 16, 16});
  CHECK(plain.s1.shape() == std::vector<int>{2, 16});
  CHECK(plain.hr1[0] == ds.train[0].hr_gt);
  CHECK(plain.hr2[1] == ds.train[3].hr_gt);
  // No augmentation: batch equals the stacked items bitwise.
  for (int t = 0; t < 16; ++t) CHECK(plain.s1.data()[t] == ds.train[0].s_gt[t]);
  for (std::size_t i = 0; i < ds.train[0].x.size(); ++i)
    CHECK(plain.x1.data()[i] == ds.train[0].x.data()[i]);

  // Augmented batches stay within the set {original, time-flip, row-flip,
  // both}; a time flip must reverse the reference pulse to stay consistent.
  Rng arng(12345);
  const model::Batch aug = harness::make_batch(ds.train, pairs, cfg.model, true, arng);
  const harness::Item& it = ds.train[0];
  const int S = cfg.model.map_size;
  auto matches = [&](bool time_flip, bool row_flip) {
    for (int c = 0; c < 6; ++c)
      for (int r = 0; r < S; ++r)
        for (int t = 0; t < S; ++t) {
          const int rr = row_flip ? S - 1 - r : r;
          const int tt = time_flip ? S - 1 - t : t;
          if (aug.x1.data()[(c * S + r) * S + t] != it.x.data()[(c * S + rr) * S + tt])
            return false;
        }
    const std::size_t L = it.s_gt.size();
    for (std::size_t t = 0; t < L; ++t) {
      const double want = time_flip ? it.s_gt[L - 1 - t] : it.s_gt[t];
      if (aug.s1.data()[t] != want) return false;
    }
    return true;
  };
  CHECK((matches(false, false) || matches(true, false) || matches(false, true) ||
         matches(true, true)));
  // Over many draws both flips fire at least once.
  bool saw_time = false, saw_row = false;
  for (int trial = 0; trial < 12; ++trial) {
    const model::Batch b = harness::make_batch(ds.train, pairs, cfg.model, true, arng);
    if (b.s1.data()[0] != ds.train[0].s_gt[0]) saw_time = true;
    if (b.x1.data()[0] != ds.train[0].x.data()[0]) saw_row = true;
  }
  CHECK(saw_time);
  CHECK(saw_row);
}

TEST_CASE("training writes logs, checkpoints and an eval report, and descends") {
  const fs::path out = fs::temp_directory_path() / "cvd_train_smoke";
  fs::remove_all(out);

  harness::TrainConfig cfg = tiny_config();
  cfg.out_dir = out.string();
  cfg.epochs = 3;
  cfg.steps_per_epoch = 4;
  cfg.seed = 2;

  const harness::Dataset ds =
      harness::Dataset::prepare(tiny_samples(16, 31), cfg.model, cfg.clip_len);
  model::CvdModel m;
  const harness::TrainResult r = harness::train_on(cfg, ds, m);

  CHECK(r.halt.empty());
  CHECK(r.steps == 12);
  CHECK(std::isfinite(r.final_val_mae));
  CHECK(r.last_loss < r.first_loss);

  CHECK(fs::exists(out / "config.txt"));
  CHECK(fs::exists(out / "model.json"));
  CHECK(fs::exists(out / "train_log.csv"));
  CHECK(fs::exists(out / "val_log.csv"));
  CHECK(fs::exists(out / "eval.csv"));
  CHECK(fs::exists(out / "ckpt_init.ckpt"));
  CHECK(fs::exists(out / "ckpt_final.ckpt"));
  CHECK(fs::exists(fs::path(r.checkpoint_path + ".ckpt")));

  const std::string log = slurp(out / "train_log.csv");
  CHECK(log.rfind("step,L_rec,L_CVD,L_pre,L\n", 0) == 0);
  int lines = 0;
  for (char ch : log)
    if (ch == '\n') ++lines;
  CHECK(lines == 13);  // header + one row per step

  const std::string vlog = slurp(out / "val_log.csv");
  CHECK(vlog.rfind("epoch,mae_bpm,rmse_bpm,std_bpm,pearson_r\n", 0) == 0);

  // The checkpoint reproduces the trained model's predictions bitwise.
  model::CvdModel back = harness::load_checkpoint(r.checkpoint_path);
  const harness::EvalResult ea = harness::evaluate(m, ds.val);
  const harness::EvalResult eb = harness::evaluate(back, ds.val);
  REQUIRE(ea.rows.size() == eb.rows.size());
  for (std::size_t i = 0; i < ea.rows.size(); ++i)
    CHECK(ea.rows[i].hr_pred == eb.rows[i].hr_pred);

  fs::remove_all(out);
}

TEST_CASE("fifty steps beat step one on nearly every seed") {
  // Descent statistics: 20 seeds, 20 samples, 50 steps each; allow 2 napping.
  const harness::TrainConfig proto = tiny_config();
  const harness::Dataset ds =
      harness::Dataset::prepare(tiny_samples(20, 7), proto.model, proto.clip_len);
  int descended = 0;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    harness::TrainConfig cfg = proto;
    cfg.out_dir = (fs::temp_directory_path() / ("cvd_descent_" + std::to_string(seed))).string();
    cfg.epochs = 1;
    cfg.steps_per_epoch = 50;
    cfg.batch_pairs = 4;  // single-pair batches are too noisy for this check
    cfg.lr = 0.001;
    cfg.seed = seed;
    model::CvdModel m;
    const harness::TrainResult r = harness::train_on(cfg, ds, m);
    REQUIRE(r.halt.empty());
    REQUIRE(r.steps == 50);
    if (r.last_loss < r.first_loss) ++descended;
    fs::remove_all(cfg.out_dir);
  }
  CHECK(descended >= 18);
}

TEST_CASE("identical seed and config reproduce logs and checkpoints bitwise") {
  const fs::path out_a = fs::temp_directory_path() / "cvd_repro_a";
  const fs::path out_b = fs::temp_directory_path() / "cvd_repro_b";
  fs::remove_all(out_a);
  fs::remove_all(out_b);

  harness::TrainConfig cfg = tiny_config();
  cfg.epochs = 2;
  cfg.steps_per_epoch = 3;
  cfg.seed = 7;

  const harness::Dataset ds =
      harness::Dataset::prepare(tiny_samples(12, 77), cfg.model, cfg.clip_len);

  cfg.out_dir = out_a.string();
  model::CvdModel ma;
  harness::train_on(cfg, ds, ma);
  cfg.out_dir = out_b.string();
  model::CvdModel mb;
  harness::train_on(cfg, ds, mb);

  CHECK(slurp(out_a / "train_log.csv") == slurp(out_b / "train_log.csv"));
  CHECK(slurp(out_a / "val_log.csv") == slurp(out_b / "val_log.csv"));
  CHECK(slurp(out_a / "eval.csv") == slurp(out_b / "eval.csv"));
  CHECK(slurp(out_a / "ckpt_final.ckpt") == slurp(out_b / "ckpt_final.ckpt"));

  fs::remove_all(out_a);
  fs::remove_all(out_b);
}

TEST_CASE("non-finite input halts training with a marker file") {
  const fs::path out = fs::temp_directory_path() / "cvd_halt";
  fs::remove_all(out);

  harness::TrainConfig cfg = tiny_config();
  cfg.out_dir = out.string();
  cfg.epochs = 1;
  cfg.steps_per_epoch = 2;
  cfg.augment = false;

  harness::Dataset ds =
      harness::Dataset::prepare(tiny_samples(8, 41), cfg.model, cfg.clip_len);
  for (harness::Item& it : ds.train) it.x.data()[5] = std::nan("");

  model::CvdModel m;
  const harness::TrainResult r = harness::train_on(cfg, ds, m);
  CHECK(!r.halt.empty());
  CHECK(fs::exists(out / "halt.txt"));
  const std::string note = slurp(out / "halt.txt");
  CHECK(note.find("finite") != std::string::npos);
  fs::remove_all(out);
}

TEST_CASE("evaluation plumbing reports exact zeros for a perfect oracle") {
  const harness::TrainConfig cfg = tiny_config();
  const harness::Dataset ds =
      harness::Dataset::prepare(tiny_samples(10, 13), cfg.model, cfg.clip_len);

  const harness::EvalResult r =
      harness::evaluate_with(ds.train, [](const harness::Item& it) { return it.hr_gt; });
  CHECK(r.metrics.mae_bpm == 0.0);
  CHECK(r.metrics.rmse_bpm == 0.0);
  CHECK(r.metrics.std_bpm == 0.0);
  for (const harness::EvalRow& row : r.rows) {
    CHECK(row.abs_err == 0.0);
    CHECK(row.hr_pred == row.hr_gt);
  }

  const fs::path csv = fs::temp_directory_path() / "cvd_eval.csv";
  harness::write_eval_csv(csv.string(), r);
  const std::string text = slurp(csv);
  CHECK(text.rfind("sample_id,hr_gt,hr_pred,abs_err\n", 0) == 0);
  int lines = 0;
  for (char ch : text)
    if (ch == '\n') ++lines;
  CHECK(lines == static_cast<int>(r.rows.size()) + 1);
  fs::remove(csv);
}

TEST_CASE("plot export slices logs bitwise and checks their headers") {
  const fs::path out = fs::temp_directory_path() / "cvd_plots";
  fs::remove_all(out);

  harness::TrainConfig cfg = tiny_config();
  cfg.out_dir = out.string();
  cfg.epochs = 2;
  cfg.steps_per_epoch = 3;
  const harness::Dataset ds =
      harness::Dataset::prepare(tiny_samples(10, 19), cfg.model, cfg.clip_len);
  model::CvdModel m;
  harness::train_on(cfg, ds, m);

  harness::export_plots(out.string());
  CHECK(fs::exists(out / "plots" / "loss_curve.csv"));
  CHECK(fs::exists(out / "plots" / "loss_components.csv"));
  CHECK(fs::exists(out / "plots" / "hr_scatter.csv"));
  CHECK(fs::exists(out / "plots" / "val_curve.csv"));

  // Components file is a byte copy; the loss curve is a two-column slice
  // whose numeric substrings appear verbatim in the source log.
  CHECK(slurp(out / "plots" / "loss_components.csv") == slurp(out / "train_log.csv"));
  std::istringstream curve(slurp(out / "plots" / "loss_curve.csv"));
  std::istringstream source(slurp(out / "train_log.csv"));
  std::string cline, sline;
  CHECK(std::getline(curve, cline));
  CHECK(cline == "step,L");
  REQUIRE(std::getline(source, sline));  // skip the source header
  while (std::getline(curve, cline)) {
    REQUIRE(std::getline(source, sline));
    const std::string step = cline.substr(0, cline.find(','));
    const std::string loss = cline.substr(cline.find(',') + 1);
    CHECK(sline.rfind(step + ",", 0) == 0);
    CHECK(sline.size() >= loss.size());
    CHECK(sline.compare(sline.size() - loss.size(), loss.size(), loss) == 0);
  }

  // Scatter rows mirror the eval report one-to-one.
  {
    std::istringstream scatter(slurp(out / "plots" / "hr_scatter.csv"));
    std::string line;
    REQUIRE(std::getline(scatter, line));
    CHECK(line == "hr_gt,hr_pred");
    int rows = 0;
    while (std::getline(scatter, line)) ++rows;
    std::istringstream eval(slurp(out / "eval.csv"));
    int eval_rows = -1;  // discount the header
    while (std::getline(eval, line)) ++eval_rows;
    CHECK(rows == eval_rows);
  }

  // A non-increasing step column is rejected.
  {
    const std::string log = slurp(out / "train_log.csv");
    std::ofstream tampered(out / "train_log.csv");
    tampered << "step,L_rec,L_CVD,L_pre,L\n1,0,0,0,1\n1,0,0,0,1\n";
  }
  CHECK_THROWS_WITH_AS(harness::export_plots(out.string()), doctest::Contains("increasing"),
                       std::runtime_error);

  // A corrupted header is rejected.
  {
    std::ofstream bad(out / "train_log.csv");
    bad << "step,wrong,header\n1,2,3\n";
  }
  CHECK_THROWS_WITH_AS(harness::export_plots(out.string()), doctest::Contains("header"),
                       std::runtime_error);
  fs::remove_all(out);
}

TEST_CASE("inference report: windowing, spectral cross-check, hrv gating") {
  harness::TrainConfig cfg = tiny_config();
  model::CvdModel m;
  m.init(cfg.model, 51);

  // Short map: one clip, no HRV (needs 30 s).
  const std::vector<synth::LabeledSample> short_s = tiny_samples(1, 61);
  const harness::InferReport one = harness::infer(m, short_s[0].map);
  CHECK(std::isfinite(one.hr_bpm));
  CHECK(one.rppg.size() == 16);
  CHECK(one.rppg_fs == doctest::Approx(6.4).epsilon(1e-9));
  CHECK_FALSE(one.hrv.has_value());
  CHECK(one.hrv_note.find("30") != std::string::npos);

  const std::string j = one.to_json();
  CHECK(j.find("\"hr_bpm\"") != std::string::npos);
  CHECK(j.find("\"hr_spectral_bpm\"") != std::string::npos);
  CHECK(j.find("\"hrv\"") != std::string::npos);
  CHECK(j.find("\"rppg_fs_hz\"") != std::string::npos);

  // Long map: windows averaged, concatenated waveform spans the whole map.
  synth::DatasetSpec spec;
  spec.count = 1;
  spec.seed = 62;
  spec.rows = 15;
  spec.duration_s = 40.0;
  const std::vector<synth::LabeledSample> long_s = synth::gen_dataset(spec);
  const harness::InferReport many = harness::infer(m, long_s[0].map);
  CHECK(many.rppg.size() == 16 * 16);  // sixteen 2.5 s windows
  CHECK(std::isfinite(many.hr_spectral_bpm));
  // 16 windows x 2.5 s = 40 s of coverage: HRV is attempted.
  CHECK((many.hrv.has_value() || !many.hrv_note.empty()));

  // Deterministic for a fixed model and map.
  const harness::InferReport again = harness::infer(m, long_s[0].map);
  CHECK(again.to_json() == many.to_json());
}
