#include "cvd/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "cvd/adam.hpp"

namespace fs = std::filesystem;

namespace cvd::harness {

namespace {

std::string g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
  if (v == "0" || v == "false" || v == "no" || v == "off") return false;
  throw std::invalid_argument("config: key '" + key + "' wants a boolean, got '" + v + "'");
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    std::size_t pos = line.find(',', start);
    if (pos == std::string::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

}  // namespace

void TrainConfig::validate() const {
  model.validate();
  if (epochs < 1) throw std::invalid_argument("config: epochs must be >= 1");
  if (batch_pairs < 1) throw std::invalid_argument("config: batch_pairs must be >= 1");
  if (steps_per_epoch < 0) throw std::invalid_argument("config: steps_per_epoch must be >= 0");
  if (!(lr > 0.0)) throw std::invalid_argument("config: lr must be > 0");
  if (checkpoint_every < 1) throw std::invalid_argument("config: checkpoint_every must be >= 1");
  if (clip_len < 2) throw std::invalid_argument("config: clip_len must be >= 2");
  if (!(balance_bin_bpm > 0.0)) throw std::invalid_argument("config: balance_bin_bpm must be > 0");
}

void TrainConfig::set_key(const std::string& key, const std::string& value) {
  try {
    if (key == "data_dir") data_dir = value;
    else if (key == "out_dir") out_dir = value;
    else if (key == "epochs") epochs = std::stoi(value);
    else if (key == "batch_pairs") batch_pairs = std::stoi(value);
    else if (key == "steps_per_epoch") steps_per_epoch = std::stoi(value);
    else if (key == "lr") lr = std::stod(value);
    else if (key == "seed") seed = std::stoull(value);
    else if (key == "cvd_enabled") cvd_enabled = parse_bool(key, value);
    else if (key == "rppg_head") rppg_head = parse_bool(key, value);
    else if (key == "augment") augment = parse_bool(key, value);
    else if (key == "pair_cross_noise") pair_cross_noise = parse_bool(key, value);
    else if (key == "balance") balance = parse_bool(key, value);
    else if (key == "balance_bin_bpm") balance_bin_bpm = std::stod(value);
    else if (key == "checkpoint_every") checkpoint_every = std::stoi(value);
    else if (key == "clip_len") clip_len = std::stoi(value);
    else if (key == "model.in_channels") model.in_channels = std::stoi(value);
    else if (key == "model.map_size") model.map_size = std::stoi(value);
    else if (key == "model.est_channels") model.est_channels = std::stoi(value);
    else if (key == "model.signal_len") model.signal_len = std::stoi(value);
    else if (key == "model.clip_seconds") model.clip_seconds = std::stod(value);
    else if (key == "model.hr_lo_bpm") model.hr_lo_bpm = std::stod(value);
    else if (key == "model.hr_hi_bpm") model.hr_hi_bpm = std::stod(value);
    else if (key == "model.lambda_rec") model.lambda_rec = std::stod(value);
    else if (key == "model.lambda_cvd") model.lambda_cvd = std::stod(value);
    else if (key == "model.lambda_rppg") model.lambda_rppg = std::stod(value);
    else if (key == "model.enc_channels") {
      std::vector<int> ch;
      for (const auto& tok : split_csv(value)) ch.push_back(std::stoi(trim(tok)));
      model.enc_channels = ch;
    } else {
      throw std::invalid_argument("config: unknown key '" + key + "'");
    }
  } catch (const std::invalid_argument&) {
    throw;
  } catch (const std::exception&) {
    throw std::invalid_argument("config: cannot parse value '" + value + "' for key '" + key +
                                "'");
  }
}

std::string TrainConfig::to_text() const {
  std::ostringstream os;
  os << "data_dir = " << data_dir << "\n";
  os << "out_dir = " << out_dir << "\n";
  os << "epochs = " << epochs << "\n";
  os << "batch_pairs = " << batch_pairs << "\n";
  os << "steps_per_epoch = " << steps_per_epoch << "\n";
  os << "lr = " << g17(lr) << "\n";
  os << "seed = " << seed << "\n";
  os << "cvd_enabled = " << (cvd_enabled ? "true" : "false") << "\n";
  os << "rppg_head = " << (rppg_head ? "true" : "false") << "\n";
  os << "augment = " << (augment ? "true" : "false") << "\n";
  os << "pair_cross_noise = " << (pair_cross_noise ? "true" : "false") << "\n";
  os << "balance = " << (balance ? "true" : "false") << "\n";
  os << "balance_bin_bpm = " << g17(balance_bin_bpm) << "\n";
  os << "checkpoint_every = " << checkpoint_every << "\n";
  os << "clip_len = " << clip_len << "\n";
  os << "model.in_channels = " << model.in_channels << "\n";
  os << "model.map_size = " << model.map_size << "\n";
  std::string ch;
  for (std::size_t i = 0; i < model.enc_channels.size(); ++i)
    ch += (i ? "," : "") + std::to_string(model.enc_channels[i]);
  os << "model.enc_channels = " << ch << "\n";
  os << "model.est_channels = " << model.est_channels << "\n";
  os << "model.signal_len = " << model.signal_len << "\n";
  os << "model.clip_seconds = " << g17(model.clip_seconds) << "\n";
  os << "model.hr_lo_bpm = " << g17(model.hr_lo_bpm) << "\n";
  os << "model.hr_hi_bpm = " << g17(model.hr_hi_bpm) << "\n";
  os << "model.lambda_rec = " << g17(model.lambda_rec) << "\n";
  os << "model.lambda_cvd = " << g17(model.lambda_cvd) << "\n";
  os << "model.lambda_rppg = " << g17(model.lambda_rppg) << "\n";
  return os.str();
}

TrainConfig TrainConfig::from_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("config: cannot open " + path);
  TrainConfig cfg;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error("config: " + path + ":" + std::to_string(lineno) +
                               ": expected 'key = value'");
    cfg.set_key(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return cfg;
}

namespace {

// [rows][frames][6] map -> [C, S, S] tensor scaled to [0,1], with an optional
// truncation to the first clip_len frames.
Item item_from_sample(const synth::LabeledSample& s, const model::ModelConfig& cfg,
                      int clip_len) {
  const mstmap::MstMapData* mp = &s.map;
  mstmap::MstMapData cut;
  if (s.map.frames > clip_len) {
    cut = mstmap::MstMapData::make(s.map.rows, clip_len, s.map.fps, s.map.n_regions);
    for (int r = 0; r < s.map.rows; ++r)
      for (int t = 0; t < clip_len; ++t)
        for (int c = 0; c < mstmap::kChannels; ++c) cut.at(r, t, c) = s.map.at(r, t, c);
    mp = &cut;
  }
  const int S = cfg.map_size;
  mstmap::MstMapData rs = mstmap::resize_mstmap(*mp, S, S);
  Item item;
  item.x = Tensor::zeros({mstmap::kChannels, S, S});
  for (int c = 0; c < mstmap::kChannels; ++c)
    for (int h = 0; h < S; ++h)
      for (int w = 0; w < S; ++w)
        // Interpolation rounding can overshoot the 8-bit range by an ulp;
        // the network contract is a hard [0,1].
        item.x.data()[(static_cast<std::size_t>(c) * S + h) * S + w] =
            std::clamp(rs.at(h, w, c) / 255.0, 0.0, 1.0);

  physio::Signal ref = s.labels.bvp;
  if (mp->frames < s.map.frames && s.labels.bvp.fs > 0.0) {
    const int keep = std::min<int>(static_cast<int>(ref.samples.size()),
                                   static_cast<int>(std::lround(mp->frames / mp->fps * ref.fs)));
    ref.samples.resize(std::max(keep, 2));
  }
  item.s_gt = physio::resample_linear(ref, cfg.signal_len).samples;
  item.hr_gt = s.labels.hr_bpm;
  item.id = s.index;
  item.noise = s.noise_preset;
  return item;
}

}  // namespace

Dataset Dataset::prepare(const std::vector<synth::LabeledSample>& samples,
                         const model::ModelConfig& cfg, int clip_len) {
  if (samples.empty()) throw std::invalid_argument("dataset: no samples");
  Dataset d;
  for (const auto& s : samples) {
    Item item = item_from_sample(s, cfg, clip_len);
    (s.split == "val" ? d.val : d.train).push_back(std::move(item));
  }
  return d;
}

Dataset Dataset::load_dir(const std::string& dir, const model::ModelConfig& cfg, int clip_len) {
  return prepare(synth::load_dataset(dir), cfg, clip_len);
}

PairSampler::PairSampler(const std::vector<Item>& items, bool cross_noise, std::uint64_t seed)
    : items_(&items), cross_noise_(cross_noise), rng_(seed) {
  if (items.size() < 2) throw std::invalid_argument("pair sampler: need at least 2 samples");
  if (cross_noise_) {
    std::set<std::string> presets;
    for (const auto& it : items) presets.insert(it.noise);
    if (presets.size() < 2)
      throw std::invalid_argument(
          "pair sampler: cross-noise pairing needs at least two corruption presets, dataset has " +
          std::to_string(presets.size()));
  }
}

std::pair<int, int> PairSampler::next() {
  const int n = static_cast<int>(items_->size());
  const int i = rng_.uniform_int(0, n - 1);
  while (true) {
    const int j = rng_.uniform_int(0, n - 1);
    if (j == i) continue;
    if (cross_noise_ && (*items_)[j].noise == (*items_)[i].noise) continue;
    return {i, j};
  }
}

model::Batch make_batch(const std::vector<Item>& items,
                        const std::vector<std::pair<int, int>>& pairs,
                        const model::ModelConfig& cfg, bool augment, Rng& rng) {
  if (pairs.empty()) throw std::invalid_argument("make_batch: no pairs");
  const int n = static_cast<int>(pairs.size());
  const int C = cfg.in_channels, S = cfg.map_size, L = cfg.signal_len;
  model::Batch b;
  b.x1 = Tensor::zeros({n, C, S, S});
  b.x2 = Tensor::zeros({n, C, S, S});
  b.s1 = Tensor::zeros({n, L});
  b.s2 = Tensor::zeros({n, L});
  b.hr1.resize(n);
  b.hr2.resize(n);

  auto fill = [&](Tensor& x, Tensor& sg, std::vector<double>& hr, int slot, const Item& item) {
    bool flip_t = false, flip_r = false;
    if (augment) {
      flip_t = rng.bernoulli(0.5);  // time reversal
      flip_r = rng.bernoulli(0.5);  // row reversal
    }
    double* dst = x.data() + static_cast<std::size_t>(slot) * C * S * S;
    const double* src = item.x.data();
    for (int c = 0; c < C; ++c)
      for (int h = 0; h < S; ++h) {
        const int hh = flip_r ? S - 1 - h : h;
        for (int w = 0; w < S; ++w) {
          const int ww = flip_t ? S - 1 - w : w;
          dst[(static_cast<std::size_t>(c) * S + h) * S + w] =
              src[(static_cast<std::size_t>(c) * S + hh) * S + ww];
        }
      }
    double* sdst = sg.data() + static_cast<std::size_t>(slot) * L;
    for (int k = 0; k < L; ++k) sdst[k] = item.s_gt[flip_t ? L - 1 - k : k];
    hr[slot] = item.hr_gt;
  };

  for (int p = 0; p < n; ++p) {
    const auto& [i, j] = pairs[p];
    fill(b.x1, b.s1, b.hr1, p, items.at(i));
    fill(b.x2, b.s2, b.hr2, p, items.at(j));
  }
  return b;
}

namespace {

std::vector<int> balanced_indices(const std::vector<Item>& items, double bin_bpm, Rng& rng) {
  std::vector<long> bin_key;
  std::vector<std::vector<int>> bins;
  for (std::size_t i = 0; i < items.size(); ++i) {
    const long key = static_cast<long>(std::floor(items[i].hr_gt / bin_bpm));
    std::size_t b = 0;
    for (; b < bin_key.size(); ++b)
      if (bin_key[b] == key) break;
    if (b == bin_key.size()) {
      bin_key.push_back(key);
      bins.emplace_back();
    }
    bins[b].push_back(static_cast<int>(i));
  }
  std::vector<int> out(items.size());
  for (auto& idx : out) {
    const auto& bin = bins[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(bins.size()) - 1))];
    idx = bin[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(bin.size()) - 1))];
  }
  return out;
}

EvalResult eval_from_preds(const std::vector<Item>& items, const std::vector<double>& preds) {
  EvalResult r;
  std::vector<double> gt(items.size());
  for (std::size_t i = 0; i < items.size(); ++i) {
    gt[i] = items[i].hr_gt;
    EvalRow row;
    row.id = items[i].id;
    row.hr_gt = items[i].hr_gt;
    row.hr_pred = preds[i];
    row.abs_err = std::abs(preds[i] - items[i].hr_gt);
    r.rows.push_back(row);
  }
  r.metrics = physio::metrics(preds, gt);
  return r;
}

}  // namespace

EvalResult evaluate(model::CvdModel& m, const std::vector<Item>& items) {
  if (items.empty()) throw std::invalid_argument("evaluate: no samples");
  std::vector<double> preds(items.size());
  const int C = m.cfg.in_channels, S = m.cfg.map_size;
  for (std::size_t i = 0; i < items.size(); ++i) {
    Tensor x = Tensor::zeros({1, C, S, S});
    std::copy(items[i].x.data(), items[i].x.data() + items[i].x.size(), x.data());
    preds[i] = m.predict(x, /*rppg_head=*/false).hr_bpm[0];
  }
  return eval_from_preds(items, preds);
}

EvalResult evaluate_with(const std::vector<Item>& items,
                         const std::function<double(const Item&)>& predictor) {
  if (items.empty()) throw std::invalid_argument("evaluate: no samples");
  std::vector<double> preds(items.size());
  for (std::size_t i = 0; i < items.size(); ++i) preds[i] = predictor(items[i]);
  return eval_from_preds(items, preds);
}

void write_eval_csv(const std::string& path, const EvalResult& r) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path);
  os << "sample_id,hr_gt,hr_pred,abs_err\n";
  for (const auto& row : r.rows)
    os << row.id << "," << g17(row.hr_gt) << "," << g17(row.hr_pred) << "," << g17(row.abs_err)
       << "\n";
}

void save_checkpoint(const std::string& stem, const model::CvdModel& m) {
  write_named_tensors(stem + ".ckpt", m.state_tensors());
  std::ofstream os(stem + ".json");
  if (!os) throw std::runtime_error("cannot write " + stem + ".json");
  os << m.cfg.to_json() << "\n";
}

model::CvdModel load_checkpoint(const std::string& stem) {
  std::ifstream is(stem + ".json");
  if (!is) throw std::runtime_error("cannot open " + stem + ".json");
  std::ostringstream ss;
  ss << is.rdbuf();
  model::CvdModel m;
  m.init(model::ModelConfig::from_json(ss.str()), /*seed=*/0);
  m.load_state(read_named_tensors(stem + ".ckpt"));
  return m;
}

TrainResult train_on(const TrainConfig& cfg, const Dataset& data, model::CvdModel& m) {
  cfg.validate();
  if (data.train.size() < 2)
    throw std::invalid_argument("train: need at least 2 training samples, have " +
                                std::to_string(data.train.size()));
  // A fresh model gets the same seeded init train() would give it; an already
  // initialized one passes through untouched (warm start).
  if (m.enc_p.blocks.empty()) m.init(cfg.model, Rng::mix(cfg.seed, 0xC0DE));
  fs::create_directories(cfg.out_dir);
  {
    std::ofstream os(fs::path(cfg.out_dir) / "config.txt");
    os << cfg.to_text();
    std::ofstream mj(fs::path(cfg.out_dir) / "model.json");
    mj << cfg.model.to_json() << "\n";
  }
  std::ofstream loss_csv(fs::path(cfg.out_dir) / "train_log.csv");
  std::ofstream val_csv(fs::path(cfg.out_dir) / "val_log.csv");
  if (!loss_csv || !val_csv) throw std::runtime_error("train: cannot write logs in " + cfg.out_dir);
  loss_csv << "step,L_rec,L_CVD,L_pre,L\n";
  val_csv << "epoch,mae_bpm,rmse_bpm,std_bpm,pearson_r\n";

  AdamConfig acfg;
  acfg.lr = cfg.lr;
  Adam opt(m.trainable_parameters(), acfg);

  Rng aug_rng(Rng::mix(cfg.seed, 0xA06));
  Rng bal_rng(Rng::mix(cfg.seed, 0xBA1));

  TrainResult result;
  result.checkpoint_path = (fs::path(cfg.out_dir) / "ckpt_init").string();
  save_checkpoint(result.checkpoint_path, m);

  const int steps_per_epoch =
      cfg.steps_per_epoch > 0
          ? cfg.steps_per_epoch
          : std::max<int>(1, static_cast<int>(data.train.size()) / (2 * cfg.batch_pairs));

  model::ForwardOptions opt_fwd;
  opt_fwd.cross_verify = cfg.cvd_enabled;
  opt_fwd.rppg_head = cfg.rppg_head;
  opt_fwd.mode = NormMode::kTrain;

  int step = 0;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::vector<Item> balanced;
    const std::vector<Item>* epoch_items = &data.train;
    if (cfg.balance) {
      for (int idx : balanced_indices(data.train, cfg.balance_bin_bpm, bal_rng))
        balanced.push_back(data.train[idx]);
      epoch_items = &balanced;
    }
    PairSampler sampler(*epoch_items, cfg.pair_cross_noise,
                        Rng::mix(cfg.seed, 0x5A00 + static_cast<std::uint64_t>(epoch)));

    for (int s = 0; s < steps_per_epoch; ++s) {
      std::vector<std::pair<int, int>> pairs(cfg.batch_pairs);
      for (auto& p : pairs) p = sampler.next();
      model::Batch batch = make_batch(*epoch_items, pairs, cfg.model, cfg.augment, aug_rng);

      Graph g;
      model::CvdOutputs outs = m.forward_cvd(g, batch, opt_fwd);
      const double L = outs.total.value();
      ++step;
      loss_csv << step << "," << g17(outs.rec) << "," << g17(outs.cvd) << "," << g17(outs.pre)
               << "," << g17(L) << "\n";
      if (!std::isfinite(L)) {
        std::ostringstream diag;
        diag << "non-finite loss at step " << step << " (epoch " << epoch << ")\n"
             << "L_rec=" << g17(outs.rec) << " L_CVD=" << g17(outs.cvd)
             << " L_pre=" << g17(outs.pre) << " L=" << g17(L) << "\n"
             << "last good checkpoint: " << result.checkpoint_path << "\n";
        std::ofstream halt(fs::path(cfg.out_dir) / "halt.txt");
        halt << diag.str();
        result.halt = diag.str();
        result.steps = step;
        return result;
      }
      if (step == 1) result.first_loss = L;
      result.last_loss = L;

      opt.zero_grad();
      g.backward(outs.total);
      try {
        opt.step();
      } catch (const std::exception& e) {
        std::ostringstream diag;
        diag << "optimizer halt at step " << step << ": " << e.what() << "\n"
             << "last good checkpoint: " << result.checkpoint_path << "\n";
        std::ofstream halt(fs::path(cfg.out_dir) / "halt.txt");
        halt << diag.str();
        result.halt = diag.str();
        result.steps = step;
        return result;
      }
    }

    if (!data.val.empty()) {
      EvalResult er = evaluate(m, data.val);
      val_csv << epoch << "," << g17(er.metrics.mae_bpm) << "," << g17(er.metrics.rmse_bpm) << ","
              << g17(er.metrics.std_bpm) << ","
              << g17(er.metrics.pearson_r ? *er.metrics.pearson_r
                                          : std::numeric_limits<double>::quiet_NaN())
              << "\n";
      result.final_val_mae = er.metrics.mae_bpm;
    }
    if (epoch % cfg.checkpoint_every == 0 || epoch == cfg.epochs) {
      char name[32];
      std::snprintf(name, sizeof(name), "ckpt_epoch%03d", epoch);
      result.checkpoint_path = (fs::path(cfg.out_dir) / name).string();
      save_checkpoint(result.checkpoint_path, m);
    }
  }
  result.steps = step;

  const std::string final_stem = (fs::path(cfg.out_dir) / "ckpt_final").string();
  save_checkpoint(final_stem, m);
  result.checkpoint_path = final_stem;

  if (!data.val.empty()) {
    EvalResult er = evaluate(m, data.val);
    write_eval_csv((fs::path(cfg.out_dir) / "eval.csv").string(), er);
  }
  return result;
}

TrainResult train(const TrainConfig& cfg) {
  if (cfg.data_dir.empty()) throw std::invalid_argument("train: data_dir not set");
  Dataset data = Dataset::load_dir(cfg.data_dir, cfg.model, cfg.clip_len);
  model::CvdModel m;
  m.init(cfg.model, Rng::mix(cfg.seed, 0xC0DE));
  fs::create_directories(cfg.out_dir);
  const fs::path src_manifest = fs::path(cfg.data_dir) / "manifest.json";
  if (fs::exists(src_manifest))
    fs::copy_file(src_manifest, fs::path(cfg.out_dir) / "manifest.json",
                  fs::copy_options::overwrite_existing);
  return train_on(cfg, data, m);
}

double disentangling_gap(model::CvdModel& m, const std::vector<Item>& items, int max_pairs) {
  if (items.size() < 2) throw std::invalid_argument("disentangling_gap: need at least 2 samples");
  const int C = m.cfg.in_channels, S = m.cfg.map_size;
  const int n_pairs = std::min<int>(max_pairs, static_cast<int>(items.size()) / 2);
  double acc = 0.0;
  for (int p = 0; p < n_pairs; ++p) {
    Tensor x1 = Tensor::zeros({1, C, S, S});
    Tensor x2 = Tensor::zeros({1, C, S, S});
    std::copy(items[2 * p].x.data(), items[2 * p].x.data() + items[2 * p].x.size(), x1.data());
    std::copy(items[2 * p + 1].x.data(), items[2 * p + 1].x.data() + items[2 * p + 1].x.size(),
              x2.data());
    Graph g;
    Tensor f_p = m.encode(g, m.enc_p, x1, NormMode::kEval);
    Tensor f_n = m.encode(g, m.enc_n, x2, NormMode::kEval);
    Tensor pse = m.decode(g, f_p, f_n);
    Tensor f_pse = m.encode(g, m.enc_p, pse, NormMode::kEval);
    acc += g.l1_mean(f_p, f_pse).value();
  }
  return acc / n_pairs;
}

std::string InferReport::to_json() const {
  nlohmann::json j;
  j["hr_bpm"] = hr_bpm;
  j["hr_spectral_bpm"] = hr_spectral_bpm;  // non-finite serializes as null
  j["rppg_fs_hz"] = rppg_fs;
  j["rppg"] = rppg;
  if (hrv) {
    nlohmann::json h;
    h["rf_hz"] = hrv->rf_hz;
    h["lf_nu"] = hrv->lf_nu;
    h["hf_nu"] = hrv->hf_nu;
    h["lf_hf"] = hrv->lf_hf;
    j["hrv"] = h;
  } else {
    j["hrv"] = nullptr;
  }
  j["hrv_note"] = hrv_note;
  return j.dump(2);
}

namespace {

mstmap::MstMapData slice_frames(const mstmap::MstMapData& map, int t0, int t1) {
  mstmap::MstMapData out = mstmap::MstMapData::make(map.rows, t1 - t0, map.fps, map.n_regions);
  for (int r = 0; r < map.rows; ++r)
    for (int t = t0; t < t1; ++t)
      for (int c = 0; c < mstmap::kChannels; ++c) out.at(r, t - t0, c) = map.at(r, t, c);
  return out;
}

}  // namespace

InferReport infer(model::CvdModel& m, const mstmap::MstMapData& map) {
  if (map.frames < 2) throw std::invalid_argument("infer: map has fewer than 2 frames");
  if (!(map.fps > 0.0)) throw std::invalid_argument("infer: map has no frame rate");
  const int S = m.cfg.map_size, C = m.cfg.in_channels, L = m.cfg.signal_len;
  const double clip_s = m.cfg.clip_seconds;
  const double duration = map.frames / map.fps;
  const int frames_per_win = static_cast<int>(std::lround(clip_s * map.fps));
  int n_win = 1;
  if (duration > 1.5 * clip_s && frames_per_win >= 2) n_win = map.frames / frames_per_win;
  if (n_win < 1) n_win = 1;

  InferReport rep;
  std::vector<double> hrs;
  for (int w = 0; w < n_win; ++w) {
    mstmap::MstMapData piece =
        n_win == 1 ? map : slice_frames(map, w * frames_per_win, (w + 1) * frames_per_win);
    mstmap::MstMapData rs = mstmap::resize_mstmap(piece, S, S);
    Tensor x = Tensor::zeros({1, C, S, S});
    for (int c = 0; c < C; ++c)
      for (int h = 0; h < S; ++h)
        for (int ww = 0; ww < S; ++ww)
          x.data()[(static_cast<std::size_t>(c) * S + h) * S + ww] = rs.at(h, ww, c) / 255.0;
    model::Prediction pred = m.predict(x, /*rppg_head=*/true);
    hrs.push_back(pred.hr_bpm[0]);
    rep.rppg.insert(rep.rppg.end(), pred.rppg[0].begin(), pred.rppg[0].end());
  }
  rep.hr_bpm = physio::sliding_window_hr(hrs);
  const double covered = n_win == 1 ? duration : n_win * (frames_per_win / map.fps);
  rep.rppg_fs = rep.rppg.size() / covered;

  physio::Signal sig;
  sig.samples = rep.rppg;
  sig.fs = rep.rppg_fs;
  try {
    rep.hr_spectral_bpm = physio::estimate_hr(sig, m.cfg.hr_lo_bpm, m.cfg.hr_hi_bpm);
  } catch (const std::exception& e) {
    rep.hrv_note = std::string("spectral HR unavailable: ") + e.what();
  }
  if (covered < 30.0) {
    rep.hrv_note = "clip covers " + std::to_string(covered) + " s; HRV needs 30 s";
  } else {
    try {
      rep.hrv = physio::hrv_features(physio::detect_peaks(sig));
    } catch (const std::exception& e) {
      rep.hrv_note = std::string("HRV unavailable: ") + e.what();
    }
  }
  return rep;
}

void export_plots(const std::string& run_dir) {
  const fs::path plots = fs::path(run_dir) / "plots";
  fs::create_directories(plots);

  const fs::path train_log = fs::path(run_dir) / "train_log.csv";
  std::ifstream is(train_log);
  if (!is) throw std::runtime_error("export_plots: cannot open " + train_log.string());
  std::string line;
  if (!std::getline(is, line) || trim(line) != "step,L_rec,L_CVD,L_pre,L")
    throw std::runtime_error("export_plots: unexpected header in " + train_log.string());
  std::ofstream curve(plots / "loss_curve.csv");
  curve << "step,L\n";
  long prev_step = 0;
  while (std::getline(is, line)) {
    if (trim(line).empty()) continue;
    const auto f = split_csv(line);
    if (f.size() != 5)
      throw std::runtime_error("export_plots: malformed row in " + train_log.string());
    const long step = std::stol(f[0]);
    if (step <= prev_step)
      throw std::runtime_error("export_plots: step column not strictly increasing at step " +
                               f[0]);
    prev_step = step;
    curve << f[0] << "," << f[4] << "\n";
  }
  fs::copy_file(train_log, plots / "loss_components.csv", fs::copy_options::overwrite_existing);

  const fs::path eval_csv = fs::path(run_dir) / "eval.csv";
  if (fs::exists(eval_csv)) {
    std::ifstream es(eval_csv);
    std::ofstream scatter(plots / "hr_scatter.csv");
    scatter << "hr_gt,hr_pred\n";
    std::getline(es, line);  // header
    while (std::getline(es, line)) {
      if (trim(line).empty()) continue;
      const auto f = split_csv(line);
      if (f.size() != 4) throw std::runtime_error("export_plots: malformed row in eval.csv");
      scatter << f[1] << "," << f[2] << "\n";
    }
  }
  const fs::path val_log = fs::path(run_dir) / "val_log.csv";
  if (fs::exists(val_log))
    fs::copy_file(val_log, plots / "val_curve.csv", fs::copy_options::overwrite_existing);
}

}  // namespace cvd::harness
