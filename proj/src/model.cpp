#include "cvd/model.hpp"

#include <cmath>
#include <stdexcept>
#include <unordered_map>

#include <json.hpp>

#include "cvd/rng.hpp"

namespace cvd::model {

void ModelConfig::validate() const {
  if (in_channels < 1) throw std::invalid_argument("model config: in_channels must be >= 1");
  if (enc_channels.empty()) throw std::invalid_argument("model config: no encoder blocks");
  const int depth = static_cast<int>(enc_channels.size());
  if (map_size < (1 << depth) || map_size % (1 << depth) != 0)
    throw std::invalid_argument("model config: map_size " + std::to_string(map_size) +
                                " is not a positive multiple of 2^" + std::to_string(depth));
  if (signal_len < 2) throw std::invalid_argument("model config: signal_len must be >= 2");
  if (!(clip_seconds > 0.0)) throw std::invalid_argument("model config: clip_seconds must be > 0");
  if (!(0.0 < hr_lo_bpm && hr_lo_bpm < hr_hi_bpm))
    throw std::invalid_argument("model config: HR band [" + std::to_string(hr_lo_bpm) + ", " +
                                std::to_string(hr_hi_bpm) + "] is empty or negative");
  if (hr_hi_bpm / 60.0 > signal_fs() / 2.0)
    throw std::invalid_argument("model config: signal rate " + std::to_string(signal_fs()) +
                                " Hz cannot represent " + std::to_string(hr_hi_bpm) + " bpm");
  if (lambda_rec < 0.0 || lambda_cvd < 0.0 || lambda_rppg < 0.0)
    throw std::invalid_argument("model config: loss weights must be non-negative");
}

std::string ModelConfig::to_json() const {
  nlohmann::json j;
  j["in_channels"] = in_channels;
  j["map_size"] = map_size;
  j["enc_channels"] = enc_channels;
  j["est_channels"] = est_channels;
  j["signal_len"] = signal_len;
  j["clip_seconds"] = clip_seconds;
  j["hr_lo_bpm"] = hr_lo_bpm;
  j["hr_hi_bpm"] = hr_hi_bpm;
  j["lambda_rec"] = lambda_rec;
  j["lambda_cvd"] = lambda_cvd;
  j["lambda_rppg"] = lambda_rppg;
  return j.dump(2);
}

ModelConfig ModelConfig::from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  ModelConfig c;
  c.in_channels = j.value("in_channels", c.in_channels);
  c.map_size = j.value("map_size", c.map_size);
  c.enc_channels = j.value("enc_channels", c.enc_channels);
  c.est_channels = j.value("est_channels", c.est_channels);
  c.signal_len = j.value("signal_len", c.signal_len);
  c.clip_seconds = j.value("clip_seconds", c.clip_seconds);
  c.hr_lo_bpm = j.value("hr_lo_bpm", c.hr_lo_bpm);
  c.hr_hi_bpm = j.value("hr_hi_bpm", c.hr_hi_bpm);
  c.lambda_rec = j.value("lambda_rec", c.lambda_rec);
  c.lambda_cvd = j.value("lambda_cvd", c.lambda_cvd);
  c.lambda_rppg = j.value("lambda_rppg", c.lambda_rppg);
  c.validate();
  return c;
}

int hr_target_bin(double hr_bpm, double hr_lo_bpm, double hr_hi_bpm) {
  const int n_bins = static_cast<int>(std::lround(hr_hi_bpm - hr_lo_bpm)) + 1;
  int idx = static_cast<int>(std::lround(hr_bpm - hr_lo_bpm));
  if (idx < 0) idx = 0;
  if (idx > n_bins - 1) idx = n_bins - 1;
  return idx;
}

namespace {

Tensor he_conv(Rng& rng, int small_ch, int big_ch, int k, int fan) {
  Tensor w = Tensor::zeros({small_ch, big_ch, k, k}, /*requires_grad=*/true);
  const double std = std::sqrt(2.0 / fan);
  for (std::size_t i = 0; i < w.size(); ++i) w.data()[i] = std * rng.normal();
  return w;
}

Tensor he_fc(Rng& rng, int in_f, int out_f) {
  Tensor w = Tensor::zeros({in_f, out_f}, /*requires_grad=*/true);
  const double std = std::sqrt(2.0 / in_f);
  for (std::size_t i = 0; i < w.size(); ++i) w.data()[i] = std * rng.normal();
  return w;
}

ConvBnBlock make_conv_bn(Rng& rng, int in_ch, int out_ch, int k) {
  ConvBnBlock blk;
  blk.w = he_conv(rng, out_ch, in_ch, k, in_ch * k * k);
  blk.b = Tensor::zeros({out_ch}, true);
  blk.gamma = Tensor({out_ch}, 1.0, true);
  blk.beta = Tensor::zeros({out_ch}, true);
  blk.stats = BatchNormStats::make(out_ch);
  return blk;
}

}  // namespace

void CvdModel::init(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  cfg = config;
  Rng rng(seed);

  enc_p.blocks.clear();
  enc_n.blocks.clear();
  dec.blocks.clear();

  for (Encoder* enc : {&enc_p, &enc_n}) {
    int in_ch = cfg.in_channels;
    for (int out_ch : cfg.enc_channels) {
      enc->blocks.push_back(make_conv_bn(rng, in_ch, out_ch, 3));
      in_ch = out_ch;
    }
  }

  const int depth = static_cast<int>(cfg.enc_channels.size());
  int in_ch = 2 * cfg.enc_channels.back();
  for (int j = 0; j < depth; ++j) {
    const bool last = j == depth - 1;
    const int out_ch = last ? cfg.in_channels : cfg.enc_channels[depth - 2 - j];
    Decoder::Block blk;
    // transposed conv weight: [input_ch, output_ch, k, k]
    blk.w = he_conv(rng, in_ch, out_ch, 4, out_ch * 4 * 4);
    blk.b = Tensor::zeros({out_ch}, true);
    blk.normed = !last;
    if (blk.normed) {
      blk.gamma = Tensor({out_ch}, 1.0, true);
      blk.beta = Tensor::zeros({out_ch}, true);
    }
    dec.blocks.push_back(std::move(blk));
    in_ch = out_ch;
  }

  const int fc = cfg.est_channels;
  est.c1 = make_conv_bn(rng, cfg.enc_channels.back(), fc, 3);
  est.c2 = make_conv_bn(rng, fc, fc, 3);
  est.hr_w = he_fc(rng, fc, 1);
  est.hr_b = Tensor::zeros({1}, true);
  const int w = cfg.feature_size();
  est.sig_w = he_fc(rng, fc * w, cfg.signal_len);
  est.sig_b = Tensor::zeros({cfg.signal_len}, true);
}

std::vector<Tensor> CvdModel::trainable_parameters() const {
  std::vector<Tensor> out;
  for (const Encoder* enc : {&enc_p, &enc_n})
    for (const auto& blk : enc->blocks) {
      out.push_back(blk.w);
      out.push_back(blk.b);
      out.push_back(blk.gamma);
      out.push_back(blk.beta);
    }
  for (const auto& blk : dec.blocks) {
    out.push_back(blk.w);
    out.push_back(blk.b);
    if (blk.normed) {
      out.push_back(blk.gamma);
      out.push_back(blk.beta);
    }
  }
  for (const ConvBnBlock* blk : {&est.c1, &est.c2}) {
    out.push_back(blk->w);
    out.push_back(blk->b);
    out.push_back(blk->gamma);
    out.push_back(blk->beta);
  }
  out.push_back(est.hr_w);
  out.push_back(est.hr_b);
  out.push_back(est.sig_w);
  out.push_back(est.sig_b);
  return out;
}

namespace {

void push_conv_bn(NamedTensors& out, const std::string& prefix, const ConvBnBlock& blk) {
  out.emplace_back(prefix + ".w", blk.w);
  out.emplace_back(prefix + ".b", blk.b);
  out.emplace_back(prefix + ".gamma", blk.gamma);
  out.emplace_back(prefix + ".beta", blk.beta);
  out.emplace_back(prefix + ".running_mean", blk.stats.running_mean);
  out.emplace_back(prefix + ".running_var", blk.stats.running_var);
}

}  // namespace

NamedTensors CvdModel::state_tensors() const {
  NamedTensors out;
  const Encoder* encs[2] = {&enc_p, &enc_n};
  const char* enc_names[2] = {"enc_p", "enc_n"};
  for (int e = 0; e < 2; ++e)
    for (std::size_t i = 0; i < encs[e]->blocks.size(); ++i)
      push_conv_bn(out, std::string(enc_names[e]) + ".block" + std::to_string(i),
                   encs[e]->blocks[i]);
  for (std::size_t i = 0; i < dec.blocks.size(); ++i) {
    const std::string p = "dec.block" + std::to_string(i);
    out.emplace_back(p + ".w", dec.blocks[i].w);
    out.emplace_back(p + ".b", dec.blocks[i].b);
    if (dec.blocks[i].normed) {
      out.emplace_back(p + ".gamma", dec.blocks[i].gamma);
      out.emplace_back(p + ".beta", dec.blocks[i].beta);
    }
  }
  push_conv_bn(out, "est.c1", est.c1);
  push_conv_bn(out, "est.c2", est.c2);
  out.emplace_back("est.hr.w", est.hr_w);
  out.emplace_back("est.hr.b", est.hr_b);
  out.emplace_back("est.sig.w", est.sig_w);
  out.emplace_back("est.sig.b", est.sig_b);
  return out;
}

void CvdModel::load_state(const NamedTensors& state) {
  std::unordered_map<std::string, const Tensor*> by_name;
  for (const auto& [name, t] : state) by_name[name] = &t;
  NamedTensors mine = state_tensors();
  if (by_name.size() != mine.size())
    throw std::invalid_argument("load_state: checkpoint has " + std::to_string(by_name.size()) +
                             " tensors, model expects " + std::to_string(mine.size()));
  for (auto& [name, dst] : mine) {
    auto it = by_name.find(name);
    if (it == by_name.end())
      throw std::invalid_argument("load_state: checkpoint is missing tensor '" + name + "'");
    const Tensor& src = *it->second;
    if (src.shape() != dst.shape())
      throw std::invalid_argument("load_state: tensor '" + name + "' has shape " +
                               shape_str(src.shape()) + ", expected " + shape_str(dst.shape()));
    Tensor d = dst;  // shared handle onto the live parameter
    for (std::size_t i = 0; i < d.size(); ++i) d.data()[i] = src.data()[i];
  }
}

Tensor CvdModel::encode(Graph& g, Encoder& enc, const Tensor& x, NormMode mode) {
  Tensor h = x;
  for (auto& blk : enc.blocks) {
    h = g.conv2d(h, blk.w, blk.b, /*stride=*/2, /*padding=*/1);
    h = g.batch_norm(h, blk.gamma, blk.beta, blk.stats, mode);
    h = g.relu(h);
  }
  return h;
}

Tensor CvdModel::decode(Graph& g, const Tensor& f_p, const Tensor& f_n) {
  Tensor h = g.concat(f_p, f_n, /*axis=*/1);
  for (auto& blk : dec.blocks) {
    h = g.transposed_conv2d(h, blk.w, blk.b, /*stride=*/2, /*padding=*/1);
    if (blk.normed) {
      h = g.instance_norm(h, blk.gamma, blk.beta);
      h = g.relu(h);
    }
  }
  return h;
}

EstimateOut CvdModel::estimate(Graph& g, const Tensor& feature, NormMode mode, bool rppg_head) {
  Tensor h = feature;
  for (ConvBnBlock* blk : {&est.c1, &est.c2}) {
    h = g.conv2d(h, blk->w, blk->b, /*stride=*/1, /*padding=*/1);
    h = g.batch_norm(h, blk->gamma, blk->beta, blk->stats, mode);
    h = g.relu(h);
  }
  const int n = h.dim(0), c = h.dim(1);
  EstimateOut out;
  Tensor pooled = g.adaptive_avg_pool(h, 1, 1);
  // The head predicts a fraction of the band half-width around its middle;
  // in bpm units directly, Adam-sized steps would crawl.
  Tensor raw = g.fully_connected(g.reshape(pooled, {n, c}), est.hr_w, est.hr_b);
  Tensor mid = Tensor({n, 1}, 0.5 * (cfg.hr_lo_bpm + cfg.hr_hi_bpm));
  out.hr = g.add(g.scale(raw, 0.5 * (cfg.hr_hi_bpm - cfg.hr_lo_bpm)), mid);
  if (rppg_head) {
    const int w = cfg.feature_size();
    Tensor strip = g.adaptive_avg_pool(h, 1, w);
    out.rppg = g.fully_connected(g.reshape(strip, {n, c * w}), est.sig_w, est.sig_b);
  }
  return out;
}

Tensor hr_abs_loss(Graph& g, const Tensor& hr_pred, const std::vector<double>& hr_gt) {
  if (hr_pred.size() != hr_gt.size())
    throw std::invalid_argument("hr_abs_loss: " + std::to_string(hr_pred.size()) +
                                " predictions vs " + std::to_string(hr_gt.size()) + " labels");
  Tensor gt = Tensor::from_data(hr_pred.shape(), hr_gt);
  return g.l1_mean(hr_pred, gt);
}

Tensor rppg_wave_loss(Graph& g, const Tensor& sig, const Tensor& gt, int* degenerate_rows) {
  return g.pearson_loss(sig, gt, degenerate_rows);
}

Tensor rppg_hr_loss(Graph& g, const Tensor& sig, const std::vector<double>& hr_gt,
                    const ModelConfig& cfg) {
  Tensor power = g.psd(sig, cfg.signal_fs(), cfg.hr_lo_bpm / 60.0, cfg.hr_hi_bpm / 60.0,
                       1.0 / 60.0);
  std::vector<int> bins(hr_gt.size());
  for (std::size_t i = 0; i < hr_gt.size(); ++i)
    bins[i] = hr_target_bin(hr_gt[i], cfg.hr_lo_bpm, cfg.hr_hi_bpm);
  return g.psd_cross_entropy(power, bins);
}

namespace {

void check_batch(const ModelConfig& cfg, const Batch& b, bool rppg_head) {
  auto want = std::vector<int>{-1, cfg.in_channels, cfg.map_size, cfg.map_size};
  for (const Tensor* x : {&b.x1, &b.x2}) {
    if (!x->defined() || x->ndim() != 4 || x->dim(1) != want[1] || x->dim(2) != want[2] ||
        x->dim(3) != want[3])
      throw std::invalid_argument("forward_cvd: map batch must be [N, " +
                                  std::to_string(cfg.in_channels) + ", " +
                                  std::to_string(cfg.map_size) + ", " +
                                  std::to_string(cfg.map_size) + "], got " +
                                  (x->defined() ? shape_str(x->shape()) : "undefined"));
  }
  const int n = b.x1.dim(0);
  if (b.x2.dim(0) != n || static_cast<int>(b.hr1.size()) != n ||
      static_cast<int>(b.hr2.size()) != n)
    throw std::invalid_argument("forward_cvd: batch halves disagree on N");
  if (rppg_head) {
    for (const Tensor* s : {&b.s1, &b.s2})
      if (!s->defined() || s->ndim() != 2 || s->dim(0) != n || s->dim(1) != cfg.signal_len)
        throw std::invalid_argument("forward_cvd: reference pulse must be [N, " +
                                    std::to_string(cfg.signal_len) + "]");
  }
}

}  // namespace

CvdOutputs CvdModel::forward_cvd(Graph& g, const Batch& batch, const ForwardOptions& opt) {
  check_batch(cfg, batch, opt.rppg_head);
  CvdOutputs out;

  Tensor f_p1 = encode(g, enc_p, batch.x1, opt.mode);
  Tensor f_n1 = encode(g, enc_n, batch.x1, opt.mode);
  Tensor f_p2 = encode(g, enc_p, batch.x2, opt.mode);
  Tensor f_n2 = encode(g, enc_n, batch.x2, opt.mode);

  Tensor m1 = decode(g, f_p1, f_n1);
  Tensor m2 = decode(g, f_p2, f_n2);
  Tensor rec = g.scale(g.add(g.l1_mean(batch.x1, m1), g.l1_mean(batch.x2, m2)), cfg.lambda_rec);

  EstimateOut e1 = estimate(g, f_p1, opt.mode, opt.rppg_head);
  EstimateOut e2 = estimate(g, f_p2, opt.mode, opt.rppg_head);

  auto pre_term = [&](const EstimateOut& e, const std::vector<double>& hr_gt,
                      const Tensor& s_gt) {
    Tensor t = hr_abs_loss(g, e.hr, hr_gt);
    if (opt.rppg_head) {
      int degen = 0;
      t = g.add(t, g.scale(rppg_wave_loss(g, e.rppg, s_gt, &degen), cfg.lambda_rppg));
      t = g.add(t, rppg_hr_loss(g, e.rppg, hr_gt, cfg));
      out.degenerate_rows += degen;
    }
    return t;
  };

  Tensor pre = g.add(pre_term(e1, batch.hr1, batch.s1), pre_term(e2, batch.hr2, batch.s2));
  Tensor total;

  if (opt.cross_verify) {
    Tensor pse1 = decode(g, f_p1, f_n2);  // physiology of 1, corruption of 2
    Tensor pse2 = decode(g, f_p2, f_n1);
    Tensor fp_pse1 = encode(g, enc_p, pse1, opt.mode);
    Tensor fn_pse1 = encode(g, enc_n, pse1, opt.mode);
    Tensor fp_pse2 = encode(g, enc_p, pse2, opt.mode);
    Tensor fn_pse2 = encode(g, enc_n, pse2, opt.mode);
    EstimateOut ep1 = estimate(g, fp_pse1, opt.mode, opt.rppg_head);
    EstimateOut ep2 = estimate(g, fp_pse2, opt.mode, opt.rppg_head);

    Tensor feat = g.add(g.add(g.l1_mean(f_p1, fp_pse1), g.l1_mean(f_p2, fp_pse2)),
                        g.add(g.l1_mean(f_n2, fn_pse1), g.l1_mean(f_n1, fn_pse2)));
    Tensor hr_agree = g.add(g.l1_mean(e1.hr, ep1.hr), g.l1_mean(e2.hr, ep2.hr));
    Tensor cvd = g.add(g.scale(feat, cfg.lambda_cvd), hr_agree);

    pre = g.add(pre, g.add(pre_term(ep1, batch.hr1, batch.s1), pre_term(ep2, batch.hr2, batch.s2)));
    out.cvd = cvd.value();
    total = g.add(g.add(rec, cvd), pre);
  } else {
    total = g.add(rec, pre);
  }

  out.total = total;
  out.rec = rec.value();
  out.pre = pre.value();
  out.hr_pred1.assign(e1.hr.data(), e1.hr.data() + e1.hr.size());
  out.hr_pred2.assign(e2.hr.data(), e2.hr.data() + e2.hr.size());
  return out;
}

Prediction CvdModel::predict(const Tensor& x, bool rppg_head) {
  if (!x.defined() || x.ndim() != 4)
    throw std::invalid_argument("predict: input must be [N, C, H, W]");
  Graph g;
  Tensor f = encode(g, enc_p, x, NormMode::kEval);
  EstimateOut e = estimate(g, f, NormMode::kEval, rppg_head);
  Prediction p;
  p.hr_bpm.assign(e.hr.data(), e.hr.data() + e.hr.size());
  if (rppg_head) {
    const int n = e.rppg.dim(0), l = e.rppg.dim(1);
    p.rppg.resize(n);
    for (int i = 0; i < n; ++i)
      p.rppg[i].assign(e.rppg.data() + static_cast<std::size_t>(i) * l,
                       e.rppg.data() + static_cast<std::size_t>(i + 1) * l);
  }
  return p;
}

}  // namespace cvd::model
