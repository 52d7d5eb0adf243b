// Command-line front end: dataset synthesis, map extraction, training,
// evaluation, inference, and signal analysis.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "cvd/harness.hpp"
#include "cvd/image.hpp"
#include "cvd/model.hpp"
#include "cvd/mstmap.hpp"
#include "cvd/physio.hpp"
#include "cvd/serialize.hpp"
#include "cvd/synth.hpp"

namespace fs = std::filesystem;
using namespace cvd;

namespace {

mstmap::VideoClip read_frames_dir(const std::string& dir, const mstmap::RoiDocument& rois,
                                  int clip_len) {
  std::vector<fs::path> paths;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".ppm") paths.push_back(e.path());
  std::sort(paths.begin(), paths.end());
  if (paths.size() < 2)
    throw std::runtime_error("frames directory " + dir + " holds " +
                             std::to_string(paths.size()) + " .ppm frames; need at least 2");
  if (clip_len > 0 && static_cast<int>(paths.size()) > clip_len)
    paths.resize(static_cast<std::size_t>(clip_len));

  mstmap::VideoClip clip;
  clip.fps = rois.fps;
  for (std::size_t i = 0; i < paths.size(); ++i) {
    clip.frames.push_back(read_ppm(paths[i].string()));
    const mstmap::RoiFrame* match = nullptr;
    for (const auto& rf : rois.frames)
      if (rf.frame_index == static_cast<int>(i)) {
        match = &rf;
        break;
      }
    if (!match)
      throw std::runtime_error("ROI document has no entry for frame " + std::to_string(i));
    clip.rois.push_back(*match);
  }
  return clip;
}

void write_clip(const std::string& dir, const mstmap::VideoClip& clip) {
  fs::create_directories(dir);
  nlohmann::json doc;
  doc["fps"] = clip.fps;
  nlohmann::json frames = nlohmann::json::array();
  for (std::size_t i = 0; i < clip.frames.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "frame_%05d.ppm", static_cast<int>(i));
    write_ppm((fs::path(dir) / name).string(), clip.frames[i]);
    nlohmann::json fr;
    fr["index"] = static_cast<int>(i);
    nlohmann::json regions = nlohmann::json::array();
    for (const auto& r : clip.rois[i].regions) {
      nlohmann::json rj;
      rj["box"] = {r.box.x, r.box.y, r.box.w, r.box.h};
      regions.push_back(rj);
    }
    fr["regions"] = regions;
    frames.push_back(fr);
  }
  doc["frames"] = frames;
  std::ofstream os(fs::path(dir) / "rois.json");
  os << doc.dump(2) << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cross-verified disentangling rPPG toolkit"};
  app.require_subcommand(1);

  // ---- mstmap ----
  auto* mst = app.add_subcommand("mstmap", "MSTmap operations");
  mst->require_subcommand(1);
  auto* extract = mst->add_subcommand("extract", "Build an MSTmap from frames + ROIs");
  std::string ex_frames, ex_rois, ex_out;
  int ex_clip_len = 300, ex_n = 6;
  extract->add_option("--frames", ex_frames, "Directory of numbered .ppm frames")->required();
  extract->add_option("--rois", ex_rois, "ROI JSON document")->required();
  extract->add_option("--out", ex_out, "Output map file")->required();
  extract->add_option("--clip-len", ex_clip_len, "Max frames to keep");
  extract->add_option("--n", ex_n, "Expected region count");

  // ---- synth ----
  auto* synth_cmd = app.add_subcommand("synth", "Synthetic data generation");
  synth_cmd->require_subcommand(1);
  auto* gen = synth_cmd->add_subcommand("generate", "Generate a labeled map dataset");
  int g_count = 100, g_rows = 63;
  double g_hr_min = 50.0, g_hr_max = 120.0, g_fs = 30.0, g_duration = 10.0;
  std::string g_noise = "moderate", g_out;
  std::uint64_t g_seed = 1;
  gen->add_option("--count", g_count, "Sample count");
  gen->add_option("--hr-min", g_hr_min, "Lower HR bound (bpm)");
  gen->add_option("--hr-max", g_hr_max, "Upper HR bound (bpm)");
  gen->add_option("--noise", g_noise, "Corruption preset: none|low|moderate|high");
  gen->add_option("--out", g_out, "Output directory")->required();
  gen->add_option("--seed", g_seed, "Master seed");
  gen->add_option("--rows", g_rows, "Map rows (2^n - 1)");
  gen->add_option("--fs", g_fs, "Frame rate (Hz)");
  gen->add_option("--duration", g_duration, "Clip length (s)");

  auto* vid = synth_cmd->add_subcommand("video", "Generate a toy pulsating clip");
  double v_hr = 72.0, v_fs = 30.0, v_duration = 10.0;
  int v_regions = 3;
  std::uint64_t v_seed = 1;
  std::string v_out;
  vid->add_option("--hr", v_hr, "Heart rate (bpm)");
  vid->add_option("--fs", v_fs, "Frame rate (Hz)");
  vid->add_option("--duration", v_duration, "Clip length (s)");
  vid->add_option("--regions", v_regions, "Region count");
  vid->add_option("--seed", v_seed, "Seed");
  vid->add_option("--out", v_out, "Output directory")->required();

  // ---- train ----
  auto* tr = app.add_subcommand("train", "Train a model");
  std::string t_config, t_data, t_out;
  std::uint64_t t_seed = 0;
  bool t_has_seed = false;
  std::vector<std::string> t_sets;
  tr->add_option("--config", t_config, "Flat key = value config file");
  tr->add_option("--data", t_data, "Dataset directory");
  tr->add_option("--out", t_out, "Run directory");
  tr->add_option("--seed", t_seed, "Seed override")->each([&](const std::string&) {
    t_has_seed = true;
  });
  tr->add_option("--set", t_sets, "key=value overrides (repeatable)");

  // ---- eval ----
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint");
  std::string e_ckpt, e_data, e_out = "eval.csv", e_split = "val";
  int e_clip_len = 300;
  ev->add_option("--checkpoint", e_ckpt, "Checkpoint stem (without .ckpt)")->required();
  ev->add_option("--data", e_data, "Dataset directory")->required();
  ev->add_option("--out", e_out, "Per-sample CSV path");
  ev->add_option("--split", e_split, "train|val|all");
  ev->add_option("--clip-len", e_clip_len, "Max frames per map");

  // ---- infer ----
  auto* in = app.add_subcommand("infer", "Run inference on one map");
  std::string i_ckpt, i_map, i_report;
  in->add_option("--checkpoint", i_ckpt, "Checkpoint stem")->required();
  in->add_option("--map", i_map, "Map file")->required();
  in->add_option("--report", i_report, "JSON report path (default stdout)");

  // ---- analyze ----
  auto* an = app.add_subcommand("analyze", "Physiological analysis of a stored signal");
  std::string a_signal, a_report;
  double a_fs = 30.0;
  an->add_option("--signal", a_signal, "1-D tensor file")->required();
  an->add_option("--fs", a_fs, "Sampling rate (Hz)")->required();
  an->add_option("--report", a_report, "JSON report path (default stdout)");

  // ---- export-plots ----
  auto* ep = app.add_subcommand("export-plots", "Write plot-ready CSVs for a run");
  std::string p_run;
  ep->add_option("--run", p_run, "Run directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*extract) {
      mstmap::RoiDocument rois = mstmap::load_roi_json(ex_rois);
      mstmap::VideoClip clip = read_frames_dir(ex_frames, rois, ex_clip_len);
      for (const auto& rf : clip.rois)
        if (static_cast<int>(rf.regions.size()) != ex_n)
          throw std::runtime_error("frame " + std::to_string(rf.frame_index) + " has " +
                                   std::to_string(rf.regions.size()) + " regions, expected " +
                                   std::to_string(ex_n));
      mstmap::MstMapData map = mstmap::build_mstmap(clip);
      mstmap::write_map_file(ex_out, map);
      std::cout << "wrote " << ex_out << " (" << map.rows << "x" << map.frames << "x"
                << mstmap::kChannels << ")\n";
    } else if (*gen) {
      synth::DatasetSpec spec;
      spec.count = g_count;
      spec.hr_lo_bpm = g_hr_min;
      spec.hr_hi_bpm = g_hr_max;
      spec.noise = synth::noise_preset(g_noise);
      spec.seed = g_seed;
      spec.rows = g_rows;
      spec.fs = g_fs;
      spec.duration_s = g_duration;
      auto samples = synth::gen_dataset(spec);
      synth::write_dataset(g_out, spec, samples);
      int n_val = 0;
      for (const auto& s : samples) n_val += s.split == "val" ? 1 : 0;
      std::cout << "wrote " << samples.size() << " samples to " << g_out << " (" << n_val
                << " val)\n";
    } else if (*vid) {
      synth::BvpSpec bspec;
      bspec.hr_bpm = v_hr;
      bspec.fs = v_fs;
      bspec.duration_s = v_duration;
      bspec.seed = v_seed;
      physio::Signal bvp = synth::gen_bvp(bspec);
      synth::VideoSpec vspec;
      vspec.n_regions = v_regions;
      vspec.seed = v_seed;
      mstmap::VideoClip clip = synth::gen_video(bvp, vspec);
      write_clip(v_out, clip);
      Tensor bt = Tensor::from_data({static_cast<int>(bvp.samples.size())}, bvp.samples);
      write_tensor_file((fs::path(v_out) / "bvp.mst").string(), bt);
      std::cout << "wrote " << clip.frames.size() << " frames to " << v_out << "\n";
    } else if (*tr) {
      harness::TrainConfig cfg;
      if (!t_config.empty()) cfg = harness::TrainConfig::from_file(t_config);
      if (!t_data.empty()) cfg.data_dir = t_data;
      if (!t_out.empty()) cfg.out_dir = t_out;
      if (t_has_seed) cfg.seed = t_seed;
      for (const auto& kv : t_sets) {
        const std::size_t eq = kv.find('=');
        if (eq == std::string::npos)
          throw std::runtime_error("--set wants key=value, got '" + kv + "'");
        cfg.set_key(kv.substr(0, eq), kv.substr(eq + 1));
      }
      harness::TrainResult r = harness::train(cfg);
      if (!r.halt.empty()) {
        std::cerr << r.halt;
        return 2;
      }
      std::cout << "trained " << r.steps << " steps; loss " << r.first_loss << " -> "
                << r.last_loss << "; checkpoint " << r.checkpoint_path << "\n";
      if (std::isfinite(r.final_val_mae))
        std::cout << "final val MAE " << r.final_val_mae << " bpm\n";
    } else if (*ev) {
      model::CvdModel m = harness::load_checkpoint(e_ckpt);
      harness::Dataset data = harness::Dataset::load_dir(e_data, m.cfg, e_clip_len);
      std::vector<harness::Item> items;
      if (e_split == "train") items = data.train;
      else if (e_split == "val") items = data.val;
      else if (e_split == "all") {
        items = data.train;
        items.insert(items.end(), data.val.begin(), data.val.end());
      } else {
        throw std::runtime_error("--split must be train|val|all");
      }
      harness::EvalResult r = harness::evaluate(m, items);
      harness::write_eval_csv(e_out, r);
      std::printf("n=%zu MAE=%.4f bpm RMSE=%.4f bpm STD=%.4f bpm", r.rows.size(),
                  r.metrics.mae_bpm, r.metrics.rmse_bpm, r.metrics.std_bpm);
      if (r.metrics.pearson_r) std::printf(" r=%.4f", *r.metrics.pearson_r);
      std::printf("\n");
    } else if (*in) {
      model::CvdModel m = harness::load_checkpoint(i_ckpt);
      mstmap::MstMapData map = mstmap::read_map_file(i_map);
      harness::InferReport rep = harness::infer(m, map);
      if (i_report.empty()) {
        std::cout << rep.to_json() << "\n";
      } else {
        std::ofstream os(i_report);
        if (!os) throw std::runtime_error("cannot write " + i_report);
        os << rep.to_json() << "\n";
        std::cout << "wrote " << i_report << "\n";
      }
    } else if (*an) {
      Tensor t = read_tensor_file(a_signal);
      if (t.ndim() != 1)
        throw std::runtime_error(a_signal + " is not a 1-D signal (shape " +
                                 shape_str(t.shape()) + ")");
      physio::Signal sig;
      sig.samples.assign(t.data(), t.data() + t.size());
      sig.fs = a_fs;
      nlohmann::json j;
      j["hr_bpm"] = physio::estimate_hr(sig);
      try {
        physio::IbiSeries ibis = physio::detect_peaks(sig);
        physio::HrvFeatures hrv = physio::hrv_features(ibis);
        j["rf_hz"] = hrv.rf_hz;
        j["lf_nu"] = hrv.lf_nu;
        j["hf_nu"] = hrv.hf_nu;
        j["lf_hf"] = hrv.lf_hf;
        j["ibis"] = ibis.intervals;
      } catch (const std::exception& e) {
        j["rf_hz"] = nullptr;
        j["lf_nu"] = nullptr;
        j["hf_nu"] = nullptr;
        j["lf_hf"] = nullptr;
        j["ibis"] = nlohmann::json::array();
        j["note"] = e.what();
      }
      if (a_report.empty()) {
        std::cout << j.dump(2) << "\n";
      } else {
        std::ofstream os(a_report);
        if (!os) throw std::runtime_error("cannot write " + a_report);
        os << j.dump(2) << "\n";
        std::cout << "wrote " << a_report << "\n";
      }
    } else if (*ep) {
      harness::export_plots(p_run);
      std::cout << "wrote " << (fs::path(p_run) / "plots").string() << "\n";
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
