#include "cvd/mstmap.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "cvd/parallel.hpp"
#include "cvd/serialize.hpp"

namespace cvd::mstmap {

namespace {
double clamp255(double v) { return std::min(255.0, std::max(0.0, v)); }
}  // namespace

std::array<double, 3> rgb_to_yuv(double r, double g, double b) {
  const double y = 0.299 * r + 0.587 * g + 0.114 * b;
  const double u = -0.168736 * r - 0.331264 * g + 0.5 * b + 128.0;
  const double v = 0.5 * r - 0.418688 * g - 0.081312 * b + 128.0;
  return {clamp255(y), clamp255(u), clamp255(v)};
}

Region Region::from_box(int x, int y, int w, int h) {
  Region r;
  r.is_box = true;
  r.box = {x, y, w, h};
  return r;
}

Region Region::from_mask(const ImageU8& mask_img) {
  Region r;
  r.is_box = false;
  r.mask_w = mask_img.width;
  r.mask_h = mask_img.height;
  r.mask.resize(static_cast<std::size_t>(mask_img.width) * mask_img.height);
  for (int y = 0; y < mask_img.height; ++y)
    for (int x = 0; x < mask_img.width; ++x) {
      std::uint8_t on = 0;
      for (int c = 0; c < mask_img.channels; ++c)
        if (mask_img.at(x, y, c)) on = 1;
      r.mask[static_cast<std::size_t>(y) * mask_img.width + x] = on;
    }
  return r;
}

void Region::validate(int frame_w, int frame_h, int region_index, int frame_index) const {
  const std::string where =
      "region " + std::to_string(region_index) + " in frame " + std::to_string(frame_index);
  if (is_box) {
    if (box.w <= 0 || box.h <= 0)
      throw std::invalid_argument("region_channel_stats: empty box (" + std::to_string(box.w) +
                                  "x" + std::to_string(box.h) + ") for " + where);
    if (box.x < 0 || box.y < 0 || box.x + box.w > frame_w || box.y + box.h > frame_h)
      throw std::invalid_argument("region_channel_stats: box [" + std::to_string(box.x) + "," +
                                  std::to_string(box.y) + "," + std::to_string(box.w) + "," +
                                  std::to_string(box.h) + "] leaves the " +
                                  std::to_string(frame_w) + "x" + std::to_string(frame_h) +
                                  " frame for " + where);
  } else {
    if (mask_w != frame_w || mask_h != frame_h)
      throw std::invalid_argument("region_channel_stats: mask " + std::to_string(mask_w) + "x" +
                                  std::to_string(mask_h) + " does not match frame " +
                                  std::to_string(frame_w) + "x" + std::to_string(frame_h) +
                                  " for " + where);
    if (pixel_count(frame_w, frame_h) == 0)
      throw std::invalid_argument("region_channel_stats: mask selects no pixels for " + where);
  }
}

long Region::pixel_count(int frame_w, int frame_h) const {
  if (is_box) return static_cast<long>(box.w) * box.h;
  long n = 0;
  for (std::uint8_t m : mask)
    if (m) ++n;
  (void)frame_w;
  (void)frame_h;
  return n;
}

std::vector<PointList> smooth_landmarks(const std::vector<PointList>& series, int window) {
  if (series.empty()) throw std::invalid_argument("smooth_landmarks: empty series");
  const int T = static_cast<int>(series.size());
  if (window < 1 || window % 2 == 0)
    throw std::invalid_argument("smooth_landmarks: window must be odd and >= 1, got " +
                                std::to_string(window));
  if (window > T)
    throw std::invalid_argument("smooth_landmarks: window " + std::to_string(window) +
                                " exceeds series length " + std::to_string(T));
  const std::size_t npts = series[0].size();
  for (int t = 0; t < T; ++t)
    if (series[t].size() != npts)
      throw std::invalid_argument("smooth_landmarks: frame " + std::to_string(t) + " has " +
                                  std::to_string(series[t].size()) + " points, expected " +
                                  std::to_string(npts));
  const int half = window / 2;
  std::vector<PointList> out(T, PointList(npts));
  for (int t = 0; t < T; ++t) {
    const int lo = std::max(0, t - half);
    const int hi = std::min(T - 1, t + half);  // window truncates at the edges
    for (std::size_t p = 0; p < npts; ++p) {
      double sx = 0.0, sy = 0.0;
      for (int u = lo; u <= hi; ++u) {
        sx += series[u][p][0];
        sy += series[u][p][1];
      }
      const double inv = 1.0 / (hi - lo + 1);
      out[t][p] = {sx * inv, sy * inv};
    }
  }
  return out;
}

std::vector<RegionStats> region_channel_stats(const ImageU8& frame, const RoiFrame& rois) {
  if (frame.channels != 3)
    throw std::invalid_argument("region_channel_stats: frame must be RGB, got " +
                                std::to_string(frame.channels) + " channel(s)");
  if (rois.regions.empty())
    throw std::invalid_argument("region_channel_stats: no regions for frame " +
                                std::to_string(rois.frame_index));
  std::vector<RegionStats> out(rois.regions.size());
  for (std::size_t ri = 0; ri < rois.regions.size(); ++ri) {
    const Region& region = rois.regions[ri];
    region.validate(frame.width, frame.height, static_cast<int>(ri), rois.frame_index);
    RegionStats& st = out[ri];
    region.for_each_pixel(frame.width, frame.height, [&](int x, int y) {
      const double r = frame.at(x, y, 0);
      const double g = frame.at(x, y, 1);
      const double b = frame.at(x, y, 2);
      const auto yuv = rgb_to_yuv(r, g, b);
      st.sum[0] += r;
      st.sum[1] += g;
      st.sum[2] += b;
      st.sum[3] += yuv[0];
      st.sum[4] += yuv[1];
      st.sum[5] += yuv[2];
      ++st.count;
    });
  }
  return out;
}

MstMapData MstMapData::make(int rows, int frames, double fps, int n_regions) {
  MstMapData m;
  m.rows = rows;
  m.frames = frames;
  m.fps = fps;
  m.n_regions = n_regions;
  m.values.assign(static_cast<std::size_t>(rows) * frames * kChannels, 0.0);
  return m;
}

MstMapData subset_signals(const std::vector<std::vector<RegionStats>>& stats_over_time, int n) {
  if (n < 1 || n > 16)
    throw std::invalid_argument("subset_signals: region count " + std::to_string(n) +
                                " outside [1,16]");
  if (stats_over_time.empty()) throw std::invalid_argument("subset_signals: empty time series");
  const int T = static_cast<int>(stats_over_time.size());
  for (int t = 0; t < T; ++t)
    if (static_cast<int>(stats_over_time[t].size()) != n)
      throw std::invalid_argument("subset_signals: frame " + std::to_string(t) + " has " +
                                  std::to_string(stats_over_time[t].size()) +
                                  " regions, expected " + std::to_string(n));
  const int rows = (1 << n) - 1;
  MstMapData map = MstMapData::make(rows, T, 0.0, n);
  for (int t = 0; t < T; ++t) {
    const auto& stats = stats_over_time[t];
    for (int mask = 1; mask <= rows; ++mask) {
      std::array<double, kChannels> sum{};
      long count = 0;
      for (int i = 0; i < n; ++i) {
        if (!(mask & (1 << i))) continue;
        if (stats[i].count <= 0)
          throw std::invalid_argument("subset_signals: region " + std::to_string(i) +
                                      " has no pixels in frame " + std::to_string(t));
        for (int c = 0; c < kChannels; ++c) sum[c] += stats[i].sum[c];
        count += stats[i].count;
      }
      // Union pooling: weighted by pixel count, i.e. the mean over the union.
      for (int c = 0; c < kChannels; ++c) map.at(mask - 1, t, c) = sum[c] / count;
    }
  }
  return map;
}

void minmax_normalize_rows(MstMapData& map) {
  for (int r = 0; r < map.rows; ++r) {
    for (int c = 0; c < kChannels; ++c) {
      double lo = map.at(r, 0, c), hi = lo;
      for (int t = 1; t < map.frames; ++t) {
        const double v = map.at(r, t, c);
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
      if (hi > lo) {
        const double scale = 255.0 / (hi - lo);
        for (int t = 0; t < map.frames; ++t)
          map.at(r, t, c) = (map.at(r, t, c) - lo) * scale;
      } else {
        for (int t = 0; t < map.frames; ++t) map.at(r, t, c) = 127.5;
      }
    }
  }
}

MstMapData build_mstmap(const VideoClip& clip) {
  if (clip.frames.empty()) throw std::invalid_argument("build_mstmap: clip has no frames");
  if (!(clip.fps > 0.0)) throw std::invalid_argument("build_mstmap: fps must be > 0");
  const int T = static_cast<int>(clip.frames.size());
  if (static_cast<int>(clip.rois.size()) != T)
    throw std::invalid_argument("build_mstmap: " + std::to_string(clip.rois.size()) +
                                " ROI frames for " + std::to_string(T) + " video frames");
  const int w = clip.frames[0].width, h = clip.frames[0].height;
  const int n = static_cast<int>(clip.rois[0].regions.size());
  for (int t = 0; t < T; ++t) {
    if (clip.frames[t].width != w || clip.frames[t].height != h)
      throw std::invalid_argument("build_mstmap: frame " + std::to_string(t) +
                                  " size differs from frame 0");
    if (static_cast<int>(clip.rois[t].regions.size()) != n)
      throw std::invalid_argument("build_mstmap: frame " + std::to_string(t) + " has " +
                                  std::to_string(clip.rois[t].regions.size()) +
                                  " regions, expected " + std::to_string(n));
  }
  std::vector<std::vector<RegionStats>> stats(T);
  parallel_for(static_cast<std::size_t>(T), [&](std::size_t lo, std::size_t hi) {
    for (std::size_t t = lo; t < hi; ++t)
      stats[t] = region_channel_stats(clip.frames[t], clip.rois[t]);
  });
  MstMapData map = subset_signals(stats, n);
  map.fps = clip.fps;
  minmax_normalize_rows(map);
  return map;
}

MstMapData resize_mstmap(const MstMapData& map, int out_rows, int out_cols) {
  if (out_rows < 1 || out_cols < 1)
    throw std::invalid_argument("resize_mstmap: target size must be positive, got " +
                                std::to_string(out_rows) + "x" + std::to_string(out_cols));
  MstMapData out = MstMapData::make(out_rows, out_cols, map.fps, map.n_regions);
  const auto src_pos = [](int i, int n_out, int n_in) {
    if (n_out == 1) return 0.0;
    return static_cast<double>(i) * (n_in - 1) / (n_out - 1);
  };
  for (int r = 0; r < out_rows; ++r) {
    const double sy = src_pos(r, out_rows, map.rows);
    const int y0 = std::min(static_cast<int>(sy), map.rows - 1);
    const int y1 = std::min(y0 + 1, map.rows - 1);
    const double fy = sy - y0;
    for (int t = 0; t < out_cols; ++t) {
      const double sx = src_pos(t, out_cols, map.frames);
      const int x0 = std::min(static_cast<int>(sx), map.frames - 1);
      const int x1 = std::min(x0 + 1, map.frames - 1);
      const double fx = sx - x0;
      for (int c = 0; c < kChannels; ++c) {
        const double top = map.at(y0, x0, c) * (1.0 - fx) + map.at(y0, x1, c) * fx;
        const double bot = map.at(y1, x0, c) * (1.0 - fx) + map.at(y1, x1, c) * fx;
        out.at(r, t, c) = top * (1.0 - fy) + bot * fy;
      }
    }
  }
  return out;
}

MstMapData flip_map(const MstMapData& map, bool horizontal, bool vertical) {
  MstMapData out = MstMapData::make(map.rows, map.frames, map.fps, map.n_regions);
  for (int r = 0; r < map.rows; ++r) {
    const int sr = vertical ? map.rows - 1 - r : r;
    for (int t = 0; t < map.frames; ++t) {
      const int st = horizontal ? map.frames - 1 - t : t;
      for (int c = 0; c < kChannels; ++c) out.at(r, t, c) = map.at(sr, st, c);
    }
  }
  return out;
}

Tensor to_tensor(const MstMapData& map) {
  return Tensor::from_data({map.rows, map.frames, kChannels}, map.values);
}

MstMapData from_tensor(const Tensor& t, double fps, int n_regions) {
  if (t.ndim() != 3 || t.dim(2) != kChannels)
    throw std::invalid_argument("mstmap::from_tensor: expected [rows,frames,6], got " +
                                shape_str(t.shape()));
  MstMapData map = MstMapData::make(t.dim(0), t.dim(1), fps, n_regions);
  std::copy(t.data(), t.data() + t.size(), map.values.begin());
  return map;
}

void write_map_file(const std::string& path, const MstMapData& map, bool f32) {
  write_tensor_file(path, to_tensor(map), f32 ? Dtype::kF32 : Dtype::kF64);
  nlohmann::json side;
  side["fps"] = map.fps;
  side["n_regions"] = map.n_regions;
  side["rows"] = map.rows;
  side["frames"] = map.frames;
  side["channels"] = kChannels;
  side["channel_order"] = "RGBYUV";
  side["row_order"] = "subset-bitmask-ascending";
  std::ofstream os(path + ".json");
  if (!os) throw std::runtime_error("write_map_file: cannot open " + path + ".json");
  os << side.dump(2) << "\n";
}

MstMapData read_map_file(const std::string& path) {
  const Tensor t = read_tensor_file(path);
  double fps = 0.0;
  int n_regions = 0;
  std::ifstream is(path + ".json");
  if (is) {
    nlohmann::json side = nlohmann::json::parse(is);
    fps = side.value("fps", 0.0);
    n_regions = side.value("n_regions", 0);
  }
  return from_tensor(t, fps, n_regions);
}

RoiDocument load_roi_json(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("load_roi_json: cannot open " + path);
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(is);
  } catch (const nlohmann::json::parse_error& e) {
    throw std::runtime_error("load_roi_json: " + path + ": " + e.what());
  }
  RoiDocument out;
  if (!doc.contains("fps")) throw std::runtime_error("load_roi_json: " + path + ": missing fps");
  out.fps = doc["fps"].get<double>();
  const auto dir = std::filesystem::path(path).parent_path();
  for (const auto& jf : doc.at("frames")) {
    RoiFrame rf;
    rf.frame_index = jf.at("index").get<int>();
    for (const auto& jr : jf.at("regions")) {
      if (jr.contains("box")) {
        const auto& b = jr["box"];
        if (!b.is_array() || b.size() != 4)
          throw std::runtime_error("load_roi_json: " + path + ": box must be [x,y,w,h] in frame " +
                                   std::to_string(rf.frame_index));
        rf.regions.push_back(Region::from_box(b[0].get<int>(), b[1].get<int>(), b[2].get<int>(),
                                              b[3].get<int>()));
      } else if (jr.contains("mask_file")) {
        const auto mask_path = dir / jr["mask_file"].get<std::string>();
        rf.regions.push_back(Region::from_mask(read_ppm(mask_path.string())));
      } else {
        throw std::runtime_error("load_roi_json: " + path +
                                 ": region needs a box or a mask_file in frame " +
                                 std::to_string(rf.frame_index));
      }
    }
    out.frames.push_back(std::move(rf));
  }
  if (out.frames.empty()) throw std::runtime_error("load_roi_json: " + path + ": no frames");
  return out;
}

}  // namespace cvd::mstmap
