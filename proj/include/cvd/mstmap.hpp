#pragma once

#include <array>
#include <string>
#include <vector>

#include "cvd/image.hpp"
#include "cvd/tensor.hpp"

namespace cvd::mstmap {

// Channel order everywhere in the map: R, G, B, Y, U, V.
inline constexpr int kChannels = 6;

// BT.601 full-range RGB -> YUV with the chroma planes offset by 128 and the
// result clamped to [0,255].
std::array<double, 3> rgb_to_yuv(double r, double g, double b);

struct RoiBox {
  int x = 0, y = 0, w = 0, h = 0;
};

// One facial region: an axis-aligned box or an explicit full-frame mask
// (nonzero = member). Masks let callers use arbitrary region shapes.
struct Region {
  bool is_box = true;
  RoiBox box;
  int mask_w = 0, mask_h = 0;
  std::vector<std::uint8_t> mask;

  static Region from_box(int x, int y, int w, int h);
  static Region from_mask(const ImageU8& mask_img);

  void validate(int frame_w, int frame_h, int region_index, int frame_index) const;
  long pixel_count(int frame_w, int frame_h) const;

  template <class Fn>
  void for_each_pixel(int frame_w, int frame_h, Fn&& fn) const {
    if (is_box) {
      for (int yy = box.y; yy < box.y + box.h; ++yy)
        for (int xx = box.x; xx < box.x + box.w; ++xx) fn(xx, yy);
    } else {
      for (int yy = 0; yy < mask_h; ++yy)
        for (int xx = 0; xx < mask_w; ++xx)
          if (mask[static_cast<std::size_t>(yy) * mask_w + xx]) fn(xx, yy);
    }
    (void)frame_w;
    (void)frame_h;
  }
};

struct RoiFrame {
  int frame_index = 0;
  std::vector<Region> regions;
};

// Per-region channel sums over member pixels plus the pixel count. Sums are
// of per-pixel values after the RGB->YUV transform for the YUV channels.
struct RegionStats {
  std::array<double, kChannels> sum{};  // R,G,B,Y,U,V
  long count = 0;
};

// Multi-scale spatial-temporal map: rows = non-empty ROI subsets in ascending
// bitmask order (subset with mask m sits at row m-1), columns = frames,
// 6 channels per cell.
struct MstMapData {
  int rows = 0;
  int frames = 0;
  double fps = 0.0;
  int n_regions = 0;
  std::vector<double> values;  // [rows][frames][6]

  double& at(int r, int t, int c) {
    return values[(static_cast<std::size_t>(r) * frames + t) * kChannels + c];
  }
  double at(int r, int t, int c) const {
    return values[(static_cast<std::size_t>(r) * frames + t) * kChannels + c];
  }
  static MstMapData make(int rows, int frames, double fps, int n_regions);
};

struct VideoClip {
  std::vector<ImageU8> frames;
  double fps = 0.0;
  std::vector<RoiFrame> rois;  // one entry per frame
};

// Truncated centered moving average over the frame axis of per-frame point
// lists; window must be odd, >= 1 and <= series length.
using PointList = std::vector<std::array<double, 2>>;
std::vector<PointList> smooth_landmarks(const std::vector<PointList>& series, int window);

std::vector<RegionStats> region_channel_stats(const ImageU8& frame, const RoiFrame& rois);

// Pixel-count-weighted union pooling over every non-empty subset of the n
// regions. stats_over_time is [T][n]; the result is the raw (unnormalized)
// map with rows = 2^n - 1.
MstMapData subset_signals(const std::vector<std::vector<RegionStats>>& stats_over_time, int n);

// Per row and channel across time: map [min,max] to [0,255]; constant rows
// become 127.5.
void minmax_normalize_rows(MstMapData& map);

MstMapData build_mstmap(const VideoClip& clip);

// Bilinear, align-corners convention (endpoints map to endpoints; a resize to
// the same size is the identity).
MstMapData resize_mstmap(const MstMapData& map, int out_rows, int out_cols);

// horizontal reverses time (columns), vertical reverses rows.
MstMapData flip_map(const MstMapData& map, bool horizontal, bool vertical);

Tensor to_tensor(const MstMapData& map);                               // [rows, frames, 6]
MstMapData from_tensor(const Tensor& t, double fps, int n_regions);

// Map tensor file plus a JSON sidecar (<path>.json) with fps and layout.
void write_map_file(const std::string& path, const MstMapData& map, bool f32 = false);
MstMapData read_map_file(const std::string& path);

// ROI document: { "fps": .., "frames": [ { "index": .., "regions":
// [ {"box":[x,y,w,h]} | {"mask_file": "m.pgm"} ] } ] }
// mask_file paths resolve relative to the JSON file's directory.
struct RoiDocument {
  double fps = 0.0;
  std::vector<RoiFrame> frames;
};
RoiDocument load_roi_json(const std::string& path);

}  // namespace cvd::mstmap
