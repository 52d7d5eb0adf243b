#include <algorithm>
#include <cmath>
#include <cstring>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "cvd/parallel.hpp"
#include "cvd/psd.hpp"
#include "cvd/tensor.hpp"

// Convolution family. Both directions share the index relation
//   big_pos = small_pos * stride - pad + k
// where "big" is the spatially larger side (conv input / tconv output) and
// "small" the smaller one (conv output / tconv input). Weights are
// [small_ch, big_ch, kh, kw], which matches the usual [out,in,kh,kw] layout
// for conv and [in,out,kh,kw] for transposed conv. Sharing the three kernels
// below between the two ops makes them adjoint by construction.

namespace cvd {

namespace {

struct D4 {
  int n, c, h, w;
};

D4 as4(const Tensor& t, const std::string& op, const std::string& name) {
  if (t.ndim() != 4)
    throw std::invalid_argument(op + ": " + name + " must be 4-D [N,C,H,W], got " +
                                shape_str(t.shape()));
  return {t.dim(0), t.dim(1), t.dim(2), t.dim(3)};
}

void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

std::size_t numel(const D4& d) {
  return static_cast<std::size_t>(d.n) * d.c * d.h * d.w;
}

// Whether this chunk of work is worth fanning out to threads.
void run_chunked(std::size_t tasks, std::size_t work_per_task,
                 const std::function<void(std::size_t, std::size_t)>& fn) {
  if (tasks * work_per_task < 32768) {
    fn(0, tasks);
    return;
  }
  parallel_for(tasks, fn);
}

// Range of small-side positions ow such that ow*stride - pad + j lands in
// [0, big_extent). Returns [lo, hi] inclusive; empty when lo > hi.
inline void small_range(int small_extent, int big_extent, int stride, int pad, int j,
                        int& lo, int& hi) {
  const int shift = pad - j;
  lo = shift > 0 ? (shift + stride - 1) / stride : 0;
  hi = (big_extent - 1 + shift) / stride;
  if (hi > small_extent - 1) hi = small_extent - 1;
}

// small[n,o,oh,ow] += sum_{c,i,j} big[n,c,oh*s-p+i,ow*s-p+j] * w[o,c,i,j]
// Used by conv2d forward and transposed_conv2d input gradient.
void gather_big_to_small(const double* big, D4 bd, const double* w, int KH, int KW,
                         double* small, D4 sd, int stride, int pad) {
  const std::size_t tasks = static_cast<std::size_t>(sd.n) * sd.c;
  const std::size_t work = static_cast<std::size_t>(sd.h) * sd.w * bd.c * KH * KW;
  run_chunked(tasks, work, [&](std::size_t t0, std::size_t t1) {
    for (std::size_t task = t0; task < t1; ++task) {
      const int n = static_cast<int>(task) / sd.c;
      const int o = static_cast<int>(task) % sd.c;
      for (int oh = 0; oh < sd.h; ++oh) {
        double* orow = small + ((static_cast<std::size_t>(n) * sd.c + o) * sd.h + oh) *
                                   static_cast<std::size_t>(sd.w);
        for (int c = 0; c < bd.c; ++c) {
          for (int i = 0; i < KH; ++i) {
            const int ih = oh * stride - pad + i;
            if (ih < 0 || ih >= bd.h) continue;
            const double* brow = big + ((static_cast<std::size_t>(n) * bd.c + c) * bd.h + ih) *
                                           static_cast<std::size_t>(bd.w);
            const double* wrow = w + ((static_cast<std::size_t>(o) * bd.c + c) * KH + i) *
                                         static_cast<std::size_t>(KW);
            for (int j = 0; j < KW; ++j) {
              const double wv = wrow[j];
              int lo, hi;
              small_range(sd.w, bd.w, stride, pad, j, lo, hi);
              const double* bptr = brow + (static_cast<std::ptrdiff_t>(lo) * stride - pad + j);
              for (int ow = lo; ow <= hi; ++ow) {
                orow[ow] += wv * *bptr;
                bptr += stride;
              }
            }
          }
        }
      }
    }
  });
}

// big[n,c,y,x] += sum_{o,i,j} small[n,o,(y+p-i)/s,(x+p-j)/s] * w[o,c,i,j]
// Used by conv2d input gradient and transposed_conv2d forward.
void scatter_small_to_big(const double* small, D4 sd, const double* w, int KH, int KW,
                          double* big, D4 bd, int stride, int pad) {
  const std::size_t tasks = static_cast<std::size_t>(bd.n) * bd.c;
  const std::size_t work = static_cast<std::size_t>(sd.h) * sd.w * sd.c * KH * KW;
  run_chunked(tasks, work, [&](std::size_t t0, std::size_t t1) {
    for (std::size_t task = t0; task < t1; ++task) {
      const int n = static_cast<int>(task) / bd.c;
      const int c = static_cast<int>(task) % bd.c;
      double* bplane = big + (static_cast<std::size_t>(n) * bd.c + c) *
                                 static_cast<std::size_t>(bd.h) * bd.w;
      for (int i = 0; i < KH; ++i) {
        for (int oh = 0; oh < sd.h; ++oh) {
          const int y = oh * stride - pad + i;
          if (y < 0 || y >= bd.h) continue;
          double* brow = bplane + static_cast<std::size_t>(y) * bd.w;
          for (int o = 0; o < sd.c; ++o) {
            const double* srow = small + ((static_cast<std::size_t>(n) * sd.c + o) * sd.h + oh) *
                                             static_cast<std::size_t>(sd.w);
            const double* wrow = w + ((static_cast<std::size_t>(o) * bd.c + c) * KH + i) *
                                         static_cast<std::size_t>(KW);
            for (int j = 0; j < KW; ++j) {
              const double wv = wrow[j];
              int lo, hi;
              small_range(sd.w, bd.w, stride, pad, j, lo, hi);
              double* bptr = brow + (static_cast<std::ptrdiff_t>(lo) * stride - pad + j);
              for (int ow = lo; ow <= hi; ++ow) {
                *bptr += wv * srow[ow];
                bptr += stride;
              }
            }
          }
        }
      }
    }
  });
}

// gw[o,c,i,j] += sum_{n,oh,ow} small[n,o,oh,ow] * big[n,c,oh*s-p+i,ow*s-p+j]
// Used for the weight gradient of both conv directions.
void weight_grad_kernel(const double* small, D4 sd, const double* big, D4 bd, double* gw,
                        int KH, int KW, int stride, int pad) {
  const std::size_t tasks = static_cast<std::size_t>(sd.c) * bd.c;
  const std::size_t work = static_cast<std::size_t>(sd.n) * sd.h * sd.w * KH * KW;
  run_chunked(tasks, work, [&](std::size_t t0, std::size_t t1) {
    for (std::size_t task = t0; task < t1; ++task) {
      const int o = static_cast<int>(task) / bd.c;
      const int c = static_cast<int>(task) % bd.c;
      for (int i = 0; i < KH; ++i) {
        for (int j = 0; j < KW; ++j) {
          int lo, hi;
          small_range(sd.w, bd.w, stride, pad, j, lo, hi);
          double acc = 0.0;
          for (int n = 0; n < sd.n; ++n) {
            for (int oh = 0; oh < sd.h; ++oh) {
              const int ih = oh * stride - pad + i;
              if (ih < 0 || ih >= bd.h) continue;
              const double* srow =
                  small + ((static_cast<std::size_t>(n) * sd.c + o) * sd.h + oh) *
                              static_cast<std::size_t>(sd.w);
              const double* brow = big + ((static_cast<std::size_t>(n) * bd.c + c) * bd.h + ih) *
                                             static_cast<std::size_t>(bd.w);
              const double* bptr = brow + (static_cast<std::ptrdiff_t>(lo) * stride - pad + j);
              for (int ow = lo; ow <= hi; ++ow) {
                acc += srow[ow] * *bptr;
                bptr += stride;
              }
            }
          }
          gw[((static_cast<std::size_t>(o) * bd.c + c) * KH + i) * KW + j] += acc;
        }
      }
    }
  });
}

void add_channel_bias(double* data, D4 d, const double* bias) {
  for (int n = 0; n < d.n; ++n)
    for (int c = 0; c < d.c; ++c) {
      double* plane = data + (static_cast<std::size_t>(n) * d.c + c) *
                                 static_cast<std::size_t>(d.h) * d.w;
      const double b = bias[c];
      const std::size_t m = static_cast<std::size_t>(d.h) * d.w;
      for (std::size_t i = 0; i < m; ++i) plane[i] += b;
    }
}

void channel_bias_grad(const double* go, D4 d, double* gb) {
  for (int n = 0; n < d.n; ++n)
    for (int c = 0; c < d.c; ++c) {
      const double* plane = go + (static_cast<std::size_t>(n) * d.c + c) *
                                     static_cast<std::size_t>(d.h) * d.w;
      double acc = 0.0;
      const std::size_t m = static_cast<std::size_t>(d.h) * d.w;
      for (std::size_t i = 0; i < m; ++i) acc += plane[i];
      gb[c] += acc;
    }
}

bool track_any(std::initializer_list<Tensor> ts) {
  for (const auto& t : ts)
    if (t.requires_grad()) return true;
  return false;
}

}  // namespace

Tensor Graph::conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, int stride,
                     int padding) {
  const D4 in = as4(input, "conv2d", "input");
  const D4 wd = as4(weight, "conv2d", "weight");
  require(stride >= 1, "conv2d: stride must be >= 1, got " + std::to_string(stride));
  require(padding >= 0, "conv2d: padding must be >= 0, got " + std::to_string(padding));
  require(wd.c == in.c, "conv2d: weight expects " + std::to_string(wd.c) +
                            " input channels but input has " + std::to_string(in.c));
  require(wd.h <= in.h + 2 * padding, "conv2d: kernel height " + std::to_string(wd.h) +
                                          " exceeds padded input height " +
                                          std::to_string(in.h + 2 * padding));
  require(wd.w <= in.w + 2 * padding, "conv2d: kernel width " + std::to_string(wd.w) +
                                          " exceeds padded input width " +
                                          std::to_string(in.w + 2 * padding));
  require(bias.ndim() == 1 && bias.dim(0) == wd.n,
          "conv2d: bias must be [" + std::to_string(wd.n) + "], got " + shape_str(bias.shape()));
  const int oh = (in.h + 2 * padding - wd.h) / stride + 1;
  const int ow = (in.w + 2 * padding - wd.w) / stride + 1;
  const bool track = track_any({input, weight, bias});
  Tensor out = Tensor::zeros({in.n, wd.n, oh, ow}, track);
  const D4 od{in.n, wd.n, oh, ow};
  add_channel_bias(out.data(), od, bias.data());
  gather_big_to_small(input.data(), in, weight.data(), wd.h, wd.w, out.data(), od, stride,
                      padding);
  if (track) {
    Tensor in_t = input, w_t = weight, b_t = bias, out_t = out;
    record([in_t, w_t, b_t, out_t, in, wd, od, stride, padding]() mutable {
      const double* go = out_t.grad();
      if (in_t.requires_grad())
        scatter_small_to_big(go, od, w_t.data(), wd.h, wd.w, in_t.grad(), in, stride, padding);
      if (w_t.requires_grad())
        weight_grad_kernel(go, od, in_t.data(), in, w_t.grad(), wd.h, wd.w, stride, padding);
      if (b_t.requires_grad()) channel_bias_grad(go, od, b_t.grad());
    });
  }
  return out;
}

Tensor Graph::transposed_conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
                                int stride, int padding) {
  const D4 in = as4(input, "transposed_conv2d", "input");
  const D4 wd = as4(weight, "transposed_conv2d", "weight");  // [C_in, C_out, kh, kw]
  require(stride >= 1, "transposed_conv2d: stride must be >= 1, got " + std::to_string(stride));
  require(padding >= 0,
          "transposed_conv2d: padding must be >= 0, got " + std::to_string(padding));
  require(wd.n == in.c, "transposed_conv2d: weight expects " + std::to_string(wd.n) +
                            " input channels but input has " + std::to_string(in.c));
  const int oh = (in.h - 1) * stride - 2 * padding + wd.h;
  const int ow = (in.w - 1) * stride - 2 * padding + wd.w;
  require(oh >= 1 && ow >= 1, "transposed_conv2d: output " + std::to_string(oh) + "x" +
                                  std::to_string(ow) + " collapses to nothing");
  require(bias.ndim() == 1 && bias.dim(0) == wd.c,
          "transposed_conv2d: bias must be [" + std::to_string(wd.c) + "], got " +
              shape_str(bias.shape()));
  const bool track = track_any({input, weight, bias});
  Tensor out = Tensor::zeros({in.n, wd.c, oh, ow}, track);
  const D4 od{in.n, wd.c, oh, ow};
  add_channel_bias(out.data(), od, bias.data());
  scatter_small_to_big(input.data(), in, weight.data(), wd.h, wd.w, out.data(), od, stride,
                       padding);
  if (track) {
    Tensor in_t = input, w_t = weight, b_t = bias, out_t = out;
    record([in_t, w_t, b_t, out_t, in, wd, od, stride, padding]() mutable {
      const double* go = out_t.grad();
      if (in_t.requires_grad())
        gather_big_to_small(go, od, w_t.data(), wd.h, wd.w, in_t.grad(), in, stride, padding);
      if (w_t.requires_grad())
        weight_grad_kernel(in_t.data(), in, go, od, w_t.grad(), wd.h, wd.w, stride, padding);
      if (b_t.requires_grad()) channel_bias_grad(go, od, b_t.grad());
    });
  }
  return out;
}

namespace {

// Shared normalization backward. Per group of m elements normalized with the
// group's own statistics:
//   dx = (gamma * invstd / m) * (m*go - sum(go) - xhat * sum(go*xhat))
struct NormGroup {
  double mean = 0.0;
  double invstd = 0.0;
};

}  // namespace

Tensor Graph::batch_norm(const Tensor& input, const Tensor& gamma, const Tensor& beta,
                         BatchNormStats& stats, NormMode mode, double eps) {
  const D4 in = as4(input, "batch_norm", "input");
  require(gamma.ndim() == 1 && gamma.dim(0) == in.c,
          "batch_norm: gamma must be [" + std::to_string(in.c) + "], got " +
              shape_str(gamma.shape()));
  require(beta.ndim() == 1 && beta.dim(0) == in.c,
          "batch_norm: beta must be [" + std::to_string(in.c) + "], got " +
              shape_str(beta.shape()));
  require(stats.running_mean.defined() && stats.running_mean.dim(0) == in.c &&
              stats.running_var.dim(0) == in.c,
          "batch_norm: running stats sized for different channel count");
  const std::size_t m = static_cast<std::size_t>(in.n) * in.h * in.w;
  const std::size_t plane = static_cast<std::size_t>(in.h) * in.w;
  const bool track = track_any({input, gamma, beta});
  Tensor out = Tensor::zeros({in.n, in.c, in.h, in.w}, track);

  auto group_values = [&](const Tensor& t, int c, auto&& fn) {
    const double* base = t.data();
    for (int n = 0; n < in.n; ++n) {
      const double* p = base + (static_cast<std::size_t>(n) * in.c + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) fn((static_cast<std::size_t>(n)) * plane + i, p[i]);
    }
  };

  if (mode == NormMode::kTrain) {
    require(m >= 2, "batch_norm: train mode needs more than one value per channel, got " +
                        std::to_string(m) + " (N*H*W)");
    auto groups = std::make_shared<std::vector<NormGroup>>(in.c);
    for (int c = 0; c < in.c; ++c) {
      double sum = 0.0;
      group_values(input, c, [&](std::size_t, double v) { sum += v; });
      const double mean = sum / static_cast<double>(m);
      double ss = 0.0;
      group_values(input, c, [&](std::size_t, double v) { ss += (v - mean) * (v - mean); });
      const double var = ss / static_cast<double>(m);
      const double invstd = 1.0 / std::sqrt(var + eps);
      (*groups)[c] = {mean, invstd};
      const double g = gamma.data()[c], b = beta.data()[c];
      for (int n = 0; n < in.n; ++n) {
        const double* ip = input.data() + (static_cast<std::size_t>(n) * in.c + c) * plane;
        double* op = out.data() + (static_cast<std::size_t>(n) * in.c + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) op[i] = g * (ip[i] - mean) * invstd + b;
      }
      const double mom = stats.momentum;
      stats.running_mean.data()[c] = (1.0 - mom) * stats.running_mean.data()[c] + mom * mean;
      stats.running_var.data()[c] =
          (1.0 - mom) * stats.running_var.data()[c] +
          mom * var * static_cast<double>(m) / static_cast<double>(m - 1);
    }
    if (track) {
      Tensor in_t = input, g_t = gamma, b_t = beta, out_t = out;
      record([in_t, g_t, b_t, out_t, groups, in, plane, m]() mutable {
        const double* go = out_t.grad();
        const double* x = in_t.data();
        for (int c = 0; c < in.c; ++c) {
          const double mean = (*groups)[c].mean, invstd = (*groups)[c].invstd;
          const double g = g_t.data()[c];
          double sum_go = 0.0, sum_go_xhat = 0.0;
          for (int n = 0; n < in.n; ++n) {
            const std::size_t off = (static_cast<std::size_t>(n) * in.c + c) * plane;
            for (std::size_t i = 0; i < plane; ++i) {
              const double xhat = (x[off + i] - mean) * invstd;
              sum_go += go[off + i];
              sum_go_xhat += go[off + i] * xhat;
            }
          }
          if (g_t.requires_grad()) g_t.grad()[c] += sum_go_xhat;
          if (b_t.requires_grad()) b_t.grad()[c] += sum_go;
          if (in_t.requires_grad()) {
            const double scale = g * invstd / static_cast<double>(m);
            double* gin = in_t.grad();
            for (int n = 0; n < in.n; ++n) {
              const std::size_t off = (static_cast<std::size_t>(n) * in.c + c) * plane;
              for (std::size_t i = 0; i < plane; ++i) {
                const double xhat = (x[off + i] - mean) * invstd;
                gin[off + i] += scale * (static_cast<double>(m) * go[off + i] - sum_go -
                                         xhat * sum_go_xhat);
              }
            }
          }
        }
      });
    }
  } else {
    // Eval mode: running statistics are constants.
    auto groups = std::make_shared<std::vector<NormGroup>>(in.c);
    for (int c = 0; c < in.c; ++c) {
      const double mean = stats.running_mean.data()[c];
      const double invstd = 1.0 / std::sqrt(stats.running_var.data()[c] + eps);
      (*groups)[c] = {mean, invstd};
      const double g = gamma.data()[c], b = beta.data()[c];
      for (int n = 0; n < in.n; ++n) {
        const double* ip = input.data() + (static_cast<std::size_t>(n) * in.c + c) * plane;
        double* op = out.data() + (static_cast<std::size_t>(n) * in.c + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) op[i] = g * (ip[i] - mean) * invstd + b;
      }
    }
    if (track) {
      Tensor in_t = input, g_t = gamma, b_t = beta, out_t = out;
      record([in_t, g_t, b_t, out_t, groups, in, plane]() mutable {
        const double* go = out_t.grad();
        const double* x = in_t.data();
        for (int c = 0; c < in.c; ++c) {
          const double mean = (*groups)[c].mean, invstd = (*groups)[c].invstd;
          const double g = g_t.data()[c];
          double sum_go = 0.0, sum_go_xhat = 0.0;
          for (int n = 0; n < in.n; ++n) {
            const std::size_t off = (static_cast<std::size_t>(n) * in.c + c) * plane;
            for (std::size_t i = 0; i < plane; ++i) {
              sum_go += go[off + i];
              sum_go_xhat += go[off + i] * (x[off + i] - mean) * invstd;
            }
          }
          if (g_t.requires_grad()) g_t.grad()[c] += sum_go_xhat;
          if (b_t.requires_grad()) b_t.grad()[c] += sum_go;
          if (in_t.requires_grad()) {
            double* gin = in_t.grad();
            const double scale = g * invstd;
            for (int n = 0; n < in.n; ++n) {
              const std::size_t off = (static_cast<std::size_t>(n) * in.c + c) * plane;
              for (std::size_t i = 0; i < plane; ++i) gin[off + i] += scale * go[off + i];
            }
          }
        }
      });
    }
  }
  return out;
}

Tensor Graph::instance_norm(const Tensor& input, const Tensor& gamma, const Tensor& beta,
                            double eps) {
  const D4 in = as4(input, "instance_norm", "input");
  require(gamma.ndim() == 1 && gamma.dim(0) == in.c,
          "instance_norm: gamma must be [" + std::to_string(in.c) + "], got " +
              shape_str(gamma.shape()));
  require(beta.ndim() == 1 && beta.dim(0) == in.c,
          "instance_norm: beta must be [" + std::to_string(in.c) + "], got " +
              shape_str(beta.shape()));
  const std::size_t plane = static_cast<std::size_t>(in.h) * in.w;
  require(plane >= 2, "instance_norm: spatial plane " + std::to_string(in.h) + "x" +
                          std::to_string(in.w) + " has fewer than two elements");
  const bool track = track_any({input, gamma, beta});
  Tensor out = Tensor::zeros({in.n, in.c, in.h, in.w}, track);
  auto groups = std::make_shared<std::vector<NormGroup>>(static_cast<std::size_t>(in.n) * in.c);
  for (int n = 0; n < in.n; ++n) {
    for (int c = 0; c < in.c; ++c) {
      const std::size_t off = (static_cast<std::size_t>(n) * in.c + c) * plane;
      const double* ip = input.data() + off;
      double sum = 0.0;
      for (std::size_t i = 0; i < plane; ++i) sum += ip[i];
      const double mean = sum / static_cast<double>(plane);
      double ss = 0.0;
      for (std::size_t i = 0; i < plane; ++i) ss += (ip[i] - mean) * (ip[i] - mean);
      const double invstd = 1.0 / std::sqrt(ss / static_cast<double>(plane) + eps);
      (*groups)[static_cast<std::size_t>(n) * in.c + c] = {mean, invstd};
      const double g = gamma.data()[c], b = beta.data()[c];
      double* op = out.data() + off;
      for (std::size_t i = 0; i < plane; ++i) op[i] = g * (ip[i] - mean) * invstd + b;
    }
  }
  if (track) {
    Tensor in_t = input, g_t = gamma, b_t = beta, out_t = out;
    record([in_t, g_t, b_t, out_t, groups, in, plane]() mutable {
      const double* go = out_t.grad();
      const double* x = in_t.data();
      const double mf = static_cast<double>(plane);
      for (int n = 0; n < in.n; ++n) {
        for (int c = 0; c < in.c; ++c) {
          const std::size_t off = (static_cast<std::size_t>(n) * in.c + c) * plane;
          const auto& grp = (*groups)[static_cast<std::size_t>(n) * in.c + c];
          const double g = g_t.data()[c];
          double sum_go = 0.0, sum_go_xhat = 0.0;
          for (std::size_t i = 0; i < plane; ++i) {
            const double xhat = (x[off + i] - grp.mean) * grp.invstd;
            sum_go += go[off + i];
            sum_go_xhat += go[off + i] * xhat;
          }
          if (g_t.requires_grad()) g_t.grad()[c] += sum_go_xhat;
          if (b_t.requires_grad()) b_t.grad()[c] += sum_go;
          if (in_t.requires_grad()) {
            double* gin = in_t.grad();
            const double scale = g * grp.invstd / mf;
            for (std::size_t i = 0; i < plane; ++i) {
              const double xhat = (x[off + i] - grp.mean) * grp.invstd;
              gin[off + i] += scale * (mf * go[off + i] - sum_go - xhat * sum_go_xhat);
            }
          }
        }
      }
    });
  }
  return out;
}

Tensor Graph::avg_pool(const Tensor& input, int k, int stride) {
  const D4 in = as4(input, "avg_pool", "input");
  require(k >= 1, "avg_pool: kernel must be >= 1, got " + std::to_string(k));
  require(stride >= 1, "avg_pool: stride must be >= 1, got " + std::to_string(stride));
  require(k <= in.h, "avg_pool: kernel " + std::to_string(k) + " exceeds input height " +
                         std::to_string(in.h));
  require(k <= in.w, "avg_pool: kernel " + std::to_string(k) + " exceeds input width " +
                         std::to_string(in.w));
  const int oh = (in.h - k) / stride + 1;
  const int ow = (in.w - k) / stride + 1;
  const bool track = input.requires_grad();
  Tensor out = Tensor::zeros({in.n, in.c, oh, ow}, track);
  const double inv = 1.0 / (static_cast<double>(k) * k);
  for (int n = 0; n < in.n; ++n)
    for (int c = 0; c < in.c; ++c) {
      const double* ip = input.data() + (static_cast<std::size_t>(n) * in.c + c) *
                                            static_cast<std::size_t>(in.h) * in.w;
      double* op = out.data() + (static_cast<std::size_t>(n) * in.c + c) *
                                    static_cast<std::size_t>(oh) * ow;
      for (int y = 0; y < oh; ++y)
        for (int x = 0; x < ow; ++x) {
          double acc = 0.0;
          for (int i = 0; i < k; ++i)
            for (int j = 0; j < k; ++j)
              acc += ip[static_cast<std::size_t>(y * stride + i) * in.w + (x * stride + j)];
          op[static_cast<std::size_t>(y) * ow + x] = acc * inv;
        }
    }
  if (track) {
    Tensor in_t = input, out_t = out;
    record([in_t, out_t, in, oh, ow, k, stride, inv]() mutable {
      const double* go = out_t.grad();
      double* gin = in_t.grad();
      for (int n = 0; n < in.n; ++n)
        for (int c = 0; c < in.c; ++c) {
          const std::size_t ioff = (static_cast<std::size_t>(n) * in.c + c) *
                                   static_cast<std::size_t>(in.h) * in.w;
          const std::size_t ooff = (static_cast<std::size_t>(n) * in.c + c) *
                                   static_cast<std::size_t>(oh) * ow;
          for (int y = 0; y < oh; ++y)
            for (int x = 0; x < ow; ++x) {
              const double g = go[ooff + static_cast<std::size_t>(y) * ow + x] * inv;
              for (int i = 0; i < k; ++i)
                for (int j = 0; j < k; ++j)
                  gin[ioff + static_cast<std::size_t>(y * stride + i) * in.w +
                      (x * stride + j)] += g;
            }
        }
    });
  }
  return out;
}

Tensor Graph::adaptive_avg_pool(const Tensor& input, int out_h, int out_w) {
  const D4 in = as4(input, "adaptive_avg_pool", "input");
  require(out_h >= 1 && out_w >= 1, "adaptive_avg_pool: output dims must be >= 1, got " +
                                        std::to_string(out_h) + "x" + std::to_string(out_w));
  require(out_h <= in.h, "adaptive_avg_pool: output height " + std::to_string(out_h) +
                             " exceeds input height " + std::to_string(in.h));
  require(out_w <= in.w, "adaptive_avg_pool: output width " + std::to_string(out_w) +
                             " exceeds input width " + std::to_string(in.w));
  const bool track = input.requires_grad();
  Tensor out = Tensor::zeros({in.n, in.c, out_h, out_w}, track);
  auto lo_of = [](int i, int n_in, int n_out) { return (i * n_in) / n_out; };
  auto hi_of = [](int i, int n_in, int n_out) { return ((i + 1) * n_in + n_out - 1) / n_out; };
  for (int n = 0; n < in.n; ++n)
    for (int c = 0; c < in.c; ++c) {
      const double* ip = input.data() + (static_cast<std::size_t>(n) * in.c + c) *
                                            static_cast<std::size_t>(in.h) * in.w;
      double* op = out.data() + (static_cast<std::size_t>(n) * in.c + c) *
                                    static_cast<std::size_t>(out_h) * out_w;
      for (int y = 0; y < out_h; ++y) {
        const int y0 = lo_of(y, in.h, out_h), y1 = hi_of(y, in.h, out_h);
        for (int x = 0; x < out_w; ++x) {
          const int x0 = lo_of(x, in.w, out_w), x1 = hi_of(x, in.w, out_w);
          double acc = 0.0;
          for (int i = y0; i < y1; ++i)
            for (int j = x0; j < x1; ++j) acc += ip[static_cast<std::size_t>(i) * in.w + j];
          op[static_cast<std::size_t>(y) * out_w + x] =
              acc / (static_cast<double>(y1 - y0) * (x1 - x0));
        }
      }
    }
  if (track) {
    Tensor in_t = input, out_t = out;
    record([in_t, out_t, in, out_h, out_w, lo_of, hi_of]() mutable {
      const double* go = out_t.grad();
      double* gin = in_t.grad();
      for (int n = 0; n < in.n; ++n)
        for (int c = 0; c < in.c; ++c) {
          const std::size_t ioff = (static_cast<std::size_t>(n) * in.c + c) *
                                   static_cast<std::size_t>(in.h) * in.w;
          const std::size_t ooff = (static_cast<std::size_t>(n) * in.c + c) *
                                   static_cast<std::size_t>(out_h) * out_w;
          for (int y = 0; y < out_h; ++y) {
            const int y0 = lo_of(y, in.h, out_h), y1 = hi_of(y, in.h, out_h);
            for (int x = 0; x < out_w; ++x) {
              const int x0 = lo_of(x, in.w, out_w), x1 = hi_of(x, in.w, out_w);
              const double g = go[ooff + static_cast<std::size_t>(y) * out_w + x] /
                               (static_cast<double>(y1 - y0) * (x1 - x0));
              for (int i = y0; i < y1; ++i)
                for (int j = x0; j < x1; ++j) gin[ioff + static_cast<std::size_t>(i) * in.w + j] += g;
            }
          }
        }
    });
  }
  return out;
}

Tensor Graph::fully_connected(const Tensor& input, const Tensor& weight, const Tensor& bias) {
  require(input.ndim() == 2, "fully_connected: input must be 2-D [N,F], got " +
                                 shape_str(input.shape()));
  require(weight.ndim() == 2, "fully_connected: weight must be 2-D [F,G], got " +
                                  shape_str(weight.shape()));
  const int N = input.dim(0), F = input.dim(1);
  const int G = weight.dim(1);
  require(weight.dim(0) == F, "fully_connected: weight expects " + std::to_string(weight.dim(0)) +
                                  " input features but input has " + std::to_string(F));
  require(bias.ndim() == 1 && bias.dim(0) == G,
          "fully_connected: bias must be [" + std::to_string(G) + "], got " +
              shape_str(bias.shape()));
  const bool track = track_any({input, weight, bias});
  Tensor out = Tensor::zeros({N, G}, track);
  for (int n = 0; n < N; ++n) {
    const double* xrow = input.data() + static_cast<std::size_t>(n) * F;
    double* orow = out.data() + static_cast<std::size_t>(n) * G;
    for (int g = 0; g < G; ++g) orow[g] = bias.data()[g];
    for (int f = 0; f < F; ++f) {
      const double xv = xrow[f];
      const double* wrow = weight.data() + static_cast<std::size_t>(f) * G;
      for (int g = 0; g < G; ++g) orow[g] += xv * wrow[g];
    }
  }
  if (track) {
    Tensor in_t = input, w_t = weight, b_t = bias, out_t = out;
    record([in_t, w_t, b_t, out_t, N, F, G]() mutable {
      const double* go = out_t.grad();
      if (in_t.requires_grad()) {
        double* gin = in_t.grad();
        for (int n = 0; n < N; ++n)
          for (int f = 0; f < F; ++f) {
            const double* wrow = w_t.data() + static_cast<std::size_t>(f) * G;
            const double* grow = go + static_cast<std::size_t>(n) * G;
            double acc = 0.0;
            for (int g = 0; g < G; ++g) acc += wrow[g] * grow[g];
            gin[static_cast<std::size_t>(n) * F + f] += acc;
          }
      }
      if (w_t.requires_grad()) {
        double* gw = w_t.grad();
        for (int n = 0; n < N; ++n) {
          const double* xrow = in_t.data() + static_cast<std::size_t>(n) * F;
          const double* grow = go + static_cast<std::size_t>(n) * G;
          for (int f = 0; f < F; ++f) {
            const double xv = xrow[f];
            double* gwrow = gw + static_cast<std::size_t>(f) * G;
            for (int g = 0; g < G; ++g) gwrow[g] += xv * grow[g];
          }
        }
      }
      if (b_t.requires_grad()) {
        double* gb = b_t.grad();
        for (int n = 0; n < N; ++n) {
          const double* grow = go + static_cast<std::size_t>(n) * G;
          for (int g = 0; g < G; ++g) gb[g] += grow[g];
        }
      }
    });
  }
  return out;
}

Tensor Graph::relu(const Tensor& input) {
  const bool track = input.requires_grad();
  Tensor out = Tensor::zeros(input.shape(), track);
  const std::size_t n = input.size();
  for (std::size_t i = 0; i < n; ++i) out.data()[i] = input.data()[i] > 0.0 ? input.data()[i] : 0.0;
  if (track) {
    Tensor in_t = input, out_t = out;
    record([in_t, out_t, n]() mutable {
      const double* go = out_t.grad();
      double* gin = in_t.grad();
      for (std::size_t i = 0; i < n; ++i)
        if (in_t.data()[i] > 0.0) gin[i] += go[i];
    });
  }
  return out;
}

Tensor Graph::sigmoid(const Tensor& input) {
  const bool track = input.requires_grad();
  Tensor out = Tensor::zeros(input.shape(), track);
  const std::size_t n = input.size();
  for (std::size_t i = 0; i < n; ++i) out.data()[i] = 1.0 / (1.0 + std::exp(-input.data()[i]));
  if (track) {
    Tensor in_t = input, out_t = out;
    record([in_t, out_t, n]() mutable {
      const double* go = out_t.grad();
      double* gin = in_t.grad();
      for (std::size_t i = 0; i < n; ++i) {
        const double s = out_t.data()[i];
        gin[i] += go[i] * s * (1.0 - s);
      }
    });
  }
  return out;
}

Tensor Graph::add(const Tensor& a, const Tensor& b) {
  require(a.shape() == b.shape(),
          "add: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  const bool track = track_any({a, b});
  Tensor out = Tensor::zeros(a.shape(), track);
  const std::size_t n = a.size();
  for (std::size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] + b.data()[i];
  if (track) {
    Tensor a_t = a, b_t = b, out_t = out;
    record([a_t, b_t, out_t, n]() mutable {
      const double* go = out_t.grad();
      if (a_t.requires_grad()) {
        double* ga = a_t.grad();
        for (std::size_t i = 0; i < n; ++i) ga[i] += go[i];
      }
      if (b_t.requires_grad()) {
        double* gb = b_t.grad();
        for (std::size_t i = 0; i < n; ++i) gb[i] += go[i];
      }
    });
  }
  return out;
}

Tensor Graph::mul(const Tensor& a, const Tensor& b) {
  require(a.shape() == b.shape(),
          "mul: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  const bool track = track_any({a, b});
  Tensor out = Tensor::zeros(a.shape(), track);
  const std::size_t n = a.size();
  for (std::size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] * b.data()[i];
  if (track) {
    Tensor a_t = a, b_t = b, out_t = out;
    record([a_t, b_t, out_t, n]() mutable {
      const double* go = out_t.grad();
      if (a_t.requires_grad()) {
        double* ga = a_t.grad();
        for (std::size_t i = 0; i < n; ++i) ga[i] += go[i] * b_t.data()[i];
      }
      if (b_t.requires_grad()) {
        double* gb = b_t.grad();
        for (std::size_t i = 0; i < n; ++i) gb[i] += go[i] * a_t.data()[i];
      }
    });
  }
  return out;
}

Tensor Graph::scale(const Tensor& a, double factor) {
  const bool track = a.requires_grad();
  Tensor out = Tensor::zeros(a.shape(), track);
  const std::size_t n = a.size();
  for (std::size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] * factor;
  if (track) {
    Tensor a_t = a, out_t = out;
    record([a_t, out_t, n, factor]() mutable {
      const double* go = out_t.grad();
      double* ga = a_t.grad();
      for (std::size_t i = 0; i < n; ++i) ga[i] += go[i] * factor;
    });
  }
  return out;
}

Tensor Graph::concat(const Tensor& a, const Tensor& b, int axis) {
  require(a.ndim() == b.ndim(), "concat: rank mismatch " + shape_str(a.shape()) + " vs " +
                                    shape_str(b.shape()));
  require(axis >= 0 && axis < a.ndim(),
          "concat: axis " + std::to_string(axis) + " out of range for " + shape_str(a.shape()));
  for (int i = 0; i < a.ndim(); ++i)
    if (i != axis)
      require(a.dim(i) == b.dim(i), "concat: dimension " + std::to_string(i) +
                                        " differs: " + shape_str(a.shape()) + " vs " +
                                        shape_str(b.shape()));
  std::vector<int> oshape = a.shape();
  oshape[axis] += b.dim(axis);
  const bool track = track_any({a, b});
  Tensor out = Tensor::zeros(oshape, track);
  std::size_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= static_cast<std::size_t>(a.dim(i));
  for (int i = axis + 1; i < a.ndim(); ++i) inner *= static_cast<std::size_t>(a.dim(i));
  const std::size_t wa = static_cast<std::size_t>(a.dim(axis)) * inner;
  const std::size_t wb = static_cast<std::size_t>(b.dim(axis)) * inner;
  for (std::size_t o = 0; o < outer; ++o) {
    std::memcpy(out.data() + o * (wa + wb), a.data() + o * wa, wa * sizeof(double));
    std::memcpy(out.data() + o * (wa + wb) + wa, b.data() + o * wb, wb * sizeof(double));
  }
  if (track) {
    Tensor a_t = a, b_t = b, out_t = out;
    record([a_t, b_t, out_t, outer, wa, wb]() mutable {
      const double* go = out_t.grad();
      if (a_t.requires_grad()) {
        double* ga = a_t.grad();
        for (std::size_t o = 0; o < outer; ++o)
          for (std::size_t i = 0; i < wa; ++i) ga[o * wa + i] += go[o * (wa + wb) + i];
      }
      if (b_t.requires_grad()) {
        double* gb = b_t.grad();
        for (std::size_t o = 0; o < outer; ++o)
          for (std::size_t i = 0; i < wb; ++i) gb[o * wb + i] += go[o * (wa + wb) + wa + i];
      }
    });
  }
  return out;
}

Tensor Graph::reshape(const Tensor& a, std::vector<int> new_shape) {
  std::size_t n = 1;
  for (int d : new_shape) {
    require(d > 0, "reshape: non-positive dimension in " + shape_str(new_shape));
    n *= static_cast<std::size_t>(d);
  }
  require(n == a.size(), "reshape: cannot view " + shape_str(a.shape()) + " as " +
                             shape_str(new_shape) + " (element count differs)");
  const bool track = a.requires_grad();
  Tensor out = Tensor::from_data(new_shape, std::vector<double>(a.data(), a.data() + a.size()),
                                 track);
  if (track) {
    Tensor a_t = a, out_t = out;
    record([a_t, out_t, n]() mutable {
      const double* go = out_t.grad();
      double* ga = a_t.grad();
      for (std::size_t i = 0; i < n; ++i) ga[i] += go[i];
    });
  }
  return out;
}

Tensor Graph::sum(const Tensor& a) {
  const bool track = a.requires_grad();
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a.data()[i];
  Tensor out = Tensor::from_data({1}, {acc}, track);
  if (track) {
    Tensor a_t = a, out_t = out;
    record([a_t, out_t]() mutable {
      const double g = out_t.grad()[0];
      double* ga = a_t.grad();
      for (std::size_t i = 0; i < a_t.size(); ++i) ga[i] += g;
    });
  }
  return out;
}

Tensor Graph::l1_mean(const Tensor& a, const Tensor& b) {
  require(a.shape() == b.shape(),
          "l1_mean: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  const std::size_t n = a.size();
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += std::abs(a.data()[i] - b.data()[i]);
  const bool track = track_any({a, b});
  Tensor out = Tensor::from_data({1}, {acc / static_cast<double>(n)}, track);
  if (track) {
    Tensor a_t = a, b_t = b, out_t = out;
    record([a_t, b_t, out_t, n]() mutable {
      const double g = out_t.grad()[0] / static_cast<double>(n);
      for (std::size_t i = 0; i < n; ++i) {
        const double d = a_t.data()[i] - b_t.data()[i];
        const double s = d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
        if (a_t.requires_grad()) a_t.grad()[i] += g * s;
        if (b_t.requires_grad()) b_t.grad()[i] -= g * s;
      }
    });
  }
  return out;
}

Tensor Graph::pearson_loss(const Tensor& pred, const Tensor& target, int* degenerate_rows,
                           double eps) {
  require(pred.ndim() == 2, "pearson_loss: pred must be 2-D [B,L], got " +
                                shape_str(pred.shape()));
  require(pred.shape() == target.shape(), "pearson_loss: shape mismatch " +
                                              shape_str(pred.shape()) + " vs " +
                                              shape_str(target.shape()));
  const int B = pred.dim(0), L = pred.dim(1);
  require(L >= 2, "pearson_loss: rows need at least 2 samples, got " + std::to_string(L));
  struct RowCtx {
    double mx, my, r, dx, dy;
  };
  auto rows = std::make_shared<std::vector<RowCtx>>(B);
  double total = 0.0;
  for (int b = 0; b < B; ++b) {
    const double* x = pred.data() + static_cast<std::size_t>(b) * L;
    const double* y = target.data() + static_cast<std::size_t>(b) * L;
    double mx = 0.0, my = 0.0;
    for (int i = 0; i < L; ++i) {
      mx += x[i];
      my += y[i];
    }
    mx /= L;
    my /= L;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (int i = 0; i < L; ++i) {
      const double cx = x[i] - mx, cy = y[i] - my;
      sxy += cx * cy;
      sxx += cx * cx;
      syy += cy * cy;
    }
    sxy /= L;
    sxx /= L;
    syy /= L;
    if (degenerate_rows && (sxx == 0.0 || syy == 0.0)) ++(*degenerate_rows);
    const double dx = std::sqrt(sxx + eps), dy = std::sqrt(syy + eps);
    const double r = sxy / (dx * dy);
    (*rows)[b] = {mx, my, r, dx, dy};
    total += 1.0 - r;
  }
  const bool track = track_any({pred, target});
  Tensor out = Tensor::from_data({1}, {total / B}, track);
  if (track) {
    Tensor p_t = pred, t_t = target, out_t = out;
    record([p_t, t_t, out_t, rows, B, L]() mutable {
      const double g = out_t.grad()[0] / B;
      for (int b = 0; b < B; ++b) {
        const auto& rc = (*rows)[b];
        const double* x = p_t.data() + static_cast<std::size_t>(b) * L;
        const double* y = t_t.data() + static_cast<std::size_t>(b) * L;
        if (p_t.requires_grad()) {
          double* gp = p_t.grad() + static_cast<std::size_t>(b) * L;
          for (int i = 0; i < L; ++i) {
            const double cx = x[i] - rc.mx, cy = y[i] - rc.my;
            const double dr = (cy / (rc.dx * rc.dy) - rc.r * cx / (rc.dx * rc.dx)) / L;
            gp[i] += g * (-dr);
          }
        }
        if (t_t.requires_grad()) {
          double* gt = t_t.grad() + static_cast<std::size_t>(b) * L;
          for (int i = 0; i < L; ++i) {
            const double cx = x[i] - rc.mx, cy = y[i] - rc.my;
            const double dr = (cx / (rc.dx * rc.dy) - rc.r * cy / (rc.dy * rc.dy)) / L;
            gt[i] += g * (-dr);
          }
        }
      }
    });
  }
  return out;
}

Tensor Graph::psd(const Tensor& signal, double fs, double f_lo, double f_hi, double bin_width) {
  require(signal.ndim() == 2, "psd: signal must be 2-D [B,L], got " + shape_str(signal.shape()));
  const int B = signal.dim(0), L = signal.dim(1);
  const std::vector<double> freqs = band_frequencies(f_lo, f_hi, bin_width);
  const int K = static_cast<int>(freqs.size());
  // Basis tables reused by forward and backward.
  auto tc = std::make_shared<std::vector<double>>(static_cast<std::size_t>(K) * L);
  auto ts = std::make_shared<std::vector<double>>(static_cast<std::size_t>(K) * L);
  for (int k = 0; k < K; ++k) {
    const double w = 2.0 * M_PI * freqs[k] / fs;
    for (int t = 0; t < L; ++t) {
      (*tc)[static_cast<std::size_t>(k) * L + t] = std::cos(w * t);
      (*ts)[static_cast<std::size_t>(k) * L + t] = std::sin(w * t);
    }
  }
  auto cpart = std::make_shared<std::vector<double>>(static_cast<std::size_t>(B) * K);
  auto spart = std::make_shared<std::vector<double>>(static_cast<std::size_t>(B) * K);
  const bool track = signal.requires_grad();
  Tensor out = Tensor::zeros({B, K}, track);
  for (int b = 0; b < B; ++b) {
    const double* x = signal.data() + static_cast<std::size_t>(b) * L;
    for (int k = 0; k < K; ++k) {
      const double* cr = tc->data() + static_cast<std::size_t>(k) * L;
      const double* sr = ts->data() + static_cast<std::size_t>(k) * L;
      double c = 0.0, s = 0.0;
      for (int t = 0; t < L; ++t) {
        c += x[t] * cr[t];
        s += x[t] * sr[t];
      }
      (*cpart)[static_cast<std::size_t>(b) * K + k] = c;
      (*spart)[static_cast<std::size_t>(b) * K + k] = s;
      out.data()[static_cast<std::size_t>(b) * K + k] = c * c + s * s;
    }
  }
  if (track) {
    Tensor sig_t = signal, out_t = out;
    record([sig_t, out_t, tc, ts, cpart, spart, B, K, L]() mutable {
      const double* go = out_t.grad();
      double* gs = sig_t.grad();
      for (int b = 0; b < B; ++b) {
        for (int k = 0; k < K; ++k) {
          const double gk = go[static_cast<std::size_t>(b) * K + k];
          if (gk == 0.0) continue;
          const double c2 = 2.0 * gk * (*cpart)[static_cast<std::size_t>(b) * K + k];
          const double s2 = 2.0 * gk * (*spart)[static_cast<std::size_t>(b) * K + k];
          const double* cr = tc->data() + static_cast<std::size_t>(k) * L;
          const double* sr = ts->data() + static_cast<std::size_t>(k) * L;
          double* grow = gs + static_cast<std::size_t>(b) * L;
          for (int t = 0; t < L; ++t) grow[t] += c2 * cr[t] + s2 * sr[t];
        }
      }
    });
  }
  return out;
}

Tensor Graph::psd_cross_entropy(const Tensor& power, const std::vector<int>& target_bins,
                                double eps) {
  require(power.ndim() == 2, "psd_cross_entropy: power must be 2-D [B,K], got " +
                                 shape_str(power.shape()));
  const int B = power.dim(0), K = power.dim(1);
  require(static_cast<int>(target_bins.size()) == B,
          "psd_cross_entropy: " + std::to_string(target_bins.size()) + " target bins for " +
              std::to_string(B) + " rows");
  for (int b = 0; b < B; ++b)
    require(target_bins[b] >= 0 && target_bins[b] < K,
            "psd_cross_entropy: target bin " + std::to_string(target_bins[b]) +
                " outside [0, " + std::to_string(K) + ") in row " + std::to_string(b));
  constexpr double kLogFloor = 1e-12;  // keeps -log finite when the bin has no power
  auto sums = std::make_shared<std::vector<double>>(B);
  double total = 0.0;
  for (int b = 0; b < B; ++b) {
    const double* p = power.data() + static_cast<std::size_t>(b) * K;
    double s = eps;
    for (int k = 0; k < K; ++k) s += p[k];
    (*sums)[b] = s;
    const double prob = p[target_bins[b]] / s;
    total += -std::log(prob + kLogFloor);
  }
  const bool track = power.requires_grad();
  Tensor out = Tensor::from_data({1}, {total / B}, track);
  if (track) {
    Tensor p_t = power, out_t = out;
    auto bins = std::make_shared<std::vector<int>>(target_bins);
    record([p_t, out_t, sums, bins, B, K]() mutable {
      const double g = out_t.grad()[0] / B;
      for (int b = 0; b < B; ++b) {
        const double* p = p_t.data() + static_cast<std::size_t>(b) * K;
        double* gp = p_t.grad() + static_cast<std::size_t>(b) * K;
        const int tb = (*bins)[b];
        const double s = (*sums)[b];
        const double prob = p[tb] / s;
        const double dldp = -1.0 / (prob + kLogFloor);
        for (int k = 0; k < K; ++k) {
          const double dpdk = (k == tb ? (s - p[tb]) : -p[tb]) / (s * s);
          gp[k] += g * dldp * dpdk;
        }
      }
    });
  }
  return out;
}

}  // namespace cvd
