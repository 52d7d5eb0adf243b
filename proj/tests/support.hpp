// Shared test helpers: finite-difference gradient checking and naive
// reference implementations kept deliberately independent of the library's
// kernels.
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "cvd/rng.hpp"
#include "cvd/tensor.hpp"

namespace testsup {

struct GradCheck {
  double max_rel_err = 0.0;
  std::size_t checked = 0;
};

// build must construct the graph from scratch and return a scalar loss; it is
// re-invoked twice per element for central differences.
inline GradCheck fd_gradcheck(const std::function<cvd::Tensor(cvd::Graph&)>& build,
                              std::vector<cvd::Tensor> leaves, double h = 1e-5) {
  for (auto& t : leaves) t.zero_grad();
  {
    cvd::Graph g;
    cvd::Tensor loss = build(g);
    g.backward(loss);
  }
  GradCheck res;
  for (auto& t : leaves) {
    for (std::size_t i = 0; i < t.size(); ++i) {
      const double saved = t.data()[i];
      t.data()[i] = saved + h;
      double up;
      {
        cvd::Graph g;
        up = build(g).value();
      }
      t.data()[i] = saved - h;
      double dn;
      {
        cvd::Graph g;
        dn = build(g).value();
      }
      t.data()[i] = saved;
      const double num = (up - dn) / (2.0 * h);
      const double ana = t.grad() ? t.grad()[i] : 0.0;
      const double rel = std::abs(num - ana) / std::max({1.0, std::abs(num), std::abs(ana)});
      res.max_rel_err = std::max(res.max_rel_err, rel);
      ++res.checked;
    }
  }
  return res;
}

inline cvd::Tensor rand_tensor(std::vector<int> shape, cvd::Rng& rng, double lo = -1.0,
                               double hi = 1.0, bool requires_grad = true) {
  cvd::Tensor t = cvd::Tensor::zeros(std::move(shape), requires_grad);
  for (std::size_t i = 0; i < t.size(); ++i) t.data()[i] = rng.uniform(lo, hi);
  return t;
}

// Values pushed away from zero so |x| kinks (relu, l1) sit outside the FD
// stencil.
inline cvd::Tensor rand_tensor_off_kink(std::vector<int> shape, cvd::Rng& rng,
                                        double margin = 0.05) {
  cvd::Tensor t = cvd::Tensor::zeros(std::move(shape), true);
  for (std::size_t i = 0; i < t.size(); ++i) {
    double v = rng.uniform(margin, 1.0);
    t.data()[i] = rng.bernoulli(0.5) ? v : -v;
  }
  return t;
}

// Plain quadruple-loop convolution, weight [out_ch, in_ch, kh, kw].
inline cvd::Tensor naive_conv2d(const cvd::Tensor& in, const cvd::Tensor& w,
                                const cvd::Tensor& b, int stride, int pad) {
  const int N = in.dim(0), C = in.dim(1), H = in.dim(2), W = in.dim(3);
  const int OC = w.dim(0), KH = w.dim(2), KW = w.dim(3);
  const int OH = (H + 2 * pad - KH) / stride + 1;
  const int OW = (W + 2 * pad - KW) / stride + 1;
  cvd::Tensor out = cvd::Tensor::zeros({N, OC, OH, OW});
  for (int n = 0; n < N; ++n)
    for (int oc = 0; oc < OC; ++oc)
      for (int oh = 0; oh < OH; ++oh)
        for (int ow = 0; ow < OW; ++ow) {
          double acc = b.data()[oc];
          for (int ic = 0; ic < C; ++ic)
            for (int kh = 0; kh < KH; ++kh)
              for (int kw = 0; kw < KW; ++kw) {
                const int ih = oh * stride - pad + kh;
                const int iw = ow * stride - pad + kw;
                if (ih < 0 || ih >= H || iw < 0 || iw >= W) continue;
                acc += in.data()[((static_cast<std::size_t>(n) * C + ic) * H + ih) * W + iw] *
                       w.data()[((static_cast<std::size_t>(oc) * C + ic) * KH + kh) * KW + kw];
              }
          out.data()[((static_cast<std::size_t>(n) * OC + oc) * OH + oh) * OW + ow] = acc;
        }
  return out;
}

// Scatter form of the transposed convolution, weight [in_ch, out_ch, kh, kw].
inline cvd::Tensor naive_tconv2d(const cvd::Tensor& in, const cvd::Tensor& w,
                                 const cvd::Tensor& b, int stride, int pad) {
  const int N = in.dim(0), C = in.dim(1), H = in.dim(2), W = in.dim(3);
  const int OC = w.dim(1), KH = w.dim(2), KW = w.dim(3);
  const int OH = (H - 1) * stride - 2 * pad + KH;
  const int OW = (W - 1) * stride - 2 * pad + KW;
  cvd::Tensor out = cvd::Tensor::zeros({N, OC, OH, OW});
  for (int n = 0; n < N; ++n)
    for (int oc = 0; oc < OC; ++oc)
      for (int oh = 0; oh < OH; ++oh)
        for (int ow = 0; ow < OW; ++ow)
          out.data()[((static_cast<std::size_t>(n) * OC + oc) * OH + oh) * OW + ow] =
              b.data()[oc];
  for (int n = 0; n < N; ++n)
    for (int ic = 0; ic < C; ++ic)
      for (int ih = 0; ih < H; ++ih)
        for (int iw = 0; iw < W; ++iw) {
          const double v =
              in.data()[((static_cast<std::size_t>(n) * C + ic) * H + ih) * W + iw];
          for (int oc = 0; oc < OC; ++oc)
            for (int kh = 0; kh < KH; ++kh)
              for (int kw = 0; kw < KW; ++kw) {
                const int oh = ih * stride - pad + kh;
                const int ow = iw * stride - pad + kw;
                if (oh < 0 || oh >= OH || ow < 0 || ow >= OW) continue;
                out.data()[((static_cast<std::size_t>(n) * OC + oc) * OH + oh) * OW + ow] +=
                    v * w.data()[((static_cast<std::size_t>(ic) * OC + oc) * KH + kh) * KW + kw];
              }
        }
  return out;
}

// Direct DFT power at arbitrary frequencies.
inline std::vector<double> naive_dft_power(const std::vector<double>& s, double fs,
                                           const std::vector<double>& freqs) {
  std::vector<double> p(freqs.size());
  for (std::size_t k = 0; k < freqs.size(); ++k) {
    double c = 0.0, si = 0.0;
    for (std::size_t t = 0; t < s.size(); ++t) {
      const double ang = 2.0 * M_PI * freqs[k] * static_cast<double>(t) / fs;
      c += s[t] * std::cos(ang);
      si += s[t] * std::sin(ang);
    }
    p[k] = c * c + si * si;
  }
  return p;
}

inline double max_abs_diff(const cvd::Tensor& a, const cvd::Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

}  // namespace testsup
