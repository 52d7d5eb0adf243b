#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace cvd {

std::string shape_str(const std::vector<int>& shape);

// Dense n-dimensional double tensor with optional gradient storage.
// Copies are shallow: a Tensor is a shared handle onto one storage, which is
// what makes parameter sharing and gradient accumulation work.
class Tensor {
 public:
  Tensor() = default;
  Tensor(std::vector<int> shape, double fill, bool requires_grad = false);

  static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
  static Tensor from_data(std::vector<int> shape, std::vector<double> data,
                          bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(impl_); }
  const std::vector<int>& shape() const;
  int ndim() const;
  int dim(int axis) const;
  std::size_t size() const;

  double* data();
  const double* data() const;
  double value() const;  // single-element tensors only

  bool requires_grad() const;
  void set_requires_grad(bool enabled);

  double* grad();              // allocates zeroed storage on first use
  const double* grad() const;  // nullptr until allocated
  bool has_grad() const;
  void zero_grad();            // gradients accumulate; clearing is the caller's job

  // Storage identity, used to assert weight sharing.
  const void* id() const;

  // Throws if any element is NaN or Inf.
  void check_finite(const std::string& label) const;

  Tensor clone() const;  // deep copy of values (not grads)

 private:
  struct Impl {
    std::vector<int> shape;
    std::vector<double> data;
    std::vector<double> grad;
    bool requires_grad = false;
    bool grad_allocated = false;
  };
  std::shared_ptr<Impl> impl_;
  Impl& ref();
  const Impl& ref() const;
};

enum class NormMode { kTrain, kEval };

// Running statistics owned by each batch-norm layer. Updated in train mode,
// consumed in eval mode. Never part of the gradient tape.
struct BatchNormStats {
  Tensor running_mean;
  Tensor running_var;
  double momentum = 0.1;
  static BatchNormStats make(int channels);
};

// Reverse-mode tape. Every differentiable op appends a closure; backward()
// replays the tape in reverse, accumulating input gradients with +=.
// Nothing is zeroed implicitly.
class Graph {
 public:
  Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
                int stride, int padding);
  Tensor transposed_conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
                           int stride, int padding);
  Tensor batch_norm(const Tensor& input, const Tensor& gamma, const Tensor& beta,
                    BatchNormStats& stats, NormMode mode, double eps = 1e-5);
  Tensor instance_norm(const Tensor& input, const Tensor& gamma, const Tensor& beta,
                       double eps = 1e-5);
  Tensor avg_pool(const Tensor& input, int k, int stride);
  Tensor adaptive_avg_pool(const Tensor& input, int out_h, int out_w);
  Tensor fully_connected(const Tensor& input, const Tensor& weight, const Tensor& bias);
  Tensor relu(const Tensor& input);
  Tensor sigmoid(const Tensor& input);
  Tensor add(const Tensor& a, const Tensor& b);
  Tensor mul(const Tensor& a, const Tensor& b);
  Tensor scale(const Tensor& a, double factor);
  Tensor concat(const Tensor& a, const Tensor& b, int axis);
  Tensor reshape(const Tensor& a, std::vector<int> new_shape);
  Tensor sum(const Tensor& a);
  Tensor l1_mean(const Tensor& a, const Tensor& b);

  // 1 - Pearson r per row (over the last axis), averaged across rows.
  // eps sits under each square root; a constant-vs-constant row scores 1 and
  // bumps *degenerate_rows when provided.
  Tensor pearson_loss(const Tensor& pred, const Tensor& target,
                      int* degenerate_rows = nullptr, double eps = 1e-8);

  // Squared DFT magnitude of each row evaluated at bin centers
  // f_lo, f_lo + bin_width, ... <= f_hi. Differentiable w.r.t. the signal.
  Tensor psd(const Tensor& signal, double fs, double f_lo, double f_hi, double bin_width);

  // Rows of `power` are normalized to probabilities (sum + eps); the loss is
  // the mean of -log p[target_bin] across rows.
  Tensor psd_cross_entropy(const Tensor& power, const std::vector<int>& target_bins,
                           double eps = 1e-8);

  void backward(const Tensor& loss);
  std::size_t node_count() const { return tape_.size(); }

 private:
  void record(std::function<void()> fn) { tape_.push_back(std::move(fn)); }
  std::vector<std::function<void()>> tape_;
};

}  // namespace cvd
