#pragma once

#include <vector>

#include "cvd/tensor.hpp"

namespace cvd {

struct AdamConfig {
  double lr = 0.0005;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam with bias correction. First and second moments live here, one slot per
// parameter element. step() consumes whatever is in each parameter's grad
// buffer; clearing gradients between steps is the caller's job.
class Adam {
 public:
  Adam(std::vector<Tensor> params, AdamConfig cfg = {});

  void step();       // throws on non-finite gradients
  void zero_grad();  // convenience: clears all parameter grads
  long step_count() const { return t_; }
  const AdamConfig& config() const { return cfg_; }

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> m_, v_;
  long t_ = 0;
  AdamConfig cfg_;
};

}  // namespace cvd
