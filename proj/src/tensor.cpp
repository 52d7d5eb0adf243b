#include "cvd/tensor.hpp"

#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace cvd {

std::string shape_str(const std::vector<int>& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ",";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

namespace {

std::size_t checked_numel(const std::vector<int>& shape) {
  if (shape.empty()) throw std::invalid_argument("Tensor: empty shape");
  std::size_t n = 1;
  for (int d : shape) {
    if (d <= 0)
      throw std::invalid_argument("Tensor: non-positive dimension in shape " + shape_str(shape));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

}  // namespace

Tensor::Tensor(std::vector<int> shape, double fill, bool requires_grad) {
  const std::size_t n = checked_numel(shape);
  impl_ = std::make_shared<Impl>();
  impl_->shape = std::move(shape);
  impl_->data.assign(n, fill);
  impl_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(std::vector<int> shape, bool requires_grad) {
  return Tensor(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::from_data(std::vector<int> shape, std::vector<double> data, bool requires_grad) {
  const std::size_t n = checked_numel(shape);
  if (n != data.size()) {
    throw std::invalid_argument("Tensor: shape " + shape_str(shape) + " expects " +
                                std::to_string(n) + " values, got " + std::to_string(data.size()));
  }
  Tensor t;
  t.impl_ = std::make_shared<Impl>();
  t.impl_->shape = std::move(shape);
  t.impl_->data = std::move(data);
  t.impl_->requires_grad = requires_grad;
  return t;
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from_data({1}, {value}, requires_grad);
}

Tensor::Impl& Tensor::ref() {
  if (!impl_) throw std::logic_error("Tensor: use of undefined tensor");
  return *impl_;
}

const Tensor::Impl& Tensor::ref() const {
  if (!impl_) throw std::logic_error("Tensor: use of undefined tensor");
  return *impl_;
}

const std::vector<int>& Tensor::shape() const { return ref().shape; }

int Tensor::ndim() const { return static_cast<int>(ref().shape.size()); }

int Tensor::dim(int axis) const {
  const auto& s = ref().shape;
  if (axis < 0 || axis >= static_cast<int>(s.size()))
    throw std::invalid_argument("Tensor::dim: axis " + std::to_string(axis) +
                                " out of range for shape " + shape_str(s));
  return s[axis];
}

std::size_t Tensor::size() const { return ref().data.size(); }

double* Tensor::data() { return ref().data.data(); }
const double* Tensor::data() const { return ref().data.data(); }

double Tensor::value() const {
  const auto& r = ref();
  if (r.data.size() != 1)
    throw std::invalid_argument("Tensor::value: tensor " + shape_str(r.shape) +
                                " has more than one element");
  return r.data[0];
}

bool Tensor::requires_grad() const { return ref().requires_grad; }

void Tensor::set_requires_grad(bool enabled) { ref().requires_grad = enabled; }

double* Tensor::grad() {
  auto& r = ref();
  if (!r.grad_allocated) {
    r.grad.assign(r.data.size(), 0.0);
    r.grad_allocated = true;
  }
  return r.grad.data();
}

const double* Tensor::grad() const {
  const auto& r = ref();
  return r.grad_allocated ? r.grad.data() : nullptr;
}

bool Tensor::has_grad() const { return ref().grad_allocated; }

void Tensor::zero_grad() {
  auto& r = ref();
  if (r.grad_allocated) std::fill(r.grad.begin(), r.grad.end(), 0.0);
}

const void* Tensor::id() const { return impl_.get(); }

void Tensor::check_finite(const std::string& label) const {
  const auto& r = ref();
  for (std::size_t i = 0; i < r.data.size(); ++i) {
    if (!std::isfinite(r.data[i])) {
      throw std::runtime_error(label + ": non-finite value at flat index " + std::to_string(i) +
                               " in tensor " + shape_str(r.shape));
    }
  }
}

Tensor Tensor::clone() const {
  const auto& r = ref();
  return Tensor::from_data(r.shape, r.data, r.requires_grad);
}

BatchNormStats BatchNormStats::make(int channels) {
  BatchNormStats s;
  s.running_mean = Tensor::zeros({channels});
  s.running_var = Tensor({channels}, 1.0);
  return s;
}

void Graph::backward(const Tensor& loss) {
  if (loss.size() != 1)
    throw std::invalid_argument("backward: loss must be a scalar, got " +
                                shape_str(loss.shape()));
  Tensor seed = loss;
  seed.grad()[0] += 1.0;
  for (auto it = tape_.rbegin(); it != tape_.rend(); ++it) (*it)();
}

}  // namespace cvd
