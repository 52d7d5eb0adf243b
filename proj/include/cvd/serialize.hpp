#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "cvd/tensor.hpp"

namespace cvd {

// Binary tensor container.
//
//   magic   "MST1"
//   u8      dtype      (1 = float64, 2 = float32)
//   u8      ndim
//   u32*    dims       (little-endian, ndim entries)
//   bytes   payload    (row-major, little-endian)
//
// A checkpoint file is a u32 record count followed by records of
//   u32 name_len, name bytes, tensor container.
enum class Dtype : std::uint8_t { kF64 = 1, kF32 = 2 };

void write_tensor(std::ostream& os, const Tensor& t, Dtype dtype = Dtype::kF64);
Tensor read_tensor(std::istream& is, const std::string& context);

void write_tensor_file(const std::string& path, const Tensor& t, Dtype dtype = Dtype::kF64);
Tensor read_tensor_file(const std::string& path);

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

void write_named_tensors(const std::string& path, const NamedTensors& entries,
                         Dtype dtype = Dtype::kF64);
NamedTensors read_named_tensors(const std::string& path);

}  // namespace cvd
