#include "cvd/serialize.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <stdexcept>

static_assert(std::endian::native == std::endian::little,
              "tensor container I/O assumes a little-endian host");

namespace cvd {

namespace {

constexpr char kMagic[4] = {'M', 'S', 'T', '1'};

class Reader {
 public:
  Reader(std::istream& is, const std::string& context) : is_(is), context_(context) {}

  void bytes(void* dst, std::size_t n) {
    is_.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(is_.gcount()) != n)
      throw std::runtime_error(context_ + ": truncated container at byte offset " +
                               std::to_string(offset_));
    offset_ += n;
  }

  std::uint8_t u8() {
    std::uint8_t v;
    bytes(&v, 1);
    return v;
  }

  std::uint32_t u32() {
    std::uint32_t v;
    bytes(&v, 4);
    return v;
  }

  std::size_t offset() const { return offset_; }
  const std::string& context() const { return context_; }

 private:
  std::istream& is_;
  std::string context_;
  std::size_t offset_ = 0;
};

Tensor read_tensor_body(Reader& r) {
  char magic[4];
  const std::size_t magic_at = r.offset();
  r.bytes(magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0)
    throw std::runtime_error(r.context() + ": bad magic at byte offset " +
                             std::to_string(magic_at));
  const std::uint8_t dtype = r.u8();
  if (dtype != static_cast<std::uint8_t>(Dtype::kF64) &&
      dtype != static_cast<std::uint8_t>(Dtype::kF32))
    throw std::runtime_error(r.context() + ": unknown dtype code " + std::to_string(dtype) +
                             " at byte offset " + std::to_string(magic_at + 4));
  const std::uint8_t ndim = r.u8();
  if (ndim == 0)
    throw std::runtime_error(r.context() + ": zero-dimensional tensor at byte offset " +
                             std::to_string(magic_at + 5));
  std::vector<int> shape(ndim);
  std::size_t count = 1;
  for (int i = 0; i < ndim; ++i) {
    const std::uint32_t d = r.u32();
    if (d == 0)
      throw std::runtime_error(r.context() + ": zero-sized dimension " + std::to_string(i) +
                               " at byte offset " + std::to_string(r.offset() - 4));
    shape[i] = static_cast<int>(d);
    count *= d;
  }
  std::vector<double> values(count);
  if (dtype == static_cast<std::uint8_t>(Dtype::kF64)) {
    r.bytes(values.data(), count * sizeof(double));
  } else {
    std::vector<float> raw(count);
    r.bytes(raw.data(), count * sizeof(float));
    for (std::size_t i = 0; i < count; ++i) values[i] = static_cast<double>(raw[i]);
  }
  Tensor t = Tensor::from_data(std::move(shape), std::move(values));
  t.check_finite(r.context());
  return t;
}

void write_tensor_body(std::ostream& os, const Tensor& t, Dtype dtype) {
  t.check_finite("write_tensor");
  os.write(kMagic, 4);
  const std::uint8_t dt = static_cast<std::uint8_t>(dtype);
  os.write(reinterpret_cast<const char*>(&dt), 1);
  if (t.ndim() > std::numeric_limits<std::uint8_t>::max())
    throw std::invalid_argument("write_tensor: rank " + std::to_string(t.ndim()) +
                                " exceeds container limit");
  const std::uint8_t nd = static_cast<std::uint8_t>(t.ndim());
  os.write(reinterpret_cast<const char*>(&nd), 1);
  for (int i = 0; i < t.ndim(); ++i) {
    const std::uint32_t d = static_cast<std::uint32_t>(t.dim(i));
    os.write(reinterpret_cast<const char*>(&d), 4);
  }
  if (dtype == Dtype::kF64) {
    os.write(reinterpret_cast<const char*>(t.data()),
             static_cast<std::streamsize>(t.size() * sizeof(double)));
  } else {
    std::vector<float> raw(t.size());
    for (std::size_t i = 0; i < t.size(); ++i) raw[i] = static_cast<float>(t.data()[i]);
    os.write(reinterpret_cast<const char*>(raw.data()),
             static_cast<std::streamsize>(raw.size() * sizeof(float)));
  }
  if (!os) throw std::runtime_error("write_tensor: stream write failed");
}

}  // namespace

void write_tensor(std::ostream& os, const Tensor& t, Dtype dtype) {
  write_tensor_body(os, t, dtype);
}

Tensor read_tensor(std::istream& is, const std::string& context) {
  Reader r(is, context);
  return read_tensor_body(r);
}

void write_tensor_file(const std::string& path, const Tensor& t, Dtype dtype) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("write_tensor: cannot open " + path);
  write_tensor_body(os, t, dtype);
}

Tensor read_tensor_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("read_tensor: cannot open " + path);
  Reader r(is, path);
  return read_tensor_body(r);
}

void write_named_tensors(const std::string& path, const NamedTensors& entries, Dtype dtype) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("write_named_tensors: cannot open " + path);
  const std::uint32_t count = static_cast<std::uint32_t>(entries.size());
  os.write(reinterpret_cast<const char*>(&count), 4);
  for (const auto& [name, tensor] : entries) {
    const std::uint32_t len = static_cast<std::uint32_t>(name.size());
    os.write(reinterpret_cast<const char*>(&len), 4);
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_tensor_body(os, tensor, dtype);
  }
  if (!os) throw std::runtime_error("write_named_tensors: stream write failed for " + path);
}

NamedTensors read_named_tensors(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("read_named_tensors: cannot open " + path);
  Reader r(is, path);
  const std::uint32_t count = r.u32();
  NamedTensors out;
  out.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t len = r.u32();
    std::string name(len, '\0');
    if (len > 0) r.bytes(name.data(), len);
    out.emplace_back(std::move(name), read_tensor_body(r));
  }
  return out;
}

}  // namespace cvd
