#include "cvd/image.hpp"

#include <cctype>
#include <fstream>
#include <stdexcept>

namespace cvd {

namespace {

// Reads the next whitespace/comment-delimited integer token of a PNM header.
int header_int(std::istream& is, const std::string& path) {
  int c = is.get();
  while (c != EOF) {
    if (c == '#') {  // comment runs to end of line
      while (c != EOF && c != '\n') c = is.get();
    } else if (!std::isspace(c)) {
      break;
    }
    c = is.get();
  }
  if (c == EOF || !std::isdigit(c))
    throw std::runtime_error(path + ": malformed PNM header");
  int v = 0;
  while (c != EOF && std::isdigit(c)) {
    v = v * 10 + (c - '0');
    c = is.get();
  }
  return v;
}

}  // namespace

ImageU8 read_ppm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("read_ppm: cannot open " + path);
  char m0 = 0, m1 = 0;
  is.get(m0);
  is.get(m1);
  int channels = 0;
  if (m0 == 'P' && m1 == '6')
    channels = 3;
  else if (m0 == 'P' && m1 == '5')
    channels = 1;
  else
    throw std::runtime_error(path + ": not a binary PPM/PGM (expected P6 or P5)");
  ImageU8 img;
  img.channels = channels;
  img.width = header_int(is, path);
  img.height = header_int(is, path);
  const int maxval = header_int(is, path);
  if (img.width <= 0 || img.height <= 0)
    throw std::runtime_error(path + ": invalid dimensions " + std::to_string(img.width) + "x" +
                             std::to_string(img.height));
  if (maxval <= 0 || maxval > 255)
    throw std::runtime_error(path + ": unsupported maxval " + std::to_string(maxval));
  // header_int consumed the single separator after maxval
  const std::size_t n = static_cast<std::size_t>(img.width) * img.height * channels;
  img.pixels.resize(n);
  is.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(is.gcount()) != n)
    throw std::runtime_error(path + ": truncated pixel payload");
  return img;
}

void write_ppm(const std::string& path, const ImageU8& img) {
  if (img.channels != 1 && img.channels != 3)
    throw std::invalid_argument("write_ppm: image must have 1 or 3 channels, got " +
                                std::to_string(img.channels));
  if (img.pixels.size() != static_cast<std::size_t>(img.width) * img.height * img.channels)
    throw std::invalid_argument("write_ppm: pixel buffer does not match dimensions");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("write_ppm: cannot open " + path);
  os << (img.channels == 3 ? "P6\n" : "P5\n") << img.width << " " << img.height << "\n255\n";
  os.write(reinterpret_cast<const char*>(img.pixels.data()),
           static_cast<std::streamsize>(img.pixels.size()));
  if (!os) throw std::runtime_error("write_ppm: write failed for " + path);
}

}  // namespace cvd
