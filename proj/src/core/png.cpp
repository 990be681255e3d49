#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>

#include "core/io.hpp"

namespace groupflow {

namespace {

void put_u32be(std::vector<unsigned char>& out, uint32_t v) {
  out.push_back(uint8_t(v >> 24));
  out.push_back(uint8_t(v >> 16));
  out.push_back(uint8_t(v >> 8));
  out.push_back(uint8_t(v));
}

void put_chunk(std::vector<unsigned char>& out, const char type[4],
               const std::vector<unsigned char>& data) {
  put_u32be(out, uint32_t(data.size()));
  const size_t type_at = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), data.begin(), data.end());
  const uLong crc = crc32(0, out.data() + type_at, uInt(4 + data.size()));
  put_u32be(out, uint32_t(crc));
}

uint8_t quantize(double v) {
  return uint8_t(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

// channels-first [C,H,W] image to an 8-bit PNG, gray (C=1) or RGB (C=3)
void write_png(const std::string& path, const Tensor<double>& img, int channels) {
  const int h = img.dim(img.ndim() - 2), w = img.dim(img.ndim() - 1);

  std::vector<unsigned char> raw;
  raw.reserve(size_t(h) * (size_t(w) * channels + 1));
  for (int r = 0; r < h; ++r) {
    raw.push_back(0);  // filter type: none
    for (int c = 0; c < w; ++c)
      for (int ch = 0; ch < channels; ++ch)
        raw.push_back(quantize(img[(int64_t(ch) * h + r) * w + c]));
  }

  uLongf zlen = compressBound(uLong(raw.size()));
  std::vector<unsigned char> zbuf(zlen);
  if (compress2(zbuf.data(), &zlen, raw.data(), uLong(raw.size()), 6) != Z_OK)
    throw FormatError("png compression failed");
  zbuf.resize(zlen);

  std::vector<unsigned char> out{0x89, 'P', 'N', 'G', 0x0D, 0x0A, 0x1A, 0x0A};
  std::vector<unsigned char> ihdr;
  put_u32be(ihdr, uint32_t(w));
  put_u32be(ihdr, uint32_t(h));
  ihdr.push_back(8);                               // bit depth
  ihdr.push_back(channels == 1 ? 0 : 2);           // gray or truecolor
  ihdr.push_back(0);                               // deflate
  ihdr.push_back(0);                               // adaptive filtering
  ihdr.push_back(0);                               // no interlace
  put_chunk(out, "IHDR", ihdr);
  put_chunk(out, "IDAT", zbuf);
  put_chunk(out, "IEND", {});
  atomic_write(path, out.data(), out.size());
}

}  // namespace

void write_png_gray(const std::string& path, const Tensor<double>& img) {
  if (!(img.ndim() == 2 || (img.ndim() == 3 && img.dim(0) == 1)))
    throw std::invalid_argument("write_png_gray expects [H,W] or [1,H,W]");
  write_png(path, img, 1);
}

void write_png_rgb(const std::string& path, const Tensor<double>& img) {
  if (img.ndim() != 3 || img.dim(0) != 3)
    throw std::invalid_argument("write_png_rgb expects [3,H,W]");
  write_png(path, img, 3);
}

}  // namespace groupflow
