#include "ggb/image_io.hpp"

#include <zlib.h>

#include <cstdio>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace ggb::img {

namespace {

void put_be32(std::vector<unsigned char>& out, std::uint32_t v) {
  out.push_back(static_cast<unsigned char>(v >> 24));
  out.push_back(static_cast<unsigned char>(v >> 16));
  out.push_back(static_cast<unsigned char>(v >> 8));
  out.push_back(static_cast<unsigned char>(v));
}

void put_chunk(std::ofstream& os, const char type[4], const std::vector<unsigned char>& data) {
  std::vector<unsigned char> head;
  put_be32(head, static_cast<std::uint32_t>(data.size()));
  os.write(reinterpret_cast<const char*>(head.data()), 4);
  os.write(type, 4);
  if (!data.empty()) os.write(reinterpret_cast<const char*>(data.data()), static_cast<long>(data.size()));
  uLong crc = crc32(0L, reinterpret_cast<const Bytef*>(type), 4);
  if (!data.empty()) crc = crc32(crc, data.data(), static_cast<uInt>(data.size()));
  std::vector<unsigned char> tail;
  put_be32(tail, static_cast<std::uint32_t>(crc));
  os.write(reinterpret_cast<const char*>(tail.data()), 4);
}

}  // namespace

void write_ppm(const std::string& path, const Image8& image) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open for write: " + path);
  os << "P6\n" << image.width << " " << image.height << "\n255\n";
  os.write(reinterpret_cast<const char*>(image.rgb.data()), static_cast<long>(image.rgb.size()));
  if (!os) throw std::runtime_error("write failed: " + path);
}

Image8 read_ppm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open for read: " + path);
  std::string magic;
  is >> magic;
  if (magic != "P6") throw std::runtime_error("not a P6 ppm: " + path);
  int w = 0, h = 0, maxval = 0;
  is >> w >> h >> maxval;
  if (maxval != 255 || w <= 0 || h <= 0) throw std::runtime_error("unsupported ppm header: " + path);
  is.get();  // single whitespace after header
  Image8 im;
  im.width = w;
  im.height = h;
  im.rgb.resize(static_cast<std::size_t>(w) * h * 3);
  is.read(reinterpret_cast<char*>(im.rgb.data()), static_cast<long>(im.rgb.size()));
  if (!is) throw std::runtime_error("truncated ppm: " + path);
  return im;
}

void write_png(const std::string& path, const Image8& image) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open for write: " + path);
  static const unsigned char sig[8] = {137, 80, 78, 71, 13, 10, 26, 10};
  os.write(reinterpret_cast<const char*>(sig), 8);

  std::vector<unsigned char> ihdr;
  put_be32(ihdr, static_cast<std::uint32_t>(image.width));
  put_be32(ihdr, static_cast<std::uint32_t>(image.height));
  ihdr.push_back(8);  // bit depth
  ihdr.push_back(2);  // truecolor
  ihdr.push_back(0);
  ihdr.push_back(0);
  ihdr.push_back(0);
  put_chunk(os, "IHDR", ihdr);

  // filter byte 0 per scanline
  std::vector<unsigned char> raw;
  raw.reserve(static_cast<std::size_t>(image.height) * (1 + static_cast<std::size_t>(image.width) * 3));
  for (int y = 0; y < image.height; ++y) {
    raw.push_back(0);
    const unsigned char* row = image.rgb.data() + static_cast<std::size_t>(y) * image.width * 3;
    raw.insert(raw.end(), row, row + static_cast<std::size_t>(image.width) * 3);
  }
  uLongf bound = compressBound(static_cast<uLong>(raw.size()));
  std::vector<unsigned char> idat(bound);
  if (compress2(idat.data(), &bound, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK)
    throw std::runtime_error("png deflate failed: " + path);
  idat.resize(bound);
  put_chunk(os, "IDAT", idat);
  put_chunk(os, "IEND", {});
  if (!os) throw std::runtime_error("write failed: " + path);
}

Image8 grid(const std::vector<Image8>& cells, int columns, int pad) {
  if (cells.empty()) return {};
  const int cw = cells.front().width, ch = cells.front().height;
  for (const auto& c : cells)
    if (c.width != cw || c.height != ch) throw std::runtime_error("grid: cells must share one size");
  const int rows = (static_cast<int>(cells.size()) + columns - 1) / columns;
  Image8 out;
  out.width = columns * cw + (columns + 1) * pad;
  out.height = rows * ch + (rows + 1) * pad;
  out.rgb.assign(static_cast<std::size_t>(out.width) * out.height * 3, 24);
  for (std::size_t i = 0; i < cells.size(); ++i) {
    const int r = static_cast<int>(i) / columns, c = static_cast<int>(i) % columns;
    const int ox = pad + c * (cw + pad), oy = pad + r * (ch + pad);
    for (int y = 0; y < ch; ++y)
      std::memcpy(out.rgb.data() + ((static_cast<std::size_t>(oy) + y) * out.width + ox) * 3,
                  cells[i].rgb.data() + static_cast<std::size_t>(y) * cw * 3,
                  static_cast<std::size_t>(cw) * 3);
  }
  return out;
}

Image8 upscale_nearest(const Image8& image, int factor) {
  if (factor <= 1) return image;
  Image8 out;
  out.width = image.width * factor;
  out.height = image.height * factor;
  out.rgb.resize(static_cast<std::size_t>(out.width) * out.height * 3);
  for (int y = 0; y < out.height; ++y)
    for (int x = 0; x < out.width; ++x)
      std::memcpy(out.rgb.data() + (static_cast<std::size_t>(y) * out.width + x) * 3,
                  image.rgb.data() +
                      (static_cast<std::size_t>(y / factor) * image.width + x / factor) * 3,
                  3);
  return out;
}

}  // namespace ggb::img
