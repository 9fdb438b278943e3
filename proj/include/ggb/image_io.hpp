#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ggb/tensor.hpp"

namespace ggb::img {

// Interleaved 8-bit RGB.
struct Image8 {
  int width = 0;
  int height = 0;
  std::vector<unsigned char> rgb;
};

void write_ppm(const std::string& path, const Image8& image);
Image8 read_ppm(const std::string& path);
void write_png(const std::string& path, const Image8& image);

Image8 grid(const std::vector<Image8>& cells, int columns, int pad);
Image8 upscale_nearest(const Image8& image, int factor);

inline unsigned char quantize_unit(double v) {
  double q = (v + 1.0) * 0.5 * 255.0;
  if (q < 0.0) q = 0.0;
  if (q > 255.0) q = 255.0;
  return static_cast<unsigned char>(q + 0.5);
}

inline double dequantize_unit(unsigned char q) { return static_cast<double>(q) / 255.0 * 2.0 - 1.0; }

// (1,3,H,W) tensor in [-1,1] -> interleaved 8-bit image.
template <class T>
Image8 from_tensor(const Tensor<T>& t) {
  if (t.ndim() != 4 || t.dim(0) != 1 || t.dim(1) != 3)
    throw ShapeError("from_tensor: expected (1,3,H,W), got " + shape_str(t.shape()));
  Image8 im;
  im.height = t.dim(2);
  im.width = t.dim(3);
  im.rgb.resize(static_cast<std::size_t>(im.width) * im.height * 3);
  const long plane = static_cast<long>(im.width) * im.height;
  for (long i = 0; i < plane; ++i)
    for (int c = 0; c < 3; ++c)
      im.rgb[static_cast<std::size_t>(i) * 3 + c] =
          quantize_unit(static_cast<double>(t.data()[c * plane + i]));
  return im;
}

}  // namespace ggb::img
