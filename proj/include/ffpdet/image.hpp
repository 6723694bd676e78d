#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "ffpdet/tensor.hpp"

namespace ffpdet {

/// 8-bit RGB image, rows top to bottom, interleaved channels.
struct ImageU8 {
  int64_t width = 0, height = 0;
  std::vector<uint8_t> data;  // size 3*width*height

  uint8_t& at(int64_t x, int64_t y, int c) {
    return data[(y * width + x) * 3 + c];
  }
  uint8_t at(int64_t x, int64_t y, int c) const {
    return data[(y * width + x) * 3 + c];
  }
};

/// Binary PPM (P6, maxval 255).
void write_ppm(const ImageU8& img, const std::string& path);
ImageU8 read_ppm(const std::string& path);

/// Binary PGM (P5, maxval 255); `data` is row-major, width*height bytes.
void write_pgm(const uint8_t* data, int64_t width, int64_t height,
               const std::string& path);

/// [3,H,W] float tensor in [0,1] from interleaved bytes and back.
template <typename T = float>
Tensor<T> image_to_tensor(const ImageU8& img) {
  Tensor<T> t = Tensor<T>::zeros({3, img.height, img.width});
  T* p = t.ptr();
  const int64_t plane = img.height * img.width;
  for (int64_t y = 0; y < img.height; ++y)
    for (int64_t x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c)
        p[c * plane + y * img.width + x] =
            T(img.data[(y * img.width + x) * 3 + c]) / T(255);
  return t;
}

template <typename T>
ImageU8 tensor_to_image(const Tensor<T>& t) {
  require<ShapeError>(t.rank() == 3 && t.dim(0) == 3,
                      "tensor_to_image expects [3,H,W], got " +
                          shape_str(t.shape()));
  ImageU8 img;
  img.height = t.dim(1);
  img.width = t.dim(2);
  img.data.resize(3 * img.width * img.height);
  const T* p = t.ptr();
  const int64_t plane = img.height * img.width;
  for (int64_t y = 0; y < img.height; ++y)
    for (int64_t x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c) {
        T v = p[c * plane + y * img.width + x];
        v = std::min(T(1), std::max(T(0), v));
        img.data[(y * img.width + x) * 3 + c] =
            (uint8_t)std::lround(double(v) * 255.0);
      }
  return img;
}

}  // namespace ffpdet
