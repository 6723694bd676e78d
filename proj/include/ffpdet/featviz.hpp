#pragma once

#include <cmath>

#include "ffpdet/image.hpp"

namespace ffpdet {

/// Write the channel mean of a [1,C,H,W] activation as a grayscale image,
/// min-max scaled to [0,255]. A constant map has no range and is emitted as
/// all zeros.
template <typename T>
void dump_average_feature_map(const Tensor<T>& t, const std::string& path) {
  require<ShapeError>(t.rank() == 4 && t.dim(0) == 1,
                      "feature-map dump expects a single-image [1,C,H,W] "
                      "tensor, got " +
                          shape_str(t.shape()));
  const int64_t c = t.dim(1), h = t.dim(2), w = t.dim(3);
  const int64_t plane = h * w;
  std::vector<double> mean(plane, 0.0);
  const T* p = t.ptr();
  for (int64_t ch = 0; ch < c; ++ch)
    for (int64_t s = 0; s < plane; ++s) mean[s] += double(p[ch * plane + s]);
  double lo = mean[0], hi = mean[0];
  for (double v : mean) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  std::vector<uint8_t> bytes(plane, 0);
  if (hi > lo) {
    const double scale = 255.0 / (hi - lo);
    for (int64_t s = 0; s < plane; ++s)
      bytes[s] = (uint8_t)std::lround((mean[s] - lo) * scale);
  }
  write_pgm(bytes.data(), w, h, path);
}

}  // namespace ffpdet
