#include "ffpdet/kernels.hpp"

#include <omp.h>

#include <algorithm>

namespace ffpdet::kernels {

namespace {

int g_max_threads = 0;  // 0 = use the OpenMP runtime default

// Valid output-column window for one kernel column: all ow in [lo, hi] with
// (ow * stride - pad + kw * dil) inside [0, wi). Returns false when empty.
inline bool ow_window(int64_t wi, int64_t wo, int64_t stride, int64_t pad,
                      int64_t kwd, int64_t& lo, int64_t& hi) {
  int64_t a = pad - kwd;  // ow*stride >= a
  lo = a <= 0 ? 0 : (a + stride - 1) / stride;
  int64_t b = wi - 1 + pad - kwd;  // ow*stride <= b
  if (b < 0) return false;
  hi = std::min(wo - 1, b / stride);
  return lo <= hi;
}

}  // namespace

int max_threads() {
  return g_max_threads > 0 ? g_max_threads : omp_get_max_threads();
}

void set_max_threads(int n) { g_max_threads = n > 0 ? n : 0; }

template <typename T>
void conv2d_forward(const T* x, const T* w, const T* bias, T* y,
                    const ConvDims& d, bool parallel) {
  const int64_t cig = d.ci / d.groups;  // channels per group
  const int64_t cog = d.co / d.groups;
  const int64_t rows = d.n * d.co * d.ho;
  const int nt = max_threads();
#pragma omp parallel for if (parallel) num_threads(nt) schedule(static)
  for (int64_t row = 0; row < rows; ++row) {
    const int64_t oh = row % d.ho;
    const int64_t co = (row / d.ho) % d.co;
    const int64_t n = row / (d.ho * d.co);
    const int64_t g = co / cog;
    T* __restrict yrow = y + row * d.wo;
    const T bv = bias ? bias[co] : T(0);
    for (int64_t ow = 0; ow < d.wo; ++ow) yrow[ow] = bv;
    for (int64_t cl = 0; cl < cig; ++cl) {
      const int64_t ci = g * cig + cl;
      const T* __restrict xch = x + (n * d.ci + ci) * d.hi * d.wi;
      const T* __restrict wch = w + (co * cig + cl) * d.k * d.k;
      for (int64_t kh = 0; kh < d.k; ++kh) {
        const int64_t ih = oh * d.stride - d.pad + kh * d.dil;
        if (ih < 0 || ih >= d.hi) continue;
        const T* __restrict xrow = xch + ih * d.wi;
        for (int64_t kw = 0; kw < d.k; ++kw) {
          int64_t lo, hi;
          if (!ow_window(d.wi, d.wo, d.stride, d.pad, kw * d.dil, lo, hi))
            continue;
          const T wv = wch[kh * d.k + kw];
          const int64_t off = kw * d.dil - d.pad;
          if (d.stride == 1) {
            const T* __restrict xs = xrow + off;
            for (int64_t ow = lo; ow <= hi; ++ow) yrow[ow] += wv * xs[ow];
          } else {
            for (int64_t ow = lo; ow <= hi; ++ow)
              yrow[ow] += wv * xrow[ow * d.stride + off];
          }
        }
      }
    }
  }
}

template <typename T>
void conv2d_backward_input(const T* w, const T* gy, T* gx, const ConvDims& d,
                           bool parallel) {
  const int64_t cig = d.ci / d.groups;
  const int64_t cog = d.co / d.groups;
  const int64_t rows = d.n * d.ci * d.hi;
  const int nt = max_threads();
#pragma omp parallel for if (parallel) num_threads(nt) schedule(static)
  for (int64_t row = 0; row < rows; ++row) {
    const int64_t ih = row % d.hi;
    const int64_t ci = (row / d.hi) % d.ci;
    const int64_t n = row / (d.hi * d.ci);
    const int64_t g = ci / cig;
    const int64_t cl = ci % cig;
    T* __restrict gxrow = gx + row * d.wi;
    for (int64_t col = 0; col < cog; ++col) {
      const int64_t co = g * cog + col;
      const T* __restrict wch = w + (co * cig + cl) * d.k * d.k;
      const T* __restrict gych = gy + (n * d.co + co) * d.ho * d.wo;
      for (int64_t kh = 0; kh < d.k; ++kh) {
        const int64_t t = ih + d.pad - kh * d.dil;
        if (t < 0 || t % d.stride != 0) continue;
        const int64_t oh = t / d.stride;
        if (oh >= d.ho) continue;
        const T* __restrict gyrow = gych + oh * d.wo;
        for (int64_t kw = 0; kw < d.k; ++kw) {
          const T wv = wch[kh * d.k + kw];
          const int64_t off = kw * d.dil - d.pad;  // iw = ow*stride + off
          if (d.stride == 1) {
            // iw in [max(0, off), min(wi-1, wo-1+off)]
            const int64_t lo = std::max<int64_t>(0, off);
            const int64_t hi = std::min(d.wi - 1, d.wo - 1 + off);
            const T* __restrict gs = gyrow - off;
            for (int64_t iw = lo; iw <= hi; ++iw) gxrow[iw] += wv * gs[iw];
          } else {
            for (int64_t ow = 0; ow < d.wo; ++ow) {
              const int64_t iw = ow * d.stride + off;
              if (iw >= 0 && iw < d.wi) gxrow[iw] += wv * gyrow[ow];
            }
          }
        }
      }
    }
  }
}

template <typename T>
void conv2d_backward_weight(const T* x, const T* gy, T* gw, const ConvDims& d,
                            bool parallel) {
  const int64_t cig = d.ci / d.groups;
  const int64_t cog = d.co / d.groups;
  const int64_t items = d.co * cig * d.k * d.k;
  const int nt = max_threads();
#pragma omp parallel for if (parallel) num_threads(nt) schedule(static)
  for (int64_t it = 0; it < items; ++it) {
    const int64_t kw = it % d.k;
    const int64_t kh = (it / d.k) % d.k;
    const int64_t cl = (it / (d.k * d.k)) % cig;
    const int64_t co = it / (d.k * d.k * cig);
    const int64_t g = co / cog;
    const int64_t ci = g * cig + cl;
    int64_t lo, hi;
    if (!ow_window(d.wi, d.wo, d.stride, d.pad, kw * d.dil, lo, hi)) continue;
    const int64_t off = kw * d.dil - d.pad;
    T acc = 0;
    for (int64_t n = 0; n < d.n; ++n) {
      const T* __restrict xch = x + (n * d.ci + ci) * d.hi * d.wi;
      const T* __restrict gych = gy + (n * d.co + co) * d.ho * d.wo;
      for (int64_t oh = 0; oh < d.ho; ++oh) {
        const int64_t ih = oh * d.stride - d.pad + kh * d.dil;
        if (ih < 0 || ih >= d.hi) continue;
        const T* __restrict xrow = xch + ih * d.wi;
        const T* __restrict gyrow = gych + oh * d.wo;
        if (d.stride == 1) {
          const T* __restrict xs = xrow + off;
          for (int64_t ow = lo; ow <= hi; ++ow) acc += gyrow[ow] * xs[ow];
        } else {
          for (int64_t ow = lo; ow <= hi; ++ow)
            acc += gyrow[ow] * xrow[ow * d.stride + off];
        }
      }
    }
    gw[it] += acc;
  }
}

template <typename T>
void conv2d_backward_bias(const T* gy, T* gb, const ConvDims& d,
                          bool parallel) {
  const int nt = max_threads();
#pragma omp parallel for if (parallel) num_threads(nt) schedule(static)
  for (int64_t co = 0; co < d.co; ++co) {
    T acc = 0;
    for (int64_t n = 0; n < d.n; ++n) {
      const T* __restrict gyrow = gy + (n * d.co + co) * d.ho * d.wo;
      for (int64_t i = 0; i < d.ho * d.wo; ++i) acc += gyrow[i];
    }
    gb[co] += acc;
  }
}

template <typename T>
void dense_forward(const T* x, const T* w, const T* bias, T* y, int64_t n,
                   int64_t ci, int64_t co, bool parallel) {
  const int64_t rows = n * co;
  const int nt = max_threads();
#pragma omp parallel for if (parallel) num_threads(nt) schedule(static)
  for (int64_t row = 0; row < rows; ++row) {
    const int64_t c = row % co;
    const int64_t b = row / co;
    const T* __restrict xr = x + b * ci;
    const T* __restrict wr = w + c * ci;
    T acc = bias ? bias[c] : T(0);
    for (int64_t i = 0; i < ci; ++i) acc += wr[i] * xr[i];
    y[row] = acc;
  }
}

template <typename T>
void dense_backward_input(const T* w, const T* gy, T* gx, int64_t n,
                          int64_t ci, int64_t co, bool parallel) {
  const int nt = max_threads();
#pragma omp parallel for if (parallel) num_threads(nt) schedule(static)
  for (int64_t b = 0; b < n; ++b) {
    T* __restrict gxr = gx + b * ci;
    const T* __restrict gyr = gy + b * co;
    for (int64_t c = 0; c < co; ++c) {
      const T g = gyr[c];
      const T* __restrict wr = w + c * ci;
      for (int64_t i = 0; i < ci; ++i) gxr[i] += g * wr[i];
    }
  }
}

template <typename T>
void dense_backward_weight(const T* x, const T* gy, T* gw, int64_t n,
                           int64_t ci, int64_t co, bool parallel) {
  const int nt = max_threads();
#pragma omp parallel for if (parallel) num_threads(nt) schedule(static)
  for (int64_t c = 0; c < co; ++c) {
    T* __restrict gwr = gw + c * ci;
    for (int64_t b = 0; b < n; ++b) {
      const T g = gy[b * co + c];
      const T* __restrict xr = x + b * ci;
      for (int64_t i = 0; i < ci; ++i) gwr[i] += g * xr[i];
    }
  }
}

template <typename T>
void dense_backward_bias(const T* gy, T* gb, int64_t n, int64_t co,
                         bool parallel) {
  const int nt = max_threads();
#pragma omp parallel for if (parallel) num_threads(nt) schedule(static)
  for (int64_t c = 0; c < co; ++c) {
    T acc = 0;
    for (int64_t b = 0; b < n; ++b) acc += gy[b * co + c];
    gb[c] += acc;
  }
}

// ---------------------------------------------------------------------------
// Serial reference kernels: one output element per innermost accumulation,
// same (ci, kh, kw) / (co, kh, kw) / (n, oh, ow) orders as the production
// kernels so comparisons can demand exact equality.
// ---------------------------------------------------------------------------

template <typename T>
void conv2d_forward_ref(const T* x, const T* w, const T* bias, T* y,
                        const ConvDims& d) {
  const int64_t cig = d.ci / d.groups;
  const int64_t cog = d.co / d.groups;
  for (int64_t n = 0; n < d.n; ++n)
    for (int64_t co = 0; co < d.co; ++co)
      for (int64_t oh = 0; oh < d.ho; ++oh)
        for (int64_t ow = 0; ow < d.wo; ++ow) {
          const int64_t g = co / cog;
          T acc = bias ? bias[co] : T(0);
          for (int64_t cl = 0; cl < cig; ++cl)
            for (int64_t kh = 0; kh < d.k; ++kh)
              for (int64_t kw = 0; kw < d.k; ++kw) {
                const int64_t ih = oh * d.stride - d.pad + kh * d.dil;
                const int64_t iw = ow * d.stride - d.pad + kw * d.dil;
                if (ih < 0 || ih >= d.hi || iw < 0 || iw >= d.wi) continue;
                const int64_t ci = g * cig + cl;
                acc += w[((co * cig + cl) * d.k + kh) * d.k + kw] *
                       x[((n * d.ci + ci) * d.hi + ih) * d.wi + iw];
              }
          y[((n * d.co + co) * d.ho + oh) * d.wo + ow] = acc;
        }
}

template <typename T>
void conv2d_backward_input_ref(const T* w, const T* gy, T* gx,
                               const ConvDims& d) {
  const int64_t cig = d.ci / d.groups;
  const int64_t cog = d.co / d.groups;
  for (int64_t n = 0; n < d.n; ++n)
    for (int64_t ci = 0; ci < d.ci; ++ci)
      for (int64_t ih = 0; ih < d.hi; ++ih)
        for (int64_t iw = 0; iw < d.wi; ++iw) {
          const int64_t g = ci / cig;
          const int64_t cl = ci % cig;
          T acc = 0;
          for (int64_t col = 0; col < cog; ++col)
            for (int64_t kh = 0; kh < d.k; ++kh)
              for (int64_t kw = 0; kw < d.k; ++kw) {
                const int64_t t = ih + d.pad - kh * d.dil;
                const int64_t u = iw + d.pad - kw * d.dil;
                if (t < 0 || u < 0 || t % d.stride || u % d.stride) continue;
                const int64_t oh = t / d.stride, ow = u / d.stride;
                if (oh >= d.ho || ow >= d.wo) continue;
                const int64_t co = g * cog + col;
                acc += w[((co * cig + cl) * d.k + kh) * d.k + kw] *
                       gy[((n * d.co + co) * d.ho + oh) * d.wo + ow];
              }
          gx[((n * d.ci + ci) * d.hi + ih) * d.wi + iw] += acc;
        }
}

template <typename T>
void conv2d_backward_weight_ref(const T* x, const T* gy, T* gw,
                                const ConvDims& d) {
  const int64_t cig = d.ci / d.groups;
  const int64_t cog = d.co / d.groups;
  for (int64_t co = 0; co < d.co; ++co)
    for (int64_t cl = 0; cl < cig; ++cl)
      for (int64_t kh = 0; kh < d.k; ++kh)
        for (int64_t kw = 0; kw < d.k; ++kw) {
          const int64_t ci = (co / cog) * cig + cl;
          T acc = 0;
          for (int64_t n = 0; n < d.n; ++n)
            for (int64_t oh = 0; oh < d.ho; ++oh)
              for (int64_t ow = 0; ow < d.wo; ++ow) {
                const int64_t ih = oh * d.stride - d.pad + kh * d.dil;
                const int64_t iw = ow * d.stride - d.pad + kw * d.dil;
                if (ih < 0 || ih >= d.hi || iw < 0 || iw >= d.wi) continue;
                acc += gy[((n * d.co + co) * d.ho + oh) * d.wo + ow] *
                       x[((n * d.ci + ci) * d.hi + ih) * d.wi + iw];
              }
          gw[((co * cig + cl) * d.k + kh) * d.k + kw] += acc;
        }
}

template <typename T>
void dense_forward_ref(const T* x, const T* w, const T* bias, T* y, int64_t n,
                       int64_t ci, int64_t co) {
  for (int64_t b = 0; b < n; ++b)
    for (int64_t c = 0; c < co; ++c) {
      T acc = bias ? bias[c] : T(0);
      for (int64_t i = 0; i < ci; ++i) acc += w[c * ci + i] * x[b * ci + i];
      y[b * co + c] = acc;
    }
}

template void conv2d_forward<float>(const float*, const float*, const float*,
                                    float*, const ConvDims&, bool);
template void conv2d_forward<double>(const double*, const double*,
                                     const double*, double*, const ConvDims&,
                                     bool);
template void conv2d_backward_input<float>(const float*, const float*, float*,
                                           const ConvDims&, bool);
template void conv2d_backward_input<double>(const double*, const double*,
                                            double*, const ConvDims&, bool);
template void conv2d_backward_weight<float>(const float*, const float*, float*,
                                            const ConvDims&, bool);
template void conv2d_backward_weight<double>(const double*, const double*,
                                             double*, const ConvDims&, bool);
template void conv2d_backward_bias<float>(const float*, float*,
                                          const ConvDims&, bool);
template void conv2d_backward_bias<double>(const double*, double*,
                                           const ConvDims&, bool);
template void dense_forward<float>(const float*, const float*, const float*,
                                   float*, int64_t, int64_t, int64_t, bool);
template void dense_forward<double>(const double*, const double*, const double*,
                                    double*, int64_t, int64_t, int64_t, bool);
template void dense_backward_input<float>(const float*, const float*, float*,
                                          int64_t, int64_t, int64_t, bool);
template void dense_backward_input<double>(const double*, const double*,
                                           double*, int64_t, int64_t, int64_t,
                                           bool);
template void dense_backward_weight<float>(const float*, const float*, float*,
                                           int64_t, int64_t, int64_t, bool);
template void dense_backward_weight<double>(const double*, const double*,
                                            double*, int64_t, int64_t, int64_t,
                                            bool);
template void dense_backward_bias<float>(const float*, float*, int64_t,
                                         int64_t, bool);
template void dense_backward_bias<double>(const double*, double*, int64_t,
                                          int64_t, bool);
template void conv2d_forward_ref<float>(const float*, const float*,
                                        const float*, float*, const ConvDims&);
template void conv2d_forward_ref<double>(const double*, const double*,
                                         const double*, double*,
                                         const ConvDims&);
template void conv2d_backward_input_ref<float>(const float*, const float*,
                                               float*, const ConvDims&);
template void conv2d_backward_input_ref<double>(const double*, const double*,
                                                double*, const ConvDims&);
template void conv2d_backward_weight_ref<float>(const float*, const float*,
                                                float*, const ConvDims&);
template void conv2d_backward_weight_ref<double>(const double*, const double*,
                                                 double*, const ConvDims&);
template void dense_forward_ref<float>(const float*, const float*,
                                       const float*, float*, int64_t, int64_t,
                                       int64_t);
template void dense_forward_ref<double>(const double*, const double*,
                                        const double*, double*, int64_t,
                                        int64_t, int64_t);

}  // namespace ffpdet::kernels
