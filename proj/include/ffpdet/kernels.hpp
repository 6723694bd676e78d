#pragma once

#include <cstdint>

#include "ffpdet/common.hpp"

namespace ffpdet::kernels {

/// Resolved geometry of a 2-D cross-correlation over NCHW buffers.
struct ConvDims {
  int64_t n = 1;       // batch
  int64_t ci = 1;      // input channels (total)
  int64_t hi = 1, wi = 1;
  int64_t co = 1;      // output channels (total)
  int64_t k = 1;       // square kernel
  int64_t stride = 1;
  int64_t pad = 0;
  int64_t dil = 1;
  int64_t groups = 1;
  int64_t ho = 1, wo = 1;  // derived output extent
};

/// Global cap on kernel thread usage. Defaults to the OpenMP runtime value;
/// the FFPDET_THREADS environment variable (read by the CLI) lowers it.
int max_threads();
void set_max_threads(int n);

// Production kernels. `parallel = false` runs the same loop nest on one
// thread; results are bitwise identical for any thread count because every
// output element is accumulated by exactly one thread in a fixed order.
// Backward kernels accumulate (+=) into their destination buffer.
template <typename T>
void conv2d_forward(const T* x, const T* w, const T* bias, T* y,
                    const ConvDims& d, bool parallel = true);
template <typename T>
void conv2d_backward_input(const T* w, const T* gy, T* gx, const ConvDims& d,
                           bool parallel = true);
template <typename T>
void conv2d_backward_weight(const T* x, const T* gy, T* gw, const ConvDims& d,
                            bool parallel = true);
template <typename T>
void conv2d_backward_bias(const T* gy, T* gb, const ConvDims& d,
                          bool parallel = true);

template <typename T>
void dense_forward(const T* x, const T* w, const T* bias, T* y, int64_t n,
                   int64_t ci, int64_t co, bool parallel = true);
template <typename T>
void dense_backward_input(const T* w, const T* gy, T* gx, int64_t n,
                          int64_t ci, int64_t co, bool parallel = true);
template <typename T>
void dense_backward_weight(const T* x, const T* gy, T* gw, int64_t n,
                           int64_t ci, int64_t co, bool parallel = true);
template <typename T>
void dense_backward_bias(const T* gy, T* gb, int64_t n, int64_t co,
                         bool parallel = true);

// Serial reference kernels: naive textbook loop nests kept for testing.
// They share the accumulation order of the production kernels, so equality
// checks can be exact.
template <typename T>
void conv2d_forward_ref(const T* x, const T* w, const T* bias, T* y,
                        const ConvDims& d);
template <typename T>
void conv2d_backward_input_ref(const T* w, const T* gy, T* gx,
                               const ConvDims& d);
template <typename T>
void conv2d_backward_weight_ref(const T* x, const T* gy, T* gw,
                                const ConvDims& d);
template <typename T>
void dense_forward_ref(const T* x, const T* w, const T* bias, T* y, int64_t n,
                       int64_t ci, int64_t co);

extern template void conv2d_forward<float>(const float*, const float*,
                                           const float*, float*,
                                           const ConvDims&, bool);
extern template void conv2d_forward<double>(const double*, const double*,
                                            const double*, double*,
                                            const ConvDims&, bool);
extern template void conv2d_backward_input<float>(const float*, const float*,
                                                  float*, const ConvDims&,
                                                  bool);
extern template void conv2d_backward_input<double>(const double*,
                                                   const double*, double*,
                                                   const ConvDims&, bool);
extern template void conv2d_backward_weight<float>(const float*, const float*,
                                                   float*, const ConvDims&,
                                                   bool);
extern template void conv2d_backward_weight<double>(const double*,
                                                    const double*, double*,
                                                    const ConvDims&, bool);
extern template void conv2d_backward_bias<float>(const float*, float*,
                                                 const ConvDims&, bool);
extern template void conv2d_backward_bias<double>(const double*, double*,
                                                  const ConvDims&, bool);
extern template void dense_forward<float>(const float*, const float*,
                                          const float*, float*, int64_t,
                                          int64_t, int64_t, bool);
extern template void dense_forward<double>(const double*, const double*,
                                           const double*, double*, int64_t,
                                           int64_t, int64_t, bool);
extern template void dense_backward_input<float>(const float*, const float*,
                                                 float*, int64_t, int64_t,
                                                 int64_t, bool);
extern template void dense_backward_input<double>(const double*, const double*,
                                                  double*, int64_t, int64_t,
                                                  int64_t, bool);
extern template void dense_backward_weight<float>(const float*, const float*,
                                                  float*, int64_t, int64_t,
                                                  int64_t, bool);
extern template void dense_backward_weight<double>(const double*,
                                                   const double*, double*,
                                                   int64_t, int64_t, int64_t,
                                                   bool);
extern template void dense_backward_bias<float>(const float*, float*, int64_t,
                                                int64_t, bool);
extern template void dense_backward_bias<double>(const double*, double*,
                                                 int64_t, int64_t, bool);
extern template void conv2d_forward_ref<float>(const float*, const float*,
                                               const float*, float*,
                                               const ConvDims&);
extern template void conv2d_forward_ref<double>(const double*, const double*,
                                                const double*, double*,
                                                const ConvDims&);
extern template void conv2d_backward_input_ref<float>(const float*,
                                                      const float*, float*,
                                                      const ConvDims&);
extern template void conv2d_backward_input_ref<double>(const double*,
                                                       const double*, double*,
                                                       const ConvDims&);
extern template void conv2d_backward_weight_ref<float>(const float*,
                                                       const float*, float*,
                                                       const ConvDims&);
extern template void conv2d_backward_weight_ref<double>(const double*,
                                                        const double*, double*,
                                                        const ConvDims&);
extern template void dense_forward_ref<float>(const float*, const float*,
                                              const float*, float*, int64_t,
                                              int64_t, int64_t);
extern template void dense_forward_ref<double>(const double*, const double*,
                                               const double*, double*, int64_t,
                                               int64_t, int64_t);

}  // namespace ffpdet::kernels
