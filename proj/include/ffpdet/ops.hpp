#pragma once

#include <cmath>
#include <utility>

#include "ffpdet/kernels.hpp"
#include "ffpdet/tensor.hpp"

namespace ffpdet {

/// Geometry and parameterization of a 2-D convolution layer
/// (cross-correlation; no kernel flip).
struct ConvSpec {
  int64_t in_channels = 1;
  int64_t out_channels = 1;
  int64_t kernel = 1;
  int64_t stride = 1;
  int64_t padding = 0;
  int64_t dilation = 1;
  int64_t groups = 1;
  bool bias = true;

  void validate() const {
    require<ConfigError>(in_channels > 0 && out_channels > 0 && kernel > 0 &&
                             stride > 0 && dilation > 0 && groups > 0,
                         "conv spec fields must be positive");
    require<ConfigError>(padding >= 0, "conv padding must be >= 0");
    require<ConfigError>(
        in_channels % groups == 0 && out_channels % groups == 0,
        strfmt("conv channels (%lld in, %lld out) not divisible by %lld groups",
               (long long)in_channels, (long long)out_channels,
               (long long)groups));
  }

  /// Trainable parameter count: (Ci/groups) * K^2 * Co, plus Co for bias.
  int64_t parameter_count() const {
    int64_t p = (in_channels / groups) * kernel * kernel * out_channels;
    return bias ? p + out_channels : p;
  }

  /// floor((H + 2p - d(K-1) - 1) / s) + 1 per axis; errors if empty.
  std::pair<int64_t, int64_t> output_hw(int64_t h, int64_t w) const {
    int64_t eff = dilation * (kernel - 1) + 1;
    int64_t ho = (h + 2 * padding - eff) / stride + 1;
    int64_t wo = (w + 2 * padding - eff) / stride + 1;
    require<ConfigError>(
        h + 2 * padding >= eff && w + 2 * padding >= eff && ho > 0 && wo > 0,
        strfmt("conv output would be empty: input %lldx%lld, kernel %lld, "
               "stride %lld, padding %lld, dilation %lld",
               (long long)h, (long long)w, (long long)kernel,
               (long long)stride, (long long)padding, (long long)dilation));
    return {ho, wo};
  }
};

enum class Act { relu, hard_swish, sigmoid };

namespace detail {

template <typename T>
inline T sigmoid_scalar(T t) {
  if (t >= T(0)) return T(1) / (T(1) + std::exp(-t));
  T e = std::exp(t);
  return e / (T(1) + e);
}

}  // namespace detail

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b,
                 const ConvSpec& spec) {
  spec.validate();
  require<ShapeError>(x.rank() == 4, "conv2d input must be NCHW, got " +
                                         shape_str(x.shape()));
  require<ShapeError>(
      x.dim(1) == spec.in_channels,
      strfmt("conv2d input has %lld channels, spec expects %lld",
             (long long)x.dim(1), (long long)spec.in_channels));
  Shape wexp = {spec.out_channels, spec.in_channels / spec.groups, spec.kernel,
                spec.kernel};
  require<ShapeError>(w.shape() == wexp,
                      "conv2d weight shape " + shape_str(w.shape()) +
                          " does not match spec " + shape_str(wexp));
  require<ShapeError>(spec.bias == b.defined(),
                      "conv2d bias presence does not match spec");
  if (spec.bias)
    require<ShapeError>(b.shape() == Shape{spec.out_channels},
                        "conv2d bias shape " + shape_str(b.shape()));

  auto [ho, wo] = spec.output_hw(x.dim(2), x.dim(3));
  kernels::ConvDims d{x.dim(0), spec.in_channels, x.dim(2), x.dim(3),
                      spec.out_channels, spec.kernel, spec.stride,
                      spec.padding, spec.dilation, spec.groups, ho, wo};

  std::vector<Tensor<T>> parents = {x, w};
  if (spec.bias) parents.push_back(b);
  auto xn = x.node();
  auto wn = w.node();
  auto bn = spec.bias ? b.node() : nullptr;
  auto out = Tensor<T>::make_op(
      {d.n, d.co, ho, wo}, parents, [d, xn, wn, bn](auto& self) {
        if (xn->requires_grad) {
          xn->ensure_grad();
          kernels::conv2d_backward_input(wn->data.data(), self.grad.data(),
                                         xn->grad.data(), d);
        }
        if (wn->requires_grad) {
          wn->ensure_grad();
          kernels::conv2d_backward_weight(xn->data.data(), self.grad.data(),
                                          wn->grad.data(), d);
        }
        if (bn && bn->requires_grad) {
          bn->ensure_grad();
          kernels::conv2d_backward_bias(self.grad.data(), bn->grad.data(), d);
        }
      });
  kernels::conv2d_forward(x.ptr(), w.ptr(), spec.bias ? b.ptr() : nullptr,
                          out.ptr(), d);
  return out;
}

template <typename T>
Tensor<T> dense(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  require<ShapeError>(x.rank() == 2, "dense input must be [N,Ci], got " +
                                         shape_str(x.shape()));
  require<ShapeError>(w.rank() == 2 && w.dim(1) == x.dim(1),
                      "dense weight " + shape_str(w.shape()) +
                          " does not match input " + shape_str(x.shape()));
  const int64_t n = x.dim(0), ci = x.dim(1), co = w.dim(0);
  if (b.defined())
    require<ShapeError>(b.shape() == Shape{co},
                        "dense bias shape " + shape_str(b.shape()));
  std::vector<Tensor<T>> parents = {x, w};
  if (b.defined()) parents.push_back(b);
  auto xn = x.node();
  auto wn = w.node();
  auto bn = b.defined() ? b.node() : nullptr;
  auto out = Tensor<T>::make_op(
      {n, co}, parents, [n, ci, co, xn, wn, bn](auto& self) {
        if (xn->requires_grad) {
          xn->ensure_grad();
          kernels::dense_backward_input(wn->data.data(), self.grad.data(),
                                        xn->grad.data(), n, ci, co);
        }
        if (wn->requires_grad) {
          wn->ensure_grad();
          kernels::dense_backward_weight(xn->data.data(), self.grad.data(),
                                         wn->grad.data(), n, ci, co);
        }
        if (bn && bn->requires_grad) {
          bn->ensure_grad();
          kernels::dense_backward_bias(self.grad.data(), bn->grad.data(), n,
                                       co);
        }
      });
  kernels::dense_forward(x.ptr(), w.ptr(), b.defined() ? b.ptr() : nullptr,
                         out.ptr(), n, ci, co);
  return out;
}

/// [N,C,H,W] -> [N,C,1,1] spatial mean.
template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
  require<ShapeError>(x.rank() == 4, "global_avg_pool input must be NCHW");
  const int64_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  auto xn = x.node();
  auto out =
      Tensor<T>::make_op({n, c, 1, 1}, {x}, [n, c, hw, xn](auto& self) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (int64_t i = 0; i < n * c; ++i) {
          const T g = self.grad[i] / T(hw);
          T* gx = xn->grad.data() + i * hw;
          for (int64_t j = 0; j < hw; ++j) gx[j] += g;
        }
      });
  const T* in = x.ptr();
  T* o = out.ptr();
  for (int64_t i = 0; i < n * c; ++i) {
    T acc = 0;
    for (int64_t j = 0; j < hw; ++j) acc += in[i * hw + j];
    o[i] = acc / T(hw);
  }
  return out;
}

template <typename T>
Tensor<T> activation(const Tensor<T>& x, Act kind) {
  auto xn = x.node();
  const int64_t n = x.numel();
  auto out = Tensor<T>::make_op(
      x.shape(), {x}, [xn, kind, n](auto& self) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        const T* in = xn->data.data();
        const T* y = self.data.data();
        const T* gy = self.grad.data();
        T* gx = xn->grad.data();
        switch (kind) {
          case Act::relu:
            for (int64_t i = 0; i < n; ++i)
              if (in[i] > T(0)) gx[i] += gy[i];
            break;
          case Act::hard_swish:
            for (int64_t i = 0; i < n; ++i) {
              const T t = in[i];
              if (t >= T(3))
                gx[i] += gy[i];
              else if (t > T(-3))
                gx[i] += gy[i] * (T(2) * t + T(3)) / T(6);
            }
            break;
          case Act::sigmoid:
            for (int64_t i = 0; i < n; ++i)
              gx[i] += gy[i] * y[i] * (T(1) - y[i]);
            break;
        }
      });
  const T* in = x.ptr();
  T* y = out.ptr();
  switch (kind) {
    case Act::relu:
      for (int64_t i = 0; i < n; ++i) y[i] = in[i] > T(0) ? in[i] : T(0);
      break;
    case Act::hard_swish:
      for (int64_t i = 0; i < n; ++i) {
        T t = in[i] + T(3);
        t = t < T(0) ? T(0) : (t > T(6) ? T(6) : t);
        y[i] = in[i] * t / T(6);
      }
      break;
    case Act::sigmoid:
      for (int64_t i = 0; i < n; ++i) y[i] = detail::sigmoid_scalar(in[i]);
      break;
  }
  return out;
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  return activation(x, Act::relu);
}
template <typename T>
Tensor<T> hard_swish(const Tensor<T>& x) {
  return activation(x, Act::hard_swish);
}
template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return activation(x, Act::sigmoid);
}

/// Elementwise exponential (used by the regression head's distance mapping).
template <typename T>
Tensor<T> exp_map(const Tensor<T>& x) {
  auto xn = x.node();
  const int64_t n = x.numel();
  auto out = Tensor<T>::make_op(x.shape(), {x}, [xn, n](auto& self) {
    if (!xn->requires_grad) return;
    xn->ensure_grad();
    for (int64_t i = 0; i < n; ++i)
      xn->grad[i] += self.grad[i] * self.data[i];
  });
  for (int64_t i = 0; i < n; ++i) out.ptr()[i] = std::exp(x.ptr()[i]);
  return out;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T s) {
  auto xn = x.node();
  const int64_t n = x.numel();
  auto out = Tensor<T>::make_op(x.shape(), {x}, [xn, s, n](auto& self) {
    if (!xn->requires_grad) return;
    xn->ensure_grad();
    for (int64_t i = 0; i < n; ++i) xn->grad[i] += self.grad[i] * s;
  });
  for (int64_t i = 0; i < n; ++i) out.ptr()[i] = x.ptr()[i] * s;
  return out;
}

/// Elementwise sum of two same-shape tensors.
template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require<ShapeError>(a.shape() == b.shape(),
                      "add shape mismatch " + shape_str(a.shape()) + " vs " +
                          shape_str(b.shape()));
  auto an = a.node();
  auto bn = b.node();
  const int64_t n = a.numel();
  auto out = Tensor<T>::make_op(a.shape(), {a, b}, [an, bn, n](auto& self) {
    if (an->requires_grad) accumulate_grad(*an, self.grad.data(), n);
    if (bn->requires_grad) accumulate_grad(*bn, self.grad.data(), n);
  });
  for (int64_t i = 0; i < n; ++i) out.ptr()[i] = a.ptr()[i] + b.ptr()[i];
  return out;
}

namespace detail {

template <typename T>
void check_channel_broadcast(const Tensor<T>& x, const Tensor<T>& g) {
  require<ShapeError>(x.rank() == 4 && g.rank() == 4 && g.dim(0) == x.dim(0) &&
                          g.dim(1) == x.dim(1) && g.dim(2) == 1 &&
                          g.dim(3) == 1,
                      "channel broadcast expects [N,C,H,W] with [N,C,1,1], "
                      "got " + shape_str(x.shape()) + " with " +
                          shape_str(g.shape()));
}

}  // namespace detail

/// y[n,c,h,w] = x[n,c,h,w] * g[n,c,1,1] (per-channel gate).
template <typename T>
Tensor<T> mul_channel(const Tensor<T>& x, const Tensor<T>& g) {
  detail::check_channel_broadcast(x, g);
  const int64_t nc = x.dim(0) * x.dim(1), hw = x.dim(2) * x.dim(3);
  auto xn = x.node();
  auto gn = g.node();
  auto out = Tensor<T>::make_op(x.shape(), {x, g}, [nc, hw, xn, gn](auto& self) {
    if (xn->requires_grad) {
      xn->ensure_grad();
      for (int64_t i = 0; i < nc; ++i) {
        const T gv = gn->data[i];
        for (int64_t j = 0; j < hw; ++j)
          xn->grad[i * hw + j] += self.grad[i * hw + j] * gv;
      }
    }
    if (gn->requires_grad) {
      gn->ensure_grad();
      for (int64_t i = 0; i < nc; ++i) {
        T acc = 0;
        for (int64_t j = 0; j < hw; ++j)
          acc += self.grad[i * hw + j] * xn->data[i * hw + j];
        gn->grad[i] += acc;
      }
    }
  });
  for (int64_t i = 0; i < nc; ++i)
    for (int64_t j = 0; j < hw; ++j)
      out.ptr()[i * hw + j] = x.ptr()[i * hw + j] * g.ptr()[i];
  return out;
}

/// y[n,c,h,w] = x[n,c,h,w] + g[n,c,1,1] (per-channel shift).
template <typename T>
Tensor<T> add_channel(const Tensor<T>& x, const Tensor<T>& g) {
  detail::check_channel_broadcast(x, g);
  const int64_t nc = x.dim(0) * x.dim(1), hw = x.dim(2) * x.dim(3);
  auto xn = x.node();
  auto gn = g.node();
  auto out = Tensor<T>::make_op(x.shape(), {x, g}, [nc, hw, xn, gn](auto& self) {
    if (xn->requires_grad)
      accumulate_grad(*xn, self.grad.data(), nc * hw);
    if (gn->requires_grad) {
      gn->ensure_grad();
      for (int64_t i = 0; i < nc; ++i) {
        T acc = 0;
        for (int64_t j = 0; j < hw; ++j) acc += self.grad[i * hw + j];
        gn->grad[i] += acc;
      }
    }
  });
  for (int64_t i = 0; i < nc; ++i)
    for (int64_t j = 0; j < hw; ++j)
      out.ptr()[i * hw + j] = x.ptr()[i * hw + j] + g.ptr()[i];
  return out;
}

/// Nearest-neighbour 2x spatial upsampling.
template <typename T>
Tensor<T> upsample_nearest_2x(const Tensor<T>& x) {
  require<ShapeError>(x.rank() == 4, "upsample input must be NCHW");
  const int64_t nc = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  auto xn = x.node();
  auto out = Tensor<T>::make_op(
      {x.dim(0), x.dim(1), 2 * h, 2 * w}, {x}, [nc, h, w, xn](auto& self) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        const int64_t W = 2 * w;
        for (int64_t i = 0; i < nc; ++i)
          for (int64_t r = 0; r < h; ++r)
            for (int64_t c = 0; c < w; ++c) {
              const T* g = self.grad.data() + ((i * 2 * h) + 2 * r) * W + 2 * c;
              xn->grad[(i * h + r) * w + c] += g[0] + g[1] + g[W] + g[W + 1];
            }
      });
  const int64_t W = 2 * w;
  for (int64_t i = 0; i < nc; ++i)
    for (int64_t r = 0; r < h; ++r)
      for (int64_t c = 0; c < w; ++c) {
        const T v = x.ptr()[(i * h + r) * w + c];
        T* o = out.ptr() + ((i * 2 * h) + 2 * r) * W + 2 * c;
        o[0] = o[1] = o[W] = o[W + 1] = v;
      }
  return out;
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  require<ShapeError>(shape_numel(shape) == x.numel(),
                      "reshape " + shape_str(x.shape()) + " -> " +
                          shape_str(shape) + " changes element count");
  auto xn = x.node();
  const int64_t n = x.numel();
  auto out = Tensor<T>::make_op(std::move(shape), {x}, [xn, n](auto& self) {
    if (xn->requires_grad) accumulate_grad(*xn, self.grad.data(), n);
  });
  out.data() = x.data();
  return out;
}

/// Sum of all elements -> scalar tensor.
template <typename T>
Tensor<T> sum_all(const Tensor<T>& x) {
  auto xn = x.node();
  const int64_t n = x.numel();
  auto out = Tensor<T>::make_op({1}, {x}, [xn, n](auto& self) {
    if (!xn->requires_grad) return;
    xn->ensure_grad();
    for (int64_t i = 0; i < n; ++i) xn->grad[i] += self.grad[0];
  });
  T acc = 0;
  for (int64_t i = 0; i < n; ++i) acc += x.ptr()[i];
  out.ptr()[0] = acc;
  return out;
}

/// Batch normalization, training mode: normalizes with per-channel batch
/// statistics (biased variance) and updates the running buffers in place.
template <typename T>
Tensor<T> batch_norm_train(const Tensor<T>& x, const Tensor<T>& gamma,
                           const Tensor<T>& beta, Tensor<T>& running_mean,
                           Tensor<T>& running_var, T momentum, T eps) {
  require<ShapeError>(x.rank() == 4, "batch norm input must be NCHW");
  const int64_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  const int64_t m = n * hw;
  require<ShapeError>(gamma.shape() == Shape{c} && beta.shape() == Shape{c},
                      "batch norm scale/shift must be [C]");
  std::vector<T> mean(c, T(0)), inv(c, T(0));
  const T* in = x.ptr();
  for (int64_t ch = 0; ch < c; ++ch) {
    T acc = 0;
    for (int64_t b = 0; b < n; ++b) {
      const T* row = in + (b * c + ch) * hw;
      for (int64_t j = 0; j < hw; ++j) acc += row[j];
    }
    mean[ch] = acc / T(m);
    T var = 0;
    for (int64_t b = 0; b < n; ++b) {
      const T* row = in + (b * c + ch) * hw;
      for (int64_t j = 0; j < hw; ++j) {
        const T d = row[j] - mean[ch];
        var += d * d;
      }
    }
    var /= T(m);
    inv[ch] = T(1) / std::sqrt(var + eps);
    running_mean.data()[ch] =
        (T(1) - momentum) * running_mean.data()[ch] + momentum * mean[ch];
    running_var.data()[ch] =
        (T(1) - momentum) * running_var.data()[ch] + momentum * var;
  }
  auto xn = x.node();
  auto gn = gamma.node();
  auto bn = beta.node();
  auto out = Tensor<T>::make_op(
      x.shape(), {x, gamma, beta},
      [n, c, hw, m, mean, inv, xn, gn, bn](auto& self) {
        for (int64_t ch = 0; ch < c; ++ch) {
          T s1 = 0, s2 = 0;
          for (int64_t b = 0; b < n; ++b) {
            const int64_t base = (b * c + ch) * hw;
            for (int64_t j = 0; j < hw; ++j) {
              const T g = self.grad[base + j];
              s1 += g;
              s2 += g * (xn->data[base + j] - mean[ch]) * inv[ch];
            }
          }
          if (gn->requires_grad) {
            gn->ensure_grad();
            gn->grad[ch] += s2;
          }
          if (bn->requires_grad) {
            bn->ensure_grad();
            bn->grad[ch] += s1;
          }
          if (xn->requires_grad) {
            xn->ensure_grad();
            const T k = gn->data[ch] * inv[ch];
            for (int64_t b = 0; b < n; ++b) {
              const int64_t base = (b * c + ch) * hw;
              for (int64_t j = 0; j < hw; ++j) {
                const T xh = (xn->data[base + j] - mean[ch]) * inv[ch];
                xn->grad[base + j] +=
                    k * (self.grad[base + j] - s1 / T(m) - xh * s2 / T(m));
              }
            }
          }
        }
      });
  T* y = out.ptr();
  for (int64_t ch = 0; ch < c; ++ch) {
    const T g = gamma.ptr()[ch], b0 = beta.ptr()[ch];
    for (int64_t b = 0; b < n; ++b) {
      const int64_t base = (b * c + ch) * hw;
      for (int64_t j = 0; j < hw; ++j)
        y[base + j] = g * (in[base + j] - mean[ch]) * inv[ch] + b0;
    }
  }
  return out;
}

/// Batch normalization, inference mode: uses the provided running statistics.
template <typename T>
Tensor<T> batch_norm_infer(const Tensor<T>& x, const Tensor<T>& gamma,
                           const Tensor<T>& beta, const Tensor<T>& running_mean,
                           const Tensor<T>& running_var, T eps) {
  require<ShapeError>(x.rank() == 4, "batch norm input must be NCHW");
  const int64_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  std::vector<T> inv(c);
  for (int64_t ch = 0; ch < c; ++ch)
    inv[ch] = T(1) / std::sqrt(running_var.ptr()[ch] + eps);
  std::vector<T> mean(running_mean.data());
  auto xn = x.node();
  auto gn = gamma.node();
  auto bn = beta.node();
  auto out = Tensor<T>::make_op(
      x.shape(), {x, gamma, beta},
      [n, c, hw, mean, inv, xn, gn, bn](auto& self) {
        for (int64_t ch = 0; ch < c; ++ch) {
          T s1 = 0, s2 = 0;
          for (int64_t b = 0; b < n; ++b) {
            const int64_t base = (b * c + ch) * hw;
            for (int64_t j = 0; j < hw; ++j) {
              const T g = self.grad[base + j];
              s1 += g;
              s2 += g * (xn->data[base + j] - mean[ch]) * inv[ch];
            }
          }
          if (gn->requires_grad) {
            gn->ensure_grad();
            gn->grad[ch] += s2;
          }
          if (bn->requires_grad) {
            bn->ensure_grad();
            bn->grad[ch] += s1;
          }
          if (xn->requires_grad) {
            xn->ensure_grad();
            const T k = gn->data[ch] * inv[ch];
            for (int64_t b = 0; b < n; ++b) {
              const int64_t base = (b * c + ch) * hw;
              for (int64_t j = 0; j < hw; ++j)
                xn->grad[base + j] += k * self.grad[base + j];
            }
          }
        }
      });
  T* y = out.ptr();
  const T* in = x.ptr();
  for (int64_t ch = 0; ch < c; ++ch) {
    const T g = gamma.ptr()[ch], b0 = beta.ptr()[ch];
    for (int64_t b = 0; b < n; ++b) {
      const int64_t base = (b * c + ch) * hw;
      for (int64_t j = 0; j < hw; ++j)
        y[base + j] = g * (in[base + j] - mean[ch]) * inv[ch] + b0;
    }
  }
  return out;
}

}  // namespace ffpdet
