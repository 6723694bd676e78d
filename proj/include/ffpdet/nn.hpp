#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "ffpdet/ops.hpp"
#include "ffpdet/rng.hpp"

namespace ffpdet {

/// Ordered, named registry of model tensors. Trainable entries are the
/// parameters; non-trainable entries are buffers (running statistics).
/// Registration order defines checkpoint manifest order.
template <typename T>
class ParamStore {
 public:
  struct Entry {
    std::string name;
    Tensor<T> tensor;
    bool trainable;
  };

  Tensor<T> add_param(const std::string& name, Tensor<T> t) {
    return add(name, std::move(t), true);
  }

  Tensor<T> add_buffer(const std::string& name, Tensor<T> t) {
    return add(name, std::move(t), false);
  }

  const std::vector<Entry>& entries() const { return entries_; }
  std::vector<Entry>& entries() { return entries_; }

  const Entry* find(const std::string& name) const {
    for (const auto& e : entries_)
      if (e.name == name) return &e;
    return nullptr;
  }

 private:
  Tensor<T> add(const std::string& name, Tensor<T> t, bool trainable) {
    require<ConfigError>(find(name) == nullptr,
                         "duplicate parameter name: " + name);
    if (trainable) t.set_requires_grad(true);
    entries_.push_back({name, t, trainable});
    return t;
  }

  std::vector<Entry> entries_;
};

/// Exact trainable parameter count.
template <typename T>
int64_t count_parameters(const ParamStore<T>& ps) {
  int64_t total = 0;
  for (const auto& e : ps.entries())
    if (e.trainable) total += e.tensor.numel();
  return total;
}

/// Trainable counts grouped by the first `depth` dot-separated name segments,
/// in first-appearance order.
template <typename T>
std::vector<std::pair<std::string, int64_t>> count_parameters_by_prefix(
    const ParamStore<T>& ps, int depth) {
  std::vector<std::pair<std::string, int64_t>> rows;
  for (const auto& e : ps.entries()) {
    if (!e.trainable) continue;
    size_t cut = 0;
    int seen = 0;
    for (; cut < e.name.size(); ++cut)
      if (e.name[cut] == '.' && ++seen == depth) break;
    std::string key = e.name.substr(0, cut);
    auto it = std::find_if(rows.begin(), rows.end(),
                           [&](const auto& r) { return r.first == key; });
    if (it == rows.end())
      rows.emplace_back(key, e.tensor.numel());
    else
      it->second += e.tensor.numel();
  }
  return rows;
}

/// Round a channel count to the nearest multiple of 8, at least 8.
inline int64_t round_channels(double v) {
  int64_t r = static_cast<int64_t>(std::llround(v / 8.0)) * 8;
  return r < 8 ? 8 : r;
}

/// Fan-in scaled uniform init: U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
template <typename T>
void fill_uniform_fanin(Tensor<T>& t, int64_t fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (auto& v : t.data()) v = static_cast<T>(rng.uniform(-bound, bound));
}

template <typename T>
class Conv2dLayer {
 public:
  Conv2dLayer() = default;

  Conv2dLayer(ParamStore<T>& ps, const std::string& name, ConvSpec spec,
              Rng& rng, T bias_init = T(0))
      : spec_(spec) {
    spec_.validate();
    auto w = Tensor<T>::zeros(
        {spec_.out_channels, spec_.in_channels / spec_.groups, spec_.kernel,
         spec_.kernel});
    fill_uniform_fanin(w, (spec_.in_channels / spec_.groups) * spec_.kernel *
                              spec_.kernel,
                       rng);
    w_ = ps.add_param(name + ".weight", w);
    if (spec_.bias)
      b_ = ps.add_param(name + ".bias",
                        Tensor<T>::filled({spec_.out_channels}, bias_init));
  }

  Tensor<T> forward(const Tensor<T>& x) const { return conv2d(x, w_, b_, spec_); }

  const ConvSpec& spec() const { return spec_; }
  Tensor<T>& weight() { return w_; }
  Tensor<T>& bias() { return b_; }

 private:
  ConvSpec spec_;
  Tensor<T> w_, b_;
};

template <typename T>
class DenseLayer {
 public:
  DenseLayer() = default;

  DenseLayer(ParamStore<T>& ps, const std::string& name, int64_t in,
             int64_t out, Rng& rng, T bias_init = T(0))
      : in_(in), out_(out) {
    auto w = Tensor<T>::zeros({out, in});
    fill_uniform_fanin(w, in, rng);
    w_ = ps.add_param(name + ".weight", w);
    b_ = ps.add_param(name + ".bias", Tensor<T>::filled({out}, bias_init));
  }

  Tensor<T> forward(const Tensor<T>& x) const { return dense(x, w_, b_); }

  Tensor<T>& weight() { return w_; }
  Tensor<T>& bias() { return b_; }
  int64_t in() const { return in_; }
  int64_t out() const { return out_; }

 private:
  int64_t in_ = 0, out_ = 0;
  Tensor<T> w_, b_;
};

template <typename T>
class BatchNorm2d {
 public:
  BatchNorm2d() = default;

  BatchNorm2d(ParamStore<T>& ps, const std::string& name, int64_t channels,
              T momentum = T(0.1), T eps = T(1e-5))
      : momentum_(momentum), eps_(eps) {
    gamma_ = ps.add_param(name + ".scale", Tensor<T>::filled({channels}, T(1)));
    beta_ = ps.add_param(name + ".shift", Tensor<T>::zeros({channels}));
    rmean_ = ps.add_buffer(name + ".running_mean", Tensor<T>::zeros({channels}));
    rvar_ = ps.add_buffer(name + ".running_var",
                          Tensor<T>::filled({channels}, T(1)));
    count_ = ps.add_buffer(name + ".batches_tracked", Tensor<T>::zeros({1}));
  }

  Tensor<T> forward(const Tensor<T>& x, bool training) {
    if (training) {
      count_.data()[0] += T(1);
      return batch_norm_train(x, gamma_, beta_, rmean_, rvar_, momentum_, eps_);
    }
    require<TrainError>(count_.data()[0] > T(0),
                        "batch norm inference requested before any batch "
                        "statistics were recorded");
    return batch_norm_infer(x, gamma_, beta_, rmean_, rvar_, eps_);
  }

  Tensor<T>& scale() { return gamma_; }
  Tensor<T>& shift() { return beta_; }
  Tensor<T>& running_mean() { return rmean_; }
  Tensor<T>& running_var() { return rvar_; }

 private:
  T momentum_ = T(0.1), eps_ = T(1e-5);
  Tensor<T> gamma_, beta_, rmean_, rvar_, count_;
};

/// Channel attention: x * sigmoid(fc2(relu(fc1(pool(x))))), realized with
/// 1x1 convolutions on the pooled [N,C,1,1] map.
template <typename T>
class SqueezeExcite {
 public:
  SqueezeExcite() = default;

  SqueezeExcite(ParamStore<T>& ps, const std::string& name, int64_t channels,
                Rng& rng) {
    const int64_t hidden = round_channels(static_cast<double>(channels) / 4.0);
    fc1_ = Conv2dLayer<T>(ps, name + ".reduce",
                          ConvSpec{channels, hidden, 1, 1, 0, 1, 1, true}, rng);
    fc2_ = Conv2dLayer<T>(ps, name + ".expand",
                          ConvSpec{hidden, channels, 1, 1, 0, 1, 1, true}, rng);
  }

  Tensor<T> forward(const Tensor<T>& x) const {
    auto g = sigmoid(fc2_.forward(relu(fc1_.forward(global_avg_pool(x)))));
    return mul_channel(x, g);
  }

  /// Gate values alone (diagnostics).
  Tensor<T> gate(const Tensor<T>& x) const {
    return sigmoid(fc2_.forward(relu(fc1_.forward(global_avg_pool(x)))));
  }

 private:
  Conv2dLayer<T> fc1_, fc2_;
};

}  // namespace ffpdet
