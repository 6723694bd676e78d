#pragma once

#include <cmath>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "ffpdet/nn.hpp"

namespace ffpdet {

/// AdamW: Adam moment estimates plus decoupled weight decay applied directly
/// to the parameter (not through the gradient).
template <typename T>
class AdamW {
 public:
  AdamW() = default;

  AdamW(ParamStore<T>& ps, T lr, T weight_decay = T(0), T beta1 = T(0.9),
        T beta2 = T(0.999), T eps = T(1e-8))
      : lr_(lr), wd_(weight_decay), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (auto& e : ps.entries())
      if (e.trainable)
        slots_.push_back({e.name, e.tensor,
                          std::vector<T>(e.tensor.numel(), T(0)),
                          std::vector<T>(e.tensor.numel(), T(0))});
  }

  T lr() const { return lr_; }
  void set_lr(T lr) { lr_ = lr; }
  T weight_decay() const { return wd_; }
  int64_t steps() const { return t_; }

  void step() {
    std::string missing;
    for (const auto& s : slots_)
      if (!s.param.has_grad()) missing += (missing.empty() ? "" : ", ") + s.name;
    require<TrainError>(missing.empty(),
                        "optimizer step called with missing gradients for: " +
                            missing);
    ++t_;
    const T bc1 = T(1) - std::pow(beta1_, static_cast<T>(t_));
    const T bc2 = T(1) - std::pow(beta2_, static_cast<T>(t_));
    for (auto& s : slots_) {
      const std::vector<T>& g = s.param.grad();
      std::vector<T>& p = s.param.data();
      for (size_t i = 0; i < p.size(); ++i) {
        s.m[i] = beta1_ * s.m[i] + (T(1) - beta1_) * g[i];
        s.v[i] = beta2_ * s.v[i] + (T(1) - beta2_) * g[i] * g[i];
        const T mh = s.m[i] / bc1;
        const T vh = s.v[i] / bc2;
        p[i] -= lr_ * (mh / (std::sqrt(vh) + eps_) + wd_ * p[i]);
      }
    }
  }

  void zero_grad() {
    for (auto& s : slots_) s.param.zero_grad();
  }

  /// Raw binary moment/step serialization (resume support). Parameter
  /// identity is implied by slot order, which follows store registration.
  void save_state(std::ostream& os) const {
    int64_t n = static_cast<int64_t>(slots_.size());
    os.write(reinterpret_cast<const char*>(&t_), sizeof(t_));
    os.write(reinterpret_cast<const char*>(&n), sizeof(n));
    for (const auto& s : slots_) {
      int64_t len = static_cast<int64_t>(s.m.size());
      os.write(reinterpret_cast<const char*>(&len), sizeof(len));
      os.write(reinterpret_cast<const char*>(s.m.data()), len * sizeof(T));
      os.write(reinterpret_cast<const char*>(s.v.data()), len * sizeof(T));
    }
  }

  void load_state(std::istream& is) {
    int64_t n = 0;
    is.read(reinterpret_cast<char*>(&t_), sizeof(t_));
    is.read(reinterpret_cast<char*>(&n), sizeof(n));
    require<DataError>(is.good() && n == static_cast<int64_t>(slots_.size()),
                       "optimizer state does not match model (slot count)");
    for (auto& s : slots_) {
      int64_t len = 0;
      is.read(reinterpret_cast<char*>(&len), sizeof(len));
      require<DataError>(is.good() && len == static_cast<int64_t>(s.m.size()),
                         "optimizer state does not match model: " + s.name);
      is.read(reinterpret_cast<char*>(s.m.data()), len * sizeof(T));
      is.read(reinterpret_cast<char*>(s.v.data()), len * sizeof(T));
    }
    require<DataError>(is.good(), "optimizer state truncated");
  }

 private:
  struct Slot {
    std::string name;
    Tensor<T> param;
    std::vector<T> m, v;
  };

  std::vector<Slot> slots_;
  int64_t t_ = 0;
  T lr_ = T(0), wd_ = T(0), beta1_ = T(0.9), beta2_ = T(0.999), eps_ = T(1e-8);
};

}  // namespace ffpdet
