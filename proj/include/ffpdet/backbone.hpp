#pragma once

#include <array>
#include <memory>
#include <vector>

#include "ffpdet/nn.hpp"

namespace ffpdet {

/// One inverted-residual stage: 1x1 expand, KxK depthwise (stride s),
/// optional squeeze-excite, 1x1 linear projection; residual when the
/// stage keeps stride and width.
struct StageSpec {
  int64_t kernel = 3;
  int64_t stride = 1;
  int64_t expand = 16;  // expansion width (pre-multiplier)
  int64_t out = 16;     // output width (pre-multiplier)
  bool se = false;
  Act act = Act::relu;

  bool operator==(const StageSpec&) const = default;
};

struct BackboneConfig {
  int64_t in_channels = 3;
  int64_t stem_channels = 16;
  Act stem_act = Act::hard_swish;
  /// Default: nine-stage stack with taps at the last stage of each of
  /// strides 8, 16 and 32.
  std::vector<StageSpec> stages = {
      {3, 2, 16, 16, true, Act::relu},        // stride 4
      {3, 2, 48, 24, false, Act::relu},       // stride 8
      {3, 1, 64, 24, false, Act::relu},       // stride 8   <- C3
      {5, 2, 96, 40, true, Act::hard_swish},  // stride 16
      {5, 1, 96, 40, true, Act::hard_swish},  // stride 16
      {5, 1, 96, 48, true, Act::hard_swish},  // stride 16 <- C4
      {5, 2, 96, 64, true, Act::hard_swish},  // stride 32
      {5, 1, 96, 64, true, Act::hard_swish},  // stride 32
      {5, 1, 96, 96, true, Act::hard_swish},  // stride 32 <- C5
  };
  double width_multiplier = 1.0;
  std::array<int64_t, 3> taps = {2, 5, 8};  // stage indices for strides 8/16/32

  bool operator==(const BackboneConfig&) const = default;

  /// Width after the multiplier: nearest multiple of 8, floor 8.
  int64_t scaled(int64_t ch) const {
    return round_channels(static_cast<double>(ch) * width_multiplier);
  }

  void validate() const {
    require<ConfigError>(!stages.empty(), "backbone needs at least one stage");
    require<ConfigError>(width_multiplier > 0,
                         "backbone width multiplier must be positive");
    for (const auto& s : stages) {
      require<ConfigError>(s.kernel % 2 == 1 && s.kernel >= 3,
                           "stage kernels must be odd and >= 3");
      require<ConfigError>(s.stride == 1 || s.stride == 2,
                           "stage strides must be 1 or 2");
      require<ConfigError>(s.expand > 0 && s.out > 0,
                           "stage widths must be positive");
    }
    std::array<int64_t, 3> want = {8, 16, 32};
    for (int i = 0; i < 3; ++i) {
      require<ConfigError>(
          taps[i] >= 0 && taps[i] < static_cast<int64_t>(stages.size()),
          strfmt("tap %d points at stage %lld but there are only %zu stages",
                 i, (long long)taps[i], stages.size()));
      int64_t stride = 2;  // stem
      for (int64_t j = 0; j <= taps[i]; ++j) stride *= stages[j].stride;
      require<ConfigError>(
          stride == want[i],
          strfmt("tap %d must sit at stride %lld but stage %lld has "
                 "cumulative stride %lld",
                 i, (long long)want[i], (long long)taps[i], (long long)stride));
    }
    int64_t total = 2;
    for (const auto& s : stages) total *= s.stride;
    require<ConfigError>(total >= 32,
                         "stage strides never reach total stride 32");
  }

  int64_t tap_channels(int i) const { return scaled(stages[taps[i]].out); }
};

template <typename T>
class InvertedResidual {
 public:
  InvertedResidual() = default;

  InvertedResidual(ParamStore<T>& ps, const std::string& name, int64_t in,
                   const StageSpec& s, const BackboneConfig& cfg, Rng& rng)
      : act_(s.act) {
    const int64_t exp = cfg.scaled(s.expand);
    const int64_t out = cfg.scaled(s.out);
    expand_ = exp != in;
    if (expand_) {
      conv_e_ = Conv2dLayer<T>(ps, name + ".expand",
                               ConvSpec{in, exp, 1, 1, 0, 1, 1, false}, rng);
      bn_e_ = BatchNorm2d<T>(ps, name + ".expand_norm", exp);
    }
    conv_d_ = Conv2dLayer<T>(
        ps, name + ".depthwise",
        ConvSpec{exp, exp, s.kernel, s.stride, (s.kernel - 1) / 2, 1, exp,
                 false},
        rng);
    bn_d_ = BatchNorm2d<T>(ps, name + ".depthwise_norm", exp);
    has_se_ = s.se;
    if (has_se_) se_ = SqueezeExcite<T>(ps, name + ".se", exp, rng);
    conv_p_ = Conv2dLayer<T>(ps, name + ".project",
                             ConvSpec{exp, out, 1, 1, 0, 1, 1, false}, rng);
    bn_p_ = BatchNorm2d<T>(ps, name + ".project_norm", out);
    residual_ = s.stride == 1 && in == out;
  }

  Tensor<T> forward(const Tensor<T>& x, bool training) {
    Tensor<T> t = x;
    if (expand_) t = activation(bn_e_.forward(conv_e_.forward(t), training), act_);
    t = activation(bn_d_.forward(conv_d_.forward(t), training), act_);
    if (has_se_) t = se_.forward(t);
    t = bn_p_.forward(conv_p_.forward(t), training);
    if (residual_) t = add(t, x);
    return t;
  }

  const SqueezeExcite<T>* se() const { return has_se_ ? &se_ : nullptr; }

 private:
  bool expand_ = false, has_se_ = false, residual_ = false;
  Act act_ = Act::relu;
  Conv2dLayer<T> conv_e_, conv_d_, conv_p_;
  BatchNorm2d<T> bn_e_, bn_d_, bn_p_;
  SqueezeExcite<T> se_;
};

/// Inverted-residual feature extractor with taps at strides 8, 16 and 32.
template <typename T>
class Backbone {
 public:
  Backbone() = default;

  Backbone(ParamStore<T>& ps, const std::string& name,
           const BackboneConfig& cfg, Rng& rng)
      : cfg_(cfg) {
    cfg_.validate();
    const int64_t stem = cfg_.scaled(cfg_.stem_channels);
    stem_conv_ = Conv2dLayer<T>(
        ps, name + ".stem",
        ConvSpec{cfg_.in_channels, stem, 3, 2, 1, 1, 1, false}, rng);
    stem_bn_ = BatchNorm2d<T>(ps, name + ".stem_norm", stem);
    int64_t in = stem;
    for (size_t i = 0; i < cfg_.stages.size(); ++i) {
      blocks_.emplace_back(ps, name + ".block" + std::to_string(i), in,
                           cfg_.stages[i], cfg_, rng);
      in = cfg_.scaled(cfg_.stages[i].out);
    }
  }

  /// Returns {C3, C4, C5}. Input must be [N,3,H,W] with H and W divisible
  /// by 32 so the three tap extents are exact.
  std::array<Tensor<T>, 3> forward(const Tensor<T>& x, bool training) {
    require<ShapeError>(x.rank() == 4 && x.dim(1) == cfg_.in_channels,
                        "backbone input must be [N," +
                            std::to_string(cfg_.in_channels) + ",H,W], got " +
                            shape_str(x.shape()));
    require<ShapeError>(
        x.dim(2) % 32 == 0 && x.dim(3) % 32 == 0,
        strfmt("backbone input %lldx%lld: height and width must be divisible "
               "by 32",
               (long long)x.dim(3), (long long)x.dim(2)));
    Tensor<T> t =
        activation(stem_bn_.forward(stem_conv_.forward(x), training),
                   cfg_.stem_act);
    std::array<Tensor<T>, 3> taps;
    for (size_t i = 0; i < blocks_.size(); ++i) {
      t = blocks_[i].forward(t, training);
      for (int k = 0; k < 3; ++k)
        if (cfg_.taps[k] == static_cast<int64_t>(i)) taps[k] = t;
    }
    return taps;
  }

  const BackboneConfig& config() const { return cfg_; }
  InvertedResidual<T>& block(size_t i) { return blocks_[i]; }

 private:
  BackboneConfig cfg_;
  Conv2dLayer<T> stem_conv_;
  BatchNorm2d<T> stem_bn_;
  std::vector<InvertedResidual<T>> blocks_;
};

}  // namespace ffpdet
